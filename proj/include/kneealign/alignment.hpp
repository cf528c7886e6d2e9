#pragma once

// Anatomical tibiofemoral angle from landmark role pairs.
//
// FTS:  femur  = mid(yellow) -> mid(red),   tibia = mid(black) -> mid(blue)
// FNTS: femur  = mid(red)    -> mid(notch), tibia as FTS
//
// Both axes point down the image (towards the ankle). With y pointing down
// the raw signed angle is negative for valgus, so it is multiplied by
// kValgusSign. Valgus, as built by the phantom generator, tilts the tibia so
// that its ankle end moves to +x for a left knee.

#include "kneealign/error.hpp"
#include "kneealign/geometry.hpp"
#include "kneealign/landmarks.hpp"

namespace ka {

inline constexpr double kValgusSign = -1.0;

struct Axis {
  Point2 from;
  Point2 to;
  Vec2 direction() const { return to - from; }
};

struct AlignmentResult {
  double atfa_fts = 0.0;
  double atfa_fnts = 0.0;
  Axis fts_femur;
  Axis fnts_femur;
  Axis tibia;
};

namespace detail {

inline Point2 pair_mid(const LandmarkSet& s, IndexPair p) { return midpoint(s.at(p.first), s.at(p.second)); }

inline Axis checked_axis(Point2 from, Point2 to, const char* what) {
  if (distance(from, to) < 1e-9) throw Error(Errc::DegenerateAxis, std::string(what) + " axis endpoints coincide");
  return {from, to};
}

inline double axis_angle(const Axis& femur, const Axis& tibia, Side side) {
  const double a = kValgusSign * signed_angle_deg(femur.direction(), tibia.direction());
  // A right knee in its own image orientation is the mirror image of a left one.
  return side == Side::Right ? (a == 180.0 ? a : -a) : a;
}

}  // namespace detail

inline Axis femoral_axis_fts(const LandmarkSet& s) {
  return detail::checked_axis(detail::pair_mid(s, s.roles.femoral_shaft_b), detail::pair_mid(s, s.roles.femoral_shaft_a),
                              "FTS femoral");
}

inline Axis femoral_axis_fnts(const LandmarkSet& s) {
  return detail::checked_axis(detail::pair_mid(s, s.roles.femoral_shaft_a), detail::pair_mid(s, s.roles.femoral_notch),
                              "FNTS femoral");
}

inline Axis tibial_axis(const LandmarkSet& s) {
  return detail::checked_axis(detail::pair_mid(s, s.roles.tibial_shaft_a), detail::pair_mid(s, s.roles.tibial_shaft_b),
                              "tibial");
}

inline double atfa_fts(const LandmarkSet& s) { return detail::axis_angle(femoral_axis_fts(s), tibial_axis(s), s.side); }

inline double atfa_fnts(const LandmarkSet& s) {
  return detail::axis_angle(femoral_axis_fnts(s), tibial_axis(s), s.side);
}

inline AlignmentResult measure_alignment(const LandmarkSet& s) {
  AlignmentResult r;
  r.fts_femur = femoral_axis_fts(s);
  r.fnts_femur = femoral_axis_fnts(s);
  r.tibia = tibial_axis(s);
  r.atfa_fts = detail::axis_angle(r.fts_femur, r.tibia, s.side);
  r.atfa_fnts = detail::axis_angle(r.fnts_femur, r.tibia, s.side);
  return r;
}

}  // namespace ka
