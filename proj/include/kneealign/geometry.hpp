#pragma once

// 2-D geometry in image raster coordinates: x grows rightward, y grows
// downward. Angles are radians internally and degrees at API boundaries.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <vector>

#include "kneealign/error.hpp"

namespace ka {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Point2 operator+(Point2 a, Point2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Point2 operator-(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Point2 operator*(double s, Point2 p) { return {s * p.x, s * p.y}; }
  friend constexpr Point2 operator*(Point2 p, double s) { return {s * p.x, s * p.y}; }
  friend constexpr bool operator==(Point2, Point2) = default;
};

using Vec2 = Point2;

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) { return norm(a - b); }
inline bool is_finite(Point2 p) { return std::isfinite(p.x) && std::isfinite(p.y); }

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

// Rotation by `radians` acting on (x, y) components: (x, y) -> (x cos - y sin, x sin + y cos).
inline Vec2 rotate(Vec2 v, double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

/// Similarity p -> scale * R(rotation) * p + translation.
///
/// Internally this is the complex affine map z -> a z + t with
/// a = scale * exp(i rotation), z = x + i y.
class SimilarityTransform {
 public:
  SimilarityTransform() = default;

  SimilarityTransform(double scale, double rotation, Vec2 translation)
      : a_(std::polar(scale, rotation)), t_(translation.x, translation.y) {
    if (!(scale > 0.0) || !std::isfinite(scale) || !std::isfinite(rotation) ||
        !is_finite(translation)) {
      throw Error(Errc::DegeneratePair, "similarity needs a finite positive scale");
    }
  }

  static SimilarityTransform identity() { return {}; }

  static SimilarityTransform from_complex(std::complex<double> a, std::complex<double> t) {
    SimilarityTransform out;
    out.a_ = a;
    out.t_ = t;
    return out;
  }

  double scale() const { return std::abs(a_); }
  /// In (-pi, pi].
  double rotation() const {
    const double r = std::arg(a_);
    return r == -std::numbers::pi ? std::numbers::pi : r;
  }
  Vec2 translation() const { return {t_.real(), t_.imag()}; }
  std::complex<double> linear() const { return a_; }

  Point2 apply(Point2 p) const {
    const std::complex<double> z = a_ * std::complex<double>(p.x, p.y) + t_;
    return {z.real(), z.imag()};
  }
  Point2 operator()(Point2 p) const { return apply(p); }

  SimilarityTransform inverse() const {
    const std::complex<double> ai = 1.0 / a_;
    return from_complex(ai, -t_ * ai);
  }

  /// (this o other)(p) = this(other(p)).
  SimilarityTransform then_after(const SimilarityTransform& other) const {
    return from_complex(a_ * other.a_, a_ * other.t_ + t_);
  }

 private:
  std::complex<double> a_{1.0, 0.0};
  std::complex<double> t_{0.0, 0.0};
};

inline Point2 apply(const SimilarityTransform& t, Point2 p) { return t.apply(p); }
inline SimilarityTransform invert(const SimilarityTransform& t) { return t.inverse(); }
/// compose(A, B)(p) == A(B(p)).
inline SimilarityTransform compose(const SimilarityTransform& a, const SimilarityTransform& b) {
  return a.then_after(b);
}

/// The unique similarity T with T(q0) = p0 and T(q1) = p1.
///
/// q0, q1 are the fixed positions in the reference frame and p0, p1 the
/// detected image points, so T maps frame coordinates to image coordinates.
inline SimilarityTransform frame_from_point_pair(Point2 p0, Point2 p1, Point2 q0, Point2 q1) {
  constexpr double kMinSeparation = 1e-12;
  if (!is_finite(p0) || !is_finite(p1) || !is_finite(q0) || !is_finite(q1)) {
    throw Error(Errc::DegeneratePair, "non-finite reference point");
  }
  if (distance(p0, p1) < kMinSeparation || distance(q0, q1) < kMinSeparation) {
    throw Error(Errc::DegeneratePair, "reference points coincide");
  }
  const std::complex<double> zp0(p0.x, p0.y), zp1(p1.x, p1.y);
  const std::complex<double> zq0(q0.x, q0.y), zq1(q1.x, q1.y);
  const std::complex<double> a = (zp1 - zp0) / (zq1 - zq0);
  return SimilarityTransform::from_complex(a, zp0 - a * zq0);
}

/// Signed angle from u to v in degrees, in (-180, 180].
///
/// Positive when the rotation carrying u onto v goes from the +x axis towards
/// the +y axis, i.e. atan2(u x v, u . v). In the y-down raster this is a
/// clockwise turn on screen.
inline double signed_angle_deg(Vec2 u, Vec2 v) {
  if (!(norm(u) > 0.0) || !(norm(v) > 0.0)) {
    throw Error(Errc::ZeroVector, "signed_angle_deg needs non-zero vectors");
  }
  double deg = rad_to_deg(std::atan2(cross(u, v), dot(u, v)));
  if (deg <= -180.0) deg = 180.0;
  return deg;
}

struct Polyline {
  std::vector<Point2> points;

  double length() const {
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) total += distance(points[i - 1], points[i]);
    return total;
  }
};

inline double point_to_segment_distance(Point2 p, Point2 a, Point2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return distance(p, a);
  const double t = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return distance(p, a + t * ab);
}

/// Minimum distance from p to any closed segment of c.
inline double point_to_polyline_distance(Point2 p, const Polyline& c) {
  if (c.points.size() < 2) {
    throw Error(Errc::BadSize, "polyline needs at least two points");
  }
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < c.points.size(); ++i) {
    best = std::min(best, point_to_segment_distance(p, c.points[i - 1], c.points[i]));
  }
  return best;
}

inline Point2 midpoint(Point2 a, Point2 b) { return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}; }

}  // namespace ka
