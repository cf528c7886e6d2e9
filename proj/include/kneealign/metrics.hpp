#pragma once

// Localization error (rP2P, rP2C) and agreement statistics (ICC(2,1), MAD,
// Bland-Altman).

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "kneealign/error.hpp"
#include "kneealign/geometry.hpp"
#include "kneealign/landmarks.hpp"
#include "kneealign/special.hpp"

namespace ka {

/// Distance between the ground-truth tibial plateau corners.
inline double reference_length(const LandmarkSet& gt) {
  const auto [a, b] = gt.pair(gt.roles.tibial_plateau);
  const double len = distance(a, b);
  if (!(len > 1e-12)) throw Error(Errc::ZeroReferenceLength, "plateau corners coincide");
  return len;
}

inline void require_matching(const LandmarkSet& a, const LandmarkSet& b) {
  if (a.size() != b.size() || !(a.roles == b.roles)) {
    throw Error(Errc::SchemaMismatch, "landmark sets use different schemas");
  }
}

/// Mean point-to-point error in percent of the reference length.
inline double rp2p(const LandmarkSet& automatic, const LandmarkSet& gt) {
  require_matching(automatic, gt);
  const double ref = reference_length(gt);
  double total = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) total += distance(automatic[k], gt[k]);
  return 100.0 * total / (static_cast<double>(gt.size()) * ref);
}

/// Polylines through the ground-truth landmarks of each schema contour.
inline std::vector<Polyline> contour_curves(const LandmarkSet& gt, const LandmarkSchema& schema) {
  std::vector<Polyline> out;
  for (const auto& c : schema.contours) {
    Polyline p;
    for (int i : c.indices) p.points.push_back(gt.at(i));
    out.push_back(std::move(p));
  }
  return out;
}

/// Mean distance from each automatic landmark to the ground-truth curve of
/// the contour it belongs to, in percent of the reference length. Landmarks
/// outside every contour fall back to the point-to-point distance.
inline double rp2c(const LandmarkSet& automatic, const LandmarkSet& gt, const LandmarkSchema& schema) {
  require_matching(automatic, gt);
  if (gt.size() != static_cast<std::size_t>(schema.count)) throw Error(Errc::SchemaMismatch, "schema size");
  const double ref = reference_length(gt);
  const auto curves = contour_curves(gt, schema);
  const auto owner = schema.contour_of();
  double total = 0.0;
  for (std::size_t k = 0; k < gt.size(); ++k) {
    const int c = owner[k];
    total += c < 0 ? distance(automatic[k], gt[k])
                   : point_to_polyline_distance(automatic[k], curves[static_cast<std::size_t>(c)]);
  }
  return 100.0 * total / (static_cast<double>(gt.size()) * ref);
}

// ---- summaries ----------------------------------------------------------------

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw Error(Errc::TooFewSubjects, "mean of an empty series");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); 0 for a single value.
inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double median_of(std::span<const double> v) {
  if (v.empty()) throw Error(Errc::TooFewSubjects, "median of an empty series");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

/// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value.
inline double percentile_nearest_rank(std::span<const double> v, double p) {
  if (v.empty()) throw Error(Errc::TooFewSubjects, "percentile of an empty series");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(s.size())));
  return s[std::clamp<std::size_t>(rank, 1, s.size()) - 1];
}

struct DistributionSummary {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
};

inline DistributionSummary summarize(std::span<const double> v) {
  return {mean_of(v), median_of(v), percentile_nearest_rank(v, 95.0)};
}

struct LocalizationErrorSummary {
  std::vector<double> rp2p;  // per image, percent
  std::vector<double> rp2c;
  DistributionSummary p2p;
  DistributionSummary p2c;
};

inline LocalizationErrorSummary summarize_localization(std::vector<double> per_image_rp2p,
                                                       std::vector<double> per_image_rp2c) {
  LocalizationErrorSummary s;
  s.rp2p = std::move(per_image_rp2p);
  s.rp2c = std::move(per_image_rp2c);
  s.p2p = summarize(s.rp2p);
  s.p2c = summarize(s.rp2c);
  return s;
}

// ---- agreement ----------------------------------------------------------------

struct IccResult {
  double value = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct TwoWayAnova {
  double ms_rows = 0.0;     // subjects
  double ms_cols = 0.0;     // raters
  double ms_error = 0.0;
  std::size_t n = 0;
};

/// Two-way ANOVA mean squares for an n x 2 table.
inline TwoWayAnova two_way_anova(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  constexpr double k = 2.0;
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) grand += a[i] + b[i];
  grand /= k * static_cast<double>(n);
  double ss_rows = 0.0, ss_total = 0.0, mean_a = 0.0, mean_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double row = 0.5 * (a[i] + b[i]);
    ss_rows += k * (row - grand) * (row - grand);
    ss_total += (a[i] - grand) * (a[i] - grand) + (b[i] - grand) * (b[i] - grand);
    mean_a += a[i];
    mean_b += b[i];
  }
  mean_a /= static_cast<double>(n);
  mean_b /= static_cast<double>(n);
  const double ss_cols = static_cast<double>(n) * ((mean_a - grand) * (mean_a - grand) + (mean_b - grand) * (mean_b - grand));
  const double ss_error = std::max(0.0, ss_total - ss_rows - ss_cols);
  const double dn = static_cast<double>(n);
  return {ss_rows / (dn - 1.0), ss_cols / (k - 1.0), ss_error / ((dn - 1.0) * (k - 1.0)), n};
}

/// ICC(2,1): two-way random effects, absolute agreement, single rater, with
/// the 95% interval of McGraw and Wong (Satterthwaite degrees of freedom).
/// Values and bounds are clipped to [-1, 1].
inline IccResult icc_2_1(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "icc_2_1 series lengths differ");
  if (a.size() < 3) throw Error(Errc::TooFewSubjects, "icc_2_1 needs at least 3 subjects");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw Error(Errc::NonFiniteLoss, "icc_2_1 input not finite");
  }
  const TwoWayAnova m = two_way_anova(a, b);
  const double n = static_cast<double>(m.n);
  constexpr double k = 2.0;
  const double denom = m.ms_rows + (k - 1.0) * m.ms_error + k / n * (m.ms_cols - m.ms_error);
  if (m.ms_error == 0.0 && m.ms_cols == 0.0) return {1.0, 1.0, 1.0};  // perfect agreement, incl. constant input
  const double r = (m.ms_rows - m.ms_error) / denom;

  IccResult out{std::clamp(r, -1.0, 1.0), -1.0, 1.0};
  const double alpha = 0.05;
  const double ca = k * r / (n * (1.0 - r));
  const double cb = 1.0 + k * r * (n - 1.0) / (n * (1.0 - r));
  const double num = ca * m.ms_cols + cb * m.ms_error;
  const double v = num * num / ((ca * m.ms_cols) * (ca * m.ms_cols) / (k - 1.0) +
                                (cb * m.ms_error) * (cb * m.ms_error) / ((n - 1.0) * (k - 1.0)));
  if (std::isfinite(v) && v > 0.0) {
    const double fl = f_quantile(1.0 - alpha / 2.0, n - 1.0, v);
    const double fu = f_quantile(1.0 - alpha / 2.0, v, n - 1.0);
    const double mix = k * m.ms_cols + (k * n - k - n) * m.ms_error;
    const double lo = n * (m.ms_rows - fl * m.ms_error) / (fl * mix + n * m.ms_rows);
    const double hi = n * (fu * m.ms_rows - m.ms_error) / (mix + n * fu * m.ms_rows);
    if (std::isfinite(lo)) out.lower = std::clamp(lo, -1.0, 1.0);
    if (std::isfinite(hi)) out.upper = std::clamp(hi, -1.0, 1.0);
  }
  out.lower = std::min(out.lower, out.value);
  out.upper = std::max(out.upper, out.value);
  return out;
}

struct MadResult {
  double value = 0.0;
  double sd = 0.0;
};

/// Mean absolute difference and the sample SD of the absolute differences.
inline MadResult mad(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "mad series lengths differ");
  if (a.empty()) throw Error(Errc::TooFewSubjects, "mad needs at least one pair");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = std::abs(a[i] - b[i]);
  return {mean_of(d), sample_sd(d)};
}

struct BlandAltman {
  double bias = 0.0;
  double sd = 0.0;
  double lower = 0.0;  // bias - 1.96 sd
  double upper = 0.0;
};

inline BlandAltman bland_altman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "bland_altman series lengths differ");
  if (a.size() < 2) throw Error(Errc::TooFewSubjects, "bland_altman needs at least two pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  BlandAltman r;
  r.bias = mean_of(d);
  r.sd = sample_sd(d);
  r.lower = r.bias - 1.96 * r.sd;
  r.upper = r.bias + 1.96 * r.sd;
  return r;
}

struct AgreementReport {
  IccResult icc;
  MadResult mad;
  BlandAltman baa;
  std::size_t n = 0;
};

inline AgreementReport agreement(std::span<const double> automatic, std::span<const double> reference) {
  return {icc_2_1(automatic, reference), mad(automatic, reference), bland_altman(automatic, reference),
          automatic.size()};
}

}  // namespace ka
