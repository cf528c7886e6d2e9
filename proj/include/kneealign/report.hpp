#pragma once

// Text outputs: CSV tables, the two summary reports laid out like the
// localization-accuracy and agreement tables, and SVG Bland-Altman plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "kneealign/gradcheck.hpp"
#include "kneealign/workflow.hpp"

namespace ka {

namespace detail {

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.insert(0, width - s.size(), ' ');
  return s;
}

inline std::string pad_right(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace detail

inline std::string format_loss_csv(const std::vector<double>& epoch_loss) {
  std::string out = "epoch,loss\n";
  for (std::size_t i = 0; i < epoch_loss.size(); ++i) out += std::to_string(i) + "," + format_double(epoch_loss[i]) + "\n";
  return out;
}

/// One row per localized image: LowConfidence is raised in `flags`.
inline std::string format_localization_csv(const std::vector<LocalizedItem>& items) {
  std::string out = "id,side,min_confidence,flags\n";
  for (const auto& it : items) {
    out += it.id + "," + to_string(it.side) + "," + format_double(it.min_confidence) + "," +
           (it.low_confidence ? "LowConfidence" : "") + "\n";
  }
  return out;
}

struct AlignmentRow {
  std::string id;
  Side side = Side::Left;
  double fts = 0.0;
  double fnts = 0.0;
  std::string flags;
};

inline std::string format_alignment_csv(const std::vector<AlignmentRow>& rows) {
  std::string out = "id,side,atfa_fts_deg,atfa_fnts_deg,flags\n";
  for (const auto& r : rows) {
    out += r.id + "," + to_string(r.side) + "," + format_double(r.fts) + "," + format_double(r.fnts) + "," + r.flags +
           "\n";
  }
  return out;
}

inline std::string format_per_image_csv(const Evaluation& ev) {
  std::string out = "id,side,post_op,rp2p_pct,rp2c_pct,fts_auto_deg,fts_gt_deg,fnts_auto_deg,fnts_gt_deg,flags\n";
  for (const auto& e : ev.images) {
    out += e.id + "," + to_string(e.side) + "," + (e.post_op ? "1" : "0") + "," + format_double(e.rp2p) + "," +
           format_double(e.rp2c) + "," + format_double(e.fts_auto) + "," + format_double(e.fts_gt) + "," +
           format_double(e.fnts_auto) + "," + format_double(e.fnts_gt) + "," + (e.low_confidence ? "LowConfidence" : "") +
           "\n";
  }
  return out;
}

/// Localization accuracy: mean / median / 95th percentile of rP2P and rP2C
/// per subset, in percent of the reference length.
inline std::string format_table1(const Evaluation& ev, const std::string& method = "This study (desk scale)") {
  using detail::fixed;
  using detail::pad;
  using detail::pad_right;
  std::string out;
  out += "Landmark localization accuracy (percent of the tibial plateau width)\n\n";
  out += pad_right("Data", 16) + pad_right("Method", 26) + "|" + pad("rP2P", 8) + pad("", 8) + pad("", 9) + " |" +
         pad("rP2C", 8) + pad("", 8) + pad("", 9) + "\n";
  out += pad_right("", 16) + pad_right("", 26) + "|" + pad("Mean", 8) + pad("Median", 8) + pad("95%ile", 9) + " |" +
         pad("Mean", 8) + pad("Median", 8) + pad("95%ile", 9) + "\n";
  out += std::string(101, '-') + "\n";
  for (const auto& s : ev.subsets) {
    const auto& l = s.localization;
    out += pad_right(s.name + " (n=" + std::to_string(s.n) + ")", 16) + pad_right(method, 26) + "|" +
           pad(fixed(l.p2p.mean, 2) + "%", 8) + pad(fixed(l.p2p.median, 2) + "%", 8) + pad(fixed(l.p2p.p95, 2) + "%", 9) +
           " |" + pad(fixed(l.p2c.mean, 2) + "%", 8) + pad(fixed(l.p2c.median, 2) + "%", 8) +
           pad(fixed(l.p2c.p95, 2) + "%", 9) + "\n";
  }
  return out;
}

/// Agreement between automatic and ground-truth aTFA for FTS and FNTS.
inline std::string format_table2(const Evaluation& ev) {
  using detail::fixed;
  using detail::pad;
  using detail::pad_right;
  std::string out;
  out += "Agreement between automated (A) and ground-truth (GT) aTFA\n\n";
  out += pad_right("aTFA", 6) + pad_right("Agreement", 26) + "|" + pad("ICC", 8) + pad("CI 95%", 18) + " |" +
         pad("MAD", 8) + pad("SD", 8) + " |" + pad("Bias", 8) + pad("SD", 8) + "\n";
  out += std::string(94, '-') + "\n";
  for (const char* axis : {"FTS", "FNTS"}) {
    for (const auto& s : ev.subsets) {
      const std::string label = s.name + " GT and A (n=" + std::to_string(s.n) + ")";
      if (!s.has_agreement) {
        out += pad_right(axis, 6) + pad_right(label, 26) + "| too few images for agreement statistics\n";
        continue;
      }
      const AgreementReport& r = std::string(axis) == "FTS" ? s.fts : s.fnts;
      out += pad_right(axis, 6) + pad_right(label, 26) + "|" + pad(fixed(r.icc.value, 3), 8) +
             pad("(" + fixed(r.icc.lower, 3) + ", " + fixed(r.icc.upper, 3) + ")", 18) + " |" +
             pad(fixed(r.mad.value, 2) + "°", 9) + pad(fixed(r.mad.sd, 2) + "°", 9) + " |" +
             pad(fixed(r.baa.bias, 2) + "°", 9) + pad(fixed(r.baa.sd, 2) + "°", 9) + "\n";
    }
  }
  return out;
}

/// Flat key = value metrics for scripts.
inline std::string format_summary(const Evaluation& ev) {
  std::string out;
  for (const auto& s : ev.subsets) {
    const std::string p = s.name + ".";
    out += p + "n = " + std::to_string(s.n) + "\n";
    out += p + "rp2p_mean = " + format_double(s.localization.p2p.mean) + "\n";
    out += p + "rp2p_median = " + format_double(s.localization.p2p.median) + "\n";
    out += p + "rp2p_p95 = " + format_double(s.localization.p2p.p95) + "\n";
    out += p + "rp2c_mean = " + format_double(s.localization.p2c.mean) + "\n";
    out += p + "rp2c_median = " + format_double(s.localization.p2c.median) + "\n";
    out += p + "rp2c_p95 = " + format_double(s.localization.p2c.p95) + "\n";
    if (!s.has_agreement) continue;
    for (auto [name, r] : {std::pair<const char*, const AgreementReport*>{"fts", &s.fts}, {"fnts", &s.fnts}}) {
      const std::string q = p + name + ".";
      out += q + "icc = " + format_double(r->icc.value) + "\n";
      out += q + "icc_lower = " + format_double(r->icc.lower) + "\n";
      out += q + "icc_upper = " + format_double(r->icc.upper) + "\n";
      out += q + "mad = " + format_double(r->mad.value) + "\n";
      out += q + "mad_sd = " + format_double(r->mad.sd) + "\n";
      out += q + "bias = " + format_double(r->baa.bias) + "\n";
      out += q + "bias_sd = " + format_double(r->baa.sd) + "\n";
    }
  }
  return out;
}

/// Bland-Altman plot: mean of the two measurements against their difference
/// (automatic minus reference), with bias and 95% limits of agreement.
inline std::string bland_altman_svg(const std::vector<double>& automatic, const std::vector<double>& reference,
                                    const std::string& title) {
  const BlandAltman b = bland_altman(automatic, reference);
  std::vector<double> mx, dy;
  for (std::size_t i = 0; i < automatic.size(); ++i) {
    mx.push_back(0.5 * (automatic[i] + reference[i]));
    dy.push_back(automatic[i] - reference[i]);
  }
  const auto [xmin_it, xmax_it] = std::minmax_element(mx.begin(), mx.end());
  double x0 = *xmin_it, x1 = *xmax_it;
  if (x1 - x0 < 1e-9) {
    x0 -= 1.0;
    x1 += 1.0;
  }
  const double xpad = 0.05 * (x1 - x0);
  x0 -= xpad;
  x1 += xpad;
  double yabs = std::max({std::abs(b.lower), std::abs(b.upper), 0.5});
  for (double d : dy) yabs = std::max(yabs, std::abs(d));
  yabs *= 1.15;
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 55;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double y) { return T + (yabs - y) / (2 * yabs) * (H - T - B); };
  using detail::fixed;
  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\" "
       "font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + title + "</text>\n";
  s += "<rect x=\"" + fixed(L, 1) + "\" y=\"" + fixed(T, 1) + "\" width=\"" + fixed(W - L - R, 1) + "\" height=\"" +
       fixed(H - T - B, 1) + "\" fill=\"none\" stroke=\"black\"/>\n";
  auto hline = [&](double y, const char* colour, const char* dash, const std::string& label) {
    s += "<line x1=\"" + fixed(L, 1) + "\" x2=\"" + fixed(W - R, 1) + "\" y1=\"" + fixed(sy(y), 2) + "\" y2=\"" +
         fixed(sy(y), 2) + "\" stroke=\"" + colour + "\" stroke-dasharray=\"" + dash + "\"/>\n";
    s += "<text x=\"" + fixed(W - R - 4, 1) + "\" y=\"" + fixed(sy(y) - 4, 2) + "\" text-anchor=\"end\" fill=\"" +
         colour + "\">" + label + "</text>\n";
  };
  hline(0.0, "#999999", "2,3", "");
  hline(b.bias, "#1f4e9c", "none", "bias " + fixed(b.bias, 2) + "°");
  hline(b.upper, "#b03030", "6,4", "+1.96 SD " + fixed(b.upper, 2) + "°");
  hline(b.lower, "#b03030", "6,4", "-1.96 SD " + fixed(b.lower, 2) + "°");
  for (std::size_t i = 0; i < mx.size(); ++i) {
    s += "<circle cx=\"" + fixed(sx(mx[i]), 2) + "\" cy=\"" + fixed(sy(dy[i]), 2) +
         "\" r=\"3\" fill=\"#333333\" fill-opacity=\"0.7\"/>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0, yv = -yabs + 2 * yabs * t / 4.0;
    s += "<text x=\"" + fixed(sx(xv), 1) + "\" y=\"" + fixed(H - B + 16, 1) + "\" text-anchor=\"middle\">" +
         fixed(xv, 1) + "</text>\n";
    s += "<text x=\"" + fixed(L - 6, 1) + "\" y=\"" + fixed(sy(yv) + 4, 1) + "\" text-anchor=\"end\">" + fixed(yv, 2) +
         "</text>\n";
  }
  s += "<text x=\"" + fixed(0.5 * (L + W - R), 1) + "\" y=\"" + fixed(H - 14, 1) +
       "\" text-anchor=\"middle\">mean of automated and ground truth (deg)</text>\n";
  s += "<text transform=\"translate(18," + fixed(0.5 * (T + H - B), 1) +
       ") rotate(-90)\" text-anchor=\"middle\">automated minus ground truth (deg)</text>\n";
  s += "</svg>\n";
  return s;
}

inline std::string format_gradcheck_table(const std::vector<GradCheckResult>& results) {
  std::string out = detail::pad_right("check", 28) + detail::pad("samples", 8) + detail::pad("max rel err", 14) + "  result\n";
  for (const auto& r : results) {
    char err[32];
    std::snprintf(err, sizeof(err), "%.3e", r.max_rel_error);
    out += detail::pad_right(r.name, 28) + detail::pad(std::to_string(r.checked), 8) + detail::pad(err, 14) + "  " +
           (r.passed ? "PASS" : "FAIL") + "\n";
  }
  return out;
}

}  // namespace ka
