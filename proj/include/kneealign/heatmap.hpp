#pragma once

// Per-landmark heatmaps: Gaussian targets and coordinate decoders.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "kneealign/error.hpp"
#include "kneealign/geometry.hpp"

namespace ka {

struct HeatmapStack {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> values;  // [k][y][x]

  HeatmapStack() = default;
  HeatmapStack(int k, int h, int w, double fill = 0.0)
      : channels(k), height(h), width(w), values(static_cast<std::size_t>(k) * h * w, fill) {
    if (k < 1 || h < 1 || w < 1) throw Error(Errc::BadSize, "heatmap stack dimensions must be positive");
  }

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int k, int y, int x) { return values[k * plane() + static_cast<std::size_t>(y) * width + x]; }
  double at(int k, int y, int x) const { return values[k * plane() + static_cast<std::size_t>(y) * width + x]; }
  const double* channel(int k) const { return values.data() + k * plane(); }
};

/// Gaussian target maps with peak 1 at each (continuous) landmark. Points up
/// to 2 sigma outside the frame are clamped onto its border and counted in
/// `clamped`; points further out are rejected.
inline HeatmapStack encode_gaussian(const std::vector<Point2>& landmarks, double sigma, int height, int width,
                                    int* clamped = nullptr) {
  if (!(sigma > 0.0)) throw Error(Errc::BadSize, "encode_gaussian needs sigma > 0");
  if (landmarks.empty()) throw Error(Errc::BadSize, "encode_gaussian needs at least one landmark");
  HeatmapStack out(static_cast<int>(landmarks.size()), height, width);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  int n_clamped = 0;
  for (int k = 0; k < out.channels; ++k) {
    Point2 p = landmarks[static_cast<std::size_t>(k)];
    const Point2 c{std::clamp(p.x, 0.0, width - 1.0), std::clamp(p.y, 0.0, height - 1.0)};
    if (!is_finite(p) || distance(p, c) > 2.0 * sigma) {
      throw Error(Errc::BadSize, "landmark " + std::to_string(k) + " lies outside the heatmap frame");
    }
    if (c != p) {
      ++n_clamped;
      p = c;
    }
    for (int y = 0; y < height; ++y) {
      const double dy2 = (y - p.y) * (y - p.y);
      for (int x = 0; x < width; ++x) out.at(k, y, x) = std::exp(-((x - p.x) * (x - p.x) + dy2) * inv);
    }
  }
  if (clamped) *clamped = n_clamped;
  return out;
}

/// Softmax(beta * h) probabilities of one channel (max-subtracted).
inline std::vector<double> channel_softmax(const HeatmapStack& s, int k, double beta) {
  const double* h = s.channel(k);
  const std::size_t n = s.plane();
  const double m = *std::max_element(h, h + n);
  std::vector<double> p(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp(beta * (h[i] - m)));
  for (auto& v : p) v /= z;
  return p;
}

/// Expected coordinates under softmax(beta * h), per channel.
inline std::vector<Point2> decode_soft_argmax(const HeatmapStack& s, double beta) {
  if (!(beta > 0.0)) throw Error(Errc::BadSize, "decode_soft_argmax needs beta > 0");
  std::vector<Point2> out;
  out.reserve(static_cast<std::size_t>(s.channels));
  for (int k = 0; k < s.channels; ++k) {
    const auto p = channel_softmax(s, k, beta);
    Point2 c{0.0, 0.0};
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        const double w = p[static_cast<std::size_t>(y) * s.width + x];
        c.x += w * x;
        c.y += w * y;
      }
    }
    out.push_back(c);
  }
  return out;
}

/// First (smallest linear index) maximum of channel k.
inline std::pair<int, int> channel_argmax(const HeatmapStack& s, int k) {
  const double* h = s.channel(k);
  const auto idx = static_cast<int>(std::max_element(h, h + s.plane()) - h);
  return {idx % s.width, idx / s.width};
}

/// Integer argmax refined by a 1-D parabola through the peak and its two
/// neighbours, separately in x and y. Offsets are limited to half a pixel.
inline std::vector<Point2> decode_argmax_subpixel(const HeatmapStack& s) {
  std::vector<Point2> out;
  out.reserve(static_cast<std::size_t>(s.channels));
  auto refine = [](double lo, double mid, double hi) {
    const double denom = lo - 2.0 * mid + hi;
    if (!(denom < 0.0)) return 0.0;
    return std::clamp(0.5 * (lo - hi) / denom, -0.5, 0.5);
  };
  for (int k = 0; k < s.channels; ++k) {
    const auto [x, y] = channel_argmax(s, k);
    Point2 p{static_cast<double>(x), static_cast<double>(y)};
    if (x > 0 && x + 1 < s.width) p.x += refine(s.at(k, y, x - 1), s.at(k, y, x), s.at(k, y, x + 1));
    if (y > 0 && y + 1 < s.height) p.y += refine(s.at(k, y - 1, x), s.at(k, y, x), s.at(k, y + 1, x));
    out.push_back(p);
  }
  return out;
}

/// Softmax mass inside the 3x3 neighbourhood of each channel's mode. Near 1
/// for a sharp peak, about 9/(H*W) for a flat map.
inline std::vector<double> peak_confidence(const HeatmapStack& s, double beta) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(s.channels));
  for (int k = 0; k < s.channels; ++k) {
    const auto p = channel_softmax(s, k, beta);
    const auto [x0, y0] = channel_argmax(s, k);
    double mass = 0.0;
    for (int y = std::max(0, y0 - 1); y <= std::min(s.height - 1, y0 + 1); ++y) {
      for (int x = std::max(0, x0 - 1); x <= std::min(s.width - 1, x0 + 1); ++x) {
        mass += p[static_cast<std::size_t>(y) * s.width + x];
      }
    }
    out.push_back(mass);
  }
  return out;
}

}  // namespace ka
