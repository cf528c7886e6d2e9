#pragma once

// Single-channel float images (intensity 0..255), binary PGM I/O and the
// sampling primitives the pipeline needs. Pixel (col, row) has its centre at
// continuous coordinate (x = col, y = row).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kneealign/error.hpp"
#include "kneealign/geometry.hpp"

namespace ka {

struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw Error(Errc::BadSize, "image dimensions must be positive");
  }

  bool empty() const { return pixels.empty(); }
  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear interpolation; each of the four neighbours outside the image
/// contributes 0.
inline double sample_bilinear(const Image& img, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
  if (x0 < -1 || y0 < -1 || x0 >= img.width || y0 >= img.height) return 0.0;
  const double ax = x - fx, ay = y - fy;
  auto px = [&](int xx, int yy) -> double { return img.contains(xx, yy) ? img.at(xx, yy) : 0.0; };
  double v = 0.0;
  if (ax < 1.0 && ay < 1.0) v += (1 - ax) * (1 - ay) * px(x0, y0);
  if (ax > 0.0 && ay < 1.0) v += ax * (1 - ay) * px(x0 + 1, y0);
  if (ax < 1.0 && ay > 0.0) v += (1 - ax) * ay * px(x0, y0 + 1);
  if (ax > 0.0 && ay > 0.0) v += ax * ay * px(x0 + 1, y0 + 1);
  return v;
}

/// Frame image of the given size whose pixel p samples `src` at T(p).
inline Image resample_into_frame(const Image& src, const SimilarityTransform& frame_to_image, int height,
                                 int width) {
  if (src.empty()) throw Error(Errc::BadSize, "resample_into_frame on empty image");
  Image out(width, height);
  const auto a = frame_to_image.linear();
  const Vec2 t = frame_to_image.translation();
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      const double x = a.real() * u - a.imag() * v + t.x;
      const double y = a.imag() * u + a.real() * v + t.y;
      out.at(u, v) = static_cast<float>(sample_bilinear(src, x, y));
    }
  }
  return out;
}

/// Separable Gaussian blur with edge-clamped borders; sigma <= 0 is a copy.
inline Image gaussian_blur(const Image& src, double sigma) {
  if (!(sigma > 0.0)) return src;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    kernel[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& k : kernel) k /= total;

  Image tmp(src.width, src.height), out(src.width, src.height);
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * src.at(std::clamp(x + i, 0, src.width - 1), y);
      }
      tmp.at(x, y) = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(x, std::clamp(y + i, 0, src.height - 1));
      }
      out.at(x, y) = static_cast<float>(acc);
    }
  }
  return out;
}

/// Resampling that first low-passes the source when the frame is coarser than
/// the image (scale > 1), so shrinking does not alias.
inline Image sample_frame(const Image& src, const SimilarityTransform& frame_to_image, int height, int width) {
  const double s = frame_to_image.scale();
  if (s > 1.0) {
    return resample_into_frame(gaussian_blur(src, 0.5 * std::sqrt(s * s - 1.0)), frame_to_image, height, width);
  }
  return resample_into_frame(src, frame_to_image, height, width);
}

/// Mirror about the vertical axis: column x -> (W-1) - x.
inline Image flip_horizontal(const Image& src) {
  Image out = src;
  for (int y = 0; y < src.height; ++y) {
    for (int x = 0; x < src.width; ++x) out.at(x, y) = src.at(src.width - 1 - x, y);
  }
  return out;
}

/// 8-bit binary PGM (P5). Values are rounded and clamped to 0..255.
inline void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::clamp(std::lround(img.pixels[i]), 0L, 255L));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  auto next_token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        if (!tok.empty()) break;
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  if (next_token() != "P5") throw Error(Errc::ParseError, path.string() + ": not a binary PGM (P5)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw Error(Errc::ParseError, path.string() + ": malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw Error(Errc::ParseError, path.string() + ": only 8-bit PGM is supported");
  }
  Image img(w, h);
  std::vector<unsigned char> bytes(img.pixels.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(Errc::ParseError, path.string() + ": truncated pixel data");
  }
  const float k = 255.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) * k;
  return img;
}

}  // namespace ka
