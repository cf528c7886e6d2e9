#pragma once

// Two-stage localization. The global stage sees the whole image (fitted into
// a small frame) and finds the two reference points; those fix a similarity
// frame in which the local stage places every landmark; the result is mapped
// back to image coordinates.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <thread>
#include <vector>

#include "kneealign/error.hpp"
#include "kneealign/geometry.hpp"
#include "kneealign/heatmap.hpp"
#include "kneealign/hourglass.hpp"
#include "kneealign/image.hpp"
#include "kneealign/landmarks.hpp"

namespace ka {

/// Frame of fixed size in which the two reference points have fixed
/// coordinates q0 and q1.
struct ReferenceFrameSpec {
  int height = 96;
  int width = 96;
  Point2 q0;
  Point2 q1;
  double margin = 0.1;  // q0, q1 must stay this fraction of the size away from the border

  /// Pair spans `span` of the width, horizontal, centred.
  static ReferenceFrameSpec centered(int height, int width, double span = 0.4) {
    ReferenceFrameSpec s;
    s.height = height;
    s.width = width;
    const Point2 c{0.5 * (width - 1), 0.5 * (height - 1)};
    s.q0 = {c.x - 0.5 * span * width, c.y};
    s.q1 = {c.x + 0.5 * span * width, c.y};
    s.validate();
    return s;
  }

  void validate() const {
    if (height < 1 || width < 1) throw Error(Errc::ConfigError, "frame size must be positive");
    if (distance(q0, q1) < 1e-9) throw Error(Errc::ConfigError, "frame reference points coincide");
    for (Point2 q : {q0, q1}) {
      if (q.x < margin * width || q.x > (1.0 - margin) * width || q.y < margin * height ||
          q.y > (1.0 - margin) * height) {
        throw Error(Errc::ConfigError, "frame reference point outside the margin");
      }
    }
  }
};

/// Frame -> image map that fits the whole image into a frame_h x frame_w
/// frame, preserving aspect ratio, centred, zero padded.
inline SimilarityTransform global_frame_transform(int image_h, int image_w, int frame_h, int frame_w) {
  const double s = std::max(static_cast<double>(image_w) / frame_w, static_cast<double>(image_h) / frame_h);
  const Point2 ci{0.5 * (image_w - 1), 0.5 * (image_h - 1)};
  const Point2 cf{0.5 * (frame_w - 1), 0.5 * (frame_h - 1)};
  return SimilarityTransform(s, 0.0, ci - s * cf);
}

/// Frame -> image map placing detected reference points p0, p1 at the frame's q0, q1.
inline SimilarityTransform local_frame_transform(Point2 p0, Point2 p1, const ReferenceFrameSpec& spec) {
  return frame_from_point_pair(p0, p1, spec.q0, spec.q1);
}

struct StageOutput {
  std::vector<Point2> points;     // frame coordinates
  std::vector<double> confidence;  // per point, in [0, 1]
};

/// A localization stage maps a frame image to frame-coordinate points.
using Stage = std::function<StageOutput(const Image&)>;

inline constexpr double kLowConfidenceThreshold = 0.1;

/// Intensities 0..255 -> tensor [1,1,H,W] in 0..1.
template <class T>
Tensor<T> image_tensor(const Image& img) {
  std::vector<T> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(img.pixels[i] / 255.0f);
  return Tensor<T>({1, 1, img.height, img.width}, std::move(v));
}

/// Logits [1,K,H,W] of a single image as a heatmap stack.
template <class T>
HeatmapStack logits_to_stack(const Tensor<T>& logits) {
  HeatmapStack s(logits.dim(1), logits.dim(2), logits.dim(3));
  auto d = logits.data();
  for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = static_cast<double>(d[i]);
  return s;
}

/// Stage backed by a trained hourglass; points are soft-argmax decoded with
/// the model's own beta.
inline Stage hourglass_stage(std::shared_ptr<const HourglassModel<float>> model) {
  return [model](const Image& frame) {
    NoGradGuard no_grad;
    const Tensor<float> logits = model->forward(image_tensor<float>(frame));
    const HeatmapStack stack = logits_to_stack(logits);
    const double beta = model->config().softargmax_beta;
    return StageOutput{decode_soft_argmax(stack, beta), peak_confidence(stack, beta)};
  };
}

struct Localization {
  std::vector<Point2> points;  // image coordinates
  Point2 reference0, reference1;  // global detections, image coordinates
  SimilarityTransform frame_to_image;
  double min_confidence = 1.0;
  bool low_confidence = false;
};

struct PipelineSpec {
  int global_height = 64;
  int global_width = 64;
  ReferenceFrameSpec local = ReferenceFrameSpec::centered(96, 96);
};

inline Localization localize(const Image& image, const Stage& global, const Stage& local, const PipelineSpec& spec) {
  if (image.empty()) throw Error(Errc::BadSize, "localize on an empty image");
  Localization out;
  const SimilarityTransform g = global_frame_transform(image.height, image.width, spec.global_height, spec.global_width);
  const StageOutput ref = global(sample_frame(image, g, spec.global_height, spec.global_width));
  if (ref.points.size() != 2) throw Error(Errc::ShapeMismatch, "global stage must return two reference points");
  out.reference0 = g.apply(ref.points[0]);
  out.reference1 = g.apply(ref.points[1]);
  out.frame_to_image = local_frame_transform(out.reference0, out.reference1, spec.local);

  const StageOutput det = local(sample_frame(image, out.frame_to_image, spec.local.height, spec.local.width));
  out.points.reserve(det.points.size());
  for (Point2 p : det.points) out.points.push_back(out.frame_to_image.apply(p));
  // Only the reference detections gate the flag: they fix the whole frame,
  // while contour points are inherently spread along their contour.
  for (double c : ref.confidence) out.min_confidence = std::min(out.min_confidence, c);
  out.low_confidence = out.min_confidence < kLowConfidenceThreshold;
  return out;
}

/// Mirrors the image and its landmarks (indices remapped, side toggled).
/// Applied to a right knee it yields the left-knee view; applying it twice
/// restores the input exactly.
inline std::pair<Image, LandmarkSet> flip_to_left(const Image& image, const LandmarkSet& landmarks,
                                                  const LandmarkSchema& schema) {
  return {flip_horizontal(image), mirror_landmarks(landmarks, schema, image.width)};
}

/// Localizes a knee of either side: right knees are flipped, processed as
/// left knees and mapped back.
inline Localization localize_knee(const Image& image, Side side, const Stage& global, const Stage& local,
                                  const PipelineSpec& spec, const LandmarkSchema& schema) {
  if (side == Side::Left) return localize(image, global, local, spec);
  if (!schema.has_mirror()) throw Error(Errc::MissingMirrorTable, "right knee needs the schema mirror table");
  Localization r = localize(flip_horizontal(image), global, local, spec);
  LandmarkSet flipped = schema.make_set(r.points, Side::Left);
  r.points = mirror_landmarks(flipped, schema, image.width).points;
  const double w1 = image.width - 1.0;
  r.reference0 = {w1 - r.reference0.x, r.reference0.y};
  r.reference1 = {w1 - r.reference1.x, r.reference1.y};
  return r;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// handled exactly once; results must be written to per-index slots.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Worker count: explicit request, else KA_THREADS, else hardware concurrency.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("KA_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace ka
