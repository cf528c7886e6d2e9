#pragma once

// Training-set construction for both stages and the hourglass training loop
// (Adam on the Wing loss of soft-argmax coordinates).

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "kneealign/adam.hpp"
#include "kneealign/heatmap.hpp"
#include "kneealign/hourglass.hpp"
#include "kneealign/landmarks.hpp"
#include "kneealign/pipeline.hpp"

namespace ka {

/// One frame image with its target coordinates (frame pixels).
struct TrainingSample {
  Image frame;
  std::vector<Point2> target;
};

/// Global-stage sample: whole image fitted into the global frame, targets
/// are the two reference points. `gt` must be in the left-knee view.
inline TrainingSample make_global_sample(const Image& image, const LandmarkSet& gt, const PipelineSpec& spec) {
  const SimilarityTransform g = global_frame_transform(image.height, image.width, spec.global_height, spec.global_width);
  const SimilarityTransform inv = g.inverse();
  const auto [p0, p1] = gt.pair(gt.roles.tibial_plateau);
  return {sample_frame(image, g, spec.global_height, spec.global_width), {inv.apply(p0), inv.apply(p1)}};
}

/// Local-stage sample in the frame fixed by reference points p0, p1.
inline TrainingSample make_local_sample(const Image& image, const LandmarkSet& gt, Point2 p0, Point2 p1,
                                        const PipelineSpec& spec) {
  const SimilarityTransform t = local_frame_transform(p0, p1, spec.local);
  const SimilarityTransform inv = t.inverse();
  TrainingSample s{sample_frame(image, t, spec.local.height, spec.local.width), {}};
  s.target.reserve(gt.size());
  for (const auto& p : gt.points) s.target.push_back(inv.apply(p));
  return s;
}

/// Horizontal mirror of a sample with target indices remapped by `mirror`.
inline TrainingSample mirror_sample(const TrainingSample& s, const std::vector<int>& mirror) {
  if (mirror.size() != s.target.size()) throw Error(Errc::MissingMirrorTable, "mirror table does not fit the sample");
  TrainingSample out{flip_horizontal(s.frame), s.target};
  const double w1 = s.frame.width - 1.0;
  for (std::size_t k = 0; k < mirror.size(); ++k) {
    const Point2 p = s.target[static_cast<std::size_t>(mirror[k])];
    out.target[k] = {w1 - p.x, p.y};
  }
  return out;
}

struct TrainOptions {
  std::vector<int> mirror;  // required when the config enables flip_augment
  std::function<void(int epoch, double loss)> on_epoch;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

namespace detail {

template <class T>
Tensor<T> batch_images(const std::vector<const TrainingSample*>& batch) {
  const int h = batch.front()->frame.height, w = batch.front()->frame.width;
  std::vector<T> v;
  v.reserve(batch.size() * static_cast<std::size_t>(h) * w);
  for (const auto* s : batch) {
    for (float px : s->frame.pixels) v.push_back(static_cast<T>(px / 255.0f));
  }
  return Tensor<T>({static_cast<int>(batch.size()), 1, h, w}, std::move(v));
}

template <class T>
Tensor<T> batch_targets(const std::vector<const TrainingSample*>& batch) {
  const int k = static_cast<int>(batch.front()->target.size());
  std::vector<T> v;
  for (const auto* s : batch) {
    for (const auto& p : s->target) {
      v.push_back(static_cast<T>(p.x));
      v.push_back(static_cast<T>(p.y));
    }
  }
  return Tensor<T>({static_cast<int>(batch.size()), k, 2}, std::move(v));
}

template <class T>
Tensor<T> batch_heatmaps(const std::vector<const TrainingSample*>& batch, double sigma) {
  const int h = batch.front()->frame.height, w = batch.front()->frame.width;
  const int k = static_cast<int>(batch.front()->target.size());
  std::vector<T> v;
  v.reserve(batch.size() * static_cast<std::size_t>(k) * h * w);
  for (const auto* s : batch) {
    std::vector<Point2> pts = s->target;
    for (auto& p : pts) p = {std::clamp(p.x, 0.0, w - 1.0), std::clamp(p.y, 0.0, h - 1.0)};
    for (double x : encode_gaussian(pts, sigma, h, w).values) v.push_back(static_cast<T>(x));
  }
  return Tensor<T>({static_cast<int>(batch.size()), k, h, w}, std::move(v));
}

}  // namespace detail

/// Training loss of one batch: Wing loss on soft-argmax coordinates plus the
/// optional heatmap MSE term.
template <class T>
Tensor<T> batch_loss(const HourglassModel<T>& model, const Tensor<T>& images, const Tensor<T>& targets,
                     const Tensor<T>* heatmaps = nullptr) {
  const HourglassConfig& c = model.config();
  const Tensor<T> logits = model.forward(images);
  Tensor<T> loss = wing_loss(soft_argmax(logits, static_cast<T>(c.softargmax_beta)), targets, c.wing_w, c.wing_epsilon);
  if (heatmaps && c.heatmap_loss_weight > 0.0) {
    loss = add(loss, scale(mse_loss(logits, *heatmaps), static_cast<T>(c.heatmap_loss_weight)));
  }
  return loss;
}

/// Trains `model` in place. Deterministic for a fixed config seed.
template <class T>
TrainResult train_hourglass(HourglassModel<T>& model, const std::vector<TrainingSample>& data,
                            const TrainOptions& options = {}) {
  const HourglassConfig& c = model.config();
  if (data.empty()) throw Error(Errc::EmptyDataset, "training set is empty");
  for (const auto& s : data) {
    if (s.frame.height != c.input_height || s.frame.width != c.input_width ||
        s.target.size() != static_cast<std::size_t>(c.landmarks)) {
      throw Error(Errc::ShapeMismatch, "training sample does not match the model config");
    }
  }
  std::vector<TrainingSample> mirrored;
  if (c.flip_augment) {
    mirrored.reserve(data.size());
    for (const auto& s : data) mirrored.push_back(mirror_sample(s, options.mirror));
  }
  std::vector<const TrainingSample*> pool;
  for (const auto& s : data) pool.push_back(&s);
  for (const auto& s : mirrored) pool.push_back(&s);

  std::mt19937_64 rng(c.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState<T> adam;
  adam.learning_rate = static_cast<T>(c.learning_rate);
  std::vector<Tensor<T>> params = model.parameters();
  TrainResult result;
  std::vector<std::size_t> order(pool.size());
  const std::size_t bs = static_cast<std::size_t>(c.batch_size);

  for (int epoch = 0; epoch < c.epochs; ++epoch) {
    const double progress = c.epochs > 1 ? static_cast<double>(epoch) / (c.epochs - 1) : 0.0;
    const double decay = c.lr_final_factor + (1.0 - c.lr_final_factor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    adam.learning_rate = static_cast<T>(c.learning_rate * decay);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      std::vector<const TrainingSample*> batch;
      for (std::size_t i = start; i < std::min(order.size(), start + bs); ++i) batch.push_back(pool[order[i]]);
      const Tensor<T> images = detail::batch_images<T>(batch);
      const Tensor<T> targets = detail::batch_targets<T>(batch);
      Tensor<T> heatmaps;
      if (c.heatmap_loss_weight > 0.0) heatmaps = detail::batch_heatmaps<T>(batch, c.sigma_target);
      model.zero_grad();
      const Tensor<T> loss = batch_loss(model, images, targets, c.heatmap_loss_weight > 0.0 ? &heatmaps : nullptr);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw Error(Errc::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                             std::to_string(result.steps) + " (lr " +
                                             format_double(c.learning_rate) + ")");
      }
      backward(loss);
      adam_step(std::span<Tensor<T>>(params), adam);
      ++result.steps;
      total += value * static_cast<double>(batch.size());
    }
    result.epoch_loss.push_back(total / static_cast<double>(pool.size()));
    if (options.on_epoch) options.on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

/// Frame-coordinate predictions of a model for each sample (batched, no grad).
template <class T>
std::vector<std::vector<Point2>> predict_frames(const HourglassModel<T>& model, const std::vector<Image>& frames,
                                                std::size_t batch = 8) {
  NoGradGuard no_grad;
  std::vector<std::vector<Point2>> out;
  const T beta = static_cast<T>(model.config().softargmax_beta);
  for (std::size_t start = 0; start < frames.size(); start += batch) {
    std::vector<TrainingSample> tmp;
    std::vector<const TrainingSample*> ptrs;
    const std::size_t end = std::min(frames.size(), start + batch);
    tmp.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) tmp.push_back({frames[i], {}});
    for (const auto& s : tmp) ptrs.push_back(&s);
    const Tensor<T> coords = soft_argmax(model.forward(detail::batch_images<T>(ptrs)), beta);
    const auto d = coords.data();
    const int k = coords.dim(1);
    for (std::size_t b = 0; b < ptrs.size(); ++b) {
      std::vector<Point2> pts;
      for (int j = 0; j < k; ++j) {
        const std::size_t o = (b * static_cast<std::size_t>(k) + static_cast<std::size_t>(j)) * 2;
        pts.push_back({static_cast<double>(d[o]), static_cast<double>(d[o + 1])});
      }
      out.push_back(std::move(pts));
    }
  }
  return out;
}

}  // namespace ka
