#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "kneealign/tensor.hpp"

namespace ka {

template <class T>
struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

/// One bias-corrected Adam update of `params` from the gradients held in
/// `grads` (one span per parameter, same element count).
template <class T>
void adam_step(std::span<Tensor<T>> params, std::span<const std::span<const T>> grads, AdamState<T>& state) {
  if (grads.size() != params.size()) {
    throw Error(Errc::ShapeMismatch, "adam_step: gradient list does not match parameter list");
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), T(0));
      state.second_moment.emplace_back(p.numel(), T(0));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw Error(Errc::ShapeMismatch, "adam_step: state was built for a different parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i].numel() || grads[i].size() != params[i].numel()) {
      throw Error(Errc::ShapeMismatch, "adam_step: size mismatch for parameter " + std::to_string(i));
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params[i].data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto g = grads[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = b1 * m[j] + (T(1) - b1) * g[j];
      v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
      const double m_hat = static_cast<double>(m[j]) / correction1;
      const double v_hat = static_cast<double>(v[j]) / correction2;
      values[j] -= static_cast<T>(state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

/// Adam update using the gradients accumulated on the parameters themselves.
/// Parameters never reached by backward() are treated as having zero gradient.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state) {
  std::vector<std::span<const T>> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.push_back(p.grad_mut());
  adam_step(params, std::span<const std::span<const T>>(grads), state);
}

}  // namespace ka
