#pragma once

// Central finite-difference checks of reverse-mode gradients (64-bit).

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "kneealign/hourglass.hpp"
#include "kneealign/ops.hpp"
#include "kneealign/tensor.hpp"
#include "kneealign/train.hpp"

namespace ka {

struct GradCheckResult {
  std::string name;
  int checked = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradCheckOptions {
  int samples = 50;
  double step = 1e-6;
  double tolerance = 1e-3;
  double abs_floor = 1e-6;  // relative errors use max(|analytic|, |numeric|, abs_floor)
  std::uint64_t seed = 7;
};

/// Compares backward() against central differences on `samples` randomly
/// chosen scalar entries drawn from all of `params`.
inline GradCheckResult finite_difference_check(const std::string& name, std::vector<Tensor<double>> params,
                                               const std::function<Tensor<double>()>& loss_fn,
                                               const GradCheckOptions& opt = {}) {
  for (auto& p : params) p.node()->grad.clear();
  backward(loss_fn());
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].numel(); ++j) entries.emplace_back(i, j);
  }
  std::mt19937_64 rng(opt.seed);
  std::shuffle(entries.begin(), entries.end(), rng);
  if (entries.size() > static_cast<std::size_t>(opt.samples)) entries.resize(static_cast<std::size_t>(opt.samples));

  GradCheckResult r{name, 0, 0.0, true};
  NoGradGuard no_grad;
  for (auto [i, j] : entries) {
    auto values = params[i].data();
    const double saved = values[j];
    values[j] = saved + opt.step;
    const double up = loss_fn().item();
    values[j] = saved - opt.step;
    const double down = loss_fn().item();
    values[j] = saved;
    const double numeric = (up - down) / (2.0 * opt.step);
    const auto g = params[i].grad();
    const double analytic = g.empty() ? 0.0 : g[j];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.abs_floor});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(analytic - numeric) / denom);
    ++r.checked;
  }
  r.passed = r.max_rel_error <= opt.tolerance && r.checked > 0;
  return r;
}

namespace detail {

inline Tensor<double> random_param(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                                   double keep_away_from_zero = 0.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    do x = u(rng);
    while (std::abs(x) < keep_away_from_zero);
  }
  return Tensor<double>::parameter(std::move(shape), std::move(v));
}

inline Tensor<double> random_const(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

// sum(y * R) with a fixed random R, so every output element gets a distinct weight.
inline Tensor<double> probe(const Tensor<double>& y, const Tensor<double>& r) { return sum(mul(y, r)); }

}  // namespace detail

/// Every operator in isolation plus the hourglass loss, gated and gate-free.
inline std::vector<GradCheckResult> run_standard_gradchecks(const GradCheckOptions& opt = {}) {
  using detail::probe;
  using detail::random_const;
  using detail::random_param;
  std::mt19937_64 rng(opt.seed);
  std::vector<GradCheckResult> out;

  {
    auto x = random_param(rng, {2, 3, 6, 6});
    auto w = random_param(rng, {4, 3, 3, 3});
    auto b = random_param(rng, {4});
    auto r = random_const(rng, {2, 4, 6, 6});
    out.push_back(finite_difference_check("conv2d 3x3 pad1", {x, w, b}, [=] { return probe(conv2d(x, w, b, 1, 1), r); }, opt));
    auto r2 = random_const(rng, {2, 4, 2, 2});
    out.push_back(finite_difference_check("conv2d 3x3 stride2", {x, w, b}, [=] { return probe(conv2d(x, w, b, 2, 0), r2); }, opt));
  }
  {
    auto x = random_param(rng, {2, 3, 4, 4}, -1.0, 1.0, 1e-3);
    auto r = random_const(rng, {2, 3, 4, 4});
    out.push_back(finite_difference_check("relu", {x}, [=] { return probe(relu(x), r); }, opt));
    out.push_back(finite_difference_check("sigmoid", {x}, [=] { return probe(sigmoid(x), r); }, opt));
    out.push_back(finite_difference_check("scale", {x}, [=] { return probe(scale(x, 0.7), r); }, opt));
    out.push_back(finite_difference_check("sum", {x}, [=] { return sum(x); }, opt));
    out.push_back(finite_difference_check("mean", {x}, [=] { return mean(mul(x, x)); }, opt));
    auto y = random_param(rng, {2, 3, 4, 4});
    out.push_back(finite_difference_check("add", {x, y}, [=] { return probe(add(x, y), r); }, opt));
    out.push_back(finite_difference_check("mul", {x, y}, [=] { return probe(mul(x, y), r); }, opt));
    auto g = random_param(rng, {2, 1, 4, 4});
    out.push_back(finite_difference_check("mul broadcast", {x, g}, [=] { return probe(mul(x, g), r); }, opt));
    auto rp = random_const(rng, {2, 3, 2, 2});
    out.push_back(finite_difference_check("maxpool2", {x}, [=] { return probe(maxpool2(x), rp); }, opt));
    auto ru = random_const(rng, {2, 3, 8, 8});
    out.push_back(finite_difference_check("upsample_nearest2", {x}, [=] { return probe(upsample_nearest2(x), ru); }, opt));
  }
  {
    auto h = random_param(rng, {2, 3, 5, 6}, -2.0, 2.0);
    auto r = random_const(rng, {2, 3, 2});
    out.push_back(finite_difference_check("soft_argmax", {h}, [=] { return probe(soft_argmax(h, 1.5), r); }, opt));
  }
  {
    // Residuals straddle both branches (|x| < w and |x| > w).
    auto p = random_param(rng, {4, 8, 2}, -25.0, 25.0);
    auto t = random_param(rng, {4, 8, 2}, -1.0, 1.0);
    out.push_back(finite_difference_check("wing_loss", {p, t}, [=] { return wing_loss(p, t, 10.0, 2.0); }, opt));
    out.push_back(finite_difference_check("mse_loss", {p, t}, [=] { return mse_loss(p, t); }, opt));
  }
  {
    HourglassConfig c;
    c.depth = 2;
    c.width = 4;
    c.landmarks = 3;
    c.input_height = 8;
    c.input_width = 8;
    c.seed = opt.seed;
    HourglassModel<double> model(c);
    // A nonzero head so gradients reach every layer.
    std::normal_distribution<double> n(0.0, 0.3);
    auto head = model.head().weight;
    for (auto& v : head.data()) v = n(rng);
    auto img = random_const(rng, {2, 1, 8, 8});
    auto tgt = random_const(rng, {2, 3, 2});
    for (auto& v : tgt.data()) v = 3.5 + 3.0 * v;
    auto gate = model.gates()[0];
    auto xs = random_param(rng, {2, 4, 8, 8});
    auto gs = random_param(rng, {2, 8, 4, 4});
    auto rg = random_const(rng, {2, 4, 8, 8});
    std::vector<Tensor<double>> gp{xs, gs, gate.skip_proj.weight, gate.skip_proj.bias, gate.gate_proj.weight,
                                   gate.gate_proj.bias, gate.psi.weight, gate.psi.bias};
    out.push_back(finite_difference_check("attention_gate", gp, [=] { return probe(gate(xs, gs), rg); }, opt));
    out.push_back(finite_difference_check("hourglass+AG wing loss", model.parameters(),
                                          [&] { return batch_loss(model, img, tgt); }, opt));
    c.attention_gates = false;
    HourglassModel<double> plain(c);
    auto plain_head = plain.head().weight;
    for (auto& v : plain_head.data()) v = n(rng);
    std::vector<Tensor<double>> used;
    for (auto& p : plain.named_parameters()) {
      if (p.name.rfind("gate", 0) != 0) used.push_back(p.tensor);
    }
    out.push_back(finite_difference_check("hourglass wing loss", used,
                                          [&] { return batch_loss(plain, img, tgt); }, opt));
  }
  return out;
}

}  // namespace ka
