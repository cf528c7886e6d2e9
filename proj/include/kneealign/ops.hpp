#pragma once

// Differentiable operators for the hourglass network: convolution, pointwise
// activations, 2x2 pooling / nearest upsampling, soft-argmax decoding and the
// Wing / MSE losses. Spatial tensors are NCHW.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

#include "kneealign/tensor.hpp"

namespace ka {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
std::vector<T>& scratch() {
  thread_local std::vector<T> buffer;
  return buffer;
}

struct ConvGeometry {
  int channels, height, width, kernel, stride, padding, out_height, out_width;
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const int k = g.kernel;
  const std::size_t plane = static_cast<std::size_t>(g.out_height) * g.out_width;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < g.out_height; ++oy) {
          T* dst = row + static_cast<std::size_t>(oy) * g.out_width;
          const int iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) {
            std::fill(dst, dst + g.out_width, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          if (g.stride == 1) {
            const int lo = std::clamp(g.padding - kj, 0, g.out_width);
            const int hi = std::clamp(g.width + g.padding - kj, lo, g.out_width);
            std::fill(dst, dst + lo, T(0));
            std::memcpy(dst + lo, src + (lo - g.padding + kj), sizeof(T) * static_cast<std::size_t>(hi - lo));
            std::fill(dst + hi, dst + g.out_width, T(0));
          } else {
            for (int ox = 0; ox < g.out_width; ++ox) {
              const int ix = ox * g.stride - g.padding + kj;
              dst[ox] = (ix >= 0 && ix < g.width) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* x) {
  const int k = g.kernel;
  const std::size_t plane = static_cast<std::size_t>(g.out_height) * g.out_width;
  for (int c = 0; c < g.channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < g.out_height; ++oy) {
          const int iy = oy * g.stride - g.padding + ki;
          if (iy < 0 || iy >= g.height) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.out_width;
          T* dst = x + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < g.out_width; ++ox) {
            const int ix = ox * g.stride - g.padding + kj;
            if (ix >= 0 && ix < g.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

inline void require(bool ok, Errc code, const std::string& msg) {
  if (!ok) throw Error(code, msg);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), Errc::ShapeMismatch,
          std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <class T>
void accumulate(Node<T>& parent, const std::vector<T>& delta) {
  if (!parent.requires_grad) return;
  parent.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) parent.grad[i] += delta[i];
}

}  // namespace detail

/// Cross-correlation of x [N,C,H,W] with weight [O,C,k,k] plus bias [O].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding) {
  using detail::require;
  require(x.rank() == 4 && weight.rank() == 4, Errc::ShapeMismatch, "conv2d expects 4-D input and weight");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int o = weight.dim(0), k = weight.dim(2);
  require(weight.dim(1) == c, Errc::ShapeMismatch,
          "conv2d channel mismatch: input " + shape_str(x.shape()) + " weight " + shape_str(weight.shape()));
  require(weight.dim(3) == k, Errc::ShapeMismatch, "conv2d needs square kernels");
  require(bias.numel() == static_cast<std::size_t>(o), Errc::ShapeMismatch, "conv2d bias size");
  require(stride >= 1 && padding >= 0, Errc::ShapeMismatch, "conv2d stride/padding");
  require(h + 2 * padding >= k && w + 2 * padding >= k, Errc::ShapeMismatch, "conv2d kernel larger than padded input");

  detail::ConvGeometry g{c, h, w, k, stride, padding, (h + 2 * padding - k) / stride + 1,
                         (w + 2 * padding - k) / stride + 1};
  const bool pointwise = k == 1 && stride == 1 && padding == 0;
  const int ckk = c * k * k;
  const int plane = g.out_height * g.out_width;
  const std::size_t in_stride = static_cast<std::size_t>(c) * h * w;
  const std::size_t out_stride = static_cast<std::size_t>(o) * plane;

  std::vector<T> out(static_cast<std::size_t>(n) * out_stride);
  {
    using Mat = detail::RowMat<T>;
    Eigen::Map<const Mat> wm(weight.data().data(), o, ckk);
    Eigen::Map<const detail::ColVec<T>> bv(bias.data().data(), o);
    auto& col = detail::scratch<T>();
    if (!pointwise) col.resize(static_cast<std::size_t>(ckk) * plane);
    for (int b = 0; b < n; ++b) {
      const T* src = x.data().data() + b * in_stride;
      if (!pointwise) detail::im2col(src, g, col.data());
      Eigen::Map<const Mat> cm(pointwise ? src : col.data(), ckk, plane);
      Eigen::Map<Mat> ym(out.data() + b * out_stride, o, plane);
      ym.noalias() = wm * cm;
      ym.colwise() += bv;
    }
  }

  auto back = [g, n, o, ckk, plane, in_stride, out_stride, pointwise](detail::Node<T>& self) {
    using Mat = detail::RowMat<T>;
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    Eigen::Map<const Mat> wm(wn.value.data(), o, ckk);
    if (wn.requires_grad) wn.ensure_grad();
    if (bn.requires_grad) bn.ensure_grad();
    if (xn.requires_grad) xn.ensure_grad();
    auto& col = detail::scratch<T>();
    std::vector<T> dcol;
    if (!pointwise) col.resize(static_cast<std::size_t>(ckk) * plane);
    if (xn.requires_grad && !pointwise) dcol.resize(static_cast<std::size_t>(ckk) * plane);
    for (int b = 0; b < n; ++b) {
      Eigen::Map<const Mat> dy(self.grad.data() + b * out_stride, o, plane);
      const T* src = xn.value.data() + b * in_stride;
      if (wn.requires_grad) {
        if (!pointwise) detail::im2col(src, g, col.data());
        Eigen::Map<const Mat> cm(pointwise ? src : col.data(), ckk, plane);
        Eigen::Map<Mat> dw(wn.grad.data(), o, ckk);
        dw.noalias() += dy * cm.transpose();
      }
      if (bn.requires_grad) {
        // Plain loop: Eigen's vectorized reduction peels by address, which
        // would make the summation order depend on where the buffer lives.
        const T* g0 = self.grad.data() + b * out_stride;
        for (int r = 0; r < o; ++r) {
          T acc = T(0);
          for (int i = 0; i < plane; ++i) acc += g0[static_cast<std::size_t>(r) * plane + i];
          bn.grad[static_cast<std::size_t>(r)] += acc;
        }
      }
      if (xn.requires_grad) {
        T* dx = xn.grad.data() + b * in_stride;
        if (pointwise) {
          Eigen::Map<Mat> dxm(dx, ckk, plane);
          dxm.noalias() += wm.transpose() * dy;
        } else {
          Eigen::Map<Mat> dcm(dcol.data(), ckk, plane);
          dcm.noalias() = wm.transpose() * dy;
          detail::col2im_add(dcol.data(), g, dx);
        }
      }
    }
  };
  return detail::make_result<T>({n, o, g.out_height, g.out_width}, std::move(out), "conv2d",
                                {x.node(), weight.node(), bias.node()}, back);
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > T(0) || std::isnan(in[i]) ? in[i] : T(0);
  return detail::make_result<T>(x.shape(), std::move(out), "relu", {x.node()}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (self.value[i] > T(0)) p.grad[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = in[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return detail::make_result<T>(x.shape(), std::move(out), "sigmoid", {x.node()}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T y = self.value[i];
      p.grad[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return detail::make_result<T>(a.shape(), std::move(out), "add", {a.node(), b.node()},
                                [](detail::Node<T>& self) {
                                  detail::accumulate(*self.parents[0], self.grad);
                                  detail::accumulate(*self.parents[1], self.grad);
                                });
}

/// x * s for a constant s.
template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= s;
  return detail::make_result<T>(x.shape(), std::move(out), "scale", {x.node()}, [s](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += s * self.grad[i];
  });
}

/// Elementwise product. `gate` may be [N,1,H,W] against x [N,C,H,W], in which
/// case it is broadcast over channels.
template <class T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& gate) {
  const bool same = x.shape() == gate.shape();
  const bool broadcast = !same && x.rank() == 4 && gate.rank() == 4 && gate.dim(1) == 1 &&
                         gate.dim(0) == x.dim(0) && gate.dim(2) == x.dim(2) && gate.dim(3) == x.dim(3);
  detail::require(same || broadcast, Errc::ShapeMismatch,
                  "mul: " + shape_str(x.shape()) + " vs " + shape_str(gate.shape()));
  const std::size_t plane = broadcast ? static_cast<std::size_t>(x.dim(2)) * x.dim(3) : x.numel();
  const std::size_t channels = broadcast ? static_cast<std::size_t>(x.dim(1)) : 1;
  auto gate_index = [=](std::size_t i) {
    if (!broadcast) return i;
    const std::size_t b = i / (channels * plane);
    return b * plane + i % plane;
  };
  std::vector<T> out(x.numel());
  const auto xv = x.data();
  const auto gv = gate.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * gv[gate_index(i)];
  return detail::make_result<T>(x.shape(), std::move(out), "mul", {x.node(), gate.node()},
                                [gate_index](detail::Node<T>& self) {
                                  auto& xn = *self.parents[0];
                                  auto& gn = *self.parents[1];
                                  if (xn.requires_grad) {
                                    xn.ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      xn.grad[i] += self.grad[i] * gn.value[gate_index(i)];
                                  }
                                  if (gn.requires_grad) {
                                    gn.ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      gn.grad[gate_index(i)] += self.grad[i] * xn.value[i];
                                  }
                                });
}

/// 2x2 max pooling with stride 2; ties go to the first element in raster order.
template <class T>
Tensor<T> maxpool2(const Tensor<T>& x) {
  detail::require(x.rank() == 4, Errc::ShapeMismatch, "maxpool2 expects NCHW");
  const int h = x.dim(2), w = x.dim(3);
  detail::require(h % 2 == 0 && w % 2 == 0, Errc::OddSpatialSize,
                  "maxpool2 on " + shape_str(x.shape()));
  const int oh = h / 2, ow = w / 2;
  const std::size_t planes = static_cast<std::size_t>(x.dim(0)) * x.dim(1);
  std::vector<T> out(planes * oh * ow);
  std::vector<unsigned> argmax(out.size());
  const auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const std::size_t base = p * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        std::size_t best = base + static_cast<std::size_t>(2 * oy) * w + 2 * ox;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + static_cast<std::size_t>(2 * oy + dy) * w + 2 * ox + dx;
            if (in[idx] > in[best] || std::isnan(in[idx])) best = idx;  // NaN wins so it propagates
          }
        }
        const std::size_t o = (p * oh + oy) * ow + ox;
        out[o] = in[best];
        argmax[o] = static_cast<unsigned>(best);
      }
    }
  }
  return detail::make_result<T>({x.dim(0), x.dim(1), oh, ow}, std::move(out), "maxpool2", {x.node()},
                                [argmax = std::move(argmax)](detail::Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  p.ensure_grad();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                    p.grad[argmax[i]] += self.grad[i];
                                });
}

template <class T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  detail::require(x.rank() == 4, Errc::ShapeMismatch, "upsample_nearest2 expects NCHW");
  const int h = x.dim(2), w = x.dim(3);
  const int oh = 2 * h, ow = 2 * w;
  const std::size_t planes = static_cast<std::size_t>(x.dim(0)) * x.dim(1);
  std::vector<T> out(planes * oh * ow);
  const auto in = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    for (int oy = 0; oy < oh; ++oy) {
      const T* src = in.data() + (p * h + oy / 2) * w;
      T* dst = out.data() + (p * oh + oy) * ow;
      for (int ox = 0; ox < ow; ++ox) dst[ox] = src[ox / 2];
    }
  }
  return detail::make_result<T>({x.dim(0), x.dim(1), oh, ow}, std::move(out), "upsample_nearest2",
                                {x.node()}, [planes, h, w](detail::Node<T>& self) {
                                  auto& p = *self.parents[0];
                                  p.ensure_grad();
                                  const int oh = 2 * h, ow = 2 * w;
                                  for (std::size_t q = 0; q < planes; ++q) {
                                    for (int oy = 0; oy < oh; ++oy) {
                                      const T* src = self.grad.data() + (q * oh + oy) * ow;
                                      T* dst = p.grad.data() + (q * h + oy / 2) * w;
                                      for (int ox = 0; ox < ow; ++ox) dst[ox / 2] += src[ox];
                                    }
                                  }
                                });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return detail::make_result<T>({1}, {total}, "sum", {x.node()}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    p.ensure_grad();
    for (auto& g : p.grad) g += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Spatial soft-argmax. h is [..., K, H, W]; the result is [..., K, 2] holding
/// sum_p softmax(beta * h)_p * (x_p, y_p) with pixel centres at integer
/// coordinates.
template <class T>
Tensor<T> soft_argmax(const Tensor<T>& h, T beta) {
  detail::require(h.rank() >= 3, Errc::ShapeMismatch, "soft_argmax expects [..., K, H, W]");
  const int height = h.dim(-2), width = h.dim(-1);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const std::size_t maps = h.numel() / plane;
  Shape out_shape(h.shape().begin(), h.shape().end() - 2);
  out_shape.push_back(2);

  std::vector<T> probs(h.numel());
  std::vector<T> out(maps * 2);
  const auto in = h.data();
  for (std::size_t m = 0; m < maps; ++m) {
    const T* src = in.data() + m * plane;
    T* p = probs.data() + m * plane;
    T peak = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < plane; ++i) peak = std::max(peak, beta * src[i]);
    T z = T(0);
    for (std::size_t i = 0; i < plane; ++i) {
      p[i] = std::exp(beta * src[i] - peak);
      z += p[i];
    }
    T cx = T(0), cy = T(0);
    for (int y = 0; y < height; ++y) {
      T row = T(0);
      for (int x = 0; x < width; ++x) {
        T& v = p[static_cast<std::size_t>(y) * width + x];
        v /= z;
        row += v;
        cx += v * static_cast<T>(x);
      }
      cy += row * static_cast<T>(y);
    }
    out[2 * m] = cx;
    out[2 * m + 1] = cy;
  }
  return detail::make_result<T>(
      std::move(out_shape), std::move(out), "soft_argmax", {h.node()},
      [probs = std::move(probs), maps, plane, width, height, beta](detail::Node<T>& self) {
        auto& hn = *self.parents[0];
        hn.ensure_grad();
        for (std::size_t m = 0; m < maps; ++m) {
          const T gx = self.grad[2 * m], gy = self.grad[2 * m + 1];
          const T cx = self.value[2 * m], cy = self.value[2 * m + 1];
          const T* p = probs.data() + m * plane;
          T* dst = hn.grad.data() + m * plane;
          for (int y = 0; y < height; ++y) {
            const T ry = gy * (static_cast<T>(y) - cy);
            for (int x = 0; x < width; ++x) {
              const std::size_t i = static_cast<std::size_t>(y) * width + x;
              dst[i] += beta * p[i] * (gx * (static_cast<T>(x) - cx) + ry);
            }
          }
        }
      });
}

/// Wing loss averaged over elements:
///   w ln(1 + |d|/eps)   for |d| < w
///   |d| - C             otherwise, C = w - w ln(1 + w/eps).
template <class T>
Tensor<T> wing_loss(const Tensor<T>& pred, const Tensor<T>& target, double w, double eps) {
  detail::require_same_shape(pred, target, "wing_loss");
  detail::require(w > 0.0 && eps > 0.0, Errc::ShapeMismatch, "wing_loss needs w > 0 and eps > 0");
  const double c = w - w * std::log1p(w / eps);
  const std::size_t count = pred.numel();
  double total = 0.0;
  const auto pv = pred.data();
  const auto tv = target.data();
  for (std::size_t i = 0; i < count; ++i) {
    const double d = std::abs(static_cast<double>(pv[i]) - static_cast<double>(tv[i]));
    total += d < w ? w * std::log1p(d / eps) : d - c;
  }
  const T value = static_cast<T>(total / static_cast<double>(count));
  return detail::make_result<T>({1}, {value}, "wing_loss", {pred.node(), target.node()},
                                [w, eps, count](detail::Node<T>& self) {
                                  auto& pn = *self.parents[0];
                                  auto& tn = *self.parents[1];
                                  const double g0 = static_cast<double>(self.grad[0]) / static_cast<double>(count);
                                  if (pn.requires_grad) pn.ensure_grad();
                                  if (tn.requires_grad) tn.ensure_grad();
                                  for (std::size_t i = 0; i < count; ++i) {
                                    const double d = static_cast<double>(pn.value[i]) - static_cast<double>(tn.value[i]);
                                    const double a = std::abs(d);
                                    const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
                                    const double slope = a < w ? w / (eps + a) : 1.0;
                                    const T g = static_cast<T>(g0 * slope * sign);
                                    if (pn.requires_grad) pn.grad[i] += g;
                                    if (tn.requires_grad) tn.grad[i] -= g;
                                  }
                                });
}

template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const std::size_t count = pred.numel();
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
    total += d * d;
  }
  return detail::make_result<T>({1}, {static_cast<T>(total / static_cast<double>(count))}, "mse_loss",
                                {pred.node(), target.node()}, [count](detail::Node<T>& self) {
                                  auto& pn = *self.parents[0];
                                  auto& tn = *self.parents[1];
                                  const T k = T(2) * self.grad[0] / static_cast<T>(count);
                                  if (pn.requires_grad) pn.ensure_grad();
                                  if (tn.requires_grad) tn.ensure_grad();
                                  for (std::size_t i = 0; i < count; ++i) {
                                    const T g = k * (pn.value[i] - tn.value[i]);
                                    if (pn.requires_grad) pn.grad[i] += g;
                                    if (tn.requires_grad) tn.grad[i] -= g;
                                  }
                                });
}

}  // namespace ka
