// Copyright 2026 The sarkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef SAR_ND_OPS_HPP
#define SAR_ND_OPS_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sar/error.hpp"
#include "sar/nd/kernels.hpp"
#include "sar/nd/tensor.hpp"
#include "sar/random.hpp"

namespace sar::nd {

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::ShapeMismatch, what);
}

template <class T>
bool wants_grad(const Node<T>& node, std::size_t input) {
  return input < node.inputs.size() && node.inputs[input]->requires_grad;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "add " + to_string(a.shape()) + " + " + to_string(b.shape()));
  std::vector<T> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] + db[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    for (std::size_t in = 0; in < 2; ++in) {
      if (!detail::wants_grad(self, in)) continue;
      auto& g = self.inputs[in]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "mul " + to_string(a.shape()) + " * " + to_string(b.shape()));
  std::vector<T> out(a.numel());
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = da[i] * db[i];
  return make_result<T>(a.shape(), std::move(out), {&a, &b}, [](Node<T>& self) {
    const auto& va = self.inputs[0]->value;
    const auto& vb = self.inputs[1]->value;
    if (detail::wants_grad(self, 0)) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * vb[i];
    }
    if (detail::wants_grad(self, 1)) {
      auto& g = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * va[i];
    }
  });
}

/// Scalar sum of all elements (accumulated in double).
template <class T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double total = 0.0;
  for (T v : x.data()) total += v;
  return make_result<T>(Shape{}, {static_cast<T>(total)}, {&x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  detail::require(numel(shape) == x.numel(),
                  "reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {&x}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// max(0, x); the subgradient at exactly 0 is 0.
template <class T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (in[i] > T(0) || std::isnan(in[i])) ? in[i] : T(0);
  return make_result<T>(x.shape(), std::move(out), {&x}, [](Node<T>& self) {
    const auto& v = self.inputs[0]->value;
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (v[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeometry {
  std::size_t n, c, h, w;     // input
  std::size_t f, kh, kw;      // filters
  std::size_t stride, pad;
  std::size_t ho, wo;         // output
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return ho * wo; }
  std::size_t columns() const { return n * ho * wo; }
};

/// Patch expansion: cols[(ci*kh + i)*kw + j][b*P + oy*wo + ox].
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t q = g.columns();
  const std::size_t p = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((ci * g.kh + i) * g.kw + j) * q;
        for (std::size_t b = 0; b < g.n; ++b) {
          const T* plane = x + (b * g.c + ci) * g.h * g.w;
          T* dst = row + b * p;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(dst + oy * g.wo, dst + (oy + 1) * g.wo, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              dst[oy * g.wo + ox] =
                  (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? T(0) : src[ix];
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_acc(const ConvGeometry& g, const T* cols, T* dx) {
  const std::size_t q = g.columns();
  const std::size_t p = g.positions();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((ci * g.kh + i) * g.kw + j) * q;
        for (std::size_t b = 0; b < g.n; ++b) {
          T* plane = dx + (b * g.c + ci) * g.h * g.w;
          const T* src = row + b * p;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            T* dst = plane + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + j) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) dst[ix] += src[oy * g.wo + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. x: [N,C,H,W], weight: [F,C,kh,kw],
/// optional bias: [F]. Lowered to one matrix product over the whole batch.
template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t pad) {
  detail::require(x.rank() == 4 && weight.rank() == 4,
                  "conv2d expects 4-d input and weight, got " + to_string(x.shape()) + " and " +
                      to_string(weight.shape()));
  detail::require(stride >= 1, "conv2d stride must be >= 1");
  detail::ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), weight.dim(0),
                         weight.dim(2), weight.dim(3), stride, pad, 0, 0};
  detail::require(weight.dim(1) == g.c, "conv2d channel mismatch: input " + to_string(x.shape()) +
                                            " weight " + to_string(weight.shape()));
  detail::require(g.kh <= g.h + 2 * pad && g.kw <= g.w + 2 * pad,
                  "conv2d kernel larger than padded input");
  if (bias.defined()) {
    detail::require(bias.numel() == g.f, "conv2d bias size mismatch");
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;

  const std::size_t q = g.columns();
  const std::size_t p = g.positions();
  const std::size_t k = g.patch();
  auto cols = std::make_shared<std::vector<T>>(k * q);
  detail::im2col(g, x.data().data(), cols->data());

  std::vector<T> ymat(g.f * q, T(0));
  kernels::gemm_acc(g.f, q, k, weight.data().data(), k, false, cols->data(), q, ymat.data(), q);

  std::vector<T> out(g.n * g.f * p);
  auto b = bias.defined() ? bias.data() : std::span<const T>{};
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      const T* src = ymat.data() + f * q + n * p;
      T* dst = out.data() + (n * g.f + f) * p;
      const T shift = b.empty() ? T(0) : b[f];
      for (std::size_t i = 0; i < p; ++i) dst[i] = src[i] + shift;
    }
  }
  if (!weight.requires_grad()) cols.reset();

  return make_result<T>(
      Shape{g.n, g.f, g.ho, g.wo}, std::move(out), {&x, &weight, &bias},
      [g, cols](Node<T>& self) {
        const std::size_t q = g.columns();
        const std::size_t p = g.positions();
        const std::size_t k = g.patch();
        std::vector<T> dymat(g.f * q);
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t f = 0; f < g.f; ++f) {
            const T* src = self.grad.data() + (n * g.f + f) * p;
            std::copy(src, src + p, dymat.data() + f * q + n * p);
          }
        }
        if (detail::wants_grad(self, 1)) {
          auto& dw = self.inputs[1]->ensure_grad();
          for (std::size_t f = 0; f < g.f; ++f) {
            for (std::size_t r = 0; r < k; ++r) {
              dw[f * k + r] += kernels::dot(dymat.data() + f * q, cols->data() + r * q, q);
            }
          }
        }
        if (detail::wants_grad(self, 2)) {
          auto& db = self.inputs[2]->ensure_grad();
          for (std::size_t f = 0; f < g.f; ++f) {
            T s = T(0);
            for (std::size_t i = 0; i < q; ++i) s += dymat[f * q + i];
            db[f] += s;
          }
        }
        if (detail::wants_grad(self, 0)) {
          std::vector<T> dcols(k * q, T(0));
          kernels::gemm_acc(k, q, g.f, self.inputs[1]->value.data(), k, true, dymat.data(), q,
                            dcols.data(), q);
          detail::col2im_acc(g, dcols.data(), self.inputs[0]->ensure_grad().data());
        }
      });
}

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight, std::size_t stride,
                      std::size_t pad) {
  return conv2d(x, weight, BasicTensor<T>{}, stride, pad);
}

// ---------------------------------------------------------------------------
// Batch normalization

template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

/// Per-channel normalization over (N, H, W). Train mode uses batch moments
/// and, when `update_stats`, folds them into the running estimates (the
/// variance estimate is unbiased); eval mode uses the running estimates.
template <class T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                           const BasicTensor<T>& beta, BatchNormState<T>& state, Mode mode,
                           bool update_stats = true) {
  detail::require(x.rank() == 4, "batchnorm2d expects 4-d input, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  detail::require(gamma.numel() == c && beta.numel() == c && state.running_mean.size() == c &&
                      state.running_var.size() == c,
                  "batchnorm2d parameter size mismatch for " + to_string(x.shape()));
  const std::size_t m = n * hw;
  if (mode == Mode::Train && m < 2) {
    fail(ErrorKind::DegenerateBatch,
         "batchnorm2d in train mode needs N*H*W >= 2, got " + to_string(x.shape()));
  }

  auto in = x.data();
  auto gm = gamma.data();
  auto bt = beta.data();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  std::vector<T> out(x.numel());

  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (mode == Mode::Train) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = in.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mean = s / static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* p = in.data() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mean;
          ss += d * d;
        }
      }
      var = ss / static_cast<double>(m);
      if (update_stats) {
        const double mom = state.momentum;
        state.running_mean[ch] =
            static_cast<T>((1.0 - mom) * state.running_mean[ch] + mom * mean);
        state.running_var[ch] = static_cast<T>(
            (1.0 - mom) * state.running_var[ch] +
            mom * var * static_cast<double>(m) / static_cast<double>(m - 1));
      }
    } else {
      mean = state.running_mean[ch];
      var = state.running_var[ch];
    }
    const double istd = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[ch] = static_cast<T>(istd);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xh = static_cast<T>((in[off + i] - mean) * istd);
        (*xhat)[off + i] = xh;
        out[off + i] = gm[ch] * xh + bt[ch];
      }
    }
  }

  const bool train = mode == Mode::Train;
  return make_result<T>(
      x.shape(), std::move(out), {&x, &gamma, &beta},
      [n, c, hw, m, train, xhat, inv_std](Node<T>& self) {
        const auto& gm = self.inputs[1]->value;
        const auto& dy = self.grad;
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sdy = 0.0, sdyx = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sdy += dy[off + i];
              sdyx += static_cast<double>(dy[off + i]) * (*xhat)[off + i];
            }
          }
          if (detail::wants_grad(self, 1)) self.inputs[1]->ensure_grad()[ch] += static_cast<T>(sdyx);
          if (detail::wants_grad(self, 2)) self.inputs[2]->ensure_grad()[ch] += static_cast<T>(sdy);
          if (!detail::wants_grad(self, 0)) continue;
          auto& dx = self.inputs[0]->ensure_grad();
          const double scale = static_cast<double>(gm[ch]) * (*inv_std)[ch];
          const double md = static_cast<double>(m);
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (train) {
                dx[off + i] += static_cast<T>(
                    scale / md * (md * dy[off + i] - sdy - (*xhat)[off + i] * sdyx));
              } else {
                dx[off + i] += static_cast<T>(scale * dy[off + i]);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling

/// Max pooling with implicit -inf padding. Gradient is routed to the first
/// maximal element of each window.
template <class T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& x, std::size_t k, std::size_t stride,
                         std::size_t pad = 0) {
  detail::require(x.rank() == 4, "maxpool2d expects 4-d input, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  detail::require(k >= 1 && stride >= 1 && h + 2 * pad >= k && w + 2 * pad >= k,
                  "maxpool2d window larger than input " + to_string(x.shape()));
  const std::size_t ho = (h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (w + 2 * pad - k) / stride + 1;
  std::vector<T> out(n * c * ho * wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  auto in = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = in.data() + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_at = 0;
        bool found = false;
        for (std::size_t i = 0; i < k; ++i) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t at = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            // NaN wins so that non-finite activations are not masked.
            if (!found || src[at] > best || (std::isnan(src[at]) && !std::isnan(best))) {
              best = src[at];
              best_at = at;
              found = true;
            }
          }
        }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        out[o] = best;
        (*argmax)[o] = plane * h * w + best_at;
      }
    }
  }
  return make_result<T>(Shape{n, c, ho, wo}, std::move(out), {&x}, [argmax](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
  });
}

/// [N,C,H,W] -> [N,C,1,1] spatial mean.
template <class T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  detail::require(x.rank() == 4, "global_avg_pool expects 4-d input, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  detail::require(hw > 0, "global_avg_pool on empty spatial extent");
  std::vector<T> out(n * c);
  auto in = x.data();
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += in[plane * hw + i];
    out[plane] = static_cast<T>(s / static_cast<double>(hw));
  }
  return make_result<T>(Shape{n, c, 1, 1}, std::move(out), {&x}, [hw](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    const T scale = T(1) / static_cast<T>(hw);
    for (std::size_t plane = 0; plane < self.grad.size(); ++plane) {
      const T v = self.grad[plane] * scale;
      for (std::size_t i = 0; i < hw; ++i) g[plane * hw + i] += v;
    }
  });
}

// ---------------------------------------------------------------------------
// Dense layers

/// x: [N,D], weight: [K,D], bias: [K] (optional) -> x * weight^T + bias.
template <class T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  detail::require(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(1),
                  "linear " + to_string(x.shape()) + " with weight " + to_string(weight.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1), k = weight.dim(0);
  if (bias.defined()) detail::require(bias.numel() == k, "linear bias size mismatch");
  std::vector<T> out(n * k);
  auto xv = x.data();
  auto wv = weight.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      out[i * k + j] = kernels::dot(xv.data() + i * d, wv.data() + j * d, d) +
                       (bias.defined() ? bias.data()[j] : T(0));
    }
  }
  return make_result<T>(Shape{n, k}, std::move(out), {&x, &weight, &bias},
                        [n, d, k](Node<T>& self) {
                          const auto& dy = self.grad;
                          const auto& xv = self.inputs[0]->value;
                          const auto& wv = self.inputs[1]->value;
                          if (detail::wants_grad(self, 0)) {
                            auto& dx = self.inputs[0]->ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < k; ++j) {
                                const T g = dy[i * k + j];
                                for (std::size_t c = 0; c < d; ++c) dx[i * d + c] += g * wv[j * d + c];
                              }
                            }
                          }
                          if (detail::wants_grad(self, 1)) {
                            auto& dw = self.inputs[1]->ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < k; ++j) {
                                const T g = dy[i * k + j];
                                for (std::size_t c = 0; c < d; ++c) dw[j * d + c] += g * xv[i * d + c];
                              }
                            }
                          }
                          if (detail::wants_grad(self, 2)) {
                            auto& db = self.inputs[2]->ensure_grad();
                            for (std::size_t i = 0; i < n; ++i) {
                              for (std::size_t j = 0; j < k; ++j) db[j] += dy[i * k + j];
                            }
                          }
                        });
}

/// Inverted dropout. The mask is a pure function of (seed, element index).
template <class T>
BasicTensor<T> dropout(const BasicTensor<T>& x, double p, Mode mode, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) fail(ErrorKind::InvalidArgument, "dropout p must be in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  std::vector<T> out(x.numel());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = hash_uniform(seed, i) < p ? T(0) : scale;
    out[i] = in[i] * (*mask)[i];
  }
  return make_result<T>(x.shape(), std::move(out), {&x}, [mask](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------
// Loss

template <class T>
struct CrossEntropy {
  BasicTensor<T> loss;          // scalar
  std::vector<T> probabilities; // [N,K] row-major softmax
};

/// Mean negative log-likelihood of `targets` under softmax(logits), computed
/// with a max-shifted log-sum-exp.
template <class T>
CrossEntropy<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  detail::require(logits.rank() == 2 && logits.dim(0) == targets.size(),
                  "softmax_cross_entropy logits " + to_string(logits.shape()) + " with " +
                      std::to_string(targets.size()) + " targets");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      fail(ErrorKind::TargetOutOfRange, "target " + std::to_string(targets[i]) + " not in [0, " +
                                            std::to_string(k) + ")");
    }
  }
  auto z = logits.data();
  std::vector<T> probs(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double se = 0.0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t j = 0; j < k; ++j) probs[i * k + j] = static_cast<T>(std::exp(row[j] - lse));
    total += lse - row[targets[i]];
  }
  const double mean = total / static_cast<double>(n);
  std::vector<int> tgt(targets.begin(), targets.end());
  auto saved = std::make_shared<std::vector<T>>(probs);
  auto loss = make_result<T>(Shape{}, {static_cast<T>(mean)}, {&logits},
                             [n, k, tgt = std::move(tgt), saved](Node<T>& self) {
                               auto& g = self.inputs[0]->ensure_grad();
                               const T scale = self.grad[0] / static_cast<T>(n);
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t j = 0; j < k; ++j) {
                                   const T onehot = static_cast<int>(j) == tgt[i] ? T(1) : T(0);
                                   g[i * k + j] += ((*saved)[i * k + j] - onehot) * scale;
                                 }
                               }
                             });
  return {std::move(loss), std::move(probs)};
}

}  // namespace sar::nd

#endif  // SAR_ND_OPS_HPP
