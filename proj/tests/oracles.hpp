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

// Independent reference computations used by the test suites. Nothing here
// calls into the code paths it is used to check.

#ifndef SAR_TESTS_ORACLES_HPP
#define SAR_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <numbers>
#include <vector>

#include "sar/nd/tensor.hpp"
#include "sar/random.hpp"

namespace sar::oracle {

/// Plain O(n^2) DFT.
inline std::vector<std::complex<double>> dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(a), std::sin(a));
    }
    out[k] = acc;
  }
  return out;
}

/// Frequency (Hz) of the largest-magnitude DFT bin below Nyquist.
inline double dft_peak_hz(const std::vector<float>& samples, int rate, std::size_t n) {
  std::vector<double> x(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(n));
  const auto spec = dft(x);
  std::size_t best = 1;
  for (std::size_t k = 1; k < n / 2; ++k) {
    if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
  }
  return static_cast<double>(best) * rate / static_cast<double>(n);
}

/// Direct 7-loop convolution.
inline std::vector<double> direct_conv2d(const std::vector<double>& x, std::size_t n, std::size_t c,
                                         std::size_t h, std::size_t w, const std::vector<double>& wt,
                                         std::size_t f, std::size_t k, std::size_t stride,
                                         std::size_t pad, std::size_t& ho, std::size_t& wo) {
  ho = (h + 2 * pad - k) / stride + 1;
  wo = (w + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * f * ho * wo, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t xx = 0; xx < wo; ++xx) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t i = 0; i < k; ++i)
              for (std::size_t j = 0; j < k; ++j) {
                const long iy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long ix = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                acc += x[((b * c + ci) * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] *
                       wt[((o * c + ci) * k + i) * k + j];
              }
          out[((b * f + o) * ho + y) * wo + xx] = acc;
        }
  return out;
}

/// Per-class recall averaged over classes, written independently of the
/// library's metric code.
inline double mean_recall(const std::vector<std::vector<std::uint64_t>>& rows) {
  double s = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::uint64_t n = 0;
    for (auto v : rows[i]) n += v;
    s += static_cast<double>(rows[i][i]) / static_cast<double>(n);
  }
  return s / static_cast<double>(rows.size());
}

template <class T>
nd::BasicTensor<T> random_tensor(nd::Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  nd::BasicTensor<T> t(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<T>(scale * rng.normal());
  return t;
}

/// Normwise relative difference ||a - b|| / max(||a||, ||b||).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max(std::sqrt(std::max(na, nb)), 1e-12);
  return std::sqrt(diff) / denom;
}

/// Central finite differences of a scalar function of a flat parameter
/// vector, evaluated in double precision.
inline std::vector<double> finite_difference(const std::function<double(const std::vector<double>&)>& f,
                                             std::vector<double> x, double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f(x);
    x[i] = orig - step;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace sar::oracle

#endif  // SAR_TESTS_ORACLES_HPP
