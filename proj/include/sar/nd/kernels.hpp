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

#ifndef SAR_ND_KERNELS_HPP
#define SAR_ND_KERNELS_HPP

#include <algorithm>
#include <cstddef>

// Dense inner loops shared by the ops. Every reduction runs in a fixed order
// so results are bit-reproducible for a given build.

namespace sar::nd::kernels {

/// Sum of a[i]*b[i] with 16 interleaved partial sums (vectorizable without
/// reassociation flags).
template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  }
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  T total = T(0);
  for (std::size_t l = 0; l < kLanes; ++l) total += acc[l];
  return total + tail;
}

/// C[M x N] += op(A)[M x K] * B[K x N], all row-major. op(A) is A or A^T
/// (A stored K x M when transposed). Columns are processed in cache-sized
/// panels; four rows of B are folded per pass over a panel of C.
template <class T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
              bool trans_a, const T* B, std::size_t ldb, T* C, std::size_t ldc) {
  constexpr std::size_t kPanel = 512;
  auto a_at = [&](std::size_t i, std::size_t k) {
    return trans_a ? A[k * lda + i] : A[i * lda + k];
  };
  for (std::size_t j0 = 0; j0 < N; j0 += kPanel) {
    const std::size_t jn = std::min(kPanel, N - j0);
    for (std::size_t i = 0; i < M; ++i) {
      T* c = C + i * ldc + j0;
      std::size_t k = 0;
      for (; k + 4 <= K; k += 4) {
        const T a0 = a_at(i, k), a1 = a_at(i, k + 1), a2 = a_at(i, k + 2), a3 = a_at(i, k + 3);
        const T* b0 = B + k * ldb + j0;
        const T* b1 = b0 + ldb;
        const T* b2 = b1 + ldb;
        const T* b3 = b2 + ldb;
        for (std::size_t j = 0; j < jn; ++j) {
          c[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
      }
      for (; k < K; ++k) {
        const T a = a_at(i, k);
        const T* b = B + k * ldb + j0;
        for (std::size_t j = 0; j < jn; ++j) c[j] += a * b[j];
      }
    }
  }
}

}  // namespace sar::nd::kernels

#endif  // SAR_ND_KERNELS_HPP
