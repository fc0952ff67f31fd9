// SPDX-License-Identifier: Apache-2.0
#include <cstddef>

#include "ppt/ops.hpp"

namespace ppt::kernels {

namespace {

// 16 floats; unaligned loads are fine through this type.
typedef float vec __attribute__((vector_size(64), aligned(4), may_alias));
constexpr std::size_t kLanes = 16;

// Register tile of kRows x (kVecs * kLanes) outputs. Each output accumulates
// over k in ascending order regardless of which tile shape computes it.
template <std::size_t kRows, std::size_t kVecs>
inline __attribute__((always_inline)) void tile(const float* __restrict a,
                                                const float* __restrict b, float* __restrict c,
                                                std::size_t i, std::size_t j0, std::size_t k,
                                                std::size_t n) {
  vec acc[kRows][kVecs];
  for (std::size_t r = 0; r < kRows; ++r) {
    for (std::size_t v = 0; v < kVecs; ++v) {
      acc[r][v] = *reinterpret_cast<const vec*>(c + (i + r) * n + j0 + v * kLanes);
    }
  }
  const float* ap = a + i * k;
  const float* bp = b + j0;
  for (std::size_t p = 0; p < k; ++p, bp += n) {
    vec bv[kVecs];
    for (std::size_t v = 0; v < kVecs; ++v) bv[v] = *reinterpret_cast<const vec*>(bp + v * kLanes);
    for (std::size_t r = 0; r < kRows; ++r) {
      const float s = ap[r * k + p];
      for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] += s * bv[v];
    }
  }
  for (std::size_t r = 0; r < kRows; ++r) {
    for (std::size_t v = 0; v < kVecs; ++v) {
      *reinterpret_cast<vec*>(c + (i + r) * n + j0 + v * kLanes) = acc[r][v];
    }
  }
}

template <std::size_t kVecs>
void column_block(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                  std::size_t n, std::size_t j0) {
  std::size_t i = 0;
  for (; i + 8 <= m; i += 8) tile<8, kVecs>(a, b, c, i, j0, k, n);
  for (; i < m; ++i) tile<1, kVecs>(a, b, c, i, j0, k, n);
}

}  // namespace

void gemm_accumulate(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                     std::size_t n) {
  std::size_t j0 = 0;
  for (; j0 + 2 * kLanes <= n; j0 += 2 * kLanes) column_block<2>(a, b, c, m, k, n, j0);
  for (; j0 + kLanes <= n; j0 += kLanes) column_block<1>(a, b, c, m, k, n, j0);
  if (j0 == n) return;
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * n;
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = arow[p];
      const float* brow = b + p * n;
      for (std::size_t j = j0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace ppt::kernels
