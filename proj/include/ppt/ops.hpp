// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every function validates operand shapes and
// throws std::invalid_argument naming the primitive and the offending shapes.
//
// Broadcasting is deliberately narrow: for the binary element-wise ops the
// second operand must either match the first exactly or equal a trailing
// suffix of its shape (a bias row against a batch, a scalar against
// anything). matmul broadcasts a rank-2 right operand over the leading
// batch axes of the left one.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ppt/tensor.hpp"

namespace ppt {

/// Additive value used for masked attention logits.
inline constexpr float kMaskedLogit = -1e9f;

/// While alive, folds every branch taken by a piecewise function on the
/// constructing thread (relu signs, argmin choices) into a digest. Two
/// evaluations with equal digests lie on the same smooth piece.
class ScopedBranchTrace {
 public:
  ScopedBranchTrace();
  ~ScopedBranchTrace();
  ScopedBranchTrace(const ScopedBranchTrace&) = delete;
  ScopedBranchTrace& operator=(const ScopedBranchTrace&) = delete;

  std::uint64_t digest() const { return digest_; }
  void clear() { digest_ = kEmpty; }

  static bool active();
  /// Folds one outcome into the innermost trace on this thread, if any.
  static void record(std::uint64_t outcome);

 private:
  static constexpr std::uint64_t kEmpty = 0xcbf29ce484222325ull;
  std::uint64_t digest_ = kEmpty;
  ScopedBranchTrace* previous_;
};

/// [..., M, K] x [K, N] -> [..., M, N], or batched [..., M, K] x [..., K, N]
/// with identical leading axes.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

/// Concatenation along `axis`; all other axes must agree.
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t start, std::size_t length);
Tensor transpose_last2(const Tensor& a);
/// Same values, new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
/// Square root; the derivative at exactly zero is taken as zero.
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);

/// Softmax over the last axis after adding `mask` (trailing-suffix broadcast).
/// Pass an undefined Tensor for no mask. The mask never receives gradient.
Tensor softmax_last(const Tensor& a, const Tensor& mask = Tensor());

/// Normalizes each last-axis slice to zero mean and unit (biased) variance,
/// then applies gain and bias of shape [D].
Tensor layernorm_last(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);

/// Rows of a rank-2 table selected by index -> [indices.size(), D].
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reductions over the last axis, which is removed from the shape.
Tensor sum_last(const Tensor& a);
Tensor mean_last(const Tensor& a);

namespace kernels {

/// C[M,N] += A[M,K] * B[K,N], row-major, accumulating along k in ascending
/// order for every output element.
void gemm_accumulate(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                     std::size_t n);

}  // namespace kernels

}  // namespace ppt
