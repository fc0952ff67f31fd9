// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "ppt/tensor.hpp"

namespace ppt {

/// Compares the reverse-mode gradient of `f` at leaf `x` (which must require
/// grad) against central differences with step `eps`, returning
///   max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
/// `coords` restricts the check to a subset of flat indices; empty means all.
/// `x` is perturbed in place and restored before returning. Throws if `f`
/// is not deterministic (two evaluations at the same point disagree).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps,
                         const std::vector<std::size_t>& coords = {});

struct SmoothCheckResult {
  double max_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // steps that crossed a relu or argmin boundary
};

/// finite_diff_check restricted to coordinates where x - eps, x and x + eps
/// take the same branches (see ScopedBranchTrace). Skipped coordinates are
/// counted rather than compared.
SmoothCheckResult finite_diff_check_smooth(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                                           double eps, const std::vector<std::size_t>& coords = {});

}  // namespace ppt
