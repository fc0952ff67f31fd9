// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "ppt/tensor.hpp"

namespace ppt {

struct AdamState {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  std::uint64_t step_count = 0;
  /// One entry per parameter, in the order passed to adam_step; sized lazily
  /// on the first step and zero-initialized.
  std::vector<std::vector<float>> first_moment;
  std::vector<std::vector<float>> second_moment;
};

/// One bias-corrected Adam update. Parameters are leaves and are updated in
/// place; the same parameter list (same order) must be used on every step.
/// Throws if `grads` has no entry for a parameter or if lr <= 0.
void adam_step(std::vector<Tensor>& params, const Gradients& grads, AdamState& state, float lr);

}  // namespace ppt
