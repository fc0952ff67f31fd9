// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. All take a leading batch axis and return the batch
// mean of the per-sample loss as a differentiable scalar.

#pragma once

#include <cstddef>
#include <vector>

#include "ppt/tensor.hpp"

namespace ppt {

struct LossWeights {
  double lambda_d = 100.0;       // diversity weight
  double sigma_s = 1.0;          // diversity distance scale
  double lambda_kd_traj = 5.0;
  double lambda_kd_dest = 0.5;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Index of the candidate closest to `target` per sample; ties go to the
/// lowest index. candidates [B, K, 2], target [B, 2].
std::vector<std::size_t> closest_candidate(const Tensor& candidates, const Tensor& target);

/// min_k ||candidates[k] - target||, gradient through the argmin only.
Tensor precision_loss(const Tensor& candidates, const Tensor& target);

/// Mean over ordered pairs i != j of exp(-||c_i - c_j||^2 / sigma_s).
/// Requires K >= 2 and sigma_s > 0.
Tensor diversity_loss(const Tensor& candidates, double sigma_s);

/// precision + lambda_d * diversity.
Tensor destination_loss(const Tensor& candidates, const Tensor& target, const LossWeights& w);

/// Mean over timesteps of the per-step Euclidean distance. [B, T, 2] both.
Tensor recon_loss(const Tensor& predicted, const Tensor& target);

/// ||teacher - (student W + b)||_F per sample. `teacher` must not require grad.
/// Shapes: teacher and student [B, ..., D], W [D, D], b [D].
Tensor kd_feature_loss(const Tensor& teacher, const Tensor& student, const Tensor& proj_w,
                       const Tensor& proj_b);

/// recon + lambda_kd_traj * kd_traj + lambda_kd_dest * kd_dest. Undefined KD
/// terms are treated as absent.
Tensor trajectory_total_loss(const Tensor& recon, const Tensor& kd_traj, const Tensor& kd_dest,
                             const LossWeights& w);

}  // namespace ppt
