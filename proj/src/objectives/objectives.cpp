// SPDX-License-Identifier: Apache-2.0
#include "ppt/objectives.hpp"

#include <stdexcept>

#include "ppt/ops.hpp"

namespace ppt {

namespace {

void check_candidates(const char* op, const Tensor& candidates) {
  if (candidates.rank() != 3 || candidates.dim(2) != 2 || candidates.dim(1) == 0) {
    throw std::invalid_argument(std::string(op) + ": candidates must be [B, K, 2], got " +
                                shape_str(candidates.shape()));
  }
}

/// Per-sample Euclidean norm of [B, ...] -> [B].
Tensor per_sample_norm(const Tensor& diff) {
  const std::size_t batch = diff.dim(0);
  const Tensor flat = reshape(diff, {batch, diff.numel() / batch});
  return sqrt(sum_last(square(flat)));
}

}  // namespace

void LossWeights::validate() const {
  if (!(sigma_s > 0.0)) throw std::invalid_argument("LossWeights: sigma_s must be positive");
  if (lambda_d < 0.0 || lambda_kd_traj < 0.0 || lambda_kd_dest < 0.0) {
    throw std::invalid_argument("LossWeights: loss weights must be non-negative");
  }
}

std::vector<std::size_t> closest_candidate(const Tensor& candidates, const Tensor& target) {
  check_candidates("closest_candidate", candidates);
  const std::size_t batch = candidates.dim(0);
  const std::size_t k = candidates.dim(1);
  if (target.shape() != Shape{batch, 2}) {
    throw std::invalid_argument("closest_candidate: shape mismatch " +
                                shape_str(candidates.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto c = candidates.data();
  const auto t = target.data();
  std::vector<std::size_t> best(batch, 0);
  for (std::size_t b = 0; b < batch; ++b) {
    double best_d = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double dx = static_cast<double>(c[(b * k + i) * 2]) - t[b * 2];
      const double dy = static_cast<double>(c[(b * k + i) * 2 + 1]) - t[b * 2 + 1];
      const double d = dx * dx + dy * dy;
      if (i == 0 || d < best_d) {
        best_d = d;
        best[b] = i;
      }
    }
    ScopedBranchTrace::record(best[b]);
  }
  return best;
}

Tensor precision_loss(const Tensor& candidates, const Tensor& target) {
  const auto best = closest_candidate(candidates, target);
  const std::size_t batch = candidates.dim(0);
  const std::size_t k = candidates.dim(1);
  std::vector<std::size_t> rows(batch);
  for (std::size_t b = 0; b < batch; ++b) rows[b] = b * k + best[b];
  const Tensor chosen = gather_rows(reshape(candidates, {batch * k, 2}), rows);
  return mean(per_sample_norm(sub(chosen, target)));
}

Tensor diversity_loss(const Tensor& candidates, double sigma_s) {
  check_candidates("diversity_loss", candidates);
  if (!(sigma_s > 0.0)) throw std::invalid_argument("diversity_loss: sigma_s must be positive");
  const std::size_t batch = candidates.dim(0);
  const std::size_t k = candidates.dim(1);
  if (k < 2) throw std::invalid_argument("diversity_loss: need at least 2 candidates");
  std::vector<std::size_t> lhs;
  std::vector<std::size_t> rhs;
  lhs.reserve(batch * k * (k - 1));
  rhs.reserve(batch * k * (k - 1));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (i == j) continue;
        lhs.push_back(b * k + i);
        rhs.push_back(b * k + j);
      }
    }
  }
  const Tensor flat = reshape(candidates, {batch * k, 2});
  const Tensor sq = sum_last(square(sub(gather_rows(flat, lhs), gather_rows(flat, rhs))));
  return mean(exp(scale(sq, static_cast<float>(-1.0 / sigma_s))));
}

Tensor destination_loss(const Tensor& candidates, const Tensor& target, const LossWeights& w) {
  w.validate();
  const Tensor precision = precision_loss(candidates, target);
  if (w.lambda_d == 0.0) return precision;
  return add(precision, scale(diversity_loss(candidates, w.sigma_s), static_cast<float>(w.lambda_d)));
}

Tensor recon_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape() || predicted.rank() != 3 || predicted.dim(2) != 2) {
    throw std::invalid_argument("recon_loss: shape mismatch " + shape_str(predicted.shape()) +
                                " vs " + shape_str(target.shape()));
  }
  return mean(sqrt(sum_last(square(sub(predicted, target)))));
}

Tensor kd_feature_loss(const Tensor& teacher, const Tensor& student, const Tensor& proj_w,
                       const Tensor& proj_b) {
  if (teacher.requires_grad()) {
    throw std::invalid_argument("kd_feature_loss: teacher features must not require grad");
  }
  if (teacher.shape() != student.shape() || teacher.rank() < 2) {
    throw std::invalid_argument("kd_feature_loss: shape mismatch " + shape_str(teacher.shape()) +
                                " vs " + shape_str(student.shape()));
  }
  const Tensor projected = add(matmul(student.rank() == 2
                                          ? reshape(student, {student.dim(0), 1, student.dim(1)})
                                          : student,
                                      proj_w),
                               proj_b);
  const Tensor aligned = reshape(projected, teacher.shape());
  return mean(per_sample_norm(sub(teacher, aligned)));
}

Tensor trajectory_total_loss(const Tensor& recon, const Tensor& kd_traj, const Tensor& kd_dest,
                             const LossWeights& w) {
  w.validate();
  Tensor total = recon;
  if (kd_traj.defined()) total = add(total, scale(kd_traj, static_cast<float>(w.lambda_kd_traj)));
  if (kd_dest.defined()) total = add(total, scale(kd_dest, static_cast<float>(w.lambda_kd_dest)));
  return total;
}

}  // namespace ppt
