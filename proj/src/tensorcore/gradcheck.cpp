// SPDX-License-Identifier: Apache-2.0
#include "ppt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ppt/ops.hpp"

namespace ppt {

namespace {

struct Evaluation {
  double value = 0.0;
  std::uint64_t branches = 0;
};

Evaluation evaluate(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  ScopedBranchTrace trace;
  const double value = f(x).item();
  return {value, trace.digest()};
}

SmoothCheckResult check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps,
                        const std::vector<std::size_t>& coords, bool skip_branch_changes) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  if (!x.is_leaf() || !x.requires_grad()) {
    throw std::invalid_argument("finite_diff_check: x must be a leaf that requires grad");
  }
  const Tensor loss = f(x);
  const Evaluation again = evaluate(f, x);
  if (loss.item() != again.value) {
    throw std::runtime_error("finite_diff_check: function is not deterministic");
  }
  const Gradients grads = backward(loss);
  std::vector<float> analytic(x.numel(), 0.0f);
  if (grads.contains(x)) analytic = grads.of(x);

  std::vector<std::size_t> indices = coords;
  if (indices.empty()) {
    indices.resize(x.numel());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  }

  auto values = x.mutable_data();
  SmoothCheckResult result;
  for (auto i : indices) {
    if (i >= values.size()) throw std::invalid_argument("finite_diff_check: coordinate out of range");
    const float original = values[i];
    const float up = static_cast<float>(original + eps);
    const float down = static_cast<float>(original - eps);
    values[i] = up;
    const Evaluation f_up = evaluate(f, x);
    values[i] = down;
    const Evaluation f_down = evaluate(f, x);
    values[i] = original;
    if (skip_branch_changes &&
        (f_up.branches != again.branches || f_down.branches != again.branches)) {
      ++result.skipped;
      continue;
    }
    // Divide by the step actually representable in float.
    const double numeric =
        (f_up.value - f_down.value) / (static_cast<double>(up) - static_cast<double>(down));
    const double a = analytic[i];
    result.max_error = std::max(result.max_error, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    ++result.checked;
  }
  return result;
}

}  // namespace

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x, double eps,
                         const std::vector<std::size_t>& coords) {
  return check(f, x, eps, coords, false).max_error;
}

SmoothCheckResult finite_diff_check_smooth(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                                           double eps, const std::vector<std::size_t>& coords) {
  return check(f, x, eps, coords, true);
}

}  // namespace ppt
