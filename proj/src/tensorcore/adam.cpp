// SPDX-License-Identifier: Apache-2.0
#include "ppt/adam.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ppt {

void adam_step(std::vector<Tensor>& params, const Gradients& grads, AdamState& state, float lr) {
  if (!(lr > 0.0f)) throw std::invalid_argument("adam_step: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads.contains(params[i])) {
      throw std::invalid_argument("adam_step: missing gradient for parameter #" + std::to_string(i) +
                                  " " + shape_str(params[i].shape()));
    }
  }
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.numel(), 0.0f);
      state.second_moment.emplace_back(p.numel(), 0.0f);
    }
  } else if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: parameter list changed between steps");
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const float c1 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta1), t));
  const float c2 = static_cast<float>(1.0 - std::pow(static_cast<double>(state.beta2), t));
  const float b1 = state.beta1;
  const float b2 = state.beta2;

  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads.of(params[i]);
    auto p = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != p.size()) throw std::invalid_argument("adam_step: parameter shape changed");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0f - b1) * g[j];
      v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
      const float m_hat = m[j] / c1;
      const float v_hat = v[j] / c2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

}  // namespace ppt
