// SPDX-License-Identifier: Apache-2.0
#include "ppt/tasks.hpp"

#include <stdexcept>

#include "ppt/ops.hpp"

namespace ppt {

NextPositionOutput run_next_position(const EncoderParams& params, const Tensor& positions) {
  EmbedRequest req;
  req.observed = positions;
  req.observed_start = 0;
  const TokenSequence seq = embed_inputs(params, req);
  NextPositionOutput out;
  out.features = encode(seq, params, MaskKind::kCausal);
  out.predictions = project_next_positions(out.features, params);
  return out;
}

DestinationOutput run_destination(const EncoderParams& params, const Tensor& observed,
                                  MaskKind mask) {
  const auto& cfg = params.config;
  if (observed.rank() != 3 || observed.dim(1) != cfg.obs_len) {
    throw std::invalid_argument("run_destination: observed must be [B, T_h, 2], got " +
                                shape_str(observed.shape()));
  }
  EmbedRequest req;
  req.observed = observed;
  req.prompt_steps = {cfg.total_len() - 1};
  const TokenSequence seq = embed_inputs(params, req);
  const Tensor features = encode(seq, params, mask);
  const std::size_t batch = observed.dim(0);
  DestinationOutput out;
  out.feature = reshape(slice(features, 1, cfg.obs_len, 1), {batch, cfg.model_dim});
  out.destinations = regress_destinations(out.feature, params);
  return out;
}

TrajectoryOutput run_trajectory(const EncoderParams& params, const Tensor& observed,
                                const Tensor& pseudo_destination, MaskKind mask) {
  const auto& cfg = params.config;
  if (observed.rank() != 3 || observed.dim(1) != cfg.obs_len) {
    throw std::invalid_argument("run_trajectory: observed must be [B, T_h, 2], got " +
                                shape_str(observed.shape()));
  }
  EmbedRequest req;
  req.observed = observed;
  for (std::size_t t = cfg.obs_len; t + 1 < cfg.total_len(); ++t) req.prompt_steps.push_back(t);
  req.pseudo_destination =
      pseudo_destination.requires_grad() ? pseudo_destination.detach() : pseudo_destination;
  const TokenSequence seq = embed_inputs(params, req);
  const Tensor features = encode(seq, params, mask);
  TrajectoryOutput out;
  out.future_features = slice(features, 1, cfg.obs_len - 1, cfg.pred_len);
  out.future = project_next_positions(out.future_features, params);
  return out;
}

}  // namespace ppt
