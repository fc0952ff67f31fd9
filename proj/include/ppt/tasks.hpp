// SPDX-License-Identifier: Apache-2.0
//
// The three input layouts the encoder is trained and run on. Each helper
// performs exactly one encode() call.
//
//   next-position : positions at timesteps 0..n-1, causal mask; row i
//                   predicts timestep i+1.
//   destination   : T_h observed positions + one prompt at T_e-1; the
//                   prompt's feature feeds the K-way destination head.
//   trajectory    : T_h observed positions + prompts at T_h..T_e-2 + a
//                   pseudo destination at T_e-1. Rows at timesteps
//                   T_h-1..T_e-2 predict the T_f future positions; the
//                   pseudo-destination row's own prediction is unused.

#pragma once

#include "ppt/encoder.hpp"

namespace ppt {

struct NextPositionOutput {
  Tensor features;     // [B, n, D]
  Tensor predictions;  // [B, n, 2]
};

/// `positions` is [B, n, 2] with n <= T_e, starting at timestep 0.
NextPositionOutput run_next_position(const EncoderParams& params, const Tensor& positions);

struct DestinationOutput {
  Tensor feature;       // [B, D], the prompt token's final feature
  Tensor destinations;  // [B, K, 2]
};

/// `observed` is [B, T_h, 2].
DestinationOutput run_destination(const EncoderParams& params, const Tensor& observed,
                                  MaskKind mask = MaskKind::kCausal);

struct TrajectoryOutput {
  Tensor future_features;  // [B, T_f, D], rows for timesteps T_h-1..T_e-2
  Tensor future;           // [B, T_f, 2], predictions for timesteps T_h..T_e-1
};

/// `observed` is [B, T_h, 2]; `pseudo_destination` is [B, 2] and carries no
/// gradient back to whoever produced it.
TrajectoryOutput run_trajectory(const EncoderParams& params, const Tensor& observed,
                                const Tensor& pseudo_destination,
                                MaskKind mask = MaskKind::kFull);

}  // namespace ppt
