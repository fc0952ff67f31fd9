// SPDX-License-Identifier: Apache-2.0
//
// Pre-norm transformer encoder over per-timestep trajectory tokens, plus the
// heads that sit on top of it: the next-position projector, the K-way
// destination regressor and the two feature projectors used for
// distillation.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ppt/rng.hpp"
#include "ppt/tensor.hpp"

namespace ppt {

struct EncoderConfig {
  std::size_t num_layers = 3;
  std::size_t model_dim = 128;
  std::size_t num_heads = 8;
  std::size_t mlp_hidden_dim = 512;
  std::size_t dest_hidden_dim = 256;
  std::size_t obs_len = 8;           // T_h
  std::size_t pred_len = 12;         // T_f
  std::size_t num_candidates = 20;   // K

  std::size_t total_len() const { return obs_len + pred_len; }
  std::size_t head_dim() const { return model_dim / num_heads; }

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  Tensor attn_norm_gain, attn_norm_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor mlp_norm_gain, mlp_norm_bias;
  Tensor w1, b1, w2, b2;
};

/// All learnable state of one predictor. Tensors are leaves that require grad.
struct EncoderParams {
  EncoderConfig config;
  Tensor input_w, input_b;     // 2 -> D
  Tensor positional;           // [T_e, D]
  std::vector<LayerParams> layers;
  Tensor final_norm_gain, final_norm_bias;
  Tensor proj_w, proj_b;       // D -> 2
  Tensor prompts;              // [T_f, D], row r is timestep T_h + r
  Tensor dest_w1, dest_b1;     // D -> dest_hidden
  Tensor dest_w2, dest_b2;     // dest_hidden -> 2K
  Tensor kd_traj_w, kd_traj_b; // D -> D
  Tensor kd_dest_w, kd_dest_b; // D -> D

  /// Random initialization: uniform(+-1/sqrt(fan_in)) weights, zero biases,
  /// unit/zero LayerNorms, normal(0, 0.02) positional and prompt tables.
  /// The distillation projectors start as the identity map.
  static EncoderParams init(const EncoderConfig& config, std::uint64_t seed);

  /// Stable (name, tensor) listing; names are the checkpoint keys.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  /// Deep, independent copy (new leaf identities).
  EncoderParams clone() const;

  // Parameter groups used by the trainers.
  std::vector<Tensor> encoder_body() const;  // input embedding, positions, layers, final norm
  std::vector<Tensor> projector() const;
  std::vector<Tensor> prompt_table() const;
  std::vector<Tensor> destination_head() const;
  std::vector<Tensor> kd_traj_projector() const;
  std::vector<Tensor> kd_dest_projector() const;

  void set_requires_grad(bool flag);
};

/// Deep copies for the destination and trajectory predictors.
std::pair<EncoderParams, EncoderParams> replicate(const EncoderParams& params);

/// True if both parameter sets have identical names, shapes and bits.
bool bitwise_equal(const EncoderParams& a, const EncoderParams& b);

enum class TokenKind { kObserved, kPrompt, kPseudoDestination };
enum class MaskKind { kCausal, kFull };

/// A batch of B token sequences sharing one layout.
struct TokenSequence {
  Tensor tokens;                          // [B, L, D]
  std::vector<std::size_t> position_ids;  // L timestep ids, strictly increasing
  std::vector<TokenKind> kinds;           // L

  std::size_t length() const { return position_ids.size(); }
  std::size_t batch() const { return tokens.dim(0); }
};

struct EmbedRequest {
  /// [B, n, 2] observed positions (normalized) or undefined for none.
  Tensor observed;
  /// Timestep of the first observed token; the rest follow contiguously.
  std::size_t observed_start = 0;
  /// Timesteps that take a learnable prompt vector; each must be >= T_h.
  std::vector<std::size_t> prompt_steps;
  /// [B, 2] pseudo destination placed at timestep T_e - 1, or undefined.
  Tensor pseudo_destination;
};

TokenSequence embed_inputs(const EncoderParams& params, const EmbedRequest& request);

/// Runs all transformer blocks and the final LayerNorm -> [B, L, D].
Tensor encode(const TokenSequence& seq, const EncoderParams& params, MaskKind mask);

/// Row i predicts the position at timestep position_ids[i] + 1 -> [B, L, 2].
Tensor project_next_positions(const Tensor& features, const EncoderParams& params);

/// [B, D] destination-slot features -> [B, K, 2] candidate destinations.
Tensor regress_destinations(const Tensor& destination_feature, const EncoderParams& params);

/// Applies a D -> D distillation projector to [..., D] features.
Tensor apply_projector(const Tensor& features, const Tensor& w, const Tensor& b);

/// Additive mask [L, L]: 0 where attention is allowed, kMaskedLogit elsewhere.
Tensor attention_mask(std::size_t length, MaskKind kind);

struct EncodeRecord {
  std::size_t batch = 0;
  std::size_t length = 0;
  MaskKind mask = MaskKind::kCausal;
};

/// While alive, records every encode() call made on the constructing thread.
class ScopedEncodeTrace {
 public:
  ScopedEncodeTrace();
  ~ScopedEncodeTrace();
  ScopedEncodeTrace(const ScopedEncodeTrace&) = delete;
  ScopedEncodeTrace& operator=(const ScopedEncodeTrace&) = delete;

  const std::vector<EncodeRecord>& records() const { return records_; }
  std::size_t calls() const { return records_.size(); }
  void clear() { records_.clear(); }

 private:
  std::vector<EncodeRecord> records_;
  std::vector<EncodeRecord>* previous_;
};

}  // namespace ppt
