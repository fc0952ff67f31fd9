// SPDX-License-Identifier: Apache-2.0
#include "ppt/encoder.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

#include "ppt/ops.hpp"

namespace ppt {

namespace {

thread_local std::vector<EncodeRecord>* t_trace = nullptr;

Tensor uniform_weight(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<float> v(fan_in * fan_out);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor normal_table(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::vector<float> v(rows * cols);
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, stddev));
  return Tensor::from({rows, cols}, std::move(v), true);
}

Tensor identity(std::size_t d) {
  std::vector<float> v(d * d, 0.0f);
  for (std::size_t i = 0; i < d; ++i) v[i * d + i] = 1.0f;
  return Tensor::from({d, d}, std::move(v), true);
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) { return add(matmul(x, w), b); }

}  // namespace

void EncoderConfig::validate() const {
  if (num_layers == 0) throw std::invalid_argument("EncoderConfig: num_layers must be >= 1");
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw std::invalid_argument("EncoderConfig: model_dim must be a positive multiple of num_heads");
  }
  if (mlp_hidden_dim == 0 || dest_hidden_dim == 0) {
    throw std::invalid_argument("EncoderConfig: hidden dims must be positive");
  }
  if (obs_len < 1 || pred_len < 1) {
    throw std::invalid_argument("EncoderConfig: obs_len and pred_len must be >= 1");
  }
  if (num_candidates < 2) throw std::invalid_argument("EncoderConfig: num_candidates must be >= 2");
}

EncoderParams EncoderParams::init(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const std::size_t d = config.model_dim;
  const std::size_t h = config.mlp_hidden_dim;
  EncoderParams p;
  p.config = config;
  p.input_w = uniform_weight(rng, 2, d);
  p.input_b = Tensor::zeros({d}, true);
  p.positional = normal_table(rng, config.total_len(), d, 0.02);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    LayerParams layer;
    layer.attn_norm_gain = Tensor::full({d}, 1.0f, true);
    layer.attn_norm_bias = Tensor::zeros({d}, true);
    layer.wq = uniform_weight(rng, d, d);
    layer.bq = Tensor::zeros({d}, true);
    layer.wk = uniform_weight(rng, d, d);
    layer.bk = Tensor::zeros({d}, true);
    layer.wv = uniform_weight(rng, d, d);
    layer.bv = Tensor::zeros({d}, true);
    layer.wo = uniform_weight(rng, d, d);
    layer.bo = Tensor::zeros({d}, true);
    layer.mlp_norm_gain = Tensor::full({d}, 1.0f, true);
    layer.mlp_norm_bias = Tensor::zeros({d}, true);
    layer.w1 = uniform_weight(rng, d, h);
    layer.b1 = Tensor::zeros({h}, true);
    layer.w2 = uniform_weight(rng, h, d);
    layer.b2 = Tensor::zeros({d}, true);
    p.layers.push_back(std::move(layer));
  }
  p.final_norm_gain = Tensor::full({d}, 1.0f, true);
  p.final_norm_bias = Tensor::zeros({d}, true);
  p.proj_w = uniform_weight(rng, d, 2);
  p.proj_b = Tensor::zeros({2}, true);
  p.prompts = normal_table(rng, config.pred_len, d, 0.02);
  p.dest_w1 = uniform_weight(rng, d, config.dest_hidden_dim);
  p.dest_b1 = Tensor::zeros({config.dest_hidden_dim}, true);
  p.dest_w2 = uniform_weight(rng, config.dest_hidden_dim, 2 * config.num_candidates);
  p.dest_b2 = Tensor::zeros({2 * config.num_candidates}, true);
  p.kd_traj_w = identity(d);
  p.kd_traj_b = Tensor::zeros({d}, true);
  p.kd_dest_w = identity(d);
  p.kd_dest_b = Tensor::zeros({d}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> EncoderParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("input.weight", input_w);
  out.emplace_back("input.bias", input_b);
  out.emplace_back("positional", positional);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.emplace_back(pre + "attn_norm.gain", L.attn_norm_gain);
    out.emplace_back(pre + "attn_norm.bias", L.attn_norm_bias);
    out.emplace_back(pre + "attn.q.weight", L.wq);
    out.emplace_back(pre + "attn.q.bias", L.bq);
    out.emplace_back(pre + "attn.k.weight", L.wk);
    out.emplace_back(pre + "attn.k.bias", L.bk);
    out.emplace_back(pre + "attn.v.weight", L.wv);
    out.emplace_back(pre + "attn.v.bias", L.bv);
    out.emplace_back(pre + "attn.out.weight", L.wo);
    out.emplace_back(pre + "attn.out.bias", L.bo);
    out.emplace_back(pre + "mlp_norm.gain", L.mlp_norm_gain);
    out.emplace_back(pre + "mlp_norm.bias", L.mlp_norm_bias);
    out.emplace_back(pre + "mlp.fc1.weight", L.w1);
    out.emplace_back(pre + "mlp.fc1.bias", L.b1);
    out.emplace_back(pre + "mlp.fc2.weight", L.w2);
    out.emplace_back(pre + "mlp.fc2.bias", L.b2);
  }
  out.emplace_back("final_norm.gain", final_norm_gain);
  out.emplace_back("final_norm.bias", final_norm_bias);
  out.emplace_back("next_position.weight", proj_w);
  out.emplace_back("next_position.bias", proj_b);
  out.emplace_back("prompts", prompts);
  out.emplace_back("destination.fc1.weight", dest_w1);
  out.emplace_back("destination.fc1.bias", dest_b1);
  out.emplace_back("destination.fc2.weight", dest_w2);
  out.emplace_back("destination.fc2.bias", dest_b2);
  out.emplace_back("kd_traj.weight", kd_traj_w);
  out.emplace_back("kd_traj.bias", kd_traj_b);
  out.emplace_back("kd_dest.weight", kd_dest_w);
  out.emplace_back("kd_dest.bias", kd_dest_b);
  return out;
}

std::vector<Tensor> EncoderParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

EncoderParams EncoderParams::clone() const {
  EncoderParams p = *this;
  p.input_w = input_w.clone();
  p.input_b = input_b.clone();
  p.positional = positional.clone();
  for (auto& L : p.layers) {
    for (Tensor* t : {&L.attn_norm_gain, &L.attn_norm_bias, &L.wq, &L.bq, &L.wk, &L.bk, &L.wv,
                      &L.bv, &L.wo, &L.bo, &L.mlp_norm_gain, &L.mlp_norm_bias, &L.w1, &L.b1,
                      &L.w2, &L.b2}) {
      *t = t->clone();
    }
  }
  for (Tensor* t : {&p.final_norm_gain, &p.final_norm_bias, &p.proj_w, &p.proj_b, &p.prompts,
                    &p.dest_w1, &p.dest_b1, &p.dest_w2, &p.dest_b2, &p.kd_traj_w, &p.kd_traj_b,
                    &p.kd_dest_w, &p.kd_dest_b}) {
    *t = t->clone();
  }
  return p;
}

std::vector<Tensor> EncoderParams::encoder_body() const {
  std::vector<Tensor> out{input_w, input_b, positional};
  for (const auto& L : layers) {
    out.insert(out.end(), {L.attn_norm_gain, L.attn_norm_bias, L.wq, L.bq, L.wk, L.bk, L.wv, L.bv,
                           L.wo, L.bo, L.mlp_norm_gain, L.mlp_norm_bias, L.w1, L.b1, L.w2, L.b2});
  }
  out.push_back(final_norm_gain);
  out.push_back(final_norm_bias);
  return out;
}

std::vector<Tensor> EncoderParams::projector() const { return {proj_w, proj_b}; }
std::vector<Tensor> EncoderParams::prompt_table() const { return {prompts}; }
std::vector<Tensor> EncoderParams::destination_head() const {
  return {dest_w1, dest_b1, dest_w2, dest_b2};
}
std::vector<Tensor> EncoderParams::kd_traj_projector() const { return {kd_traj_w, kd_traj_b}; }
std::vector<Tensor> EncoderParams::kd_dest_projector() const { return {kd_dest_w, kd_dest_b}; }

void EncoderParams::set_requires_grad(bool flag) {
  for (auto& t : all()) t.set_requires_grad(flag);
}

std::pair<EncoderParams, EncoderParams> replicate(const EncoderParams& params) {
  return {params.clone(), params.clone()};
}

bool bitwise_equal(const EncoderParams& a, const EncoderParams& b) {
  const auto na = a.named();
  const auto nb = b.named();
  if (na.size() != nb.size()) return false;
  for (std::size_t i = 0; i < na.size(); ++i) {
    if (na[i].first != nb[i].first || na[i].second.shape() != nb[i].second.shape()) return false;
    const auto x = na[i].second.data();
    const auto y = nb[i].second.data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (std::bit_cast<std::uint32_t>(x[j]) != std::bit_cast<std::uint32_t>(y[j])) return false;
    }
  }
  return true;
}

TokenSequence embed_inputs(const EncoderParams& params, const EmbedRequest& request) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.model_dim;
  const std::size_t total = cfg.total_len();
  TokenSequence seq;
  std::vector<Tensor> parts;
  std::size_t batch = 0;

  if (request.observed.defined()) {
    const Tensor& obs = request.observed;
    if (obs.rank() != 3 || obs.dim(2) != 2 || obs.dim(1) == 0) {
      throw std::invalid_argument("embed_inputs: observed must be [B, n, 2], got " +
                                  shape_str(obs.shape()));
    }
    batch = obs.dim(0);
    for (std::size_t i = 0; i < obs.dim(1); ++i) {
      seq.position_ids.push_back(request.observed_start + i);
      seq.kinds.push_back(TokenKind::kObserved);
    }
    parts.push_back(affine(obs, params.input_w, params.input_b));
  }
  if (request.pseudo_destination.defined()) {
    const Tensor& dst = request.pseudo_destination;
    if (dst.rank() != 2 || dst.dim(1) != 2 || (batch != 0 && dst.dim(0) != batch)) {
      throw std::invalid_argument("embed_inputs: pseudo destination must be [B, 2], got " +
                                  shape_str(dst.shape()));
    }
    batch = dst.dim(0);
  }
  if (batch == 0) {
    throw std::invalid_argument("embed_inputs: need observed positions or a pseudo destination");
  }

  if (!request.prompt_steps.empty()) {
    std::vector<std::size_t> rows;
    for (auto step : request.prompt_steps) {
      if (step < cfg.obs_len) {
        throw std::invalid_argument("embed_inputs: prompt timestep " + std::to_string(step) +
                                    " lies inside the observed window");
      }
      if (step >= total) {
        throw std::invalid_argument("embed_inputs: prompt timestep " + std::to_string(step) +
                                    " out of range");
      }
      rows.push_back(step - cfg.obs_len);
      seq.position_ids.push_back(step);
      seq.kinds.push_back(TokenKind::kPrompt);
    }
    const std::size_t n = rows.size();
    const Tensor table = gather_rows(params.prompts, rows);
    parts.push_back(add(Tensor::zeros({batch, n, d}), table));
  }

  if (request.pseudo_destination.defined()) {
    seq.position_ids.push_back(total - 1);
    seq.kinds.push_back(TokenKind::kPseudoDestination);
    const Tensor dst = reshape(request.pseudo_destination, {batch, 1, 2});
    parts.push_back(affine(dst, params.input_w, params.input_b));
  }

  for (std::size_t i = 0; i < seq.position_ids.size(); ++i) {
    const std::size_t id = seq.position_ids[i];
    if (id >= total) {
      throw std::invalid_argument("embed_inputs: timestep " + std::to_string(id) + " out of range");
    }
    if (i > 0 && id <= seq.position_ids[i - 1]) {
      throw std::invalid_argument("embed_inputs: duplicate or out-of-order timestep " +
                                  std::to_string(id));
    }
  }

  const Tensor stacked = parts.size() == 1 ? parts.front() : concat(parts, 1);
  seq.tokens = add(stacked, gather_rows(params.positional, seq.position_ids));
  return seq;
}

Tensor attention_mask(std::size_t length, MaskKind kind) {
  std::vector<float> m(length * length, 0.0f);
  if (kind == MaskKind::kCausal) {
    for (std::size_t i = 0; i < length; ++i) {
      for (std::size_t j = i + 1; j < length; ++j) m[i * length + j] = kMaskedLogit;
    }
  }
  return Tensor::from({length, length}, std::move(m));
}

Tensor encode(const TokenSequence& seq, const EncoderParams& params, MaskKind mask) {
  const auto& cfg = params.config;
  const std::size_t len = seq.length();
  if (len == 0) throw std::invalid_argument("encode: empty token sequence");
  if (seq.tokens.rank() != 3 || seq.tokens.dim(1) != len || seq.tokens.dim(2) != cfg.model_dim) {
    throw std::invalid_argument("encode: tokens must be [B, L, D], got " +
                                shape_str(seq.tokens.shape()));
  }
  if (t_trace) t_trace->push_back({seq.tokens.dim(0), len, mask});

  const std::size_t dh = cfg.head_dim();
  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(dh));
  const Tensor mask_t = attention_mask(len, mask);

  Tensor x = seq.tokens;
  for (const auto& L : params.layers) {
    const Tensor h = layernorm_last(x, L.attn_norm_gain, L.attn_norm_bias);
    const Tensor q = affine(h, L.wq, L.bq);
    const Tensor k = affine(h, L.wk, L.bk);
    const Tensor v = affine(h, L.wv, L.bv);
    std::vector<Tensor> heads;
    heads.reserve(cfg.num_heads);
    for (std::size_t hd = 0; hd < cfg.num_heads; ++hd) {
      const Tensor qh = slice(q, -1, hd * dh, dh);
      const Tensor kh = slice(k, -1, hd * dh, dh);
      const Tensor vh = slice(v, -1, hd * dh, dh);
      const Tensor scores = scale(matmul(qh, transpose_last2(kh)), attn_scale);
      heads.push_back(matmul(softmax_last(scores, mask_t), vh));
    }
    const Tensor attn = affine(heads.size() == 1 ? heads.front() : concat(heads, -1), L.wo, L.bo);
    x = add(x, attn);
    const Tensor h2 = layernorm_last(x, L.mlp_norm_gain, L.mlp_norm_bias);
    x = add(x, affine(relu(affine(h2, L.w1, L.b1)), L.w2, L.b2));
  }
  return layernorm_last(x, params.final_norm_gain, params.final_norm_bias);
}

Tensor project_next_positions(const Tensor& features, const EncoderParams& params) {
  return affine(features, params.proj_w, params.proj_b);
}

Tensor regress_destinations(const Tensor& destination_feature, const EncoderParams& params) {
  if (destination_feature.rank() != 2 || destination_feature.dim(1) != params.config.model_dim) {
    throw std::invalid_argument("regress_destinations: feature must be [B, D], got " +
                                shape_str(destination_feature.shape()));
  }
  const std::size_t batch = destination_feature.dim(0);
  const Tensor hidden = relu(affine(destination_feature, params.dest_w1, params.dest_b1));
  const Tensor flat = affine(hidden, params.dest_w2, params.dest_b2);
  return reshape(flat, {batch, params.config.num_candidates, 2});
}

Tensor apply_projector(const Tensor& features, const Tensor& w, const Tensor& b) {
  return affine(features, w, b);
}

ScopedEncodeTrace::ScopedEncodeTrace() : previous_(t_trace) { t_trace = &records_; }
ScopedEncodeTrace::~ScopedEncodeTrace() { t_trace = previous_; }

}  // namespace ppt
