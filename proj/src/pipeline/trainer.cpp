// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <chrono>
#include <fstream>
#include <optional>
#include <stdexcept>

#include "json.hpp"
#include "ppt/adam.hpp"
#include "ppt/ops.hpp"
#include "ppt/pipeline.hpp"
#include "ppt/rng.hpp"
#include "ppt/tasks.hpp"

namespace ppt {

namespace {

constexpr std::size_t kTeacherChunk = 256;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t stage_tag(std::string_view stage) {
  if (stage == kStageI) return 1;
  if (stage == kStageII) return 2;
  return 3;
}

std::vector<Tensor> join(std::initializer_list<std::vector<Tensor>> groups) {
  std::vector<Tensor> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

void set_trainable(std::vector<Tensor> tensors, bool flag) {
  for (auto& t : tensors) t.set_requires_grad(flag);
}

EncoderParams frozen_copy(const EncoderParams& params) {
  EncoderParams copy = params.clone();
  copy.set_requires_grad(false);
  return copy;
}

void require_stage(const StageCheckpoint& ckpt, std::string_view expected, const char* who) {
  if (ckpt.stage != expected) {
    throw std::invalid_argument(std::string(who) + ": expected a Stage-" + std::string(expected) +
                                " checkpoint, got stage '" + ckpt.stage + "'");
  }
}

void require_model(const EncoderParams& params, const TrainConfig& config, const char* who) {
  if (!(params.config == config.model)) {
    throw std::invalid_argument(std::string(who) +
                                ": checkpoint encoder configuration does not match the config");
  }
}

void require_data(std::span<const NormalizedWindow> data, const char* who) {
  if (data.empty()) throw std::invalid_argument(std::string(who) + ": empty dataset");
}

std::vector<std::vector<std::size_t>> ordered_batches(std::size_t n, std::size_t batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    out.push_back(std::move(idx));
  }
  return out;
}

struct BatchLoss {
  Tensor total;
  std::map<std::string, double> terms;
};

using BatchLossFn = std::function<BatchLoss(std::span<const std::size_t> indices)>;

/// Mean over windows of the batch losses, batches taken in dataset order.
EpochRecord evaluate_epoch0(std::string_view stage, std::size_t n, std::size_t batch_size,
                            const BatchLossFn& loss_fn, Clock::time_point start) {
  EpochRecord rec;
  rec.stage = std::string(stage);
  rec.epoch = 0;
  for (const auto& idx : ordered_batches(n, batch_size)) {
    const BatchLoss bl = loss_fn(idx);
    const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
    rec.loss += w * bl.total.item();
    for (const auto& [k, v] : bl.terms) rec.terms[k] += w * v;
  }
  rec.wall_clock_s = seconds_since(start);
  return rec;
}

/// Shuffled minibatch Adam for `epochs` epochs; appends one record per epoch.
void run_epochs(std::string_view stage, std::size_t n, const TrainConfig& config,
                std::size_t first_epoch, std::size_t epochs, std::vector<Tensor> params,
                float lr, Rng& rng, const BatchLossFn& loss_fn, std::vector<EpochRecord>& history,
                const EpochCallback& on_epoch, Clock::time_point start,
                std::vector<Tensor> second_params = {}) {
  AdamState state;
  AdamState second_state;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    EpochRecord rec;
    rec.stage = std::string(stage);
    rec.epoch = first_epoch + e;
    for (std::size_t s = 0; s < n; s += config.batch_size) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(config.batch_size, n - s));
      const BatchLoss bl = loss_fn(idx);
      const Gradients grads = backward(bl.total);
      adam_step(params, grads, state, lr);
      if (!second_params.empty()) adam_step(second_params, grads, second_state, lr);
      const double w = static_cast<double>(idx.size()) / static_cast<double>(n);
      rec.loss += w * bl.total.item();
      for (const auto& [k, v] : bl.terms) rec.terms[k] += w * v;
    }
    rec.wall_clock_s = seconds_since(start);
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
}

Tensor stage1_batch_loss(const EncoderParams& params, const WindowBatch& batch) {
  const Tensor inputs = slice(batch.full, 1, 0, kWindowLen - 1);
  const Tensor targets = slice(batch.full, 1, 1, kWindowLen - 1);
  return recon_loss(run_next_position(params, inputs).predictions, targets);
}

Tensor stage2_batch_loss(const EncoderParams& params, const WindowBatch& batch,
                         const LossWeights& weights) {
  return destination_loss(run_destination(params, batch.observed).destinations, batch.destination,
                          weights);
}

std::map<std::string, double> final_metrics(const std::vector<EpochRecord>& history) {
  std::map<std::string, double> m = history.back().terms;
  m["loss"] = history.back().loss;
  return m;
}

/// Rows of a per-window feature cache, as a constant tensor.
Tensor gather_cache(const std::vector<float>& cache, std::size_t row_size,
                    std::span<const std::size_t> indices, Shape shape) {
  std::vector<float> out(indices.size() * row_size);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(cache.data() + indices[i] * row_size, row_size, out.data() + i * row_size);
  }
  return Tensor::from(std::move(shape), std::move(out));
}

}  // namespace

EncoderParams initial_params(const TrainConfig& config, std::string_view stage) {
  return EncoderParams::init(config.model, derive_seed(config.seed, 100 + stage_tag(stage)));
}

double stage1_loss(const EncoderParams& params, std::span<const NormalizedWindow> data,
                   std::size_t batch_size) {
  require_data(data, "stage1_loss");
  return evaluate_epoch0(kStageI, data.size(), batch_size,
                         [&](std::span<const std::size_t> idx) {
                           return BatchLoss{stage1_batch_loss(params, make_batch(data, idx)), {}};
                         },
                         Clock::now())
      .loss;
}

double stage2_loss(const EncoderParams& params, std::span<const NormalizedWindow> data,
                   const TrainConfig& config) {
  require_data(data, "stage2_loss");
  return evaluate_epoch0(kStageII, data.size(), config.batch_size,
                         [&](std::span<const std::size_t> idx) {
                           return BatchLoss{
                               stage2_batch_loss(params, make_batch(data, idx), config.weights), {}};
                         },
                         Clock::now())
      .loss;
}

StageResult train_stage1(std::span<const NormalizedWindow> data, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  config.validate();
  require_data(data, "train_stage1");
  const auto start = Clock::now();
  EncoderParams params = initial_params(config, kStageI);
  const BatchLossFn loss_fn = [&](std::span<const std::size_t> idx) {
    Tensor loss = stage1_batch_loss(params, make_batch(data, idx));
    const double value = loss.item();
    return BatchLoss{std::move(loss), {{"recon", value}}};
  };

  StageResult result;
  result.history.push_back(evaluate_epoch0(kStageI, data.size(), config.batch_size, loss_fn, start));
  if (on_epoch) on_epoch(result.history.back());
  Rng rng(derive_seed(config.seed, stage_tag(kStageI)));
  run_epochs(kStageI, data.size(), config, 1, config.epochs_stage1,
             join({params.encoder_body(), params.projector()}), static_cast<float>(config.lr_stage1),
             rng, loss_fn, result.history, on_epoch, start);

  result.checkpoint = {std::move(params), std::string(kStageI), config.hash(), config.seed,
                       config.epochs_stage1, final_metrics(result.history)};
  return result;
}

StageResult train_stage2(const StageCheckpoint* theta_i, std::span<const NormalizedWindow> data,
                         const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  require_data(data, "train_stage2");
  EncoderParams params;
  if (theta_i != nullptr) {
    require_stage(*theta_i, kStageI, "train_stage2");
    require_model(theta_i->params, config, "train_stage2");
    params = theta_i->params.clone();
  } else if (config.use_task1) {
    throw std::invalid_argument("train_stage2: a Stage-I checkpoint is required (use_task1 = true)");
  } else {
    params = initial_params(config, kStageII);
  }
  params.set_requires_grad(true);

  const auto start = Clock::now();
  const BatchLossFn loss_fn = [&](std::span<const std::size_t> idx) {
    const WindowBatch batch = make_batch(data, idx);
    const DestinationOutput out = run_destination(params, batch.observed);
    const Tensor precision = precision_loss(out.destinations, batch.destination);
    const Tensor diversity = diversity_loss(out.destinations, config.weights.sigma_s);
    Tensor total = destination_loss(out.destinations, batch.destination, config.weights);
    return BatchLoss{std::move(total),
                     {{"precision", precision.item()}, {"diversity", diversity.item()}}};
  };

  StageResult result;
  result.history.push_back(evaluate_epoch0(kStageII, data.size(), config.batch_size, loss_fn, start));
  if (on_epoch) on_epoch(result.history.back());
  Rng rng(derive_seed(config.seed, stage_tag(kStageII)));
  const float lr = static_cast<float>(config.lr_stage2);

  // Warm-up: everything but the destination head is frozen.
  params.set_requires_grad(false);
  set_trainable(params.destination_head(), true);
  run_epochs(kStageII, data.size(), config, 1, config.warmup_epochs, params.destination_head(), lr,
             rng, loss_fn, result.history, on_epoch, start);
  params.set_requires_grad(true);
  run_epochs(kStageII, data.size(), config, config.warmup_epochs + 1,
             config.epochs_stage2 - config.warmup_epochs,
             join({params.encoder_body(), params.prompt_table(), params.destination_head()}), lr,
             rng, loss_fn, result.history, on_epoch, start);

  result.checkpoint = {std::move(params), std::string(kStageII), config.hash(), config.seed,
                       config.epochs_stage2, final_metrics(result.history)};
  return result;
}

TeacherFeatures teacher_features(const EncoderParams* theta_i, const EncoderParams* theta_ii,
                                 const WindowBatch& batch) {
  TeacherFeatures out;
  if (theta_i != nullptr) {
    const auto& cfg = theta_i->config;
    const Tensor inputs = slice(batch.full, 1, 0, cfg.total_len() - 1);
    const Tensor features = run_next_position(*theta_i, inputs).features;
    out.trajectory = slice(features, 1, cfg.obs_len - 1, cfg.pred_len).detach();
  }
  if (theta_ii != nullptr) {
    out.destination = run_destination(*theta_ii, batch.observed).feature.detach();
  }
  return out;
}

Stage3Result train_stage3(const StageCheckpoint* theta_i, const StageCheckpoint* theta_ii,
                          std::span<const NormalizedWindow> data, const TrainConfig& config,
                          const EpochCallback& on_epoch) {
  config.validate();
  require_data(data, "train_stage3");
  if (theta_i != nullptr) {
    require_stage(*theta_i, kStageI, "train_stage3");
    require_model(theta_i->params, config, "train_stage3");
  }
  EncoderParams base;
  if (theta_ii != nullptr) {
    require_stage(*theta_ii, kStageII, "train_stage3");
    require_model(theta_ii->params, config, "train_stage3");
    base = theta_ii->params;
  } else if (config.use_task2) {
    throw std::invalid_argument("train_stage3: a Stage-II checkpoint is required (use_task2 = true)");
  } else {
    base = initial_params(config, kStageIIITraj);
  }
  auto [dest, traj] = replicate(base);
  dest.set_requires_grad(true);
  traj.set_requires_grad(true);

  const bool kd_traj = config.use_kd && theta_i != nullptr;
  const bool kd_dest = config.use_kd && theta_ii != nullptr;
  const auto start = Clock::now();
  const auto& cfg = config.model;
  const std::size_t d = cfg.model_dim;

  // Teachers are frozen, so their features are computed once per window.
  std::vector<float> cache_traj;
  std::vector<float> cache_dest;
  if (kd_traj || kd_dest) {
    const EncoderParams teacher_i = kd_traj ? frozen_copy(theta_i->params) : EncoderParams{};
    const EncoderParams teacher_ii = kd_dest ? frozen_copy(theta_ii->params) : EncoderParams{};
    for (const auto& idx : ordered_batches(data.size(), kTeacherChunk)) {
      const TeacherFeatures f = teacher_features(kd_traj ? &teacher_i : nullptr,
                                                 kd_dest ? &teacher_ii : nullptr,
                                                 make_batch(data, idx));
      if (kd_traj) cache_traj.insert(cache_traj.end(), f.trajectory.data().begin(), f.trajectory.data().end());
      if (kd_dest) cache_dest.insert(cache_dest.end(), f.destination.data().begin(), f.destination.data().end());
    }
  }

  const BatchLossFn loss_fn = [&](std::span<const std::size_t> idx) {
    const WindowBatch batch = make_batch(data, idx);
    const std::size_t b = idx.size();
    const DestinationOutput dout = run_destination(dest, batch.observed);
    const Tensor l_des = destination_loss(dout.destinations, batch.destination, config.weights);

    // The candidate closest to the ground truth becomes the pseudo
    // destination, as a constant.
    const auto best = closest_candidate(dout.destinations, batch.destination);
    std::vector<float> pseudo(b * 2);
    const auto cand = dout.destinations.data();
    for (std::size_t i = 0; i < b; ++i) {
      pseudo[i * 2] = cand[(i * cfg.num_candidates + best[i]) * 2];
      pseudo[i * 2 + 1] = cand[(i * cfg.num_candidates + best[i]) * 2 + 1];
    }
    const TrajectoryOutput tout =
        run_trajectory(traj, batch.observed, Tensor::from({b, 2}, std::move(pseudo)));
    const Tensor recon = recon_loss(tout.future, batch.future);

    BatchLoss bl;
    Tensor l_kd_traj;
    Tensor l_kd_dest;
    if (kd_traj) {
      l_kd_traj = kd_feature_loss(gather_cache(cache_traj, cfg.pred_len * d, idx, {b, cfg.pred_len, d}),
                                  tout.future_features, traj.kd_traj_w, traj.kd_traj_b);
      bl.terms["kd_traj"] = l_kd_traj.item();
    }
    if (kd_dest) {
      l_kd_dest = kd_feature_loss(gather_cache(cache_dest, d, idx, {b, d}), dout.feature,
                                  dest.kd_dest_w, dest.kd_dest_b);
      bl.terms["kd_dest"] = l_kd_dest.item();
    }
    const Tensor l_traj = trajectory_total_loss(recon, l_kd_traj, l_kd_dest, config.weights);
    bl.terms["recon"] = recon.item();
    bl.terms["destination"] = l_des.item();
    bl.total = add(l_traj, l_des);
    return bl;
  };

  Stage3Result result;
  result.history.push_back(evaluate_epoch0("III", data.size(), config.batch_size, loss_fn, start));
  if (on_epoch) on_epoch(result.history.back());
  std::vector<Tensor> dest_params = join({dest.encoder_body(), dest.prompt_table(), dest.destination_head()});
  if (kd_dest) dest_params = join({dest_params, dest.kd_dest_projector()});
  std::vector<Tensor> traj_params = join({traj.encoder_body(), traj.prompt_table(), traj.projector()});
  if (kd_traj) traj_params = join({traj_params, traj.kd_traj_projector()});
  Rng rng(derive_seed(config.seed, stage_tag(kStageIIITraj)));
  run_epochs("III", data.size(), config, 1, config.epochs_stage3, std::move(dest_params),
             static_cast<float>(config.lr_stage3), rng, loss_fn, result.history, on_epoch, start,
             std::move(traj_params));

  const auto metrics = final_metrics(result.history);
  result.destination = {std::move(dest), std::string(kStageIIIDest), config.hash(), config.seed,
                        config.epochs_stage3, metrics};
  result.trajectory = {std::move(traj), std::string(kStageIIITraj), config.hash(), config.seed,
                       config.epochs_stage3, metrics};
  return result;
}

std::vector<TrajectoryWindow> load_dataset(const TrainConfig& config, bool test) {
  if (config.train_files.empty()) {
    const auto kind = parse_synth_kind(config.synth_kind);
    return synth_generate(kind, test ? config.synth_test : config.synth_train,
                          derive_seed(config.synth_seed, test ? 2 : 1));
  }
  const auto& files = test ? config.test_files : config.train_files;
  if (files.empty()) throw std::invalid_argument("config: test_files is empty");
  std::vector<TrajectoryWindow> out;
  for (const auto& f : files) {
    const auto records = load_trajectory_file(f);
    auto windows = window_trajectories(records, config.frame_stride, config.window_stride,
                                       std::filesystem::path(f).stem().string());
    out.insert(out.end(), std::make_move_iterator(windows.begin()),
               std::make_move_iterator(windows.end()));
  }
  return out;
}

std::vector<NormalizedWindow> normalize_all(std::span<const TrajectoryWindow> windows) {
  std::vector<NormalizedWindow> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(normalize(w));
  return out;
}

void append_epoch_log(const std::filesystem::path& path, std::span<const EpochRecord> records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to log file " + path.string());
  for (const auto& r : records) {
    const nlohmann::json j{{"stage", r.stage},
                           {"epoch", r.epoch},
                           {"loss", r.loss},
                           {"terms", r.terms},
                           {"wall_clock_s", r.wall_clock_s}};
    out << j.dump() << '\n';
  }
}

Stage3Result run_pipeline(std::span<const NormalizedWindow> data, const TrainConfig& config,
                          const EpochCallback& on_epoch) {
  const std::filesystem::path dir = config.checkpoint_dir;
  std::optional<StageResult> s1;
  std::optional<StageResult> s2;
  if (config.use_task1) {
    s1 = train_stage1(data, config, on_epoch);
    save_checkpoint(s1->checkpoint, checkpoint_path(dir, kStageI));
  }
  if (config.use_task2) {
    s2 = train_stage2(s1 ? &s1->checkpoint : nullptr, data, config, on_epoch);
    save_checkpoint(s2->checkpoint, checkpoint_path(dir, kStageII));
  }
  Stage3Result s3 = train_stage3(s1 ? &s1->checkpoint : nullptr, s2 ? &s2->checkpoint : nullptr,
                                 data, config, on_epoch);
  save_checkpoint(s3.destination, checkpoint_path(dir, kStageIIIDest));
  save_checkpoint(s3.trajectory, checkpoint_path(dir, kStageIIITraj));
  std::vector<EpochRecord> history;
  if (s1) history = s1->history;
  if (s2) history.insert(history.end(), s2->history.begin(), s2->history.end());
  history.insert(history.end(), s3.history.begin(), s3.history.end());
  s3.history = std::move(history);
  return s3;
}

}  // namespace ppt
