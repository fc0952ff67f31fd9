// SPDX-License-Identifier: Apache-2.0
//
// Staged trainer, training configuration and checkpoint files.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ppt/data.hpp"
#include "ppt/encoder.hpp"
#include "ppt/objectives.hpp"

namespace ppt {

/// Training configuration. Read from "key = value" lines; see
/// `train_config_keys()` for the accepted keys.
struct TrainConfig {
  EncoderConfig model;

  double lr_stage1 = 0.001;
  double lr_stage2 = 0.0001;
  double lr_stage3 = 0.0015;
  std::size_t epochs_stage1 = 100;
  std::size_t epochs_stage2 = 100;
  std::size_t warmup_epochs = 20;  // destination head only, encoder frozen
  std::size_t epochs_stage3 = 200;
  std::size_t batch_size = 128;
  LossWeights weights;
  std::uint64_t seed = 0;

  // Ablation switches. Without Task-I, Task-II starts from a random model;
  // without Task-II, the Stage-III students start from a random model.
  bool use_task1 = true;
  bool use_task2 = true;
  bool use_kd = true;

  // Data: files when given, otherwise a synthetic suite.
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  std::int64_t frame_stride = 10;
  std::size_t window_stride = 1;
  std::string synth_kind = "goal-attracted-noisy";
  std::size_t synth_train = 2000;
  std::size_t synth_test = 500;
  std::uint64_t synth_seed = 1;
  std::string units = "m";

  std::string checkpoint_dir = "checkpoints";
  std::string log_file;  // empty: <checkpoint_dir>/train_log.jsonl

  /// Throws std::invalid_argument naming the offending key.
  void validate() const;

  /// Sorted "key = value" lines for every key. Re-parsing gives an equal config.
  std::string to_text() const;

  /// FNV-1a over the canonical text, excluding output locations
  /// (checkpoint_dir, log_file) so relocated runs hash alike.
  std::uint64_t hash() const;

  std::filesystem::path log_path() const;

  bool operator==(const TrainConfig&) const = default;
};

const std::vector<std::string>& train_config_keys();

/// Applies one key/value pair; unknown keys and unparsable values throw.
void apply_config_value(TrainConfig& config, std::string_view key, std::string_view value);

/// Parses key = value text on top of the defaults. '#' starts a comment.
TrainConfig parse_train_config(std::string_view text, std::string_view source = "<config>");
TrainConfig load_train_config(const std::filesystem::path& path);

std::string hash_hex(std::uint64_t hash);

/// Stage identifiers stored in checkpoints.
inline constexpr std::string_view kStageI = "I";
inline constexpr std::string_view kStageII = "II";
inline constexpr std::string_view kStageIIIDest = "III-dest";
inline constexpr std::string_view kStageIIITraj = "III-traj";

struct StageCheckpoint {
  EncoderParams params;
  std::string stage;
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  std::map<std::string, double> metrics;
};

/// Binary checkpoint: 8-byte magic, u64 manifest length, JSON manifest
/// (format version, stage, provenance, tensor names and shapes), then the
/// tensors as little-endian float32 in manifest order. A pretty-printed copy
/// of the manifest is written next to it as <path>.manifest.json.
void save_checkpoint(const StageCheckpoint& checkpoint, const std::filesystem::path& path);
StageCheckpoint load_checkpoint(const std::filesystem::path& path);
std::vector<char> serialize_checkpoint(const StageCheckpoint& checkpoint);
StageCheckpoint deserialize_checkpoint(std::span<const char> bytes, std::string_view source);

/// Canonical file names inside a checkpoint directory.
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::string_view stage);

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;  // 0 is the untrained model, evaluated before any step
  double loss = 0.0;
  std::map<std::string, double> terms;
  double wall_clock_s = 0.0;
};

/// Called after every epoch record is produced (including epoch 0).
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Randomly initialized model used where a stage starts without a
/// checkpoint; seeded from config.seed and the stage id.
EncoderParams initial_params(const TrainConfig& config, std::string_view stage);

struct StageResult {
  StageCheckpoint checkpoint;
  std::vector<EpochRecord> history;
};

struct Stage3Result {
  StageCheckpoint destination;
  StageCheckpoint trajectory;
  std::vector<EpochRecord> history;
};

/// Next-position pretraining: all 19 prefixes at once under the causal mask.
StageResult train_stage1(std::span<const NormalizedWindow> data, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

/// Destination pretraining. `theta_i` must be a Stage-I checkpoint, or null
/// when config.use_task1 is false (random start).
StageResult train_stage2(const StageCheckpoint* theta_i, std::span<const NormalizedWindow> data,
                         const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Joint destination/trajectory training with distillation. Students are
/// replicas of `theta_ii` (or of one random model when it is null and
/// config.use_task2 is false). Teachers are used when present and
/// config.use_kd is set, and are never modified.
Stage3Result train_stage3(const StageCheckpoint* theta_i, const StageCheckpoint* theta_ii,
                          std::span<const NormalizedWindow> data, const TrainConfig& config,
                          const EpochCallback& on_epoch = {});

struct TeacherFeatures {
  Tensor trajectory;   // [B, T_f, D] from the next-position teacher, or undefined
  Tensor destination;  // [B, D] from the destination teacher, or undefined
};

/// Teacher features on a batch, computed without gradient tracking. Either
/// teacher may be null.
TeacherFeatures teacher_features(const EncoderParams* theta_i, const EncoderParams* theta_ii,
                                 const WindowBatch& batch);

/// Mean per-window loss of each stage's objective, without updating anything.
double stage1_loss(const EncoderParams& params, std::span<const NormalizedWindow> data,
                   std::size_t batch_size);
double stage2_loss(const EncoderParams& params, std::span<const NormalizedWindow> data,
                   const TrainConfig& config);

/// Dataset described by the config; `test` selects the held-out split.
std::vector<TrajectoryWindow> load_dataset(const TrainConfig& config, bool test);
std::vector<NormalizedWindow> normalize_all(std::span<const TrajectoryWindow> windows);

/// Appends one JSON object per record.
void append_epoch_log(const std::filesystem::path& path, std::span<const EpochRecord> records);

/// Runs whichever of the three stages the config enables, saving each
/// checkpoint under config.checkpoint_dir.
Stage3Result run_pipeline(std::span<const NormalizedWindow> data, const TrainConfig& config,
                          const EpochCallback& on_epoch = {});

}  // namespace ppt
