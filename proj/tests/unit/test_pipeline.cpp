// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "ppt/ops.hpp"
#include "ppt/pipeline.hpp"
#include "ppt/tasks.hpp"
#include "test_util.hpp"

namespace ppt {
namespace {

using testing::small_config;
using testing::to_vector;

TrainConfig tiny_config() {
  TrainConfig c;
  c.model = small_config();
  c.epochs_stage1 = 2;
  c.epochs_stage2 = 3;
  c.warmup_epochs = 1;
  c.epochs_stage3 = 2;
  c.batch_size = 32;
  c.seed = 3;
  return c;
}

std::vector<NormalizedWindow> tiny_data(SynthKind kind = SynthKind::kGoalAttractedNoisy, std::size_t n = 64) {
  const auto windows = synth_generate(kind, n, 5);
  return normalize_all(windows);
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ppt_test_pipeline_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

void expect_params_equal(const EncoderParams& a, const EncoderParams& b, bool skip_kd = false) {
  const auto na = a.named();
  const auto nb = b.named();
  ASSERT_EQ(na.size(), nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    ASSERT_EQ(na[i].first, nb[i].first);
    if (skip_kd && na[i].first.rfind("kd_", 0) == 0) continue;
    EXPECT_EQ(to_vector(na[i].second), to_vector(nb[i].second)) << na[i].first;
  }
}

bool group_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (to_vector(a[i]) != to_vector(b[i])) return false;
  }
  return true;
}

TEST(Config, DefaultsMatchReferenceSettings) {
  const TrainConfig c;
  EXPECT_EQ(c.lr_stage1, 0.001);
  EXPECT_EQ(c.lr_stage2, 0.0001);
  EXPECT_EQ(c.lr_stage3, 0.0015);
  EXPECT_EQ(c.model.num_layers, 3u);
  EXPECT_EQ(c.model.model_dim, 128u);
  EXPECT_EQ(c.model.num_heads, 8u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ParseAndRoundTrip) {
  const auto c = parse_train_config(
      "# comment\nlr_stage1 = 0.002\nmodel_dim=32\nnum_heads = 4\nuse_kd = false\n"
      "train_files = a.txt, b.txt\nlambda_d = 1e4\n");
  EXPECT_EQ(c.lr_stage1, 0.002);
  EXPECT_EQ(c.model.model_dim, 32u);
  EXPECT_FALSE(c.use_kd);
  EXPECT_EQ(c.train_files, (std::vector<std::string>{"a.txt", "b.txt"}));
  EXPECT_EQ(c.weights.lambda_d, 1e4);
  EXPECT_EQ(parse_train_config(c.to_text()), c);
  const std::string text = c.to_text();
  EXPECT_EQ(train_config_keys().size(), std::size_t(std::count(text.begin(), text.end(), '\n')));
}

TEST(Config, ErrorsNameKeyAndLine) {
  try {
    parse_train_config("seed = 1\nlearning_rate = 3\n", "run.cfg");
    FAIL() << "expected a throw";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("run.cfg:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning_rate"), std::string::npos) << msg;
  }
  EXPECT_THROW(parse_train_config("seed = x\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("just words\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("warmup_epochs = 200\nepochs_stage2 = 100\n"), std::invalid_argument);
  EXPECT_THROW(parse_train_config("sigma_s = 0\n"), std::invalid_argument);
}

TEST(Config, HashIgnoresOutputLocations) {
  TrainConfig a;
  TrainConfig b;
  b.checkpoint_dir = "/elsewhere";
  b.log_file = "x.jsonl";
  EXPECT_EQ(a.hash(), b.hash());
  b.lr_stage3 = 0.002;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(hash_hex(0xabcull), "0000000000000abc");
}

TEST(Config, ShippedConfigsParse) {
  const std::filesystem::path dir = std::filesystem::path(PPT_SOURCE_DIR) / "configs";
  const TrainConfig full = load_train_config(dir / "full.cfg");
  EXPECT_EQ(full.epochs_stage3, 200u);
  EXPECT_EQ(full.model, TrainConfig{}.model);
  EXPECT_EQ(full.weights, LossWeights{});
  const TrainConfig quick = load_train_config(dir / "quick.cfg");
  EXPECT_EQ(quick.epochs_stage1, 10u);
  EXPECT_NO_THROW(quick.validate());
}

TEST(Checkpoint, BitExactRoundTrip) {
  const auto dir = scratch_dir("roundtrip");
  StageCheckpoint ckpt{EncoderParams::init(small_config(), 4), std::string(kStageII), 0x1234, 9, 7,
                       {{"loss", 1.5}}};
  const auto path = checkpoint_path(dir, kStageII);
  EXPECT_EQ(path.filename(), "stage2.ckpt");
  save_checkpoint(ckpt, path);
  EXPECT_TRUE(std::filesystem::exists(path.string() + ".manifest.json"));
  const auto loaded = load_checkpoint(path);
  EXPECT_TRUE(bitwise_equal(ckpt.params, loaded.params));
  EXPECT_EQ(loaded.params.config, ckpt.params.config);
  EXPECT_EQ(loaded.stage, "II");
  EXPECT_EQ(loaded.config_hash, 0x1234u);
  EXPECT_EQ(loaded.seed, 9u);
  EXPECT_EQ(loaded.epoch, 7u);
  EXPECT_EQ(loaded.metrics, ckpt.metrics);
  EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(ckpt));
}

TEST(Checkpoint, RejectsCorruptFiles) {
  StageCheckpoint ckpt{EncoderParams::init(small_config(), 4), std::string(kStageI), 0, 0, 0, {}};
  auto bytes = serialize_checkpoint(ckpt);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  EXPECT_THROW(deserialize_checkpoint(truncated, "t"), std::runtime_error);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad_magic, "t"), std::runtime_error);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(trailing, "t"), std::runtime_error);
  EXPECT_THROW(load_checkpoint(scratch_dir("missing") / "none.ckpt"), std::runtime_error);
}

TEST(Checkpoint, FileNames) {
  EXPECT_EQ(checkpoint_path("d", kStageI).filename(), "stage1.ckpt");
  EXPECT_EQ(checkpoint_path("d", kStageIIIDest).filename(), "stage3_dest.ckpt");
  EXPECT_EQ(checkpoint_path("d", kStageIIITraj).filename(), "stage3_traj.ckpt");
}

TEST(Stage1, EpochZeroIsTheUntrainedLoss) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  const auto result = train_stage1(data, cfg);
  ASSERT_EQ(result.history.size(), cfg.epochs_stage1 + 1);
  EXPECT_EQ(result.history[0].epoch, 0u);
  EXPECT_NEAR(result.history[0].loss, stage1_loss(initial_params(cfg, kStageI), data, cfg.batch_size), 1e-6);
  EXPECT_EQ(result.checkpoint.stage, "I");
  EXPECT_EQ(result.checkpoint.config_hash, cfg.hash());
}

TEST(Stage1, IsDeterministic) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  const auto a = train_stage1(data, cfg);
  const auto b = train_stage1(data, cfg);
  EXPECT_TRUE(bitwise_equal(a.checkpoint.params, b.checkpoint.params));
  for (std::size_t i = 0; i < a.history.size(); ++i) EXPECT_EQ(a.history[i].loss, b.history[i].loss);
}

TEST(Stage1, LearnsConstantVelocity) {
  const auto data = tiny_data(SynthKind::kConstantVelocity, 256);
  auto cfg = tiny_config();
  cfg.epochs_stage1 = 40;
  cfg.lr_stage1 = 0.003;
  const auto result = train_stage1(data, cfg);
  EXPECT_LT(result.history.back().loss, 0.1 * result.history.front().loss);
}

TEST(Stage2, RequiresStageOneCheckpoint) {
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  EXPECT_THROW(train_stage2(nullptr, data, cfg), std::invalid_argument);
  const StageCheckpoint wrong{EncoderParams::init(cfg.model, 1), std::string(kStageII), 0, 0, 0, {}};
  EXPECT_THROW(train_stage2(&wrong, data, cfg), std::invalid_argument);
  auto other = cfg;
  other.model.model_dim = 32;
  const StageCheckpoint mismatched{EncoderParams::init(other.model, 1), std::string(kStageI), 0, 0, 0, {}};
  EXPECT_THROW(train_stage2(&mismatched, data, cfg), std::invalid_argument);
}

TEST(Stage2, WarmupFreezesAllButTheDestinationHead) {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.epochs_stage2 = 2;
  cfg.warmup_epochs = 2;
  const auto theta_i = train_stage1(data, cfg).checkpoint;
  const auto before = theta_i.params.clone();
  const auto theta_ii = train_stage2(&theta_i, data, cfg).checkpoint;
  EXPECT_TRUE(bitwise_equal(theta_i.params, before));
  EXPECT_TRUE(group_equal(theta_ii.params.encoder_body(), before.encoder_body()));
  EXPECT_TRUE(group_equal(theta_ii.params.prompt_table(), before.prompt_table()));
  EXPECT_FALSE(group_equal(theta_ii.params.destination_head(), before.destination_head()));

  cfg.epochs_stage2 = 3;
  const auto joint = train_stage2(&theta_i, data, cfg);
  EXPECT_FALSE(group_equal(joint.checkpoint.params.encoder_body(), before.encoder_body()));
  EXPECT_FALSE(group_equal(joint.checkpoint.params.prompt_table(), before.prompt_table()));
  EXPECT_TRUE(joint.history.back().terms.count("precision"));
  EXPECT_TRUE(joint.history.back().terms.count("diversity"));
}

TEST(Stage2, RandomStartWithoutTaskOne) {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.use_task1 = false;
  const auto result = train_stage2(nullptr, data, cfg);
  EXPECT_EQ(result.history.size(), cfg.epochs_stage2 + 1);
}

class Stage3Test : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new std::vector<NormalizedWindow>(tiny_data());
    theta_i_ = new StageCheckpoint(train_stage1(*data_, tiny_config()).checkpoint);
    theta_ii_ = new StageCheckpoint(train_stage2(theta_i_, *data_, tiny_config()).checkpoint);
  }
  static void TearDownTestSuite() {
    delete data_;
    delete theta_i_;
    delete theta_ii_;
  }
  static std::vector<NormalizedWindow>* data_;
  static StageCheckpoint* theta_i_;
  static StageCheckpoint* theta_ii_;
};

std::vector<NormalizedWindow>* Stage3Test::data_ = nullptr;
StageCheckpoint* Stage3Test::theta_i_ = nullptr;
StageCheckpoint* Stage3Test::theta_ii_ = nullptr;

TEST_F(Stage3Test, TeachersAreNotModified) {
  const auto i_before = theta_i_->params.clone();
  const auto ii_before = theta_ii_->params.clone();
  const auto result = train_stage3(theta_i_, theta_ii_, *data_, tiny_config());
  EXPECT_TRUE(bitwise_equal(theta_i_->params, i_before));
  EXPECT_TRUE(bitwise_equal(theta_ii_->params, ii_before));
  EXPECT_EQ(result.destination.stage, "III-dest");
  EXPECT_EQ(result.trajectory.stage, "III-traj");
  EXPECT_FALSE(bitwise_equal(result.destination.params, result.trajectory.params));
}

TEST_F(Stage3Test, DestinationDistillationStartsAtZero) {
  const auto result = train_stage3(theta_i_, theta_ii_, *data_, tiny_config());
  const auto& first = result.history.front();
  EXPECT_EQ(first.terms.at("kd_dest"), 0.0);
  EXPECT_GT(first.terms.at("kd_traj"), 0.0);
  EXPECT_GT(first.terms.at("recon"), 0.0);
  EXPECT_GT(result.history.back().terms.at("kd_dest"), 0.0);
}

TEST_F(Stage3Test, ZeroDistillationWeightsMatchDisabledDistillation) {
  auto zero = tiny_config();
  zero.weights.lambda_kd_traj = 0.0;
  zero.weights.lambda_kd_dest = 0.0;
  auto off = tiny_config();
  off.use_kd = false;
  const auto a = train_stage3(theta_i_, theta_ii_, *data_, zero);
  const auto b = train_stage3(theta_i_, theta_ii_, *data_, off);
  expect_params_equal(a.trajectory.params, b.trajectory.params, true);
  expect_params_equal(a.destination.params, b.destination.params, true);
  EXPECT_FALSE(b.history.back().terms.count("kd_traj"));
}

TEST_F(Stage3Test, RequiresCheckpointsOfTheRightStage) {
  const auto cfg = tiny_config();
  EXPECT_THROW(train_stage3(theta_i_, nullptr, *data_, cfg), std::invalid_argument);
  EXPECT_THROW(train_stage3(theta_ii_, theta_ii_, *data_, cfg), std::invalid_argument);
  EXPECT_THROW(train_stage3(theta_i_, theta_i_, *data_, cfg), std::invalid_argument);
  auto scratch = cfg;
  scratch.use_task1 = false;
  scratch.use_task2 = false;
  const auto result = train_stage3(nullptr, nullptr, *data_, scratch);
  EXPECT_FALSE(result.history.back().terms.count("kd_dest"));
}

TEST_F(Stage3Test, TeacherFeaturesAreDetachedSlices) {
  const std::vector<std::size_t> idx{0, 1, 2};
  const auto batch = make_batch(*data_, idx);
  const auto f = teacher_features(&theta_i_->params, &theta_ii_->params, batch);
  const auto& m = theta_i_->params.config;
  EXPECT_EQ(f.trajectory.shape(), (Shape{3, 12, m.model_dim}));
  EXPECT_EQ(f.destination.shape(), (Shape{3, m.model_dim}));
  EXPECT_FALSE(f.trajectory.requires_grad());
  EXPECT_FALSE(f.destination.requires_grad());
  const auto full = run_next_position(theta_i_->params, slice(batch.full, 1, 0, 19)).features;
  EXPECT_EQ(to_vector(f.trajectory), to_vector(slice(full, 1, 7, 12)));
  EXPECT_EQ(to_vector(f.destination), to_vector(run_destination(theta_ii_->params, batch.observed).feature));
  const auto none = teacher_features(nullptr, nullptr, batch);
  EXPECT_FALSE(none.trajectory.defined());
  EXPECT_FALSE(none.destination.defined());
}

TEST(Pipeline, SavesCheckpoints) {
  const auto dir = scratch_dir("run");
  auto cfg = tiny_config();
  cfg.checkpoint_dir = dir.string();
  std::size_t records = 0;
  const auto result = run_pipeline(tiny_data(), cfg, [&](const EpochRecord&) { ++records; });
  EXPECT_EQ(records, (cfg.epochs_stage1 + 1) + (cfg.epochs_stage2 + 1) + (cfg.epochs_stage3 + 1));
  for (auto stage : {kStageI, kStageII, kStageIIIDest, kStageIIITraj}) {
    EXPECT_TRUE(std::filesystem::exists(checkpoint_path(dir, stage))) << stage;
  }
  const auto traj = load_checkpoint(checkpoint_path(dir, kStageIIITraj));
  EXPECT_TRUE(bitwise_equal(traj.params, result.trajectory.params));
}

TEST(Pipeline, EpochLogIsJsonLines) {
  const auto dir = scratch_dir("log");
  EpochRecord r{"II", 3, 1.5, {{"precision", 0.5}}, 0.25};
  const std::vector<EpochRecord> records{r, r};
  append_epoch_log(dir / "log.jsonl", records);
  append_epoch_log(dir / "log.jsonl", std::span(records).first(1));
  std::ifstream log(dir / "log.jsonl");
  std::size_t lines = 0;
  for (std::string line; std::getline(log, line);) {
    ++lines;
    EXPECT_EQ(line.front(), '{');
    EXPECT_NE(line.find("\"precision\""), std::string::npos);
  }
  EXPECT_EQ(lines, 3u);
}

TEST(Dataset, SyntheticSplitsDiffer) {
  TrainConfig cfg;
  cfg.synth_train = 10;
  cfg.synth_test = 5;
  const auto train = load_dataset(cfg, false);
  const auto test = load_dataset(cfg, true);
  ASSERT_EQ(train.size(), 10u);
  ASSERT_EQ(test.size(), 5u);
  EXPECT_NE(train[0].positions, test[0].positions);
}

}  // namespace
}  // namespace ppt
