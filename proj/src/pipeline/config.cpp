// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "ppt/pipeline.hpp"

namespace ppt {

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw std::invalid_argument("config: key '" + std::string(key) + "' expects " + expected +
                              ", got '" + std::string(value) + "'");
}

template <typename T>
T parse_unsigned(std::string_view key, std::string_view value) {
  T out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "a non-negative integer");
  }
  return out;
}

std::int64_t parse_int(std::string_view key, std::string_view value) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(out)) {
    bad_value(key, value, "a finite number");
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> parse_list(std::string_view value) {
  std::vector<std::string> out;
  while (!value.empty()) {
    const auto comma = value.find(',');
    const auto item = trim(value.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    value.remove_prefix(comma + 1);
  }
  return out;
}

std::string real_text(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string list_text(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

struct KeySpec {
  std::function<void(TrainConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const TrainConfig&)> get;
  bool hashed = true;
};

const std::map<std::string, KeySpec>& key_table() {
  static const std::map<std::string, KeySpec> table = [] {
    std::map<std::string, KeySpec> t;
    auto size_key = [&](const char* name, std::size_t TrainConfig::*field) {
      t[name] = {[field](TrainConfig& c, std::string_view k, std::string_view v) {
                   c.*field = parse_unsigned<std::size_t>(k, v);
                 },
                 [field](const TrainConfig& c) { return std::to_string(c.*field); }};
    };
    auto model_key = [&](const char* name, std::size_t EncoderConfig::*field) {
      t[name] = {[field](TrainConfig& c, std::string_view k, std::string_view v) {
                   c.model.*field = parse_unsigned<std::size_t>(k, v);
                 },
                 [field](const TrainConfig& c) { return std::to_string(c.model.*field); }};
    };
    auto real_key = [&](const char* name, double TrainConfig::*field) {
      t[name] = {[field](TrainConfig& c, std::string_view k, std::string_view v) {
                   c.*field = parse_real(k, v);
                 },
                 [field](const TrainConfig& c) { return real_text(c.*field); }};
    };
    auto weight_key = [&](const char* name, double LossWeights::*field) {
      t[name] = {[field](TrainConfig& c, std::string_view k, std::string_view v) {
                   c.weights.*field = parse_real(k, v);
                 },
                 [field](const TrainConfig& c) { return real_text(c.weights.*field); }};
    };
    auto bool_key = [&](const char* name, bool TrainConfig::*field) {
      t[name] = {[field](TrainConfig& c, std::string_view k, std::string_view v) {
                   c.*field = parse_bool(k, v);
                 },
                 [field](const TrainConfig& c) { return std::string(c.*field ? "true" : "false"); }};
    };
    auto u64_key = [&](const char* name, std::uint64_t TrainConfig::*field) {
      t[name] = {[field](TrainConfig& c, std::string_view k, std::string_view v) {
                   c.*field = parse_unsigned<std::uint64_t>(k, v);
                 },
                 [field](const TrainConfig& c) { return std::to_string(c.*field); }};
    };
    auto string_key = [&](const char* name, std::string TrainConfig::*field, bool hashed) {
      t[name] = {[field](TrainConfig& c, std::string_view, std::string_view v) {
                   c.*field = std::string(v);
                 },
                 [field](const TrainConfig& c) { return c.*field; }, hashed};
    };
    auto list_key = [&](const char* name, std::vector<std::string> TrainConfig::*field) {
      t[name] = {[field](TrainConfig& c, std::string_view, std::string_view v) {
                   c.*field = parse_list(v);
                 },
                 [field](const TrainConfig& c) { return list_text(c.*field); }};
    };

    model_key("num_layers", &EncoderConfig::num_layers);
    model_key("model_dim", &EncoderConfig::model_dim);
    model_key("num_heads", &EncoderConfig::num_heads);
    model_key("mlp_hidden_dim", &EncoderConfig::mlp_hidden_dim);
    model_key("dest_hidden_dim", &EncoderConfig::dest_hidden_dim);
    model_key("num_candidates", &EncoderConfig::num_candidates);
    real_key("lr_stage1", &TrainConfig::lr_stage1);
    real_key("lr_stage2", &TrainConfig::lr_stage2);
    real_key("lr_stage3", &TrainConfig::lr_stage3);
    size_key("epochs_stage1", &TrainConfig::epochs_stage1);
    size_key("epochs_stage2", &TrainConfig::epochs_stage2);
    size_key("warmup_epochs", &TrainConfig::warmup_epochs);
    size_key("epochs_stage3", &TrainConfig::epochs_stage3);
    size_key("batch_size", &TrainConfig::batch_size);
    weight_key("lambda_d", &LossWeights::lambda_d);
    weight_key("sigma_s", &LossWeights::sigma_s);
    weight_key("lambda_kd_traj", &LossWeights::lambda_kd_traj);
    weight_key("lambda_kd_dest", &LossWeights::lambda_kd_dest);
    u64_key("seed", &TrainConfig::seed);
    bool_key("use_task1", &TrainConfig::use_task1);
    bool_key("use_task2", &TrainConfig::use_task2);
    bool_key("use_kd", &TrainConfig::use_kd);
    list_key("train_files", &TrainConfig::train_files);
    list_key("test_files", &TrainConfig::test_files);
    t["frame_stride"] = {[](TrainConfig& c, std::string_view k, std::string_view v) {
                           c.frame_stride = parse_int(k, v);
                         },
                         [](const TrainConfig& c) { return std::to_string(c.frame_stride); }};
    size_key("window_stride", &TrainConfig::window_stride);
    string_key("synth_kind", &TrainConfig::synth_kind, true);
    size_key("synth_train", &TrainConfig::synth_train);
    size_key("synth_test", &TrainConfig::synth_test);
    u64_key("synth_seed", &TrainConfig::synth_seed);
    string_key("units", &TrainConfig::units, true);
    string_key("checkpoint_dir", &TrainConfig::checkpoint_dir, false);
    string_key("log_file", &TrainConfig::log_file, false);
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, spec] : key_table()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_config_value(TrainConfig& config, std::string_view key, std::string_view value) {
  const auto& table = key_table();
  const auto it = table.find(std::string(key));
  if (it == table.end()) throw std::invalid_argument("config: unknown key '" + std::string(key) + "'");
  it->second.set(config, key, value);
}

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (model.obs_len != kObsLen || model.pred_len != kPredLen) {
    throw std::invalid_argument("config: observed/future lengths must be 8/12");
  }
  if (!(lr_stage1 > 0.0) || !(lr_stage2 > 0.0) || !(lr_stage3 > 0.0)) {
    throw std::invalid_argument("config: learning rates must be positive");
  }
  if (warmup_epochs > epochs_stage2) {
    throw std::invalid_argument("config: warmup_epochs exceeds epochs_stage2");
  }
  if (batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
  if (frame_stride <= 0) throw std::invalid_argument("config: frame_stride must be > 0");
  if (window_stride == 0) throw std::invalid_argument("config: window_stride must be >= 1");
  if (train_files.empty()) {
    parse_synth_kind(synth_kind);
    if (synth_train == 0) throw std::invalid_argument("config: synth_train must be >= 1");
  }
  if (test_files.empty() && train_files.empty() && synth_test == 0) {
    throw std::invalid_argument("config: synth_test must be >= 1");
  }
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& [name, spec] : key_table()) out += name + " = " + spec.get(*this) + "\n";
  return out;
}

std::uint64_t TrainConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, spec] : key_table()) {
    if (!spec.hashed) continue;
    for (char c : name + "=" + spec.get(*this) + "\n") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::filesystem::path TrainConfig::log_path() const {
  if (!log_file.empty()) return log_file;
  return std::filesystem::path(checkpoint_dir) / "train_log.jsonl";
}

TrainConfig parse_train_config(std::string_view text, std::string_view source) {
  TrainConfig config;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    if (eq == std::string_view::npos) {
      throw std::invalid_argument(where + "expected 'key = value', got '" + std::string(line) + "'");
    }
    try {
      apply_config_value(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  config.validate();
  return config;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_train_config(buf.str(), path.string());
}

std::string hash_hex(std::uint64_t hash) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[hash & 0xf];
    hash >>= 4;
  }
  return out;
}

}  // namespace ppt
