// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "json.hpp"

#include "ppt/pipeline.hpp"

namespace ppt {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'P', 'T', 'C', 'K', 'P', 'T', '1'};
constexpr int kFormatVersion = 1;

using nlohmann::json;

json config_json(const EncoderConfig& c) {
  return json{{"num_layers", c.num_layers},         {"model_dim", c.model_dim},
              {"num_heads", c.num_heads},           {"mlp_hidden_dim", c.mlp_hidden_dim},
              {"dest_hidden_dim", c.dest_hidden_dim}, {"obs_len", c.obs_len},
              {"pred_len", c.pred_len},             {"num_candidates", c.num_candidates}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.mlp_hidden_dim = j.at("mlp_hidden_dim").get<std::size_t>();
  c.dest_hidden_dim = j.at("dest_hidden_dim").get<std::size_t>();
  c.obs_len = j.at("obs_len").get<std::size_t>();
  c.pred_len = j.at("pred_len").get<std::size_t>();
  c.num_candidates = j.at("num_candidates").get<std::size_t>();
  c.validate();
  return c;
}

json manifest_json(const StageCheckpoint& ckpt) {
  json tensors = json::array();
  for (const auto& [name, t] : ckpt.params.named()) {
    tensors.push_back(json{{"name", name}, {"shape", t.shape()}});
  }
  return json{{"format_version", kFormatVersion},
              {"stage", ckpt.stage},
              {"config_hash", hash_hex(ckpt.config_hash)},
              {"seed", ckpt.seed},
              {"epoch", ckpt.epoch},
              {"metrics", ckpt.metrics},
              {"encoder", config_json(ckpt.params.config)},
              {"tensors", tensors}};
}

[[noreturn]] void corrupt(std::string_view source, const std::string& what) {
  throw std::runtime_error("checkpoint " + std::string(source) + ": " + what);
}

}  // namespace

std::vector<char> serialize_checkpoint(const StageCheckpoint& ckpt) {
  const std::string manifest = manifest_json(ckpt).dump();
  const auto named = ckpt.params.named();
  std::size_t total = sizeof kMagic + sizeof(std::uint64_t) + manifest.size();
  for (const auto& [name, t] : named) total += t.data().size_bytes();
  std::vector<char> out(total);
  char* p = out.data();
  std::memcpy(p, kMagic, sizeof kMagic);
  p += sizeof kMagic;
  const std::uint64_t len = manifest.size();
  std::memcpy(p, &len, sizeof len);
  p += sizeof len;
  std::memcpy(p, manifest.data(), manifest.size());
  p += manifest.size();
  for (const auto& [name, t] : named) {
    const auto data = t.data();
    std::memcpy(p, data.data(), data.size_bytes());
    p += data.size_bytes();
  }
  return out;
}

StageCheckpoint deserialize_checkpoint(std::span<const char> bytes, std::string_view source) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    corrupt(source, "not a checkpoint file (bad magic)");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof kMagic, sizeof len);
  std::size_t offset = sizeof kMagic + sizeof len;
  if (len > bytes.size() - offset) corrupt(source, "truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                           bytes.begin() + static_cast<std::ptrdiff_t>(offset + len));
  } catch (const json::exception& e) {
    corrupt(source, std::string("invalid manifest: ") + e.what());
  }
  offset += len;

  StageCheckpoint ckpt;
  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion) {
      corrupt(source, "unsupported format version");
    }
    ckpt.stage = manifest.at("stage").get<std::string>();
    ckpt.config_hash = std::stoull(manifest.at("config_hash").get<std::string>(), nullptr, 16);
    ckpt.seed = manifest.at("seed").get<std::uint64_t>();
    ckpt.epoch = manifest.at("epoch").get<std::size_t>();
    ckpt.metrics = manifest.at("metrics").get<std::map<std::string, double>>();
    ckpt.params = EncoderParams::init(config_from_json(manifest.at("encoder")), 0);
  } catch (const json::exception& e) {
    corrupt(source, std::string("invalid manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    corrupt(source, std::string("invalid manifest: ") + e.what());
  }

  const auto& entries = manifest.at("tensors");
  auto named = ckpt.params.named();
  if (!entries.is_array() || entries.size() != named.size()) {
    corrupt(source, "tensor list does not match the encoder layout");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto& [name, t] = named[i];
    if (entries[i].at("name").get<std::string>() != name ||
        entries[i].at("shape").get<Shape>() != t.shape()) {
      corrupt(source, "unexpected tensor entry " + entries[i].dump() + ", expected " + name + " " +
                          shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    if (dst.size_bytes() > bytes.size() - offset) corrupt(source, "truncated tensor data");
    std::memcpy(dst.data(), bytes.data() + offset, dst.size_bytes());
    offset += dst.size_bytes();
  }
  if (offset != bytes.size()) corrupt(source, "trailing bytes after tensor data");
  return ckpt;
}

void save_checkpoint(const StageCheckpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize_checkpoint(ckpt);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("error writing checkpoint " + path.string());
  }
  auto sidecar = path;
  sidecar += ".manifest.json";
  std::ofstream side(sidecar, std::ios::trunc);
  if (!side) throw std::runtime_error("cannot write manifest " + sidecar.string());
  side << manifest_json(ckpt).dump(2) << '\n';
}

StageCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::string_view stage) {
  if (stage == kStageI) return dir / "stage1.ckpt";
  if (stage == kStageII) return dir / "stage2.ckpt";
  if (stage == kStageIIIDest) return dir / "stage3_dest.ckpt";
  if (stage == kStageIIITraj) return dir / "stage3_traj.ckpt";
  throw std::invalid_argument("unknown stage id '" + std::string(stage) + "'");
}

}  // namespace ppt
