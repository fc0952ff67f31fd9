// SPDX-License-Identifier: Apache-2.0
#include "ppt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "ppt/rng.hpp"

namespace ppt {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) fields.push_back(line.substr(start, i - start));
  }
  return fields;
}

template <typename T>
T parse_number(std::string_view field, std::string_view source, std::size_t line_no,
               const char* what) {
  T value{};
  // Frame ids are sometimes written as "10.0".
  if constexpr (std::is_integral_v<T>) {
    double d = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), d);
    if (ec == std::errc() && ptr == field.data() + field.size() && std::isfinite(d) &&
        d == std::trunc(d)) {
      return static_cast<T>(d);
    }
  } else {
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec == std::errc() && ptr == field.data() + field.size() && std::isfinite(value)) {
      return value;
    }
  }
  throw DataError(std::string(source) + ":" + std::to_string(line_no) + ": invalid " + what +
                  " '" + std::string(field) + "'");
}

Point rotate(Point v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

TrajectoryWindow piecewise_turn(Rng& rng) {
  TrajectoryWindow w;
  Point p{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)};
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double speed = rng.uniform(0.3, 0.7);
  const Point v1{speed * std::cos(heading), speed * std::sin(heading)};
  const double magnitude = rng.uniform(std::numbers::pi / 6.0, std::numbers::pi / 2.0);
  const Point v2 = rotate(v1, rng.uniform() < 0.5 ? -magnitude : magnitude);
  // Displacement t -> t+1 uses v1 before the turn step, v2 from it on.
  const std::size_t turn = 5 + rng.below(11);
  w.positions[0] = p;
  for (std::size_t t = 0; t + 1 < kWindowLen; ++t) {
    const Point v = t < turn ? v1 : v2;
    p = {p.x + v.x, p.y + v.y};
    w.positions[t + 1] = p;
  }
  return w;
}

TrajectoryWindow goal_attracted(Rng& rng) {
  constexpr double kInertia = 0.75;
  constexpr double kNoise = 0.03;
  TrajectoryWindow w;
  Point p{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)};
  const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double speed = rng.uniform(0.3, 0.7);
  const double goal_angle = heading + rng.uniform(-std::numbers::pi / 2.0, std::numbers::pi / 2.0);
  const double goal_dist = speed * static_cast<double>(kWindowLen) * rng.uniform(0.7, 1.1);
  const Point goal{p.x + goal_dist * std::cos(goal_angle), p.y + goal_dist * std::sin(goal_angle)};
  Point v{speed * std::cos(heading), speed * std::sin(heading)};
  w.positions[0] = p;
  for (std::size_t t = 1; t < kWindowLen; ++t) {
    const double dx = goal.x - p.x;
    const double dy = goal.y - p.y;
    const double dist = std::max(std::hypot(dx, dy), 1e-9);
    const double pull = std::min(speed, dist) / dist;
    const double nx = std::clamp(rng.normal(0.0, kNoise), -3.0 * kNoise, 3.0 * kNoise);
    const double ny = std::clamp(rng.normal(0.0, kNoise), -3.0 * kNoise, 3.0 * kNoise);
    v = {kInertia * v.x + (1.0 - kInertia) * pull * dx + nx,
         kInertia * v.y + (1.0 - kInertia) * pull * dy + ny};
    p = {p.x + v.x, p.y + v.y};
    w.positions[t] = p;
  }
  return w;
}

}  // namespace

std::vector<RawRecord> parse_trajectory_text(std::string_view text, std::string_view source) {
  std::vector<RawRecord> records;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (fields.size() < 4) {
      throw DataError(std::string(source) + ":" + std::to_string(line_no) +
                      ": expected 'frame_id pedestrian_id x y', got " +
                      std::to_string(fields.size()) + " fields");
    }
    RawRecord r;
    r.frame_id = parse_number<std::int64_t>(fields[0], source, line_no, "frame_id");
    r.pedestrian_id = parse_number<std::int64_t>(fields[1], source, line_no, "pedestrian_id");
    r.x = parse_number<double>(fields[2], source, line_no, "x");
    r.y = parse_number<double>(fields[3], source, line_no, "y");
    records.push_back(r);
  }
  std::stable_sort(records.begin(), records.end(), [](const RawRecord& a, const RawRecord& b) {
    return a.pedestrian_id != b.pedestrian_id ? a.pedestrian_id < b.pedestrian_id
                                              : a.frame_id < b.frame_id;
  });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].pedestrian_id == records[i - 1].pedestrian_id &&
        records[i].frame_id == records[i - 1].frame_id) {
      throw DataError(std::string(source) + ": duplicate record for frame " +
                      std::to_string(records[i].frame_id) + ", pedestrian " +
                      std::to_string(records[i].pedestrian_id));
    }
  }
  return records;
}

std::vector<RawRecord> load_trajectory_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read trajectory file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw DataError("error reading trajectory file " + path.string());
  return parse_trajectory_text(buf.str(), path.string());
}

std::vector<TrajectoryWindow> window_trajectories(std::span<const RawRecord> records,
                                                  std::int64_t frame_stride,
                                                  std::size_t window_stride,
                                                  std::string_view scene) {
  if (frame_stride <= 0) throw std::invalid_argument("window_trajectories: frame_stride must be > 0");
  if (window_stride == 0) throw std::invalid_argument("window_trajectories: window_stride must be >= 1");
  std::vector<TrajectoryWindow> windows;
  std::size_t run_start = 0;
  for (std::size_t i = 0; i <= records.size(); ++i) {
    const bool continues = i > run_start && i < records.size() &&
                           records[i].pedestrian_id == records[i - 1].pedestrian_id &&
                           records[i].frame_id - records[i - 1].frame_id == frame_stride;
    if (i == run_start || continues) continue;
    // records[run_start, i) is one contiguous run.
    for (std::size_t s = run_start; s + kWindowLen <= i; s += window_stride) {
      TrajectoryWindow w;
      for (std::size_t t = 0; t < kWindowLen; ++t) w.positions[t] = {records[s + t].x, records[s + t].y};
      w.pedestrian_id = records[s].pedestrian_id;
      w.first_frame = records[s].frame_id;
      w.scene = std::string(scene);
      windows.push_back(std::move(w));
    }
    run_start = i;
  }
  return windows;
}

NormalizedWindow normalize(const TrajectoryWindow& window) {
  NormalizedWindow n;
  n.origin = window.positions[kObsLen - 1];
  for (std::size_t t = 0; t < kWindowLen; ++t) {
    n.positions[t] = {window.positions[t].x - n.origin.x, window.positions[t].y - n.origin.y};
  }
  return n;
}

TrajectoryWindow denormalize(const NormalizedWindow& window) {
  TrajectoryWindow w;
  for (std::size_t t = 0; t < kWindowLen; ++t) w.positions[t] = window.to_world(window.positions[t]);
  return w;
}

WindowBatch make_batch(std::span<const NormalizedWindow> windows,
                       std::span<const std::size_t> indices) {
  const std::size_t b = indices.size();
  std::vector<float> full(b * kWindowLen * 2);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& w = windows[indices[i]];
    for (std::size_t t = 0; t < kWindowLen; ++t) {
      full[(i * kWindowLen + t) * 2] = static_cast<float>(w.positions[t].x);
      full[(i * kWindowLen + t) * 2 + 1] = static_cast<float>(w.positions[t].y);
    }
  }
  std::vector<float> obs(b * kObsLen * 2);
  std::vector<float> fut(b * kPredLen * 2);
  std::vector<float> dest(b * 2);
  for (std::size_t i = 0; i < b; ++i) {
    const float* row = full.data() + i * kWindowLen * 2;
    std::copy_n(row, kObsLen * 2, obs.data() + i * kObsLen * 2);
    std::copy_n(row + kObsLen * 2, kPredLen * 2, fut.data() + i * kPredLen * 2);
    std::copy_n(row + (kWindowLen - 1) * 2, 2, dest.data() + i * 2);
  }
  WindowBatch batch;
  batch.full = Tensor::from({b, kWindowLen, 2}, std::move(full));
  batch.observed = Tensor::from({b, kObsLen, 2}, std::move(obs));
  batch.future = Tensor::from({b, kPredLen, 2}, std::move(fut));
  batch.destination = Tensor::from({b, 2}, std::move(dest));
  return batch;
}

WindowBatch make_batch(std::span<const NormalizedWindow> windows) {
  std::vector<std::size_t> all(windows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return make_batch(windows, all);
}

std::string_view synth_kind_name(SynthKind kind) {
  switch (kind) {
    case SynthKind::kConstantVelocity: return "constant-velocity";
    case SynthKind::kPiecewiseTurn: return "piecewise-turn";
    case SynthKind::kGoalAttractedNoisy: return "goal-attracted-noisy";
  }
  return "unknown";
}

SynthKind parse_synth_kind(std::string_view name) {
  for (auto k : {SynthKind::kConstantVelocity, SynthKind::kPiecewiseTurn,
                 SynthKind::kGoalAttractedNoisy}) {
    if (synth_kind_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown synthetic kind '" + std::string(name) +
                              "' (expected constant-velocity, piecewise-turn or "
                              "goal-attracted-noisy)");
}

TrajectoryWindow constant_velocity_window(Point p0, Point v) {
  TrajectoryWindow w;
  for (std::size_t t = 0; t < kWindowLen; ++t) {
    const double s = static_cast<double>(t);
    w.positions[t] = {p0.x + s * v.x, p0.y + s * v.y};
  }
  return w;
}

std::vector<TrajectoryWindow> synth_generate(SynthKind kind, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synth_generate: n must be >= 1");
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(kind)));
  std::vector<TrajectoryWindow> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TrajectoryWindow w;
    switch (kind) {
      case SynthKind::kConstantVelocity: {
        const Point p0{rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)};
        const double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double speed = rng.uniform(0.3, 0.7);
        w = constant_velocity_window(p0, {speed * std::cos(heading), speed * std::sin(heading)});
        break;
      }
      case SynthKind::kPiecewiseTurn: w = piecewise_turn(rng); break;
      case SynthKind::kGoalAttractedNoisy: w = goal_attracted(rng); break;
    }
    w.pedestrian_id = static_cast<std::int64_t>(i);
    w.scene = std::string(synth_kind_name(kind));
    out.push_back(std::move(w));
  }
  return out;
}

void write_trajectory_file(const std::filesystem::path& path,
                           std::span<const TrajectoryWindow> windows, std::int64_t frame_stride) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write trajectory file " + path.string());
  out << std::setprecision(17);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    for (std::size_t t = 0; t < kWindowLen; ++t) {
      out << static_cast<std::int64_t>(t) * frame_stride << ' ' << i << ' '
          << windows[i].positions[t].x << ' ' << windows[i].positions[t].y << '\n';
    }
  }
  out.flush();
  if (!out) throw DataError("error writing trajectory file " + path.string());
}

}  // namespace ppt
