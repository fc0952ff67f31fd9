// SPDX-License-Identifier: Apache-2.0
//
// Trajectory files, sliding windows, normalization and synthetic data.
//
// File format: one record per line, "frame_id pedestrian_id x y" separated
// by whitespace. Extra trailing fields are ignored; '#' starts a comment.

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ppt/tensor.hpp"

namespace ppt {

inline constexpr std::size_t kObsLen = 8;
inline constexpr std::size_t kPredLen = 12;
inline constexpr std::size_t kWindowLen = kObsLen + kPredLen;

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct RawRecord {
  std::int64_t frame_id = 0;
  std::int64_t pedestrian_id = 0;
  double x = 0.0;
  double y = 0.0;
  bool operator==(const RawRecord&) const = default;
};

/// Thrown for unreadable or malformed input; the message names the line.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Records sorted by (pedestrian_id, frame_id). Duplicate (frame, pedestrian)
/// pairs and non-numeric fields are rejected.
std::vector<RawRecord> load_trajectory_file(const std::filesystem::path& path);
std::vector<RawRecord> parse_trajectory_text(std::string_view text,
                                             std::string_view source = "<memory>");

struct TrajectoryWindow {
  std::array<Point, kWindowLen> positions{};  // world coordinates
  std::int64_t pedestrian_id = 0;
  std::int64_t first_frame = 0;
  std::string scene;

  std::span<const Point> observed() const { return {positions.data(), kObsLen}; }
  std::span<const Point> future() const { return {positions.data() + kObsLen, kPredLen}; }
  Point destination() const { return positions.back(); }
};

/// Every run of kWindowLen samples spaced exactly `frame_stride` frames
/// apart, advancing `window_stride` samples at a time. Any other frame gap
/// ends a run.
std::vector<TrajectoryWindow> window_trajectories(std::span<const RawRecord> records,
                                                  std::int64_t frame_stride = 10,
                                                  std::size_t window_stride = 1,
                                                  std::string_view scene = {});

/// Translation moving the last observed position to the origin.
struct NormalizedWindow {
  std::array<Point, kWindowLen> positions{};
  Point origin;

  Point to_world(Point p) const { return {p.x + origin.x, p.y + origin.y}; }
};

NormalizedWindow normalize(const TrajectoryWindow& window);
TrajectoryWindow denormalize(const NormalizedWindow& window);

/// Float tensors for a batch of normalized windows.
struct WindowBatch {
  Tensor full;         // [B, 20, 2]
  Tensor observed;     // [B, 8, 2]
  Tensor future;       // [B, 12, 2]
  Tensor destination;  // [B, 2]
};

WindowBatch make_batch(std::span<const NormalizedWindow> windows,
                       std::span<const std::size_t> indices);
WindowBatch make_batch(std::span<const NormalizedWindow> windows);

enum class SynthKind { kConstantVelocity, kPiecewiseTurn, kGoalAttractedNoisy };

std::string_view synth_kind_name(SynthKind kind);
/// Accepts "constant-velocity", "piecewise-turn", "goal-attracted-noisy".
SynthKind parse_synth_kind(std::string_view name);

/// Fully determined by (kind, n, seed). Coordinates are meter-like: speeds
/// of roughly 0.3 to 0.7 units per step.
std::vector<TrajectoryWindow> synth_generate(SynthKind kind, std::size_t n, std::uint64_t seed);

/// p_t = p0 + t * v for t = 0..19.
TrajectoryWindow constant_velocity_window(Point p0, Point v);

/// Writes windows as records: window i becomes pedestrian i with frames
/// 0, stride, ..., 19 * stride. Reloading and windowing with the same stride
/// returns the same windows.
void write_trajectory_file(const std::filesystem::path& path,
                           std::span<const TrajectoryWindow> windows,
                           std::int64_t frame_stride = 10);

}  // namespace ppt
