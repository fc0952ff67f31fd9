// SPDX-License-Identifier: Apache-2.0
//
// Two-step inference, Best-of-K metrics, reports and plots.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ppt/data.hpp"
#include "ppt/pipeline.hpp"

namespace ppt {

/// K predicted futures for one window, in world coordinates.
struct Prediction {
  std::size_t num_candidates = 0;
  std::vector<Point> trajectories;  // K * T_f, candidate-major
  std::vector<Point> destinations;  // K, the destination predictor's raw output

  std::span<const Point> trajectory(std::size_t k) const {
    return {trajectories.data() + k * kPredLen, kPredLen};
  }
};

/// Frozen Stage-III predictor pair.
class Predictor {
 public:
  /// Rejects checkpoints of the wrong stage or with differing encoders.
  Predictor(const StageCheckpoint& destination, const StageCheckpoint& trajectory);

  /// Loads stage3_dest.ckpt and stage3_traj.ckpt from `dir`.
  static Predictor load(const std::filesystem::path& dir);

  /// One destination forward, then one trajectory forward batched over the
  /// K pseudo destinations. `observed` holds T_h world positions.
  Prediction predict(std::span<const Point> observed) const;

  /// Same two forwards, each batched over all windows.
  std::vector<Prediction> predict_many(std::span<const TrajectoryWindow> windows) const;

  const EncoderConfig& config() const { return destination_.config; }
  std::uint64_t config_hash() const { return config_hash_; }

 private:
  EncoderParams destination_;
  EncoderParams trajectory_;
  std::uint64_t config_hash_ = 0;
};

struct BestOfK {
  double min_ade = 0.0;
  double min_fde = 0.0;
  std::size_t ade_index = 0;  // lowest index on ties
  std::size_t fde_index = 0;
};

/// `candidates` is K * T candidate-major, `truth` is T. The two minima are
/// taken independently.
BestOfK min_ade_fde(std::span<const Point> candidates, std::size_t num_candidates,
                    std::span<const Point> truth);

/// Mean over ordered pairs of the distance between destinations.
double destination_spread(std::span<const Point> destinations);

struct WindowMetrics {
  std::size_t window = 0;
  std::int64_t pedestrian_id = 0;
  std::string scene;
  double min_ade = 0.0;
  double min_fde = 0.0;
  double zero_velocity_ade = 0.0;  // last observed position held for T_f steps
  double zero_velocity_fde = 0.0;
  double destination_spread = 0.0;

  bool operator==(const WindowMetrics&) const = default;
};

struct MetricsReport {
  double min_ade = 0.0;
  double min_fde = 0.0;
  double zero_velocity_ade = 0.0;
  double zero_velocity_fde = 0.0;
  double destination_spread = 0.0;
  std::size_t sample_count = 0;
  std::uint64_t config_hash = 0;
  double wall_clock_s = 0.0;
  std::string units;
  std::vector<WindowMetrics> windows;

  bool operator==(const MetricsReport&) const = default;
};

/// Equal in everything except wall-clock time.
bool same_results(const MetricsReport& a, const MetricsReport& b);

WindowMetrics window_metrics(const TrajectoryWindow& window, const Prediction& prediction);

/// Aggregates are means of the per-window records, summed pairwise over the
/// sorted values so they do not depend on window order or worker count.
/// An empty record list is rejected.
MetricsReport build_report(std::vector<WindowMetrics> windows, std::uint64_t config_hash,
                           double wall_clock_s, std::string units);

/// Evaluates every window; windows are split across `threads` workers
/// (0 = thread_count()).
MetricsReport evaluate(const Predictor& predictor, std::span<const TrajectoryWindow> windows,
                       std::string units = "m", std::size_t threads = 0);

/// PPT_NUM_THREADS if set to a positive integer, else hardware concurrency.
std::size_t thread_count();

/// Sum of `values` in a fixed balanced tree order.
double pairwise_sum(std::span<const double> values);

enum class ReportFormat { kJson, kCsv };

/// kCsv for a ".csv" extension, kJson otherwise.
ReportFormat format_for_path(const std::filesystem::path& path);

std::string report_to_json(const MetricsReport& report);
std::string report_to_csv(const MetricsReport& report);
MetricsReport report_from_json(std::string_view text);
MetricsReport report_from_csv(std::string_view text);

void emit_report(const MetricsReport& report, const std::filesystem::path& path,
                 ReportFormat format);
MetricsReport read_report(const std::filesystem::path& path);

/// One x position per point, one series per metric name.
struct SweepPoint {
  std::string label;  // tick label, e.g. "100"
  std::map<std::string, double> metrics;
};

/// SVG line chart of each metric against the sweep variable.
void emit_sweep_plot(std::span<const SweepPoint> points, std::string_view x_name,
                     const std::filesystem::path& path);

/// SVG of the observed path, ground-truth future and the K predictions.
void emit_trajectory_plot(const TrajectoryWindow& window, const Prediction& prediction,
                          const std::filesystem::path& path);

/// Command-line entry point; see README for the subcommands.
int run_cli(int argc, const char* const* argv);

}  // namespace ppt
