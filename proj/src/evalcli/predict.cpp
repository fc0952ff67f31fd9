// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "ppt/evaluation.hpp"
#include "ppt/ops.hpp"
#include "ppt/tasks.hpp"

namespace ppt {

namespace {

constexpr std::size_t kEvalChunk = 64;

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

EncoderParams frozen(const EncoderParams& params) {
  EncoderParams copy = params.clone();
  copy.set_requires_grad(false);
  return copy;
}

}  // namespace

Predictor::Predictor(const StageCheckpoint& destination, const StageCheckpoint& trajectory) {
  if (destination.stage != kStageIIIDest) {
    throw std::invalid_argument("predictor: expected a III-dest checkpoint, got stage '" +
                                destination.stage + "'");
  }
  if (trajectory.stage != kStageIIITraj) {
    throw std::invalid_argument("predictor: expected a III-traj checkpoint, got stage '" +
                                trajectory.stage + "'");
  }
  if (!(destination.params.config == trajectory.params.config)) {
    throw std::invalid_argument("predictor: destination and trajectory encoders differ");
  }
  if (destination.config_hash != trajectory.config_hash) {
    throw std::invalid_argument("predictor: checkpoints come from different training configs (" +
                                hash_hex(destination.config_hash) + " vs " +
                                hash_hex(trajectory.config_hash) + ")");
  }
  if (destination.params.config.obs_len != kObsLen || destination.params.config.pred_len != kPredLen) {
    throw std::invalid_argument("predictor: checkpoint window lengths do not match 8/12");
  }
  destination_ = frozen(destination.params);
  trajectory_ = frozen(trajectory.params);
  config_hash_ = trajectory.config_hash;
}

Predictor Predictor::load(const std::filesystem::path& dir) {
  return Predictor(load_checkpoint(checkpoint_path(dir, kStageIIIDest)),
                   load_checkpoint(checkpoint_path(dir, kStageIIITraj)));
}

Prediction Predictor::predict(std::span<const Point> observed) const {
  if (observed.size() != kObsLen) {
    throw std::invalid_argument("predict: expected " + std::to_string(kObsLen) +
                                " observed positions, got " + std::to_string(observed.size()));
  }
  TrajectoryWindow w;
  std::copy(observed.begin(), observed.end(), w.positions.begin());
  // Future rows are unused; fill them so normalization sees a full window.
  std::fill(w.positions.begin() + kObsLen, w.positions.end(), observed.back());
  return predict_many(std::span(&w, 1)).front();
}

std::vector<Prediction> Predictor::predict_many(std::span<const TrajectoryWindow> windows) const {
  const std::size_t n = windows.size();
  const std::size_t k = destination_.config.num_candidates;
  if (n == 0) return {};
  std::vector<NormalizedWindow> norm;
  norm.reserve(n);
  for (const auto& w : windows) norm.push_back(normalize(w));
  const Tensor observed = make_batch(norm).observed;

  const Tensor destinations = run_destination(destination_, observed).destinations;  // [n, K, 2]

  // Every window's observation repeated once per candidate, window-major.
  const auto obs = observed.data();
  std::vector<float> repeated(n * k * kObsLen * 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      std::copy_n(obs.data() + i * kObsLen * 2, kObsLen * 2,
                  repeated.data() + (i * k + c) * kObsLen * 2);
    }
  }
  const Tensor future =
      run_trajectory(trajectory_, Tensor::from({n * k, kObsLen, 2}, std::move(repeated)),
                     reshape(destinations, {n * k, 2}))
          .future;  // [n*K, T_f, 2]

  const auto dest = destinations.data();
  const auto fut = future.data();
  std::vector<Prediction> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    Prediction& p = out[i];
    p.num_candidates = k;
    p.destinations.resize(k);
    p.trajectories.resize(k * kPredLen);
    for (std::size_t c = 0; c < k; ++c) {
      p.destinations[c] = norm[i].to_world({dest[(i * k + c) * 2], dest[(i * k + c) * 2 + 1]});
      for (std::size_t t = 0; t < kPredLen; ++t) {
        const std::size_t at = ((i * k + c) * kPredLen + t) * 2;
        p.trajectories[c * kPredLen + t] = norm[i].to_world({fut[at], fut[at + 1]});
      }
    }
  }
  return out;
}

BestOfK min_ade_fde(std::span<const Point> candidates, std::size_t num_candidates,
                    std::span<const Point> truth) {
  const std::size_t t = truth.size();
  if (num_candidates == 0 || t == 0 || candidates.size() != num_candidates * t) {
    throw std::invalid_argument("min_ade_fde: expected " + std::to_string(num_candidates) + " x " +
                                std::to_string(t) + " candidate points, got " +
                                std::to_string(candidates.size()));
  }
  BestOfK best;
  for (std::size_t k = 0; k < num_candidates; ++k) {
    double sum = 0.0;
    for (std::size_t s = 0; s < t; ++s) sum += distance(candidates[k * t + s], truth[s]);
    const double ade = sum / static_cast<double>(t);
    const double fde = distance(candidates[k * t + t - 1], truth[t - 1]);
    if (k == 0 || ade < best.min_ade) {
      best.min_ade = ade;
      best.ade_index = k;
    }
    if (k == 0 || fde < best.min_fde) {
      best.min_fde = fde;
      best.fde_index = k;
    }
  }
  return best;
}

double destination_spread(std::span<const Point> destinations) {
  const std::size_t k = destinations.size();
  if (k < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) sum += distance(destinations[i], destinations[j]);
    }
  }
  return sum / static_cast<double>(k * (k - 1));
}

WindowMetrics window_metrics(const TrajectoryWindow& window, const Prediction& prediction) {
  WindowMetrics m;
  m.pedestrian_id = window.pedestrian_id;
  m.scene = window.scene;
  const auto truth = window.future();
  const BestOfK best = min_ade_fde(prediction.trajectories, prediction.num_candidates, truth);
  m.min_ade = best.min_ade;
  m.min_fde = best.min_fde;
  const Point last = window.positions[kObsLen - 1];
  std::vector<Point> hold(kPredLen, last);
  const BestOfK zero = min_ade_fde(hold, 1, truth);
  m.zero_velocity_ade = zero.min_ade;
  m.zero_velocity_fde = zero.min_fde;
  m.destination_spread = destination_spread(prediction.destinations);
  return m;
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

MetricsReport build_report(std::vector<WindowMetrics> windows, std::uint64_t config_hash,
                           double wall_clock_s, std::string units) {
  if (windows.empty()) throw std::invalid_argument("report: no evaluation windows");
  const double n = static_cast<double>(windows.size());
  const auto mean_of = [&](double WindowMetrics::*field) {
    std::vector<double> v;
    v.reserve(windows.size());
    for (const auto& w : windows) v.push_back(w.*field);
    std::sort(v.begin(), v.end());
    return pairwise_sum(v) / n;
  };
  MetricsReport r;
  r.min_ade = mean_of(&WindowMetrics::min_ade);
  r.min_fde = mean_of(&WindowMetrics::min_fde);
  r.zero_velocity_ade = mean_of(&WindowMetrics::zero_velocity_ade);
  r.zero_velocity_fde = mean_of(&WindowMetrics::zero_velocity_fde);
  r.destination_spread = mean_of(&WindowMetrics::destination_spread);
  r.sample_count = windows.size();
  r.config_hash = config_hash;
  r.wall_clock_s = wall_clock_s;
  r.units = std::move(units);
  r.windows = std::move(windows);
  return r;
}

bool same_results(const MetricsReport& a, const MetricsReport& b) {
  MetricsReport x = a;
  x.wall_clock_s = b.wall_clock_s;
  return x == b;
}

std::size_t thread_count() {
  if (const char* env = std::getenv("PPT_NUM_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

MetricsReport evaluate(const Predictor& predictor, std::span<const TrajectoryWindow> windows,
                       std::string units, std::size_t threads) {
  const auto start = std::chrono::steady_clock::now();
  if (windows.empty()) throw std::invalid_argument("evaluate: no evaluation windows");
  std::vector<WindowMetrics> records(windows.size());
  const std::size_t chunks = (windows.size() + kEvalChunk - 1) / kEvalChunk;
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  const auto worker = [&] {
    try {
      for (std::size_t c = next++; c < chunks; c = next++) {
        const std::size_t begin = c * kEvalChunk;
        const auto part = windows.subspan(begin, std::min(kEvalChunk, windows.size() - begin));
        const auto predictions = predictor.predict_many(part);
        for (std::size_t i = 0; i < part.size(); ++i) {
          records[begin + i] = window_metrics(part[i], predictions[i]);
          records[begin + i].window = begin + i;
        }
      }
    } catch (...) {
      const std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
      next = chunks;
    }
  };
  const std::size_t workers = std::min(threads == 0 ? thread_count() : threads, chunks);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
  }
  if (error) std::rethrow_exception(error);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return build_report(std::move(records), predictor.config_hash(), wall, std::move(units));
}

}  // namespace ppt
