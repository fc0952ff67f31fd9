// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"
#include "ppt/evaluation.hpp"

namespace ppt {

namespace {

namespace fs = std::filesystem;

EpochCallback progress_logger(const TrainConfig& config) {
  const fs::path log = config.log_path();
  return [log](const EpochRecord& r) {
    append_epoch_log(log, std::span(&r, 1));
    std::fprintf(stderr, "[stage %s] epoch %zu loss %.6f (%.1fs)\n", r.stage.c_str(), r.epoch,
                 r.loss, r.wall_clock_s);
  };
}

StageCheckpoint require_checkpoint(const fs::path& dir, std::string_view stage, int for_stage) {
  const fs::path path = checkpoint_path(dir, stage);
  if (!fs::exists(path)) {
    const int producer = stage == kStageI ? 1 : 2;
    throw std::runtime_error("stage " + std::to_string(for_stage) + " requires the Stage-" +
                             std::string(stage) + " checkpoint " + path.string() +
                             "; run `ppt train --stage " + std::to_string(producer) +
                             "` first");
  }
  return load_checkpoint(path);
}

void train_command(int stage, const fs::path& config_path) {
  const TrainConfig config = load_train_config(config_path);
  const auto data = normalize_all(load_dataset(config, false));
  const fs::path dir = config.checkpoint_dir;
  const auto log = progress_logger(config);
  switch (stage) {
    case 1: {
      if (!config.use_task1) throw std::runtime_error("stage 1 is disabled (use_task1 = false)");
      const auto r = train_stage1(data, config, log);
      save_checkpoint(r.checkpoint, checkpoint_path(dir, kStageI));
      break;
    }
    case 2: {
      if (!config.use_task2) throw std::runtime_error("stage 2 is disabled (use_task2 = false)");
      std::optional<StageCheckpoint> s1;
      if (config.use_task1) s1 = require_checkpoint(dir, kStageI, 2);
      const auto r = train_stage2(s1 ? &*s1 : nullptr, data, config, log);
      save_checkpoint(r.checkpoint, checkpoint_path(dir, kStageII));
      break;
    }
    case 3: {
      std::optional<StageCheckpoint> s1;
      std::optional<StageCheckpoint> s2;
      if (config.use_task1) s1 = require_checkpoint(dir, kStageI, 3);
      if (config.use_task2) s2 = require_checkpoint(dir, kStageII, 3);
      const auto r = train_stage3(s1 ? &*s1 : nullptr, s2 ? &*s2 : nullptr, data, config, log);
      save_checkpoint(r.destination, checkpoint_path(dir, kStageIIIDest));
      save_checkpoint(r.trajectory, checkpoint_path(dir, kStageIIITraj));
      break;
    }
    default: throw std::runtime_error("--stage must be 1, 2 or 3");
  }
  std::cout << "saved checkpoints to " << dir.string() << "\n";
}

/// Last kObsLen contiguous samples of every pedestrian.
std::vector<std::pair<std::int64_t, std::vector<RawRecord>>> latest_observations(
    const std::vector<RawRecord>& records, std::int64_t frame_stride) {
  std::vector<std::pair<std::int64_t, std::vector<RawRecord>>> out;
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t j = i;
    while (j < records.size() && records[j].pedestrian_id == records[i].pedestrian_id) ++j;
    // records[i, j) belong to one pedestrian, sorted by frame.
    std::size_t run = j - 1;
    while (run > i && records[run].frame_id - records[run - 1].frame_id == frame_stride &&
           j - run < kObsLen) {
      --run;
    }
    if (j - run >= kObsLen) {
      out.emplace_back(records[i].pedestrian_id,
                       std::vector<RawRecord>(records.begin() + static_cast<std::ptrdiff_t>(j - kObsLen),
                                              records.begin() + static_cast<std::ptrdiff_t>(j)));
    }
    i = j;
  }
  return out;
}

void predict_command(const fs::path& dir, const fs::path& input, const fs::path& out_path,
                     std::int64_t frame_stride) {
  const Predictor predictor = Predictor::load(dir);
  const auto observations = latest_observations(load_trajectory_file(input), frame_stride);
  if (observations.empty()) {
    throw std::runtime_error("no pedestrian in " + input.string() + " has " +
                             std::to_string(kObsLen) + " contiguous samples");
  }
  using nlohmann::json;
  json out = json::array();
  for (const auto& [ped, recs] : observations) {
    std::vector<Point> observed;
    for (const auto& r : recs) observed.push_back({r.x, r.y});
    const Prediction p = predictor.predict(observed);
    json trajectories = json::array();
    for (std::size_t k = 0; k < p.num_candidates; ++k) {
      json traj = json::array();
      for (const auto& pt : p.trajectory(k)) traj.push_back({pt.x, pt.y});
      trajectories.push_back(traj);
    }
    json destinations = json::array();
    for (const auto& d : p.destinations) destinations.push_back({d.x, d.y});
    json obs = json::array();
    for (const auto& pt : observed) obs.push_back({pt.x, pt.y});
    out.push_back(json{{"pedestrian_id", ped},
                       {"last_frame", recs.back().frame_id},
                       {"observed", obs},
                       {"destinations", destinations},
                       {"trajectories", trajectories}});
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  std::ofstream f(out_path);
  if (!f) throw std::runtime_error("cannot write " + out_path.string());
  f << out.dump(2) << "\n";
  std::cout << "wrote " << observations.size() << " predictions to " << out_path.string() << "\n";
}

void print_summary(const MetricsReport& r) {
  std::printf("windows %zu  minADE %.4f  minFDE %.4f  (zero-velocity ADE %.4f FDE %.4f)  "
              "destination spread %.4f %s\n",
              r.sample_count, r.min_ade, r.min_fde, r.zero_velocity_ade, r.zero_velocity_fde,
              r.destination_spread, r.units.c_str());
}

void eval_command(const fs::path& dir, const fs::path& data_path, const fs::path& report_path,
                  std::optional<std::string> format, std::int64_t frame_stride,
                  const std::string& units, std::optional<fs::path> plot,
                  std::size_t plot_window) {
  const Predictor predictor = Predictor::load(dir);
  const auto windows = window_trajectories(load_trajectory_file(data_path), frame_stride, 1,
                                           data_path.stem().string());
  if (windows.empty()) throw std::runtime_error("no 20-step windows in " + data_path.string());
  const MetricsReport report = evaluate(predictor, windows, units);
  const ReportFormat fmt = format ? (*format == "csv" ? ReportFormat::kCsv : ReportFormat::kJson)
                                  : format_for_path(report_path);
  emit_report(report, report_path, fmt);
  print_summary(report);
  if (plot) {
    if (plot_window >= windows.size()) throw std::runtime_error("--plot-window out of range");
    emit_trajectory_plot(windows[plot_window], predictor.predict(windows[plot_window].observed()),
                         *plot);
  }
}

struct MatrixCell {
  std::string name;
  std::vector<std::pair<std::string, std::string>> overrides;
};

struct Matrix {
  std::string sweep_key;
  std::vector<MatrixCell> cells;
};

Matrix parse_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read matrix file " + path.string());
  Matrix m;
  std::string line;
  std::size_t line_no = 0;
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw std::runtime_error(where + "bad cell header");
      m.cells.push_back({trim(line.substr(1, line.size() - 2)), {}});
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (m.cells.empty()) {
      if (key != "sweep") throw std::runtime_error(where + "only 'sweep' may precede the first cell");
      m.sweep_key = value;
    } else {
      m.cells.back().overrides.emplace_back(key, value);
    }
  }
  if (m.cells.empty()) throw std::runtime_error(path.string() + ": no cells");
  return m;
}

void ablate_command(const fs::path& config_path, const fs::path& matrix_path,
                    const fs::path& out_dir) {
  const TrainConfig base = load_train_config(config_path);
  const Matrix matrix = parse_matrix(matrix_path);
  std::vector<TrainConfig> configs;
  for (const auto& cell : matrix.cells) {
    TrainConfig c = base;
    for (const auto& [k, v] : cell.overrides) {
      if (k == "checkpoint_dir" || k == "log_file") {
        throw std::runtime_error("cell " + cell.name + ": " + k + " is set by ablate");
      }
      apply_config_value(c, k, v);
    }
    c.checkpoint_dir = (out_dir / cell.name).string();
    c.log_file = (out_dir / cell.name / "train_log.jsonl").string();
    c.validate();
    configs.push_back(std::move(c));
  }

  std::vector<SweepPoint> points;
  std::ostringstream summary;
  summary << "cell,min_ade,min_fde,destination_spread,zero_velocity_ade,zero_velocity_fde\n";
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto& c = configs[i];
    const auto& name = matrix.cells[i].name;
    std::fprintf(stderr, "== cell %s\n", name.c_str());
    const auto train = normalize_all(load_dataset(c, false));
    run_pipeline(train, c, progress_logger(c));
    const Predictor predictor = Predictor::load(c.checkpoint_dir);
    const auto test = load_dataset(c, true);
    const MetricsReport report = evaluate(predictor, test, c.units);
    emit_report(report, out_dir / name / "report.json", ReportFormat::kJson);
    std::printf("%s: ", name.c_str());
    print_summary(report);
    summary << name << "," << report.min_ade << "," << report.min_fde << ","
            << report.destination_spread << "," << report.zero_velocity_ade << ","
            << report.zero_velocity_fde << "\n";
    std::string label = name;
    for (const auto& [k, v] : matrix.cells[i].overrides) {
      if (k == matrix.sweep_key) label = v;
    }
    points.push_back({label, {{"minADE", report.min_ade}, {"minFDE", report.min_fde}}});
  }
  std::ofstream(out_dir / "summary.csv") << summary.str();
  emit_sweep_plot(points, matrix.sweep_key.empty() ? "cell" : matrix.sweep_key,
                  out_dir / "sweep.svg");
  std::cout << "wrote " << configs.size() << " cell reports under " << out_dir.string() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Progressive pretext-task trajectory predictor"};
  app.require_subcommand(1);

  int stage = 0;
  std::string config_file;
  auto* train = app.add_subcommand("train", "Train one stage");
  train->add_option("--stage", stage, "Stage to train")->required()->check(CLI::Range(1, 3));
  train->add_option("--config", config_file, "key = value config file")->required()->check(CLI::ExistingFile);

  std::string ckpt_dir;
  std::string input;
  std::string out;
  std::int64_t frame_stride = 10;
  auto* predict = app.add_subcommand("predict", "Predict K futures for every pedestrian's latest 8 steps");
  predict->add_option("--checkpoint-dir", ckpt_dir)->required()->check(CLI::ExistingDirectory);
  predict->add_option("--input", input)->required()->check(CLI::ExistingFile);
  predict->add_option("--out", out)->required();
  predict->add_option("--frame-stride", frame_stride)->check(CLI::PositiveNumber);

  std::string data;
  std::string report;
  std::string format;
  std::string units = "m";
  std::string plot;
  std::size_t plot_window = 0;
  auto* eval = app.add_subcommand("eval", "Best-of-K evaluation on a trajectory file");
  eval->add_option("--checkpoint-dir", ckpt_dir)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--data", data)->required()->check(CLI::ExistingFile);
  eval->add_option("--report", report)->required();
  eval->add_option("--format", format)->check(CLI::IsMember({"json", "csv"}));
  eval->add_option("--frame-stride", frame_stride)->check(CLI::PositiveNumber);
  eval->add_option("--units", units);
  eval->add_option("--plot", plot, "SVG of one window's predictions");
  eval->add_option("--plot-window", plot_window);

  std::string kind;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic trajectory file");
  synth->add_option("--kind", kind)
      ->required()
      ->check(CLI::IsMember({"constant-velocity", "piecewise-turn", "goal-attracted-noisy"}));
  synth->add_option("--n", n)->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed)->required();
  synth->add_option("--out", out)->required();

  std::string matrix;
  std::string out_dir = "ablation";
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every cell of a matrix file");
  ablate->add_option("--config", config_file)->required()->check(CLI::ExistingFile);
  ablate->add_option("--matrix", matrix)->required()->check(CLI::ExistingFile);
  ablate->add_option("--out-dir", out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) {
      train_command(stage, config_file);
    } else if (*predict) {
      predict_command(ckpt_dir, input, out, frame_stride);
    } else if (*eval) {
      eval_command(ckpt_dir, data, report, format.empty() ? std::nullopt : std::optional(format),
                   frame_stride, units, plot.empty() ? std::nullopt : std::optional<fs::path>(plot),
                   plot_window);
    } else if (*synth) {
      const auto windows = synth_generate(parse_synth_kind(kind), n, seed);
      write_trajectory_file(out, windows);
      std::cout << "wrote " << windows.size() << " windows to " << out << "\n";
    } else if (*ablate) {
      ablate_command(config_file, matrix, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace ppt
