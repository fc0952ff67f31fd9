// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ppt/data.hpp"

namespace ppt {
namespace {

std::string contiguous(std::int64_t ped, std::size_t n, std::int64_t start = 0, std::int64_t stride = 10) {
  std::ostringstream out;
  for (std::size_t i = 0; i < n; ++i) {
    out << start + std::int64_t(i) * stride << ' ' << ped << ' ' << 0.5 * double(i) << ' ' << -double(i)
        << '\n';
  }
  return out.str();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ppt_test_data_" + name);
}

TEST(Parse, SortsByPedestrianThenFrame) {
  const auto r = parse_trajectory_text("20 2 1 1\n10 1 0 0\n  # comment\n\n10 2 3.5 -4\n");
  ASSERT_EQ(r.size(), 3u);
  EXPECT_EQ(r[0], (RawRecord{10, 1, 0, 0}));
  EXPECT_EQ(r[1], (RawRecord{10, 2, 3.5, -4}));
  EXPECT_EQ(r[2], (RawRecord{20, 2, 1, 1}));
}

TEST(Parse, AcceptsFloatFrameIdsAndExtraFields) {
  const auto r = parse_trajectory_text("10.0\t3.0\t1.25\t2.5\textra\n");
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (RawRecord{10, 3, 1.25, 2.5}));
}

TEST(Parse, MalformedLineCitesLine) {
  try {
    parse_trajectory_text("0 1 0 0\n10 1 2.5 abc\n", "f.txt");
    FAIL() << "expected a throw";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("f.txt:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("abc"), std::string::npos) << msg;
  }
  EXPECT_THROW(parse_trajectory_text("1 2 3\n"), DataError);
  EXPECT_THROW(parse_trajectory_text("1.5 2 3 4\n"), DataError);
}

TEST(Parse, RejectsDuplicates) {
  try {
    parse_trajectory_text("10 1 0 0\n10 1 1 1\n");
    FAIL() << "expected a throw";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
  }
}

TEST(Load, MissingFileIsRejected) {
  EXPECT_THROW(load_trajectory_file(temp_path("does_not_exist.txt")), DataError);
}

TEST(Window, Counts) {
  EXPECT_EQ(window_trajectories(parse_trajectory_text(contiguous(1, 19))).size(), 0u);
  EXPECT_EQ(window_trajectories(parse_trajectory_text(contiguous(1, 20))).size(), 1u);
  EXPECT_EQ(window_trajectories(parse_trajectory_text(contiguous(1, 25))).size(), 6u);
  EXPECT_EQ(window_trajectories(parse_trajectory_text(contiguous(1, 25)), 10, 5).size(), 2u);
  EXPECT_EQ(window_trajectories(parse_trajectory_text(contiguous(1, 25) + contiguous(2, 21))).size(), 8u);
}

TEST(Window, GapsSplitRuns) {
  // 22 samples, then a 30-frame gap, then 21 samples.
  const auto records = parse_trajectory_text(contiguous(1, 22) + contiguous(1, 21, 240));
  const auto windows = window_trajectories(records);
  ASSERT_EQ(windows.size(), 3u + 2u);
  for (const auto& w : windows) {
    EXPECT_TRUE(w.first_frame + 19 * 10 <= 210 || w.first_frame >= 240) << w.first_frame;
  }
  // The wrong stride sees no contiguous runs.
  EXPECT_TRUE(window_trajectories(records, 20).empty());
}

TEST(Window, RowsExistVerbatim) {
  const auto records = parse_trajectory_text(contiguous(4, 23));
  const auto windows = window_trajectories(records, 10, 1, "scene-a");
  std::set<std::pair<double, double>> source;
  for (const auto& r : records) source.insert({r.x, r.y});
  for (const auto& w : windows) {
    EXPECT_EQ(w.pedestrian_id, 4);
    EXPECT_EQ(w.scene, "scene-a");
    for (const auto& p : w.positions) EXPECT_TRUE(source.count({p.x, p.y}));
  }
  EXPECT_EQ(windows[2].first_frame, 20);
  EXPECT_EQ(windows[2].observed()[0], (Point{1.0, -2.0}));
  EXPECT_EQ(windows[2].destination(), (Point{10.5, -21.0}));
}

TEST(Window, RejectsBadStride) {
  const auto records = parse_trajectory_text(contiguous(1, 20));
  EXPECT_THROW(window_trajectories(records, 0), std::invalid_argument);
  EXPECT_THROW(window_trajectories(records, 10, 0), std::invalid_argument);
}

TEST(Normalize, OriginAndRoundTrip) {
  const auto w = constant_velocity_window({3.25, -7.5}, {0.4, 0.1});
  const auto n = normalize(w);
  EXPECT_EQ(n.positions[7], (Point{0.0, 0.0}));
  const auto back = denormalize(n);
  for (std::size_t t = 0; t < kWindowLen; ++t) {
    EXPECT_NEAR(back.positions[t].x, w.positions[t].x, 1e-12);
    EXPECT_NEAR(back.positions[t].y, w.positions[t].y, 1e-12);
  }
}

TEST(Normalize, RemovesTranslation) {
  const auto a = normalize(constant_velocity_window({0, 0}, {0.5, 0.25}));
  const auto b = normalize(constant_velocity_window({100, -50}, {0.5, 0.25}));
  for (std::size_t t = 0; t < kWindowLen; ++t) {
    EXPECT_NEAR(a.positions[t].x, b.positions[t].x, 1e-12);
    EXPECT_NEAR(a.positions[t].y, b.positions[t].y, 1e-12);
  }
}

TEST(Batch, ShapesAndContents) {
  std::vector<NormalizedWindow> ws;
  for (int i = 0; i < 3; ++i) ws.push_back(normalize(constant_velocity_window({0, 0}, {double(i), 1})));
  const std::vector<std::size_t> idx{2, 0};
  const auto b = make_batch(ws, idx);
  EXPECT_EQ(b.full.shape(), (Shape{2, 20, 2}));
  EXPECT_EQ(b.observed.shape(), (Shape{2, 8, 2}));
  EXPECT_EQ(b.future.shape(), (Shape{2, 12, 2}));
  EXPECT_EQ(b.destination.shape(), (Shape{2, 2}));
  EXPECT_FLOAT_EQ(b.destination.at({0, 0}), 24.0f);
  EXPECT_FLOAT_EQ(b.destination.at({1, 1}), 12.0f);
  EXPECT_EQ(make_batch(ws).full.dim(0), 3u);
}

TEST(Synth, ConstantVelocityClosedForm) {
  const auto w = constant_velocity_window({0, 0}, {1, 0});
  for (std::size_t t = 0; t < kWindowLen; ++t) EXPECT_EQ(w.positions[t], (Point{double(t), 0.0}));
}

TEST(Synth, DeterministicPerSeed) {
  for (auto kind : {SynthKind::kConstantVelocity, SynthKind::kPiecewiseTurn, SynthKind::kGoalAttractedNoisy}) {
    const auto a = synth_generate(kind, 50, 9);
    const auto b = synth_generate(kind, 50, 9);
    const auto c = synth_generate(kind, 50, 10);
    ASSERT_EQ(a.size(), 50u);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].positions, b[i].positions);
    EXPECT_NE(a[0].positions, c[0].positions);
  }
}

TEST(Synth, KindNames) {
  for (auto kind : {SynthKind::kConstantVelocity, SynthKind::kPiecewiseTurn, SynthKind::kGoalAttractedNoisy}) {
    EXPECT_EQ(parse_synth_kind(synth_kind_name(kind)), kind);
  }
  EXPECT_THROW(parse_synth_kind("spiral"), std::invalid_argument);
}

TEST(Synth, ConstantVelocityIsLinear) {
  for (const auto& w : synth_generate(SynthKind::kConstantVelocity, 20, 3)) {
    const double vx = w.positions[1].x - w.positions[0].x;
    const double vy = w.positions[1].y - w.positions[0].y;
    const double speed = std::hypot(vx, vy);
    EXPECT_GE(speed, 0.3 - 1e-9);
    EXPECT_LE(speed, 0.7 + 1e-9);
    for (std::size_t t = 1; t < kWindowLen; ++t) {
      EXPECT_NEAR(w.positions[t].x - w.positions[t - 1].x, vx, 1e-9);
      EXPECT_NEAR(w.positions[t].y - w.positions[t - 1].y, vy, 1e-9);
    }
  }
}

TEST(Synth, PiecewiseTurnHasTwoVelocities) {
  for (const auto& w : synth_generate(SynthKind::kPiecewiseTurn, 100, 4)) {
    std::vector<Point> distinct;
    for (std::size_t t = 1; t < kWindowLen; ++t) {
      const Point v{w.positions[t].x - w.positions[t - 1].x, w.positions[t].y - w.positions[t - 1].y};
      bool seen = false;
      for (const auto& d : distinct) seen |= std::hypot(d.x - v.x, d.y - v.y) < 1e-6;
      if (!seen) distinct.push_back(v);
    }
    EXPECT_EQ(distinct.size(), 2u);
  }
}

TEST(Synth, GoalAttractedStepsAreBounded) {
  for (const auto& w : synth_generate(SynthKind::kGoalAttractedNoisy, 100, 5)) {
    for (std::size_t t = 1; t < kWindowLen; ++t) {
      const double step = std::hypot(w.positions[t].x - w.positions[t - 1].x,
                                     w.positions[t].y - w.positions[t - 1].y);
      EXPECT_LT(step, 1.0);
      EXPECT_TRUE(std::isfinite(step));
    }
  }
}

TEST(FileRoundTrip, WriteThenReload) {
  const auto windows = synth_generate(SynthKind::kGoalAttractedNoisy, 7, 6);
  const auto path = temp_path("roundtrip.txt");
  write_trajectory_file(path, windows);
  const auto again = window_trajectories(load_trajectory_file(path), 10, 1);
  std::filesystem::remove(path);
  ASSERT_EQ(again.size(), windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    EXPECT_EQ(again[i].positions, windows[i].positions);
    EXPECT_EQ(again[i].pedestrian_id, std::int64_t(i));
  }
}

}  // namespace
}  // namespace ppt
