// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "ppt/evaluation.hpp"

namespace ppt {

namespace {

using nlohmann::json;

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> columns = {
      "kind",           "window",          "pedestrian_id",      "scene",
      "min_ade",        "min_fde",         "zero_velocity_ade",  "zero_velocity_fde",
      "destination_spread", "sample_count", "config_hash",       "wall_clock_s",
      "units"};
  return columns;
}

std::string real_text(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else if (c != '\r') {
      fields.back() += c;
    }
  }
  return fields;
}

double csv_real(const std::string& field, const char* column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw std::invalid_argument(std::string("report csv: invalid ") + column + " '" + field + "'");
  }
  return v;
}

template <typename T>
T csv_int(const std::string& field, const char* column) {
  T v{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw std::invalid_argument(std::string("report csv: invalid ") + column + " '" + field + "'");
  }
  return v;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("error writing " + path.string());
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b"};

std::string svg_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

ReportFormat format_for_path(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? ReportFormat::kCsv : ReportFormat::kJson;
}

std::string report_to_json(const MetricsReport& r) {
  json windows = json::array();
  for (const auto& w : r.windows) {
    windows.push_back(json{{"window", w.window},
                           {"pedestrian_id", w.pedestrian_id},
                           {"scene", w.scene},
                           {"min_ade", w.min_ade},
                           {"min_fde", w.min_fde},
                           {"zero_velocity_ade", w.zero_velocity_ade},
                           {"zero_velocity_fde", w.zero_velocity_fde},
                           {"destination_spread", w.destination_spread}});
  }
  const json j{{"min_ade", r.min_ade},
               {"min_fde", r.min_fde},
               {"zero_velocity_ade", r.zero_velocity_ade},
               {"zero_velocity_fde", r.zero_velocity_fde},
               {"destination_spread", r.destination_spread},
               {"sample_count", r.sample_count},
               {"config_hash", hash_hex(r.config_hash)},
               {"wall_clock_s", r.wall_clock_s},
               {"units", r.units},
               {"windows", windows}};
  return j.dump(2) + "\n";
}

MetricsReport report_from_json(std::string_view text) {
  MetricsReport r;
  try {
    const json j = json::parse(text);
    r.min_ade = j.at("min_ade").get<double>();
    r.min_fde = j.at("min_fde").get<double>();
    r.zero_velocity_ade = j.at("zero_velocity_ade").get<double>();
    r.zero_velocity_fde = j.at("zero_velocity_fde").get<double>();
    r.destination_spread = j.at("destination_spread").get<double>();
    r.sample_count = j.at("sample_count").get<std::size_t>();
    r.config_hash = std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
    r.wall_clock_s = j.at("wall_clock_s").get<double>();
    r.units = j.at("units").get<std::string>();
    for (const auto& w : j.at("windows")) {
      WindowMetrics m;
      m.window = w.at("window").get<std::size_t>();
      m.pedestrian_id = w.at("pedestrian_id").get<std::int64_t>();
      m.scene = w.at("scene").get<std::string>();
      m.min_ade = w.at("min_ade").get<double>();
      m.min_fde = w.at("min_fde").get<double>();
      m.zero_velocity_ade = w.at("zero_velocity_ade").get<double>();
      m.zero_velocity_fde = w.at("zero_velocity_fde").get<double>();
      m.destination_spread = w.at("destination_spread").get<double>();
      r.windows.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("report json: ") + e.what());
  }
  if (r.sample_count == 0 || r.windows.size() != r.sample_count) {
    throw std::invalid_argument("report json: sample_count does not match the window records");
  }
  return r;
}

std::string report_to_csv(const MetricsReport& r) {
  std::string out;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  out += "summary,,,," + real_text(r.min_ade) + "," + real_text(r.min_fde) + "," +
         real_text(r.zero_velocity_ade) + "," + real_text(r.zero_velocity_fde) + "," +
         real_text(r.destination_spread) + "," + std::to_string(r.sample_count) + "," +
         hash_hex(r.config_hash) + "," + real_text(r.wall_clock_s) + "," + csv_field(r.units) + "\n";
  for (const auto& w : r.windows) {
    out += "window," + std::to_string(w.window) + "," + std::to_string(w.pedestrian_id) + "," +
           csv_field(w.scene) + "," + real_text(w.min_ade) + "," + real_text(w.min_fde) + "," +
           real_text(w.zero_velocity_ade) + "," + real_text(w.zero_velocity_fde) + "," +
           real_text(w.destination_spread) + ",,,,\n";
  }
  return out;
}

MetricsReport report_from_csv(std::string_view text) {
  MetricsReport r;
  bool have_summary = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (line_no == 1) {
      if (f != csv_columns()) throw std::invalid_argument("report csv: unexpected header");
      continue;
    }
    if (f.size() != csv_columns().size()) {
      throw std::invalid_argument("report csv: line " + std::to_string(line_no) +
                                  " has the wrong number of fields");
    }
    if (f[0] == "summary") {
      r.min_ade = csv_real(f[4], "min_ade");
      r.min_fde = csv_real(f[5], "min_fde");
      r.zero_velocity_ade = csv_real(f[6], "zero_velocity_ade");
      r.zero_velocity_fde = csv_real(f[7], "zero_velocity_fde");
      r.destination_spread = csv_real(f[8], "destination_spread");
      r.sample_count = csv_int<std::size_t>(f[9], "sample_count");
      const auto [ptr, ec] =
          std::from_chars(f[10].data(), f[10].data() + f[10].size(), r.config_hash, 16);
      if (ec != std::errc() || ptr != f[10].data() + f[10].size()) {
        throw std::invalid_argument("report csv: invalid config_hash '" + f[10] + "'");
      }
      r.wall_clock_s = csv_real(f[11], "wall_clock_s");
      r.units = f[12];
      have_summary = true;
    } else if (f[0] == "window") {
      WindowMetrics m;
      m.window = csv_int<std::size_t>(f[1], "window");
      m.pedestrian_id = csv_int<std::int64_t>(f[2], "pedestrian_id");
      m.scene = f[3];
      m.min_ade = csv_real(f[4], "min_ade");
      m.min_fde = csv_real(f[5], "min_fde");
      m.zero_velocity_ade = csv_real(f[6], "zero_velocity_ade");
      m.zero_velocity_fde = csv_real(f[7], "zero_velocity_fde");
      m.destination_spread = csv_real(f[8], "destination_spread");
      r.windows.push_back(std::move(m));
    } else {
      throw std::invalid_argument("report csv: unknown row kind '" + f[0] + "'");
    }
  }
  if (!have_summary) throw std::invalid_argument("report csv: missing summary row");
  if (r.sample_count == 0 || r.windows.size() != r.sample_count) {
    throw std::invalid_argument("report csv: sample_count does not match the window records");
  }
  return r;
}

void emit_report(const MetricsReport& report, const std::filesystem::path& path,
                 ReportFormat format) {
  if (report.sample_count == 0 || report.windows.empty()) {
    throw std::invalid_argument("emit_report: empty report");
  }
  write_text(path, format == ReportFormat::kCsv ? report_to_csv(report) : report_to_json(report));
}

MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read report " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return format_for_path(path) == ReportFormat::kCsv ? report_from_csv(buf.str())
                                                     : report_from_json(buf.str());
}

void emit_sweep_plot(std::span<const SweepPoint> points, std::string_view x_name,
                     const std::filesystem::path& path) {
  if (points.empty()) throw std::invalid_argument("emit_sweep_plot: no points");
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 150, kTop = 30, kBottom = 50;
  std::vector<std::string> names;
  double y_max = 0.0;
  for (const auto& p : points) {
    for (const auto& [name, v] : p.metrics) {
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
      if (std::isfinite(v)) y_max = std::max(y_max, v);
    }
  }
  if (y_max <= 0.0) y_max = 1.0;
  y_max *= 1.1;
  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;
  const auto x_at = [&](std::size_t i) {
    return points.size() == 1 ? kLeft + plot_w / 2
                              : kLeft + plot_w * static_cast<double>(i) /
                                            static_cast<double>(points.size() - 1);
  };
  const auto y_at = [&](double v) { return kTop + plot_h * (1.0 - v / y_max); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop + plot_h << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = y_max * t / 4.0;
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << y_at(v) + 4 << "\" text-anchor=\"end\">"
        << real_text(std::round(v * 1000.0) / 1000.0) << "</text>\n";
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    svg << "<text x=\"" << x_at(i) << "\" y=\"" << kTop + plot_h + 18
        << "\" text-anchor=\"middle\">" << svg_escape(points[i].label) << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kH - 10
      << "\" text-anchor=\"middle\">" << svg_escape(x_name) << "</text>\n";
  for (std::size_t m = 0; m < names.size(); ++m) {
    const char* color = kPalette[m % std::size(kPalette)];
    svg << "<g class=\"series\" data-metric=\"" << svg_escape(names[m]) << "\">\n<polyline fill=\"none\" stroke=\""
        << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto it = points[i].metrics.find(names[m]);
      if (it != points[i].metrics.end()) svg << x_at(i) << "," << y_at(it->second) << " ";
    }
    svg << "\"/>\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto it = points[i].metrics.find(names[m]);
      if (it == points[i].metrics.end()) continue;
      svg << "<circle class=\"point\" cx=\"" << x_at(i) << "\" cy=\"" << y_at(it->second)
          << "\" r=\"4\" fill=\"" << color << "\"><title>" << svg_escape(names[m]) << " = "
          << real_text(it->second) << "</title></circle>\n";
    }
    svg << "</g>\n";
    svg << "<text x=\"" << kW - kRight + 12 << "\" y=\"" << kTop + 16 * (m + 1) << "\" fill=\""
        << color << "\">" << svg_escape(names[m]) << "</text>\n";
  }
  svg << "</svg>\n";
  write_text(path, svg.str());
}

void emit_trajectory_plot(const TrajectoryWindow& window, const Prediction& prediction,
                          const std::filesystem::path& path) {
  constexpr double kSize = 480, kMargin = 20;
  double lo_x = window.positions[0].x, hi_x = lo_x, lo_y = window.positions[0].y, hi_y = lo_y;
  const auto extend = [&](Point p) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  };
  for (const auto& p : window.positions) extend(p);
  for (const auto& p : prediction.trajectories) extend(p);
  for (const auto& p : prediction.destinations) extend(p);
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double scale = (kSize - 2 * kMargin) / span;
  // SVG y grows downward; flip so the plot reads like a map.
  const auto px = [&](Point p) { return kMargin + (p.x - lo_x) * scale; };
  const auto py = [&](Point p) { return kSize - kMargin - (p.y - lo_y) * scale; };
  const auto polyline = [&](std::ostringstream& os, std::span<const Point> pts, const char* color,
                            double width, const char* cls) {
    os << "<polyline class=\"" << cls << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"" << width << "\" points=\"";
    for (const auto& p : pts) os << px(p) << "," << py(p) << " ";
    os << "\"/>\n";
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize << "\" height=\"" << kSize
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < prediction.num_candidates; ++k) {
    polyline(svg, prediction.trajectory(k), "#9ecae1", 1.0, "prediction");
  }
  for (const auto& d : prediction.destinations) {
    svg << "<circle class=\"destination\" cx=\"" << px(d) << "\" cy=\"" << py(d)
        << "\" r=\"2\" fill=\"#d62728\"/>\n";
  }
  std::vector<Point> future(window.positions.begin() + kObsLen - 1, window.positions.end());
  polyline(svg, future, "#2ca02c", 2.0, "ground-truth");
  polyline(svg, window.observed(), "black", 2.0, "observed");
  svg << "</svg>\n";
  write_text(path, svg.str());
}

}  // namespace ppt
