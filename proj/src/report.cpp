#include "fsns/report.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fsns/error.hpp"

namespace fsns {

const ReportRow* BenchmarkReport::row(const std::string& method) const {
  for (const auto& r : rows)
    if (r.method == method) return &r;
  return nullptr;
}

void to_json(nlohmann::json& j, const EpochLoss& e) {
  j = nlohmann::json{{"epoch", e.epoch},
                     {"stage", e.stage},
                     {"gamma_used", e.gamma_used},
                     {"total", e.terms.total},
                     {"performance", e.terms.performance},
                     {"reconstruction", e.terms.reconstruction},
                     {"kl", e.terms.kl},
                     {"redundancy", e.terms.redundancy}};
}

void from_json(const nlohmann::json& j, EpochLoss& e) {
  j.at("epoch").get_to(e.epoch);
  j.at("stage").get_to(e.stage);
  j.at("gamma_used").get_to(e.gamma_used);
  j.at("total").get_to(e.terms.total);
  j.at("performance").get_to(e.terms.performance);
  j.at("reconstruction").get_to(e.terms.reconstruction);
  j.at("kl").get_to(e.terms.kl);
  j.at("redundancy").get_to(e.terms.redundancy);
}

void to_json(nlohmann::json& j, const BenchmarkReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"method", row.method},
                    {"subset", row.subset},
                    {"subset_size", row.subset.size()},
                    {"score", row.score},
                    {"redundancy", row.redundancy},
                    {"wall_time_s", row.wall_time_s},
                    {"note", row.note}});
  nlohmann::json trajectories = nlohmann::json::array();
  for (const auto& t : r.trajectories) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : t) points.push_back({{"step", p.step}, {"v_hat", p.v_hat}, {"u_hat", p.u_hat}});
    trajectories.push_back(std::move(points));
  }
  nlohmann::json importance = nlohmann::json::array();
  for (const auto& [feature, value] : r.importance) importance.push_back({{"feature", feature}, {"importance", value}});
  j = nlohmann::json{{"format", "fsns.report.v1"},
                     {"dataset", {{"name", r.dataset},
                                  {"task", r.task},
                                  {"n_samples", r.n_samples},
                                  {"n_features", r.n_features},
                                  {"informative", r.informative}}},
                     {"rows", std::move(rows)},
                     {"config", r.config},
                     {"environment", r.environment},
                     {"artifacts", r.artifacts},
                     {"timing", r.timing},
                     {"loss_history", r.loss_history},
                     {"trajectories", std::move(trajectories)},
                     {"importance", std::move(importance)}};
}

void from_json(const nlohmann::json& j, BenchmarkReport& r) {
  const auto& d = j.at("dataset");
  d.at("name").get_to(r.dataset);
  d.at("task").get_to(r.task);
  d.at("n_samples").get_to(r.n_samples);
  d.at("n_features").get_to(r.n_features);
  d.at("informative").get_to(r.informative);
  r.rows.clear();
  for (const auto& row : j.at("rows")) {
    ReportRow out;
    row.at("method").get_to(out.method);
    row.at("subset").get_to(out.subset);
    row.at("score").get_to(out.score);
    row.at("redundancy").get_to(out.redundancy);
    out.wall_time_s = row.value("wall_time_s", 0.0);
    row.at("note").get_to(out.note);
    r.rows.push_back(std::move(out));
  }
  r.config = j.at("config");
  r.environment = j.at("environment");
  j.at("artifacts").get_to(r.artifacts);
  if (j.contains("timing")) j.at("timing").get_to(r.timing);
  j.at("loss_history").get_to(r.loss_history);
  r.trajectories.clear();
  for (const auto& t : j.at("trajectories")) {
    std::vector<TrajectoryPoint> points;
    for (const auto& p : t)
      points.push_back({p.at("step").get<int>(), p.at("v_hat").get<double>(), p.at("u_hat").get<double>()});
    r.trajectories.push_back(std::move(points));
  }
  r.importance.clear();
  for (const auto& item : j.at("importance"))
    r.importance.emplace_back(item.at("feature").get<std::size_t>(), item.at("importance").get<double>());
}

nlohmann::json strip_timing(nlohmann::json doc) {
  if (doc.is_object()) {
    doc.erase("wall_time_s");
    doc.erase("timing");
    for (auto& [key, value] : doc.items()) value = strip_timing(value);
  } else if (doc.is_array()) {
    for (auto& value : doc) value = strip_timing(value);
  }
  return doc;
}

nlohmann::json environment_fingerprint() {
  nlohmann::json env;
#if defined(__clang__)
  env["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  env["compiler"] = std::string("gcc ") + __VERSION__;
#else
  env["compiler"] = "unknown";
#endif
  env["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
#if defined(__linux__)
  env["platform"] = "linux";
#elif defined(__APPLE__)
  env["platform"] = "macos";
#else
  env["platform"] = "other";
#endif
#ifdef NDEBUG
  env["assertions"] = false;
#else
  env["assertions"] = true;
#endif
  env["cxx_standard"] = static_cast<long>(__cplusplus);
  return env;
}

std::string format_table(const BenchmarkReport& report) {
  std::vector<std::array<std::string, 5>> cells;
  cells.push_back({"method", "size", "score(B)", "redundancy", "time(s)"});
  for (const auto& row : report.rows) {
    std::ostringstream score, red, time;
    score << std::fixed << std::setprecision(4) << row.score;
    red << std::fixed << std::setprecision(1) << row.redundancy;
    time << std::fixed << std::setprecision(2) << row.wall_time_s;
    cells.push_back({row.method, std::to_string(row.subset.size()), score.str(), red.str(), time.str()});
  }
  std::array<std::size_t, 5> width{};
  for (const auto& line : cells)
    for (std::size_t c = 0; c < 5; ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  out << "dataset: " << report.dataset << " (" << report.task << ", " << report.n_samples << " samples, "
      << report.n_features << " features)\n";
  for (std::size_t l = 0; l < cells.size(); ++l) {
    for (std::size_t c = 0; c < 5; ++c) {
      if (c == 0)
        out << std::left << std::setw(static_cast<int>(width[c])) << cells[l][c];
      else
        out << "  " << std::right << std::setw(static_cast<int>(width[c])) << cells[l][c];
    }
    out << '\n';
    if (l == 0) {
      std::size_t total = width[0];
      for (std::size_t c = 1; c < 5; ++c) total += width[c] + 2;
      out << std::string(total, '-') << '\n';
    }
  }
  out << "redundancy is relative to the full feature set (= 100)\n";
  return out.str();
}

namespace {

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(ch);
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string number(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

}  // namespace

std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<PlotSeries>& series) {
  constexpr double kWidth = 720, kHeight = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool first = true;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (first) {
        x_min = x_max = x;
        y_min = y_max = y;
        first = false;
      }
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
      y_min = std::min(y_min, y);
      y_max = std::max(y_max, y);
    }
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) {
    y_max += 0.5;
    y_min -= 0.5;
  }
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
      << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double yv = y_min + (y_max - y_min) * t / 4.0;
    const double xv = x_min + (x_max - x_min) * t / 4.0;
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << number(yv)
        << "</text>\n";
    out << "<text x=\"" << px(xv) << "\" y=\"" << kTop + plot_h + 16 << "\" text-anchor=\"middle\">" << number(xv)
        << "</text>\n";
  }
  out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
      << escape_xml(x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << kTop + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kTop + plot_h / 2 << ")\">" << escape_xml(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = kPalette[i % std::size(kPalette)];
    std::ostringstream path;
    bool started = false;
    for (const auto& [x, y] : series[i].points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      path << (started ? " L" : "M") << px(x) << ',' << py(y);
      started = true;
    }
    if (started)
      out << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"/>\n";
    if (i < 12) {
      const double ly = kTop + 14.0 * static_cast<double>(i) + 8;
      out << "<line x1=\"" << kWidth - kRight + 10 << "\" y1=\"" << ly << "\" x2=\"" << kWidth - kRight + 28
          << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      out << "<text x=\"" << kWidth - kRight + 32 << "\" y=\"" << ly + 4 << "\">" << escape_xml(series[i].name)
          << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

std::string svg_bar_chart(const std::string& title, const std::vector<std::pair<std::string, double>>& bars) {
  constexpr double kWidth = 720, kTop = 40, kLeft = 90, kRight = 40, kBar = 18, kGap = 6;
  const double height = kTop + 20 + static_cast<double>(bars.size()) * (kBar + kGap);
  double max_value = 0.0;
  for (const auto& [name, v] : bars) max_value = std::max(max_value, v);
  if (max_value <= 0.0) max_value = 1.0;
  const double plot_w = kWidth - kLeft - kRight;
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
      << "</text>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double y = kTop + static_cast<double>(i) * (kBar + kGap);
    const double w = std::max(0.0, bars[i].second) / max_value * plot_w;
    out << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + kBar - 5 << "\" text-anchor=\"end\">"
        << escape_xml(bars[i].first) << "</text>\n";
    out << "<rect x=\"" << kLeft << "\" y=\"" << y << "\" width=\"" << w << "\" height=\"" << kBar
        << "\" fill=\"#1f77b4\"/>\n";
    out << "<text x=\"" << kLeft + w + 4 << "\" y=\"" << y + kBar - 5 << "\">" << number(bars[i].second)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace

void emit_report(const BenchmarkReport& report, const std::filesystem::path& dir,
                 const std::vector<ReportFormat>& formats) {
  if (report.rows.empty()) throw Error(ErrorKind::kEmptyInput, "report has no method rows");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  for (auto format : formats) {
    switch (format) {
      case ReportFormat::kJson:
        write_text(dir / "report.json", nlohmann::json(report).dump(2) + "\n");
        break;
      case ReportFormat::kText:
        write_text(dir / "report.txt", format_table(report));
        break;
      case ReportFormat::kPlots: {
        std::vector<PlotSeries> losses(4);
        losses[0].name = "reconstruction";
        losses[1].name = "performance";
        losses[2].name = "redundancy";
        losses[3].name = "alignment";
        for (const auto& e : report.loss_history) {
          const double x = e.epoch;
          losses[0].points.emplace_back(x, e.terms.reconstruction);
          losses[1].points.emplace_back(x, e.terms.performance);
          losses[2].points.emplace_back(x, e.terms.redundancy);
          losses[3].points.emplace_back(x, e.terms.kl);
        }
        write_text(dir / "loss_curves.svg", svg_line_chart("Training losses per epoch", "epoch", "loss", losses));
        std::vector<PlotSeries> v_series;
        std::vector<PlotSeries> u_series;
        for (std::size_t s = 0; s < report.trajectories.size(); ++s) {
          PlotSeries v{"start " + std::to_string(s), {}};
          PlotSeries u{"start " + std::to_string(s), {}};
          for (const auto& p : report.trajectories[s]) {
            v.points.emplace_back(p.step, p.v_hat);
            u.points.emplace_back(p.step, p.u_hat);
          }
          v_series.push_back(std::move(v));
          u_series.push_back(std::move(u));
        }
        write_text(dir / "search_performance.svg",
                   svg_line_chart("Predicted performance along each search start", "step", "v_hat", v_series));
        write_text(dir / "search_redundancy.svg",
                   svg_line_chart("Predicted redundancy along each search start", "step", "u_hat", u_series));
        std::vector<std::pair<std::string, double>> bars;
        for (const auto& [feature, value] : report.importance) bars.emplace_back("f" + std::to_string(feature), value);
        write_text(dir / "feature_importance.svg", svg_bar_chart("Importance within the selected subset", bars));
        break;
      }
    }
  }
}

}  // namespace fsns
