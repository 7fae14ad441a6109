#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsns/model.hpp"
#include "fsns/search.hpp"

namespace fsns {

struct ReportRow {
  std::string method;
  std::vector<std::size_t> subset;
  double score = 0.0;       // evaluate_subset on partition B
  double redundancy = 0.0;  // normalised redundancy x 100 (full set = 100)
  double wall_time_s = 0.0;
  std::string note;
};

struct BenchmarkReport {
  std::string dataset;
  std::string task;
  std::size_t n_samples = 0;
  std::size_t n_features = 0;
  std::vector<std::size_t> informative;  // ground truth, synthetic datasets only
  std::vector<ReportRow> rows;
  nlohmann::json config;
  nlohmann::json environment;
  std::map<std::string, std::string> artifacts;  // file name -> sha256
  std::map<std::string, double> timing;          // stage -> seconds
  std::vector<EpochLoss> loss_history;
  std::vector<std::vector<TrajectoryPoint>> trajectories;
  std::vector<std::pair<std::size_t, double>> importance;  // selected feature -> importance

  const ReportRow* row(const std::string& method) const;
};

void to_json(nlohmann::json& j, const BenchmarkReport& r);
void from_json(const nlohmann::json& j, BenchmarkReport& r);

/// Removes wall-clock fields ("wall_time_s", "timing") recursively so two runs
/// can be compared byte for byte.
nlohmann::json strip_timing(nlohmann::json doc);

/// Deterministic description of the build and platform.
nlohmann::json environment_fingerprint();

enum class ReportFormat { kJson, kText, kPlots };

/// Writes report.json, report.txt and SVG plots (loss curves, search
/// trajectories, feature importance) into `dir`. Throws on an empty row list
/// or an unwritable directory.
void emit_report(const BenchmarkReport& report, const std::filesystem::path& dir,
                 const std::vector<ReportFormat>& formats = {ReportFormat::kJson, ReportFormat::kText,
                                                             ReportFormat::kPlots});

/// Aligned plain-text table of the rows.
std::string format_table(const BenchmarkReport& report);

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

/// Minimal static SVG charts.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<PlotSeries>& series);
std::string svg_bar_chart(const std::string& title, const std::vector<std::pair<std::string, double>>& bars);

void to_json(nlohmann::json& j, const EpochLoss& e);
void from_json(const nlohmann::json& j, EpochLoss& e);

}  // namespace fsns
