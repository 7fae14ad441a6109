#include "fsns/redundancy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsns/error.hpp"

namespace fsns {

const char* to_string(RedundancyMetric metric) {
  switch (metric) {
    case RedundancyMetric::kMutualInformation: return "mutual_information";
    case RedundancyMetric::kCovariance: return "covariance";
    case RedundancyMetric::kPearson: return "pearson";
  }
  return "unknown";
}

RedundancyMetric parse_redundancy_metric(const std::string& text) {
  if (text == "mutual_information" || text == "mi") return RedundancyMetric::kMutualInformation;
  if (text == "covariance" || text == "cov") return RedundancyMetric::kCovariance;
  if (text == "pearson") return RedundancyMetric::kPearson;
  throw Error(ErrorKind::kInvalidArgument, "unknown redundancy metric '" + text + "'");
}

namespace {

void check_pair(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size())
    throw Error(ErrorKind::kLengthMismatch, "vectors differ in length (" + std::to_string(x.size()) +
                                                " vs " + std::to_string(y.size()) + ")");
  if (x.size() < 2) throw Error(ErrorKind::kLengthMismatch, "need at least two samples");
}

std::vector<int> bin_index(const Eigen::VectorXd& v, int bins) {
  const double lo = v.minCoeff();
  const double hi = v.maxCoeff();
  std::vector<int> out(static_cast<std::size_t>(v.size()), 0);
  if (hi == lo) return out;
  const double width = (hi - lo) / bins;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const int b = static_cast<int>(std::floor((v[i] - lo) / width));
    out[static_cast<std::size_t>(i)] = std::clamp(b, 0, bins - 1);
  }
  return out;
}

}  // namespace

double mutual_information(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int bins) {
  return mutual_information(x, y, bins, bins);
}

double mutual_information(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int bins_x,
                          int bins_y) {
  check_pair(x, y);
  if (bins_x < 2 || bins_y < 2) throw Error(ErrorKind::kInvalidArgument, "bins must be at least 2");
  const auto bx = bin_index(x, bins_x);
  const auto by = bin_index(y, bins_y);
  const double n = static_cast<double>(x.size());

  std::vector<double> joint(static_cast<std::size_t>(bins_x) * static_cast<std::size_t>(bins_y), 0.0);
  std::vector<double> px(static_cast<std::size_t>(bins_x), 0.0);
  std::vector<double> py(static_cast<std::size_t>(bins_y), 0.0);
  for (std::size_t i = 0; i < bx.size(); ++i) {
    joint[static_cast<std::size_t>(bx[i]) * static_cast<std::size_t>(bins_y) + static_cast<std::size_t>(by[i])] += 1.0;
    px[static_cast<std::size_t>(bx[i])] += 1.0;
    py[static_cast<std::size_t>(by[i])] += 1.0;
  }

  // Terms are summed in sorted order so that swapping the arguments gives a
  // bit-identical result.
  std::vector<double> terms;
  for (int a = 0; a < bins_x; ++a) {
    for (int b = 0; b < bins_y; ++b) {
      const double count = joint[static_cast<std::size_t>(a) * static_cast<std::size_t>(bins_y) + static_cast<std::size_t>(b)];
      if (count == 0.0) continue;
      const double pab = count / n;
      const double pa = px[static_cast<std::size_t>(a)] / n;
      const double pb = py[static_cast<std::size_t>(b)] / n;
      terms.push_back(pab * std::log2(pab / (pa * pb)));
    }
  }
  std::sort(terms.begin(), terms.end());
  double total = 0.0;
  for (double t : terms) total += t;
  return std::max(0.0, total);
}

double covariance_abs(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  check_pair(x, y);
  const double n = static_cast<double>(x.size());
  const Eigen::ArrayXd cx = x.array() - x.mean();
  const Eigen::ArrayXd cy = y.array() - y.mean();
  return std::abs((cx * cy).sum() / n);
}

double pearson_abs(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  check_pair(x, y);
  if (x.minCoeff() == x.maxCoeff() || y.minCoeff() == y.maxCoeff()) return 0.0;
  const Eigen::ArrayXd cx = x.array() - x.mean();
  const Eigen::ArrayXd cy = y.array() - y.mean();
  const double sxx = (cx * cx).sum();
  const double syy = (cy * cy).sum();
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  const double r = (cx * cy).sum() / std::sqrt(sxx * syy);
  return std::min(1.0, std::abs(r));
}

int default_bins(std::size_t n_samples) {
  return std::max(2, static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_samples)))));
}

RedundancyMatrix build_matrix(const TabularDataset& dataset, RedundancyMetric metric, int bins) {
  const std::size_t p = dataset.n_features();
  if (bins <= 0) bins = default_bins(dataset.n_samples());
  RedundancyMatrix out;
  out.metric = metric;
  out.values = RowMatrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));

  std::vector<Eigen::VectorXd> columns(p);
  for (std::size_t j = 0; j < p; ++j) columns[j] = dataset.column(j);

  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = i; j < p; ++j) {
      double value = 0.0;
      switch (metric) {
        case RedundancyMetric::kMutualInformation:
          value = mutual_information(columns[i], columns[j], bins);
          break;
        case RedundancyMetric::kCovariance:
          value = covariance_abs(columns[i], columns[j]);
          break;
        case RedundancyMetric::kPearson:
          value = pearson_abs(columns[i], columns[j]);
          break;
      }
      out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = value;
      out.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = value;
    }
  }
  return out;
}

double subset_redundancy(const RedundancyMatrix& matrix, const FeatureSubset& subset) {
  const auto& idx = subset.indices();
  for (auto i : idx)
    if (i >= matrix.n_features())
      throw Error(ErrorKind::kInvalidSubset, "feature index " + std::to_string(i) + " out of range");
  double total = 0.0;
  for (std::size_t a = 0; a < idx.size(); ++a)
    for (std::size_t b = a + 1; b < idx.size(); ++b)
      if (idx[a] != idx[b])
        total += matrix.values(static_cast<Eigen::Index>(idx[a]), static_cast<Eigen::Index>(idx[b]));
  return total;
}

double normalize_redundancy(double raw, double full_set_raw) {
  if (!(full_set_raw > 0.0))
    throw Error(ErrorKind::kRedundancyUnavailable,
                "full-set redundancy is zero; redundancy targets are unavailable");
  return std::clamp(raw / full_set_raw, 0.0, 1.0);
}

void save_redundancy_matrix(const RedundancyMatrix& matrix, const std::filesystem::path& path,
                            const std::string& dataset_hash) {
  nlohmann::json doc;
  doc["format"] = "fsns.redundancy.v1";
  doc["metric"] = to_string(matrix.metric);
  doc["n_features"] = matrix.n_features();
  doc["dataset_hash"] = dataset_hash;
  std::vector<double> values(matrix.values.data(), matrix.values.data() + matrix.values.size());
  doc["values"] = values;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

RedundancyMatrix load_redundancy_matrix(const std::filesystem::path& path, std::string* dataset_hash) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing redundancy matrix " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, path.string() + ": " + e.what());
  }
  RedundancyMatrix out;
  out.metric = parse_redundancy_metric(doc.at("metric").get<std::string>());
  const auto n = doc.at("n_features").get<std::size_t>();
  const auto values = doc.at("values").get<std::vector<double>>();
  if (values.size() != n * n) throw Error(ErrorKind::kIo, "redundancy matrix value count mismatch");
  out.values = Eigen::Map<const RowMatrix>(values.data(), static_cast<Eigen::Index>(n),
                                           static_cast<Eigen::Index>(n));
  if (dataset_hash) *dataset_hash = doc.value("dataset_hash", std::string{});
  return out;
}

}  // namespace fsns
