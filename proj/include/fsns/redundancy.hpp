#pragma once

#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "fsns/tabular.hpp"

namespace fsns {

enum class RedundancyMetric { kMutualInformation, kCovariance, kPearson };

const char* to_string(RedundancyMetric metric);
RedundancyMetric parse_redundancy_metric(const std::string& text);

/// Symmetric, nonnegative feature-by-feature dependence matrix.
struct RedundancyMatrix {
  RowMatrix values;
  RedundancyMetric metric = RedundancyMetric::kPearson;

  std::size_t n_features() const { return static_cast<std::size_t>(values.rows()); }
};

/// Histogram estimate in bits with equal-width bins per axis.
double mutual_information(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int bins);
double mutual_information(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int bins_x, int bins_y);

/// |population covariance|.
double covariance_abs(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// |Pearson correlation|; 0 when either input is constant.
double pearson_abs(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// max(2, floor(sqrt(n_samples))).
int default_bins(std::size_t n_samples);

/// `bins` <= 0 selects default_bins(). Only the mutual-information metric reads it.
RedundancyMatrix build_matrix(const TabularDataset& dataset, RedundancyMetric metric, int bins = 0);

/// Sum over unordered pairs {i, j} of the subset, i != j.
double subset_redundancy(const RedundancyMatrix& matrix, const FeatureSubset& subset);

/// raw / full_set_raw clamped to [0, 1].
double normalize_redundancy(double raw, double full_set_raw);

void save_redundancy_matrix(const RedundancyMatrix& matrix, const std::filesystem::path& path,
                            const std::string& dataset_hash = {});
RedundancyMatrix load_redundancy_matrix(const std::filesystem::path& path,
                                        std::string* dataset_hash = nullptr);

}  // namespace fsns
