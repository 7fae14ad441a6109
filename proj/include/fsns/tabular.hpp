#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace fsns {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Task { kClassification, kRegression };

const char* to_string(Task task);
Task parse_task(const std::string& text);

/// A feature matrix with named columns and one label column.
///
/// Classification labels are stored as class codes 0..n_classes-1 (as
/// doubles); `class_names` keeps the original spelling.
struct TabularDataset {
  std::string name;
  RowMatrix features;  // n_samples x n_features
  std::vector<std::string> feature_names;
  Eigen::VectorXd labels;
  Task task = Task::kRegression;
  std::vector<std::string> class_names;
  std::size_t dropped_rows = 0;

  std::size_t n_samples() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(features.cols()); }
  int n_classes() const { return static_cast<int>(class_names.size()); }

  Eigen::VectorXd column(std::size_t j) const { return features.col(static_cast<Eigen::Index>(j)); }

  /// Throws kInvalidArgument when an invariant does not hold.
  void validate() const;
};

struct DataSplit {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> test_indices;
  std::uint64_t seed = 0;
};

/// Ordered, duplicate-free list of 0-based feature indices.
class FeatureSubset {
 public:
  FeatureSubset() = default;
  explicit FeatureSubset(std::vector<std::size_t> indices);

  const std::vector<std::size_t>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  bool contains(std::size_t index) const;
  std::vector<std::size_t> sorted() const;

  /// Throws kInvalidSubset unless nonempty, in range and duplicate-free.
  void validate(std::size_t n_features) const;

  static FeatureSubset full(std::size_t n_features);

  friend bool operator==(const FeatureSubset&, const FeatureSubset&) = default;

 private:
  std::vector<std::size_t> indices_;
};

TabularDataset load_csv(const std::filesystem::path& path, Task task,
                        const std::string& label_column);

/// Writes features then the label column; classification labels are written
/// with their original class names.
void save_csv(const TabularDataset& dataset, const std::filesystem::path& path,
              const std::string& label_column = "label");

/// Test side gets ceil(n * test_fraction) samples. Stratified by class for
/// classification when every class has at least two samples.
DataSplit split_ab(const TabularDataset& dataset, double test_fraction, std::uint64_t seed);

/// Restricts a dataset to the given rows (row order preserved).
TabularDataset take_rows(const TabularDataset& dataset, const std::vector<std::size_t>& rows);

struct ForestOptions {
  int n_trees = 100;
  int max_depth = 0;         // 0 = grow until pure
  int min_samples_leaf = 1;
  int max_features = 0;      // 0 = sqrt(p) for classification, p/3 for regression
};

/// Trains a random forest on the split's train rows restricted to the subset
/// and scores the test rows: accuracy for classification, 1 - RAE for
/// regression. Index order inside the subset does not affect the result.
double evaluate_subset(const TabularDataset& dataset, const DataSplit& split,
                       const FeatureSubset& subset, std::uint64_t seed,
                       const ForestOptions& options = {});

/// 1 - sum|y - yhat| / sum|y - train_mean|.
double one_minus_rae(const Eigen::VectorXd& truth, const Eigen::VectorXd& predicted,
                     double train_mean);

double accuracy(const Eigen::VectorXd& truth, const Eigen::VectorXd& predicted);

struct ScoredSubset {
  FeatureSubset subset;
  double score = 0.0;
};

/// Scores all 2^n - 1 nonempty subsets, best first. Ties keep enumeration order.
std::vector<ScoredSubset> brute_force_best_subset(const TabularDataset& dataset,
                                                  const DataSplit& split,
                                                  std::size_t max_features, std::uint64_t seed,
                                                  const ForestOptions& options = {});

}  // namespace fsns
