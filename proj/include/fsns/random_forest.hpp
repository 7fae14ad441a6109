#pragma once

#include <cstdint>
#include <vector>

#include "fsns/tabular.hpp"

namespace fsns {

/// CART ensemble with bootstrap sampling and per-split feature subsampling.
///
/// Each tree draws its own generator from (seed, tree index), so two fits with
/// the same seed and the same column order are identical.
class RandomForest {
 public:
  RandomForest(Task task, int n_classes, ForestOptions options, std::uint64_t seed);

  void fit(const RowMatrix& x, const Eigen::VectorXd& y);

  /// Class codes for classification, real predictions for regression.
  Eigen::VectorXd predict(const RowMatrix& x) const;

  /// Mean impurity decrease per feature, normalised to sum to 1 (all zero when
  /// no split was made).
  Eigen::VectorXd feature_importances() const { return importances_; }

 private:
  struct Node {
    int feature = -1;   // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int leaf_offset = -1;  // into leaf_values_
  };

  struct Tree {
    std::vector<Node> nodes;
    std::vector<double> leaf_values;  // regression: 1 per leaf; classification: n_classes
  };

  class Builder;

  const double* leaf_for(const Tree& tree, const double* row) const;

  Task task_;
  int n_classes_;
  ForestOptions options_;
  std::uint64_t seed_;
  int n_features_ = 0;
  std::vector<Tree> trees_;
  Eigen::VectorXd importances_;
};

}  // namespace fsns
