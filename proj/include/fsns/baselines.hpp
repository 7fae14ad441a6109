#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fsns/redundancy.hpp"
#include "fsns/tabular.hpp"

namespace fsns {

enum class BaselineMethod { kKBest, kMrmr, kLasso, kRfe };

const char* to_string(BaselineMethod method);
BaselineMethod parse_baseline_method(const std::string& text);
std::vector<BaselineMethod> all_baselines();

struct BaselineSpec {
  BaselineMethod method = BaselineMethod::kKBest;
  /// Target subset size for k_best, mrmr and rfe.
  int k = 1;
  /// Features removed per rfe round.
  int rfe_step = 1;
  /// Candidate L1 strengths as fractions of the smallest all-zero strength.
  std::vector<double> lasso_grid{1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.001};
  int lasso_folds = 3;
  ForestOptions forest;
  std::uint64_t seed = 0;

  void validate(std::size_t n_features) const;
};

/// Mutual information between each feature and the label (bits). Class
/// labels use one bin per class.
Eigen::VectorXd label_relevance(const TabularDataset& dataset);

/// Top-k by relevance; ties keep the lower index.
std::vector<std::size_t> k_best(const Eigen::VectorXd& relevance, int k);

struct MrmrStep {
  std::size_t chosen = 0;
  std::vector<std::size_t> candidates;
  std::vector<double> objectives;  // relevance - mean redundancy, per candidate
};

/// Greedy max relevance minus mean redundancy to the already-selected set.
std::vector<std::size_t> mrmr(const Eigen::VectorXd& relevance, const RedundancyMatrix& redundancy, int k,
                              std::vector<MrmrStep>* trace = nullptr);

struct LassoFit {
  Eigen::VectorXd coefficients;  // on standardised features
  double alpha = 0.0;
  int iterations = 0;
};

/// Coordinate descent on (1/2n)|y - Xb|^2 + alpha |b|_1 with an unpenalised
/// intercept. X is standardised internally.
LassoFit lasso_fit(const RowMatrix& x, const Eigen::VectorXd& y, double alpha, int max_iterations = 1000,
                   double tolerance = 1e-7);

/// Smallest alpha giving an all-zero solution: max |X_s^T (y - mean)| / n.
double lasso_alpha_max(const RowMatrix& x, const Eigen::VectorXd& y);

struct LassoSelection {
  std::vector<std::size_t> features;
  double alpha = 0.0;
  bool fell_back = false;  // nothing survived; kept the largest-coefficient feature
};

/// Chooses alpha by k-fold cross-validation, refits on all rows and keeps the
/// nonzero coefficients. Class labels are one-hot encoded (one response per
/// class, union of supports).
LassoSelection lasso_select(const TabularDataset& dataset, const BaselineSpec& spec);

/// Recursive elimination by forest importance until k features remain.
std::vector<std::size_t> rfe(const TabularDataset& dataset, const BaselineSpec& spec);

struct BaselineResult {
  BaselineMethod method = BaselineMethod::kKBest;
  std::vector<std::size_t> subset;  // sorted
  double score = 0.0;               // evaluate_subset on partition B
  bool fell_back = false;
  std::string note;
};

/// Fits the method on partition A, scores the subset on partition B.
BaselineResult run_baseline(const BaselineSpec& spec, const TabularDataset& dataset, const DataSplit& split,
                            const RedundancyMatrix& redundancy);

}  // namespace fsns
