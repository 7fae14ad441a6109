#include "fsns/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fsns/error.hpp"
#include "fsns/random.hpp"
#include "fsns/random_forest.hpp"

namespace fsns {

const char* to_string(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kKBest: return "k_best";
    case BaselineMethod::kMrmr: return "mrmr";
    case BaselineMethod::kLasso: return "lasso";
    case BaselineMethod::kRfe: return "rfe";
  }
  return "unknown";
}

BaselineMethod parse_baseline_method(const std::string& text) {
  for (auto m : all_baselines())
    if (text == to_string(m)) return m;
  throw Error(ErrorKind::kInvalidArgument, "unknown baseline '" + text + "'");
}

std::vector<BaselineMethod> all_baselines() {
  return {BaselineMethod::kKBest, BaselineMethod::kMrmr, BaselineMethod::kLasso, BaselineMethod::kRfe};
}

void BaselineSpec::validate(std::size_t n_features) const {
  const bool uses_k = method != BaselineMethod::kLasso;
  if (uses_k && (k < 1 || static_cast<std::size_t>(k) > n_features))
    throw Error(ErrorKind::kInvalidConfig, "baseline k must lie in [1, n_features]");
  if (rfe_step < 1) throw Error(ErrorKind::kInvalidConfig, "rfe_step must be at least 1");
  if (lasso_grid.empty()) throw Error(ErrorKind::kInvalidConfig, "lasso grid is empty");
  if (lasso_folds < 2) throw Error(ErrorKind::kInvalidConfig, "lasso needs at least two folds");
}

Eigen::VectorXd label_relevance(const TabularDataset& dataset) {
  const int bins = default_bins(dataset.n_samples());
  const int label_bins = dataset.task == Task::kClassification ? std::max(2, dataset.n_classes()) : bins;
  Eigen::VectorXd out(static_cast<Eigen::Index>(dataset.n_features()));
  for (std::size_t j = 0; j < dataset.n_features(); ++j)
    out[static_cast<Eigen::Index>(j)] = mutual_information(dataset.column(j), dataset.labels, bins, label_bins);
  return out;
}

std::vector<std::size_t> k_best(const Eigen::VectorXd& relevance, int k) {
  std::vector<std::size_t> order(static_cast<std::size_t>(relevance.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return relevance[static_cast<Eigen::Index>(a)] > relevance[static_cast<Eigen::Index>(b)];
  });
  order.resize(std::min(order.size(), static_cast<std::size_t>(std::max(k, 0))));
  return order;
}

std::vector<std::size_t> mrmr(const Eigen::VectorXd& relevance, const RedundancyMatrix& redundancy, int k,
                              std::vector<MrmrStep>* trace) {
  const auto p = static_cast<std::size_t>(relevance.size());
  if (redundancy.n_features() != p) throw Error(ErrorKind::kLengthMismatch, "redundancy matrix size mismatch");
  std::vector<std::size_t> selected;
  std::vector<char> taken(p, 0);
  const auto target = std::min(p, static_cast<std::size_t>(std::max(k, 0)));
  while (selected.size() < target) {
    MrmrStep step;
    double best_value = 0.0;
    std::size_t best = p;
    for (std::size_t j = 0; j < p; ++j) {
      if (taken[j]) continue;
      double penalty = 0.0;
      for (auto s : selected) penalty += redundancy.values(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(s));
      if (!selected.empty()) penalty /= static_cast<double>(selected.size());
      const double value = relevance[static_cast<Eigen::Index>(j)] - penalty;
      step.candidates.push_back(j);
      step.objectives.push_back(value);
      if (best == p || value > best_value) {
        best = j;
        best_value = value;
      }
    }
    step.chosen = best;
    taken[best] = 1;
    selected.push_back(best);
    if (trace) trace->push_back(std::move(step));
  }
  return selected;
}

namespace {

struct Standardized {
  RowMatrix x;
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd scale;
};

Standardized standardize_columns(const RowMatrix& x) {
  Standardized s;
  s.mean = x.colwise().mean();
  s.x = x.rowwise() - s.mean;
  s.scale = (s.x.array().square().colwise().sum() / static_cast<double>(x.rows())).sqrt();
  for (Eigen::Index j = 0; j < s.x.cols(); ++j) {
    if (s.scale[j] > 0.0)
      s.x.col(j) /= s.scale[j];
    else
      s.x.col(j).setZero();
  }
  return s;
}

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

// Responses: one column for regression / binary, one per class otherwise.
RowMatrix responses(const TabularDataset& dataset) {
  const auto n = static_cast<Eigen::Index>(dataset.n_samples());
  if (dataset.task == Task::kRegression || dataset.n_classes() <= 2) {
    RowMatrix y(n, 1);
    y.col(0) = dataset.labels;
    return y;
  }
  RowMatrix y = RowMatrix::Zero(n, dataset.n_classes());
  for (Eigen::Index i = 0; i < n; ++i) y(i, static_cast<Eigen::Index>(dataset.labels[i])) = 1.0;
  return y;
}

}  // namespace

LassoFit lasso_fit(const RowMatrix& x, const Eigen::VectorXd& y, double alpha, int max_iterations,
                   double tolerance) {
  if (x.rows() != y.size()) throw Error(ErrorKind::kLengthMismatch, "lasso: rows differ from labels");
  if (alpha < 0.0) throw Error(ErrorKind::kInvalidArgument, "lasso: alpha must be nonnegative");
  const Standardized s = standardize_columns(x);
  const double n = static_cast<double>(x.rows());
  const Eigen::VectorXd yc = y.array() - y.mean();
  LassoFit fit;
  fit.alpha = alpha;
  fit.coefficients = Eigen::VectorXd::Zero(x.cols());
  Eigen::VectorXd residual = yc;
  for (fit.iterations = 0; fit.iterations < max_iterations; ++fit.iterations) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (s.scale[j] <= 0.0) continue;
      const double old = fit.coefficients[j];
      // Standardised columns have unit mean square, so the coordinate update is exact.
      const double rho = s.x.col(j).dot(residual) / n + old;
      const double updated = soft_threshold(rho, alpha);
      if (updated != old) {
        residual -= (updated - old) * s.x.col(j);
        fit.coefficients[j] = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
    }
    if (max_change < tolerance) break;
  }
  return fit;
}

double lasso_alpha_max(const RowMatrix& x, const Eigen::VectorXd& y) {
  const Standardized s = standardize_columns(x);
  const Eigen::VectorXd yc = y.array() - y.mean();
  return (s.x.transpose() * yc).cwiseAbs().maxCoeff() / static_cast<double>(x.rows());
}

LassoSelection lasso_select(const TabularDataset& dataset, const BaselineSpec& spec) {
  const RowMatrix y = responses(dataset);
  const auto n = dataset.n_samples();
  const auto p = static_cast<Eigen::Index>(dataset.n_features());
  if (n < static_cast<std::size_t>(spec.lasso_folds))
    throw Error(ErrorKind::kInvalidArgument, "lasso: fewer samples than folds");

  double alpha_max = 0.0;
  for (Eigen::Index c = 0; c < y.cols(); ++c)
    alpha_max = std::max(alpha_max, lasso_alpha_max(dataset.features, y.col(c)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(spec.seed, 0x1A55);
  std::shuffle(order.begin(), order.end(), rng);

  double best_error = 0.0;
  double best_alpha = alpha_max;
  for (double fraction : spec.lasso_grid) {
    const double alpha = fraction * alpha_max;
    double error = 0.0;
    for (int fold = 0; fold < spec.lasso_folds; ++fold) {
      std::vector<std::size_t> train_rows;
      std::vector<std::size_t> valid_rows;
      for (std::size_t i = 0; i < n; ++i)
        (static_cast<int>(i % static_cast<std::size_t>(spec.lasso_folds)) == fold ? valid_rows : train_rows)
            .push_back(order[i]);
      RowMatrix xt(static_cast<Eigen::Index>(train_rows.size()), p);
      RowMatrix xv(static_cast<Eigen::Index>(valid_rows.size()), p);
      for (std::size_t i = 0; i < train_rows.size(); ++i)
        xt.row(static_cast<Eigen::Index>(i)) = dataset.features.row(static_cast<Eigen::Index>(train_rows[i]));
      for (std::size_t i = 0; i < valid_rows.size(); ++i)
        xv.row(static_cast<Eigen::Index>(i)) = dataset.features.row(static_cast<Eigen::Index>(valid_rows[i]));
      const Standardized st = standardize_columns(xt);
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        Eigen::VectorXd yt(static_cast<Eigen::Index>(train_rows.size()));
        for (std::size_t i = 0; i < train_rows.size(); ++i)
          yt[static_cast<Eigen::Index>(i)] = y(static_cast<Eigen::Index>(train_rows[i]), c);
        const LassoFit fit = lasso_fit(xt, yt, alpha);
        for (std::size_t i = 0; i < valid_rows.size(); ++i) {
          double pred = yt.mean();
          for (Eigen::Index j = 0; j < p; ++j)
            if (st.scale[j] > 0.0)
              pred += fit.coefficients[j] * (xv(static_cast<Eigen::Index>(i), j) - st.mean[j]) / st.scale[j];
          const double diff = y(static_cast<Eigen::Index>(valid_rows[i]), c) - pred;
          error += diff * diff;
        }
      }
    }
    if (fraction == spec.lasso_grid.front() || error < best_error) {
      best_error = error;
      best_alpha = alpha;
    }
  }

  LassoSelection out;
  out.alpha = best_alpha;
  Eigen::VectorXd magnitude = Eigen::VectorXd::Zero(p);
  for (Eigen::Index c = 0; c < y.cols(); ++c)
    magnitude += lasso_fit(dataset.features, y.col(c), best_alpha).coefficients.cwiseAbs();
  for (Eigen::Index j = 0; j < p; ++j)
    if (magnitude[j] > 0.0) out.features.push_back(static_cast<std::size_t>(j));
  if (out.features.empty()) {
    // Nothing survived: take the largest coefficient at the weakest grid penalty,
    // or the first feature to enter the path when that is all-zero too.
    const double weakest = *std::min_element(spec.lasso_grid.begin(), spec.lasso_grid.end()) * alpha_max;
    Eigen::VectorXd fallback = Eigen::VectorXd::Zero(p);
    for (Eigen::Index c = 0; c < y.cols(); ++c)
      fallback += lasso_fit(dataset.features, y.col(c), weakest).coefficients.cwiseAbs();
    if (fallback.maxCoeff() <= 0.0) {
      const Standardized s = standardize_columns(dataset.features);
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const Eigen::VectorXd yc = y.col(c).array() - y.col(c).mean();
        fallback += (s.x.transpose() * yc).cwiseAbs();
      }
    }
    Eigen::Index best = 0;
    fallback.maxCoeff(&best);
    out.features.push_back(static_cast<std::size_t>(best));
    out.fell_back = true;
  }
  return out;
}

std::vector<std::size_t> rfe(const TabularDataset& dataset, const BaselineSpec& spec) {
  std::vector<std::size_t> remaining(dataset.n_features());
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  const auto k = static_cast<std::size_t>(spec.k);
  while (remaining.size() > k) {
    RowMatrix x(static_cast<Eigen::Index>(dataset.n_samples()), static_cast<Eigen::Index>(remaining.size()));
    for (std::size_t c = 0; c < remaining.size(); ++c)
      x.col(static_cast<Eigen::Index>(c)) = dataset.features.col(static_cast<Eigen::Index>(remaining[c]));
    RandomForest forest(dataset.task, dataset.n_classes(), spec.forest, mix_seed(spec.seed, 0xFE));
    forest.fit(x, dataset.labels);
    const Eigen::VectorXd importance = forest.feature_importances();
    std::vector<std::size_t> order(remaining.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Weakest first; ties drop the higher feature index.
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double ia = importance[static_cast<Eigen::Index>(a)];
      const double ib = importance[static_cast<Eigen::Index>(b)];
      if (ia != ib) return ia < ib;
      return remaining[a] > remaining[b];
    });
    const std::size_t drop = std::min(static_cast<std::size_t>(spec.rfe_step), remaining.size() - k);
    std::set<std::size_t> dropped(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(drop));
    std::vector<std::size_t> next;
    for (std::size_t c = 0; c < remaining.size(); ++c)
      if (!dropped.count(c)) next.push_back(remaining[c]);
    remaining = std::move(next);
  }
  return remaining;
}

BaselineResult run_baseline(const BaselineSpec& spec, const TabularDataset& dataset, const DataSplit& split,
                            const RedundancyMatrix& redundancy) {
  spec.validate(dataset.n_features());
  const TabularDataset part_a = take_rows(dataset, split.train_indices);
  BaselineResult result;
  result.method = spec.method;
  switch (spec.method) {
    case BaselineMethod::kKBest:
      result.subset = k_best(label_relevance(part_a), spec.k);
      break;
    case BaselineMethod::kMrmr:
      result.subset = mrmr(label_relevance(part_a), redundancy, spec.k);
      break;
    case BaselineMethod::kLasso: {
      const LassoSelection selection = lasso_select(part_a, spec);
      result.subset = selection.features;
      result.fell_back = selection.fell_back;
      if (selection.fell_back) result.note = "lasso kept no feature; fell back to the largest coefficient";
      break;
    }
    case BaselineMethod::kRfe:
      result.subset = rfe(part_a, spec);
      break;
  }
  std::sort(result.subset.begin(), result.subset.end());
  result.score = evaluate_subset(dataset, split, FeatureSubset(result.subset), spec.seed, spec.forest);
  return result;
}

}  // namespace fsns
