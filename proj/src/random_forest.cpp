#include "fsns/random_forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsns/error.hpp"
#include "fsns/random.hpp"

namespace fsns {

namespace {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;  // impurity decrease times node size
};

}  // namespace

class RandomForest::Builder {
 public:
  Builder(const RandomForest& forest, const std::vector<double>& columns, int n_rows,
          const Eigen::VectorXd& y, Rng rng, Tree& tree, std::vector<double>& importance)
      : forest_(forest),
        columns_(columns),
        n_rows_(n_rows),
        y_(y),
        rng_(std::move(rng)),
        tree_(tree),
        importance_(importance) {
    const int p = forest_.n_features_;
    feature_order_.resize(static_cast<std::size_t>(p));
    std::iota(feature_order_.begin(), feature_order_.end(), 0);
    if (forest_.options_.max_features > 0) {
      mtry_ = std::min(p, forest_.options_.max_features);
    } else if (forest_.task_ == Task::kClassification) {
      mtry_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(p))));
    } else {
      mtry_ = std::max(1, p / 3);
    }
    if (forest_.task_ == Task::kClassification) {
      counts_left_.resize(static_cast<std::size_t>(forest_.n_classes_));
      counts_total_.resize(static_cast<std::size_t>(forest_.n_classes_));
    }
  }

  void build_from_bootstrap() {
    samples_.resize(static_cast<std::size_t>(n_rows_));
    std::uniform_int_distribution<int> pick(0, n_rows_ - 1);
    for (auto& s : samples_) s = pick(rng_);
    root_size_ = static_cast<double>(n_rows_);
    build(0, n_rows_, 0);
  }

 private:
  double x(int feature, int row) const {
    return columns_[static_cast<std::size_t>(feature) * static_cast<std::size_t>(n_rows_) +
                    static_cast<std::size_t>(row)];
  }

  // Returns sum-of-squares style "purity" score of the node; larger is purer.
  double node_purity(int begin, int end) {
    const double n = static_cast<double>(end - begin);
    if (forest_.task_ == Task::kRegression) {
      double sum = 0.0;
      for (int i = begin; i < end; ++i) sum += y_[samples_[static_cast<std::size_t>(i)]];
      return sum * sum / n;
    }
    std::fill(counts_total_.begin(), counts_total_.end(), 0.0);
    for (int i = begin; i < end; ++i)
      counts_total_[static_cast<std::size_t>(y_[samples_[static_cast<std::size_t>(i)]])] += 1.0;
    double s = 0.0;
    for (double c : counts_total_) s += c * c;
    return s / n;
  }

  bool is_pure(int begin, int end) const {
    const double first = y_[samples_[static_cast<std::size_t>(begin)]];
    for (int i = begin + 1; i < end; ++i)
      if (y_[samples_[static_cast<std::size_t>(i)]] != first) return false;
    return true;
  }

  SplitChoice best_split(int begin, int end) {
    SplitChoice best;
    const int n = end - begin;
    const int min_leaf = std::max(1, forest_.options_.min_samples_leaf);
    const double parent = node_purity(begin, end);
    std::shuffle(feature_order_.begin(), feature_order_.end(), rng_);
    buffer_.resize(static_cast<std::size_t>(n));

    double total_sum = 0.0;
    if (forest_.task_ == Task::kRegression) {
      for (int i = begin; i < end; ++i) total_sum += y_[samples_[static_cast<std::size_t>(i)]];
    }
    // counts_total_ was filled by node_purity for classification.
    const std::vector<double> class_totals = counts_total_;

    int evaluated = 0;
    for (int feature : feature_order_) {
      if (evaluated >= mtry_) break;
      for (int i = 0; i < n; ++i) {
        const int row = samples_[static_cast<std::size_t>(begin + i)];
        buffer_[static_cast<std::size_t>(i)] = {x(feature, row), row};
      }
      std::sort(buffer_.begin(), buffer_.end());
      if (buffer_.front().first == buffer_.back().first) continue;  // constant in node
      ++evaluated;

      if (forest_.task_ == Task::kRegression) {
        double left_sum = 0.0;
        for (int i = 0; i < n - 1; ++i) {
          left_sum += y_[buffer_[static_cast<std::size_t>(i)].second];
          const int n_left = i + 1;
          const int n_right = n - n_left;
          if (n_left < min_leaf || n_right < min_leaf) continue;
          if (buffer_[static_cast<std::size_t>(i)].first ==
              buffer_[static_cast<std::size_t>(i + 1)].first)
            continue;
          const double right_sum = total_sum - left_sum;
          const double purity = left_sum * left_sum / n_left + right_sum * right_sum / n_right;
          const double gain = purity - parent;
          if (gain > best.gain + 1e-12) {
            best.gain = gain;
            best.feature = feature;
            best.threshold = 0.5 * (buffer_[static_cast<std::size_t>(i)].first +
                                    buffer_[static_cast<std::size_t>(i + 1)].first);
          }
        }
      } else {
        std::fill(counts_left_.begin(), counts_left_.end(), 0.0);
        double left_sq = 0.0;
        double right_sq = 0.0;
        for (double c : class_totals) right_sq += c * c;
        for (int i = 0; i < n - 1; ++i) {
          const auto c = static_cast<std::size_t>(y_[buffer_[static_cast<std::size_t>(i)].second]);
          const double lc = counts_left_[c];
          const double rc = class_totals[c] - lc;
          left_sq += 2.0 * lc + 1.0;     // (lc+1)^2 - lc^2
          right_sq += -2.0 * rc + 1.0;   // (rc-1)^2 - rc^2
          counts_left_[c] = lc + 1.0;
          const int n_left = i + 1;
          const int n_right = n - n_left;
          if (n_left < min_leaf || n_right < min_leaf) continue;
          if (buffer_[static_cast<std::size_t>(i)].first ==
              buffer_[static_cast<std::size_t>(i + 1)].first)
            continue;
          const double purity = left_sq / n_left + right_sq / n_right;
          const double gain = purity - parent;
          if (gain > best.gain + 1e-12) {
            best.gain = gain;
            best.feature = feature;
            best.threshold = 0.5 * (buffer_[static_cast<std::size_t>(i)].first +
                                    buffer_[static_cast<std::size_t>(i + 1)].first);
          }
        }
      }
    }
    return best;
  }

  int make_leaf(int begin, int end) {
    Node node;
    node.leaf_offset = static_cast<int>(tree_.leaf_values.size());
    const double n = static_cast<double>(end - begin);
    if (forest_.task_ == Task::kRegression) {
      double sum = 0.0;
      for (int i = begin; i < end; ++i) sum += y_[samples_[static_cast<std::size_t>(i)]];
      tree_.leaf_values.push_back(sum / n);
    } else {
      const auto offset = tree_.leaf_values.size();
      tree_.leaf_values.resize(offset + static_cast<std::size_t>(forest_.n_classes_), 0.0);
      for (int i = begin; i < end; ++i)
        tree_.leaf_values[offset +
                          static_cast<std::size_t>(y_[samples_[static_cast<std::size_t>(i)]])] +=
            1.0 / n;
    }
    tree_.nodes.push_back(node);
    return static_cast<int>(tree_.nodes.size()) - 1;
  }

  int build(int begin, int end, int depth) {
    const int n = end - begin;
    const int min_leaf = std::max(1, forest_.options_.min_samples_leaf);
    const bool depth_capped = forest_.options_.max_depth > 0 && depth >= forest_.options_.max_depth;
    if (n < 2 * min_leaf || depth_capped || is_pure(begin, end)) return make_leaf(begin, end);

    const SplitChoice split = best_split(begin, end);
    if (split.feature < 0) return make_leaf(begin, end);

    importance_[static_cast<std::size_t>(split.feature)] += split.gain / root_size_;

    auto first = samples_.begin() + begin;
    auto last = samples_.begin() + end;
    auto middle = std::stable_partition(first, last, [&](int row) {
      return x(split.feature, row) <= split.threshold;
    });
    const int mid = begin + static_cast<int>(middle - first);

    const int index = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back(Node{});
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    Node& node = tree_.nodes[static_cast<std::size_t>(index)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = left;
    node.right = right;
    return index;
  }

  const RandomForest& forest_;
  const std::vector<double>& columns_;
  int n_rows_;
  const Eigen::VectorXd& y_;
  Rng rng_;
  Tree& tree_;
  std::vector<double>& importance_;
  int mtry_ = 1;
  double root_size_ = 1.0;
  std::vector<int> samples_;
  std::vector<int> feature_order_;
  std::vector<std::pair<double, int>> buffer_;
  std::vector<double> counts_left_;
  std::vector<double> counts_total_;
};

RandomForest::RandomForest(Task task, int n_classes, ForestOptions options, std::uint64_t seed)
    : task_(task), n_classes_(n_classes), options_(options), seed_(seed) {
  if (options_.n_trees < 1) throw Error(ErrorKind::kInvalidArgument, "forest needs at least one tree");
  if (task_ == Task::kClassification && n_classes_ < 1)
    throw Error(ErrorKind::kInvalidArgument, "classification forest needs class count");
}

void RandomForest::fit(const RowMatrix& x, const Eigen::VectorXd& y) {
  const int n = static_cast<int>(x.rows());
  n_features_ = static_cast<int>(x.cols());
  if (n < 1 || n_features_ < 1) throw Error(ErrorKind::kInvalidArgument, "empty training matrix");
  if (y.size() != n) throw Error(ErrorKind::kLengthMismatch, "label length differs from rows");

  std::vector<double> columns(static_cast<std::size_t>(n) * static_cast<std::size_t>(n_features_));
  for (int j = 0; j < n_features_; ++j)
    for (int i = 0; i < n; ++i)
      columns[static_cast<std::size_t>(j) * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] =
          x(i, j);

  trees_.assign(static_cast<std::size_t>(options_.n_trees), Tree{});
  std::vector<double> importance(static_cast<std::size_t>(n_features_), 0.0);
  for (int t = 0; t < options_.n_trees; ++t) {
    Builder builder(*this, columns, n, y, make_rng(seed_, static_cast<std::uint64_t>(t)),
                    trees_[static_cast<std::size_t>(t)], importance);
    builder.build_from_bootstrap();
  }
  importances_ = Eigen::Map<Eigen::VectorXd>(importance.data(), n_features_);
  const double total = importances_.sum();
  if (total > 0.0) importances_ /= total;
}

const double* RandomForest::leaf_for(const Tree& tree, const double* row) const {
  int index = 0;
  while (true) {
    const Node& node = tree.nodes[static_cast<std::size_t>(index)];
    if (node.feature < 0) return tree.leaf_values.data() + node.leaf_offset;
    index = row[node.feature] <= node.threshold ? node.left : node.right;
  }
}

Eigen::VectorXd RandomForest::predict(const RowMatrix& x) const {
  if (trees_.empty()) throw Error(ErrorKind::kInvalidArgument, "forest is not fitted");
  if (x.cols() != n_features_) throw Error(ErrorKind::kLengthMismatch, "feature count differs from fit");
  Eigen::VectorXd out(x.rows());
  std::vector<double> votes(static_cast<std::size_t>(std::max(n_classes_, 1)));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double* row = x.row(i).data();
    if (task_ == Task::kRegression) {
      double sum = 0.0;
      for (const Tree& tree : trees_) sum += *leaf_for(tree, row);
      out[i] = sum / static_cast<double>(trees_.size());
    } else {
      std::fill(votes.begin(), votes.end(), 0.0);
      for (const Tree& tree : trees_) {
        const double* dist = leaf_for(tree, row);
        for (int c = 0; c < n_classes_; ++c) votes[static_cast<std::size_t>(c)] += dist[c];
      }
      out[i] = static_cast<double>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    }
  }
  return out;
}

}  // namespace fsns
