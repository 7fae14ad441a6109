#include "fsns/collector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "fsns/error.hpp"

namespace fsns {

using nn::Graph;
using nn::Matrix;
using nn::Var;

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

Eigen::VectorXd summary_statistics(const Eigen::VectorXd& values) {
  if (values.size() == 0) throw Error(ErrorKind::kEmptyInput, "summary of an empty vector");
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  const double mean = values.mean();
  const double var = (values.array() - mean).square().mean();
  Eigen::VectorXd out(kStatsPerVector);
  out << mean, std::sqrt(var), sorted.front(), sorted.back(), quantile_sorted(sorted, 0.25),
      quantile_sorted(sorted, 0.5), quantile_sorted(sorted, 0.75);
  return out;
}

Eigen::VectorXd encode_state(const TabularDataset& dataset, const FeatureSubset& subset) {
  Eigen::VectorXd state = Eigen::VectorXd::Zero(kStateSize);
  if (subset.empty()) return state;
  subset.validate(dataset.n_features());
  const auto k = static_cast<Eigen::Index>(subset.size());
  Eigen::MatrixXd column_stats(kStatsPerVector, k);
  for (Eigen::Index c = 0; c < k; ++c)
    column_stats.col(c) = summary_statistics(dataset.column(subset.indices()[static_cast<std::size_t>(c)]));
  for (int s = 0; s < kStatsPerVector; ++s)
    state.segment(s * kStatsPerVector, kStatsPerVector) = summary_statistics(column_stats.row(s).transpose());
  return state;
}

Eigen::VectorXd laplacian_scores(const TabularDataset& dataset, int k_neighbors, double kernel_bandwidth) {
  const auto n = static_cast<Eigen::Index>(dataset.n_samples());
  const auto p = static_cast<Eigen::Index>(dataset.n_features());
  if (k_neighbors < 1 || k_neighbors >= n)
    throw Error(ErrorKind::kInvalidArgument, "k_neighbors must be in [1, n_samples)");
  const RowMatrix& x = dataset.features;

  // Squared pairwise distances.
  const Eigen::VectorXd norms = x.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = (-2.0 * (x * x.transpose())).eval();
  d2.colwise() += norms;
  d2.rowwise() += norms.transpose();
  d2 = d2.cwiseMax(0.0);
  d2.diagonal().setZero();

  double bandwidth = kernel_bandwidth;
  if (bandwidth <= 0.0) {
    bandwidth = d2.sum() / static_cast<double>(n * (n - 1));
    if (bandwidth <= 0.0) bandwidth = 1.0;
  }

  // Symmetric kNN adjacency: i ~ j when either is among the other's k nearest.
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::erase(order, i);
    std::partial_sort(order.begin(), order.begin() + k_neighbors, order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        return d2(i, a) < d2(i, b) || (d2(i, a) == d2(i, b) && a < b);
                      });
    for (int m = 0; m < k_neighbors; ++m) {
      const Eigen::Index j = order[static_cast<std::size_t>(m)];
      const double w = std::exp(-d2(i, j) / bandwidth);
      s(i, j) = w;
      s(j, i) = w;
    }
    order.resize(static_cast<std::size_t>(n));
  }

  Eigen::VectorXd scores(p);
  for (Eigen::Index r = 0; r < p; ++r) {
    const Eigen::VectorXd f = x.col(r);
    const double mean = f.mean();
    const double var = (f.array() - mean).square().mean();
    if (f.maxCoeff() == f.minCoeff() || var <= 0.0) {
      scores[r] = std::numeric_limits<double>::infinity();
      continue;
    }
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (s(i, j) != 0.0) {
          const double diff = f[i] - f[j];
          total += diff * diff * s(i, j);
        }
    scores[r] = total / var;
  }
  return scores;
}

Eigen::VectorXd inverted_normalized_scores(const Eigen::VectorXd& scores) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double s : scores)
    if (std::isfinite(s)) {
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
  Eigen::VectorXd out(scores.size());
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]))
      out[i] = 0.0;
    else if (hi > lo)
      out[i] = 1.0 - (scores[i] - lo) / (hi - lo);
    else
      out[i] = 1.0;
  }
  return out;
}

double mean_utility(const Eigen::VectorXd& utilities, const FeatureSubset& subset) {
  subset.validate(static_cast<std::size_t>(utilities.size()));
  double total = 0.0;
  for (auto i : subset.indices()) total += utilities[static_cast<Eigen::Index>(i)];
  return total / static_cast<double>(subset.size());
}

double unsupervised_utility(const Eigen::VectorXd& scores, const FeatureSubset& subset) {
  return mean_utility(inverted_normalized_scores(scores), subset);
}

double bellman_target(double reward, double next_state_max_q, double discount) {
  return reward + discount * next_state_max_q;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error(ErrorKind::kInvalidArgument, "replay capacity must be positive");
}

void ReplayBuffer::push(Transition transition) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(transition));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  std::vector<const Transition*> out;
  if (items_.empty()) return out;
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(&items_[pick(rng)]);
  return out;
}

Var DqnAgent::Net::forward(Graph& g, const Var& x) {
  return l3(g, nn::relu(l2(g, nn::relu(l1(g, x)))));
}

std::vector<nn::Parameter*> DqnAgent::Net::parameters() {
  return {&l1.weight, &l1.bias, &l2.weight, &l2.bias, &l3.weight, &l3.bias};
}

DqnAgent::DqnAgent(int state_size, const DqnConfig& config, std::uint64_t seed)
    : config_(config), replay_(config.replay_capacity) {
  if (config.hidden < 1 || config.batch_size < 1 || config.target_sync_interval < 1)
    throw Error(ErrorKind::kInvalidConfig, "dqn sizes must be positive");
  if (config.discount < 0.0 || config.discount >= 1.0)
    throw Error(ErrorKind::kInvalidConfig, "dqn discount must lie in [0, 1)");
  Rng rng = make_rng(seed, 0xD0);
  online_.l1 = nn::Linear("q.l1", state_size, config.hidden, rng);
  online_.l2 = nn::Linear("q.l2", config.hidden, config.hidden, rng);
  online_.l3 = nn::Linear("q.l3", config.hidden, 2, rng);
  target_ = online_;
  optimizer_ = std::make_unique<nn::Adam>(online_.parameters(), config.learning_rate);
}

Eigen::Vector2d DqnAgent::evaluate(Net& net, const Eigen::VectorXd& state) {
  Graph g(false);
  const Var q = net.forward(g, g.constant(state.transpose()));
  return q.value().row(0).transpose();
}

Eigen::Vector2d DqnAgent::q_values(const Eigen::VectorXd& state) { return evaluate(online_, state); }

Eigen::Vector2d DqnAgent::target_q_values(const Eigen::VectorXd& state) { return evaluate(target_, state); }

int DqnAgent::act(const Eigen::VectorXd& state, double epsilon, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < epsilon) return std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
  const Eigen::Vector2d q = q_values(state);
  return q[1] >= q[0] ? 1 : 0;
}

double DqnAgent::update(const std::vector<const Transition*>& batch, const std::vector<double>& targets) {
  if (batch.empty()) return 0.0;
  if (batch.size() != targets.size()) throw Error(ErrorKind::kLengthMismatch, "batch and targets differ");
  const auto b = static_cast<Eigen::Index>(batch.size());
  const auto dim = batch.front()->state.size();
  Matrix states(b, dim);
  Matrix chosen = Matrix::Zero(b, 2);
  Matrix y(b, 1);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Transition& t = *batch[static_cast<std::size_t>(i)];
    states.row(i) = t.state.transpose();
    chosen(i, t.action) = 1.0;
    y(i, 0) = targets[static_cast<std::size_t>(i)];
  }
  Graph g;
  const Var q = online_.forward(g, g.constant(states));
  const Var q_taken = nn::row_sum(nn::mul(q, g.constant(chosen)));
  const Var loss = nn::mse(q_taken, y);
  optimizer_->zero_grad();
  g.backward(loss);
  optimizer_->step();
  if (++updates_ % config_.target_sync_interval == 0) sync_target();
  return loss.scalar();
}

double DqnAgent::replay_update(Rng& rng) {
  const auto batch = replay_.sample(static_cast<std::size_t>(config_.batch_size), rng);
  if (batch.empty()) return 0.0;
  const auto b = static_cast<Eigen::Index>(batch.size());
  Matrix next(b, batch.front()->next_state.size());
  for (Eigen::Index i = 0; i < b; ++i) next.row(i) = batch[static_cast<std::size_t>(i)]->next_state.transpose();
  Graph g(false);
  const Matrix next_q = target_.forward(g, g.constant(next)).value();
  std::vector<double> targets(batch.size());
  for (Eigen::Index i = 0; i < b; ++i)
    targets[static_cast<std::size_t>(i)] =
        bellman_target(batch[static_cast<std::size_t>(i)]->reward, next_q.row(i).maxCoeff(), config_.discount);
  return update(batch, targets);
}

void DqnAgent::sync_target() {
  auto src = online_.parameters();
  auto dst = target_.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
}

void CollectorConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kInvalidConfig, "collector config: " + m); };
  if (episodes < 1) fail("episodes must be at least 1");
  if (steps_per_episode < 1) fail("steps_per_episode must be at least 1");
  if (epsilon_start < 0 || epsilon_start > 1 || epsilon_end < 0 || epsilon_end > 1)
    fail("epsilon values must lie in [0, 1]");
  if (epsilon_decay_fraction <= 0 || epsilon_decay_fraction > 1) fail("epsilon_decay_fraction must lie in (0, 1]");
  if (validation_fraction <= 0 || validation_fraction >= 1) fail("validation_fraction must lie in (0, 1)");
  if (laplacian_neighbors < 1) fail("laplacian_neighbors must be at least 1");
}

double exploration_rate(const CollectorConfig& config, int episode) {
  const double horizon = config.epsilon_decay_fraction * static_cast<double>(config.episodes);
  const double progress = horizon > 0.0 ? std::min(1.0, static_cast<double>(episode) / horizon) : 1.0;
  return config.epsilon_start + (config.epsilon_end - config.epsilon_start) * progress;
}

std::vector<double> split_reward(const std::vector<int>& actions, double utility) {
  std::vector<double> rewards(actions.size(), 0.0);
  std::vector<std::size_t> selecting;
  for (std::size_t i = 0; i < actions.size(); ++i)
    if (actions[i] == 1) selecting.push_back(i);
  if (selecting.empty()) return rewards;
  const double share = utility / static_cast<double>(selecting.size());
  double partial = 0.0;
  for (std::size_t s = 0; s + 1 < selecting.size(); ++s) {
    rewards[selecting[s]] = share;
    partial += share;
  }
  rewards[selecting.back()] = utility - partial;
  return rewards;
}

TabularDataset standardize(const TabularDataset& dataset) {
  TabularDataset out = dataset;
  for (Eigen::Index j = 0; j < out.features.cols(); ++j) {
    auto col = out.features.col(j);
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().mean());
    if (sd > 0.0)
      col = (col.array() - mean) / sd;
    else
      col.setZero();
  }
  return out;
}

CollectionLog run_collection(const TabularDataset& dataset, const DataSplit& split,
                             const RedundancyMatrix& redundancy, const CollectorConfig& config,
                             const StepObserver& observer) {
  config.validate();
  const std::size_t p = dataset.n_features();
  if (p < 2) throw Error(ErrorKind::kInvalidArgument, "collection needs at least two features");
  if (redundancy.n_features() != p)
    throw Error(ErrorKind::kLengthMismatch, "redundancy matrix does not match the dataset");

  const TabularDataset part_a = take_rows(dataset, split.train_indices);
  const TabularDataset state_view = standardize(part_a);

  const double full_raw = subset_redundancy(redundancy, FeatureSubset::full(p));
  if (!(full_raw > 0.0))
    throw Error(ErrorKind::kRedundancyUnavailable, "full-set redundancy is zero; redundancy targets unavailable");

  DataSplit inner;
  Eigen::VectorXd laplacian_utility;
  if (config.channel == Channel::kSupervised)
    inner = split_ab(part_a, config.validation_fraction, mix_seed(config.seed, 0x1A));
  else
    laplacian_utility = inverted_normalized_scores(laplacian_scores(state_view, config.laplacian_neighbors));

  std::map<std::vector<std::size_t>, double> utility_cache;
  auto score = [&](const FeatureSubset& subset) {
    const auto key = subset.sorted();
    if (auto it = utility_cache.find(key); it != utility_cache.end()) return it->second;
    const double value = config.channel == Channel::kSupervised
                             ? evaluate_subset(part_a, inner, subset, mix_seed(config.seed, 0x5C0), config.forest)
                             : mean_utility(laplacian_utility, subset);
    utility_cache.emplace(key, value);
    return value;
  };

  std::vector<std::unique_ptr<DqnAgent>> agents;
  agents.reserve(p);
  for (std::size_t i = 0; i < p; ++i)
    agents.push_back(std::make_unique<DqnAgent>(kStateSize, config.dqn, mix_seed(config.seed, 0x100 + i)));

  Rng action_rng = make_rng(config.seed, 1);
  Rng forced_rng = make_rng(config.seed, 2);
  Rng replay_rng = make_rng(config.seed, 3);

  CollectionLog log;
  log.channel = config.channel;
  log.redundancy_metric = redundancy.metric;
  log.n_features = p;
  log.episodes = config.episodes;

  std::vector<int> actions(p);
  for (int episode = 0; episode < config.episodes; ++episode) {
    const double epsilon = exploration_rate(config, episode);
    Eigen::VectorXd state = Eigen::VectorXd::Zero(kStateSize);
    for (int step = 0; step < config.steps_per_episode; ++step) {
      std::vector<std::size_t> selected;
      for (std::size_t i = 0; i < p; ++i) {
        actions[i] = agents[i]->act(state, epsilon, action_rng);
        if (actions[i] == 1) selected.push_back(i);
      }
      StepTrace trace;
      trace.episode = episode;
      trace.step = step;
      if (selected.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, p - 1);
        selected.push_back(pick(forced_rng));
        trace.forced = true;
      }
      FeatureSubset subset(selected);
      const double utility = score(subset);
      const std::vector<double> rewards = split_reward(actions, utility);
      const Eigen::VectorXd next_state = encode_state(state_view, subset);

      for (std::size_t i = 0; i < p; ++i) {
        agents[i]->remember({state, actions[i], rewards[i], next_state});
        agents[i]->replay_update(replay_rng);
      }

      LoggedSubset record;
      record.features = subset.sorted();
      record.v = utility;
      record.u = normalize_redundancy(subset_redundancy(redundancy, subset), full_raw);
      record.episode = episode;
      record.step = step;
      log.records.push_back(std::move(record));

      if (observer) {
        trace.actions = actions;
        trace.rewards = rewards;
        trace.subset = subset;
        trace.utility = utility;
        observer(trace);
      }
      state = next_state;
    }
  }
  return log;
}

}  // namespace fsns
