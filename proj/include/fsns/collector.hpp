#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "fsns/autograd.hpp"
#include "fsns/collection_log.hpp"
#include "fsns/random.hpp"
#include "fsns/redundancy.hpp"
#include "fsns/tabular.hpp"

namespace fsns {

/// Number of aggregate statistics per column and per statistic vector.
inline constexpr int kStatsPerVector = 7;
/// Length of the environment-state descriptor (7 x 7).
inline constexpr int kStateSize = kStatsPerVector * kStatsPerVector;

/// mean, std (population), min, max, first quartile, median, third quartile.
/// Quartiles use linear interpolation between order statistics.
Eigen::VectorXd summary_statistics(const Eigen::VectorXd& values);

/// Stats-of-stats descriptor: the seven column statistics of every selected
/// column form seven vectors, each summarised again by the same seven
/// statistics. Layout: [column statistic][aggregate]. Empty subset -> zeros.
Eigen::VectorXd encode_state(const TabularDataset& dataset, const FeatureSubset& subset);

/// Laplacian score per feature over a symmetric k-nearest-neighbour graph with
/// heat-kernel weights exp(-d^2 / bandwidth). bandwidth <= 0 selects the mean
/// squared pairwise distance. Constant features score +infinity.
Eigen::VectorXd laplacian_scores(const TabularDataset& dataset, int k_neighbors,
                                 double kernel_bandwidth = 0.0);

/// Min-max normalises the scores over finite entries and inverts them
/// (V = 1 - V), so the best-scoring feature maps to 1. Infinite scores map to 0.
Eigen::VectorXd inverted_normalized_scores(const Eigen::VectorXd& scores);

/// Mean of per-feature utilities over the subset.
double mean_utility(const Eigen::VectorXd& utilities, const FeatureSubset& subset);

/// mean_utility(inverted_normalized_scores(scores), subset).
double unsupervised_utility(const Eigen::VectorXd& scores, const FeatureSubset& subset);

/// reward + discount * next_state_max_q.
double bellman_target(double reward, double next_state_max_q, double discount);

struct Transition {
  Eigen::VectorXd state;
  int action = 0;  // 0 = deselect, 1 = select
  double reward = 0.0;
  Eigen::VectorXd next_state;
};

/// Bounded FIFO of transitions.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition transition);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  /// Uniform sample with replacement.
  std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

struct DqnConfig {
  int hidden = 64;  // two hidden layers of this width
  std::size_t replay_capacity = 5000;
  int batch_size = 32;
  int target_sync_interval = 50;
  double discount = 0.9;
  double learning_rate = 1e-3;
};

/// Per-feature agent: Q(state) -> [Q(deselect), Q(select)].
class DqnAgent {
 public:
  DqnAgent(int state_size, const DqnConfig& config, std::uint64_t seed);
  // The optimizer holds pointers into the networks.
  DqnAgent(const DqnAgent&) = delete;
  DqnAgent& operator=(const DqnAgent&) = delete;

  Eigen::Vector2d q_values(const Eigen::VectorXd& state);
  Eigen::Vector2d target_q_values(const Eigen::VectorXd& state);
  /// Epsilon-greedy; ties go to select.
  int act(const Eigen::VectorXd& state, double epsilon, Rng& rng);

  void remember(Transition transition) { replay_.push(std::move(transition)); }
  const ReplayBuffer& replay() const { return replay_; }

  /// One gradient step on a sampled mini-batch toward the Bellman targets of
  /// the target network. Returns the pre-update mean squared TD error, or 0
  /// when the buffer is empty.
  double replay_update(Rng& rng);
  /// One gradient step on an explicit batch with explicit targets.
  double update(const std::vector<const Transition*>& batch, const std::vector<double>& targets);

  void sync_target();
  int updates() const { return updates_; }

 private:
  struct Net {
    nn::Linear l1, l2, l3;
    nn::Var forward(nn::Graph& g, const nn::Var& x);
    std::vector<nn::Parameter*> parameters();
  };
  Eigen::Vector2d evaluate(Net& net, const Eigen::VectorXd& state);

  DqnConfig config_;
  Net online_;
  Net target_;
  std::unique_ptr<nn::Adam> optimizer_;
  ReplayBuffer replay_;
  int updates_ = 0;
};

struct CollectorConfig {
  int episodes = 300;
  int steps_per_episode = 1;
  Channel channel = Channel::kSupervised;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double epsilon_decay_fraction = 0.6;
  DqnConfig dqn;
  /// Validation share of the internal split of partition A (supervised channel).
  double validation_fraction = 0.2;
  int laplacian_neighbors = 5;
  ForestOptions forest;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Linear annealing from epsilon_start to epsilon_end over the first
/// epsilon_decay_fraction of the episodes, constant afterwards.
double exploration_rate(const CollectorConfig& config, int episode);

/// Everything observable about one collector step.
struct StepTrace {
  int episode = 0;
  int step = 0;
  std::vector<int> actions;  // per agent
  std::vector<double> rewards;  // per agent
  FeatureSubset subset;
  bool forced = false;  // empty selection replaced by one random feature
  double utility = 0.0;
};

using StepObserver = std::function<void(const StepTrace&)>;

/// Multi-agent exploration over partition A only. Supervised utility is the
/// downstream score on an internal train/validation split of A; unsupervised
/// utility is the mean inverted Laplacian score. One record per step.
CollectionLog run_collection(const TabularDataset& dataset, const DataSplit& split,
                             const RedundancyMatrix& redundancy, const CollectorConfig& config,
                             const StepObserver& observer = {});

/// Splits `utility` equally over the agents whose action is select. The last
/// selecting agent absorbs rounding so the rewards sum to `utility` exactly
/// when accumulated in agent order.
std::vector<double> split_reward(const std::vector<int>& actions, double utility);

/// Column-wise z-scores using the dataset's own means and deviations (constant
/// columns become zero).
TabularDataset standardize(const TabularDataset& dataset);

}  // namespace fsns
