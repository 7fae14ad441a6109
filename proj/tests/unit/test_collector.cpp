#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "fsns/collector.hpp"
#include "test_support.hpp"

using namespace fsns;

namespace {

// Independent Laplacian-score oracle: plain loops over a symmetric kNN graph.
Eigen::VectorXd laplacian_oracle(const TabularDataset& d, int k) {
  const auto n = static_cast<Eigen::Index>(d.n_samples());
  const auto p = static_cast<Eigen::Index>(d.n_features());
  Eigen::MatrixXd d2(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < p; ++c) s += std::pow(d.features(i, c) - d.features(j, c), 2);
      d2(i, j) = s;
      total += s;
    }
  const double bandwidth = total / static_cast<double>(n * (n - 1));
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<std::pair<double, Eigen::Index>> others;
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i) others.emplace_back(d2(i, j), j);
    std::sort(others.begin(), others.end());
    for (int m = 0; m < k; ++m) {
      const Eigen::Index j = others[static_cast<std::size_t>(m)].second;
      w(i, j) = w(j, i) = std::exp(-d2(i, j) / bandwidth);
    }
  }
  Eigen::VectorXd out(p);
  for (Eigen::Index r = 0; r < p; ++r) {
    const Eigen::VectorXd f = d.features.col(r);
    const double var = (f.array() - f.mean()).square().mean();
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) s += std::pow(f[i] - f[j], 2) * w(i, j);
    out[r] = var > 0 ? s / var : std::numeric_limits<double>::infinity();
  }
  return out;
}

CollectorConfig small_config(Channel channel) {
  CollectorConfig c;
  c.episodes = 6;
  c.steps_per_episode = 2;
  c.channel = channel;
  c.dqn.hidden = 8;
  c.dqn.batch_size = 4;
  c.forest.n_trees = 5;
  c.seed = 3;
  return c;
}

TabularDataset collector_dataset() {
  auto d = fsns::testing::gaussian_dataset(60, 5, 21);
  for (Eigen::Index i = 0; i < 60; ++i) d.labels[i] = d.features(i, 0) - d.features(i, 1);
  return d;
}

}  // namespace

TEST(SummaryStatistics, HandComputedValues) {
  Eigen::VectorXd v(5);
  v << 4, 1, 3, 2, 10;
  const auto s = summary_statistics(v);
  // sorted 1 2 3 4 10; mean 4; population variance (9+4+1+0+36)/5 = 10.
  EXPECT_DOUBLE_EQ(s[0], 4.0);
  EXPECT_DOUBLE_EQ(s[1], std::sqrt(10.0));
  EXPECT_DOUBLE_EQ(s[2], 1.0);
  EXPECT_DOUBLE_EQ(s[3], 10.0);
  EXPECT_DOUBLE_EQ(s[4], 2.0);
  EXPECT_DOUBLE_EQ(s[5], 3.0);
  EXPECT_DOUBLE_EQ(s[6], 4.0);
  Eigen::VectorXd w(4);
  w << 1, 2, 3, 4;  // quartile positions 0.75, 1.5, 2.25 interpolate linearly
  const auto t = summary_statistics(w);
  EXPECT_DOUBLE_EQ(t[4], 1.75);
  EXPECT_DOUBLE_EQ(t[5], 2.5);
  EXPECT_DOUBLE_EQ(t[6], 3.25);
  EXPECT_FSNS_ERROR(summary_statistics(Eigen::VectorXd()), kEmptyInput);
}

TEST(EncodeState, EmptySubsetIsZero) {
  const auto d = collector_dataset();
  const auto s = encode_state(d, FeatureSubset());
  EXPECT_EQ(s.size(), kStateSize);
  EXPECT_EQ(s.cwiseAbs().maxCoeff(), 0.0);
}

TEST(EncodeState, SingleColumnCollapsesToItsOwnStatistics) {
  const auto d = collector_dataset();
  const auto own = summary_statistics(d.column(2));
  const auto s = encode_state(d, FeatureSubset({2}));
  for (int stat = 0; stat < kStatsPerVector; ++stat) {
    // Every aggregate of a one-element vector equals the element, except std = 0.
    for (int agg = 0; agg < kStatsPerVector; ++agg)
      EXPECT_DOUBLE_EQ(s[stat * kStatsPerVector + agg], agg == 1 ? 0.0 : own[stat]);
  }
}

TEST(EncodeState, IdenticalConstantColumnsHaveZeroSpread) {
  TabularDataset d = fsns::testing::gaussian_dataset(10, 3, 1);
  d.features.setConstant(2.5);
  const auto s = encode_state(d, FeatureSubset::full(3));
  for (int stat = 0; stat < kStatsPerVector; ++stat) EXPECT_EQ(s[stat * kStatsPerVector + 1], 0.0);
}

TEST(EncodeState, FixedLengthAndOrderFree) {
  const auto d = collector_dataset();
  // Column order only changes floating-point summation order.
  EXPECT_TRUE(encode_state(d, FeatureSubset({0, 3, 4})).isApprox(encode_state(d, FeatureSubset({4, 0, 3})), 1e-12));
  EXPECT_EQ(encode_state(d, FeatureSubset::full(5)).size(), kStateSize);
}

TEST(LaplacianScores, MatchBruteForceOracle) {
  const auto d = fsns::testing::gaussian_dataset(30, 4, 9);
  const auto got = laplacian_scores(d, 5);
  const auto want = laplacian_oracle(d, 5);
  for (Eigen::Index r = 0; r < 4; ++r) EXPECT_NEAR(got[r], want[r], 1e-9 * want[r]);
}

TEST(LaplacianScores, StructureBeatsNoiseAndDuplicatesTie) {
  // Two clusters along feature 0; feature 1 is noise; feature 2 copies feature 0.
  auto d = fsns::testing::gaussian_dataset(60, 3, 4);
  for (Eigen::Index i = 0; i < 60; ++i) {
    d.features(i, 0) = (i % 2 ? 5.0 : -5.0) + 0.3 * d.features(i, 0);
    d.features(i, 2) = d.features(i, 0);
  }
  const auto s = laplacian_scores(d, 5);
  EXPECT_LT(s[0], s[1]);
  EXPECT_EQ(s[0], s[2]);
}

TEST(LaplacianScores, ConstantFeatureIsWorstAndErrors) {
  auto d = fsns::testing::gaussian_dataset(20, 3, 5);
  d.features.col(1).setConstant(1.0);
  const auto s = laplacian_scores(d, 3);
  EXPECT_TRUE(std::isinf(s[1]));
  EXPECT_EQ(inverted_normalized_scores(s)[1], 0.0);
  EXPECT_FSNS_ERROR(laplacian_scores(d, 20), kInvalidArgument);
}

TEST(UnsupervisedUtility, Examples) {
  Eigen::VectorXd utilities(3);
  utilities << 0.9, 0.5, 0.1;
  EXPECT_DOUBLE_EQ(mean_utility(utilities, FeatureSubset({0, 1})), 0.7);
  Eigen::VectorXd raw(4);
  raw << 3.0, 1.0, 5.0, 2.0;  // best (lowest) is feature 1
  EXPECT_DOUBLE_EQ(unsupervised_utility(raw, FeatureSubset({1})), 1.0);
  EXPECT_DOUBLE_EQ(unsupervised_utility(raw, FeatureSubset({2})), 0.0);
  // Inverted min-max: 0.5, 1, 0, 0.75.
  EXPECT_DOUBLE_EQ(unsupervised_utility(raw, FeatureSubset::full(4)), (0.5 + 1.0 + 0.0 + 0.75) / 4.0);
}

TEST(BellmanTarget, Examples) {
  EXPECT_DOUBLE_EQ(bellman_target(1.0, 0.5, 0.9), 1.45);
  EXPECT_EQ(bellman_target(0.7, 3.0, 0.0), 0.7);
  EXPECT_EQ(bellman_target(0.0, 0.0, 0.9), 0.0);
}

TEST(ReplayBuffer, FifoEvictionAtCapacity) {
  ReplayBuffer buffer(3);
  for (int i = 0; i < 5; ++i) buffer.push({Eigen::VectorXd::Zero(1), 0, static_cast<double>(i), Eigen::VectorXd::Zero(1)});
  ASSERT_EQ(buffer.size(), 3u);
  EXPECT_EQ(buffer[0].reward, 2.0);
  EXPECT_EQ(buffer[2].reward, 4.0);
  Rng rng(1);
  const auto sample = buffer.sample(10, rng);
  EXPECT_EQ(sample.size(), 10u);
  for (const auto* t : sample) EXPECT_GE(t->reward, 2.0);
  EXPECT_FSNS_ERROR(ReplayBuffer(0), kInvalidArgument);
}

TEST(SplitReward, ConservesUtilityExactly) {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> actions(13);
    for (auto& a : actions) a = u(rng) < 0.4;
    const double utility = u(rng);
    const auto rewards = split_reward(actions, utility);
    double sum = 0.0;
    for (double r : rewards) sum += r;
    const bool any = std::find(actions.begin(), actions.end(), 1) != actions.end();
    ASSERT_EQ(sum, any ? utility : 0.0);
    for (std::size_t i = 0; i < actions.size(); ++i)
      if (!actions[i]) ASSERT_EQ(rewards[i], 0.0);
  }
}

TEST(ExplorationRate, LinearAnnealThenConstant) {
  CollectorConfig c;
  c.episodes = 100;
  EXPECT_DOUBLE_EQ(exploration_rate(c, 0), 1.0);
  EXPECT_DOUBLE_EQ(exploration_rate(c, 30), 0.55);
  EXPECT_DOUBLE_EQ(exploration_rate(c, 60), 0.1);
  EXPECT_DOUBLE_EQ(exploration_rate(c, 99), 0.1);
}

TEST(DqnAgent, SingleSampleUpdateMovesTowardTarget) {
  DqnConfig config;
  config.hidden = 8;
  config.learning_rate = 1e-3;
  for (int action : {0, 1}) {
    DqnAgent agent(4, config, 7);
    Transition t{Eigen::VectorXd::LinSpaced(4, -1.0, 1.0), action, 1.0, Eigen::VectorXd::Zero(4)};
    const double target = 2.0;
    const double before = std::abs(agent.q_values(t.state)[action] - target);
    agent.update({&t}, {target});
    const double after = std::abs(agent.q_values(t.state)[action] - target);
    EXPECT_LT(after, before);
  }
}

TEST(DqnAgent, TargetNetworkSyncs) {
  DqnConfig config;
  config.hidden = 8;
  config.target_sync_interval = 2;
  DqnAgent agent(3, config, 1);
  const Eigen::VectorXd s = Eigen::VectorXd::Ones(3);
  Transition t{s, 1, 1.0, s};
  EXPECT_EQ(agent.q_values(s), agent.target_q_values(s));
  agent.update({&t}, {5.0});
  EXPECT_NE(agent.q_values(s), agent.target_q_values(s));
  agent.update({&t}, {5.0});
  EXPECT_EQ(agent.q_values(s), agent.target_q_values(s));
  EXPECT_EQ(agent.updates(), 2);
}

TEST(RunCollection, RecordsAreWellFormedAndRewardsConserved) {
  const auto d = collector_dataset();
  const auto split = split_ab(d, 0.2, 1);
  const auto redundancy = build_matrix(take_rows(d, split.train_indices), RedundancyMetric::kPearson);
  int steps = 0;
  const auto log = run_collection(d, split, redundancy, small_config(Channel::kSupervised), [&](const StepTrace& t) {
    ++steps;
    double sum = 0.0;
    for (double r : t.rewards) sum += r;
    EXPECT_EQ(sum, t.forced ? 0.0 : t.utility);
  });
  EXPECT_EQ(steps, 12);
  ASSERT_EQ(log.records.size(), 12u);
  EXPECT_EQ(log.episodes, 6);
  const double full = subset_redundancy(redundancy, FeatureSubset::full(5));
  for (const auto& r : log.records) {
    EXPECT_FALSE(r.features.empty());
    EXPECT_TRUE(std::is_sorted(r.features.begin(), r.features.end()));
    EXPECT_NO_THROW(FeatureSubset(r.features).validate(5));
    EXPECT_DOUBLE_EQ(r.u, normalize_redundancy(subset_redundancy(redundancy, FeatureSubset(r.features)), full));
  }
}

TEST(RunCollection, DeterministicForFixedSeed) {
  const auto d = collector_dataset();
  const auto split = split_ab(d, 0.2, 1);
  const auto redundancy = build_matrix(take_rows(d, split.train_indices), RedundancyMetric::kPearson);
  const auto config = small_config(Channel::kSupervised);
  const auto a = run_collection(d, split, redundancy, config);
  const auto b = run_collection(d, split, redundancy, config);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].features, b.records[i].features);
    EXPECT_EQ(a.records[i].v, b.records[i].v);
  }
}

TEST(RunCollection, PureExplorationVisitsSameSubsetsInBothChannels) {
  const auto d = collector_dataset();
  const auto split = split_ab(d, 0.2, 1);
  const auto redundancy = build_matrix(take_rows(d, split.train_indices), RedundancyMetric::kPearson);
  auto sup = small_config(Channel::kSupervised);
  auto unsup = small_config(Channel::kUnsupervised);
  sup.epsilon_start = sup.epsilon_end = 1.0;
  unsup.epsilon_start = unsup.epsilon_end = 1.0;
  const auto a = run_collection(d, split, redundancy, sup);
  const auto b = run_collection(d, split, redundancy, unsup);
  ASSERT_EQ(a.records.size(), b.records.size());
  bool any_v_differs = false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].features, b.records[i].features);
    any_v_differs |= a.records[i].v != b.records[i].v;
  }
  EXPECT_TRUE(any_v_differs);
  EXPECT_EQ(b.channel, Channel::kUnsupervised);
}

TEST(RunCollection, Errors) {
  const auto d = collector_dataset();
  const auto split = split_ab(d, 0.2, 1);
  RedundancyMatrix wrong;
  wrong.values = RowMatrix::Identity(3, 3);
  EXPECT_FSNS_ERROR(run_collection(d, split, wrong, small_config(Channel::kSupervised)), kLengthMismatch);
  RedundancyMatrix zero;
  zero.values = RowMatrix::Zero(5, 5);
  EXPECT_FSNS_ERROR(run_collection(d, split, zero, small_config(Channel::kSupervised)), kRedundancyUnavailable);
  auto bad = small_config(Channel::kSupervised);
  bad.episodes = 0;
  EXPECT_FSNS_ERROR(run_collection(d, split, build_matrix(d, RedundancyMetric::kPearson), bad), kInvalidConfig);
}

TEST(Standardize, ZeroMeanUnitVariance) {
  auto d = fsns::testing::gaussian_dataset(40, 3, 8);
  d.features.col(0) = d.features.col(0) * 7.0 + Eigen::VectorXd::Constant(40, 3.0);
  d.features.col(2).setConstant(4.0);
  const auto s = standardize(d);
  EXPECT_NEAR(s.features.col(0).mean(), 0.0, 1e-12);
  EXPECT_NEAR(s.features.col(0).squaredNorm() / 40.0, 1.0, 1e-12);
  EXPECT_EQ(s.features.col(2).cwiseAbs().maxCoeff(), 0.0);
}
