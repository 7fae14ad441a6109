#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "fsns/redundancy.hpp"
#include "test_support.hpp"

using namespace fsns;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

// Independent histogram oracle: bins keyed by floor((x - min) / width).
double mi_oracle(const Eigen::VectorXd& x, const Eigen::VectorXd& y, int bins) {
  auto bin = [bins](const Eigen::VectorXd& v, Eigen::Index i) {
    const double lo = v.minCoeff(), hi = v.maxCoeff();
    if (hi == lo) return 0;
    return std::min(bins - 1, static_cast<int>((v[i] - lo) / ((hi - lo) / bins)));
  };
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> px, py;
  const double n = static_cast<double>(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    joint[{bin(x, i), bin(y, i)}] += 1.0 / n;
    px[bin(x, i)] += 1.0 / n;
    py[bin(y, i)] += 1.0 / n;
  }
  double total = 0.0;
  for (const auto& [cell, p] : joint) total += p * std::log2(p / (px[cell.first] * py[cell.second]));
  return total;
}

RedundancyMatrix random_matrix(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RedundancyMatrix m;
  m.values = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < m.values.rows(); ++i)
    for (Eigen::Index j = i; j < m.values.cols(); ++j) m.values(i, j) = m.values(j, i) = u(rng);
  return m;
}

}  // namespace

TEST(MutualInformation, SelfInformationOfEightSamples) {
  const auto x = vec({1, 1, 2, 2, 3, 3, 4, 4});
  const double got = mutual_information(x, x, 4);
  EXPECT_NEAR(got, mi_oracle(x, x, 4), 1e-12);
  EXPECT_NEAR(got, 2.0, 1e-12);  // four equiprobable bins: H(X) = 2 bits
}

TEST(MutualInformation, BinaryIdentityIsOneBit) {
  Rng rng(1);
  std::bernoulli_distribution coin(0.5);
  Eigen::VectorXd x(4000);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = coin(rng);
  EXPECT_NEAR(mutual_information(x, x, 2), 1.0, 1e-3);
}

TEST(MutualInformation, IndependentBinaryIsNearZero) {
  Rng rng(2);
  std::bernoulli_distribution coin(0.5);
  Eigen::VectorXd x(20000), y(20000);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x[i] = coin(rng);
    y[i] = coin(rng);
  }
  EXPECT_LT(mutual_information(x, y, 2), 0.05);
}

TEST(MutualInformation, MatchesOracleOnRandomData) {
  Rng rng(3);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd x(50), y(50);
    for (Eigen::Index i = 0; i < 50; ++i) {
      x[i] = normal(rng);
      y[i] = 0.5 * x[i] + normal(rng);
    }
    EXPECT_NEAR(mutual_information(x, y, 5), mi_oracle(x, y, 5), 1e-12);
    EXPECT_EQ(mutual_information(x, y, 5), mutual_information(y, x, 5));
  }
}

TEST(MutualInformation, Errors) {
  EXPECT_FSNS_ERROR(mutual_information(vec({1, 2}), vec({1, 2, 3}), 2), kLengthMismatch);
  EXPECT_FSNS_ERROR(mutual_information(vec({1, 2}), vec({1, 2}), 1), kInvalidArgument);
}

TEST(Covariance, Examples) {
  const auto x = vec({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(covariance_abs(x, vec({2, 4, 6, 8})), 2.5);
  const double var = (x.array() - x.mean()).square().mean();  // population variance 1.25
  EXPECT_DOUBLE_EQ(covariance_abs(x, x), var);
  EXPECT_DOUBLE_EQ(covariance_abs(x, -x), var);
  EXPECT_FSNS_ERROR(covariance_abs(x, vec({1})), kLengthMismatch);
}

TEST(Pearson, Examples) {
  const auto x = vec({1, 3, 2, 7, 5});
  EXPECT_NEAR(pearson_abs(x, x), 1.0, 1e-15);
  EXPECT_NEAR(pearson_abs(x, -x), 1.0, 1e-15);
  EXPECT_EQ(pearson_abs(vec({4, 4, 4, 4, 4}), x), 0.0);
  EXPECT_FSNS_ERROR(pearson_abs(x, vec({1, 2})), kLengthMismatch);
}

TEST(Pearson, AffineInvariance) {
  Rng rng(4);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> scale(0.1, 50.0), shift(-100.0, 100.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(30), y(30);
    for (Eigen::Index i = 0; i < 30; ++i) {
      x[i] = normal(rng);
      y[i] = x[i] + normal(rng);
    }
    const Eigen::VectorXd x2 = (x.array() * scale(rng) + shift(rng)).matrix();
    EXPECT_NEAR(pearson_abs(x2, y), pearson_abs(x, y), 1e-9);
  }
}

TEST(BuildMatrix, TwoFeaturePearsonStructure) {
  auto d = fsns::testing::gaussian_dataset(40, 2, 5);
  const auto m = build_matrix(d, RedundancyMetric::kPearson);
  const double r = pearson_abs(d.column(0), d.column(1));
  EXPECT_NEAR(m.values(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(m.values(1, 1), 1.0, 1e-12);
  EXPECT_EQ(m.values(0, 1), r);
  EXPECT_EQ(m.values(1, 0), r);
}

TEST(BuildMatrix, DuplicatedColumnReachesSelfValue) {
  auto d = fsns::testing::gaussian_dataset(60, 3, 6);
  d.features.col(2) = d.features.col(0);
  for (auto metric : {RedundancyMetric::kPearson, RedundancyMetric::kCovariance,
                      RedundancyMetric::kMutualInformation}) {
    const auto m = build_matrix(d, metric);
    EXPECT_NEAR(m.values(0, 2), m.values(0, 0), 1e-12) << to_string(metric);
  }
}

TEST(BuildMatrix, CovarianceMatchesPairwiseLoop) {
  auto d = fsns::testing::gaussian_dataset(25, 4, 7);
  const auto m = build_matrix(d, RedundancyMetric::kCovariance);
  for (Eigen::Index i = 0; i < 4; ++i) {
    for (Eigen::Index j = 0; j < 4; ++j) {
      double mi = 0, mj = 0;
      for (Eigen::Index r = 0; r < 25; ++r) {
        mi += d.features(r, i) / 25.0;
        mj += d.features(r, j) / 25.0;
      }
      double c = 0;
      for (Eigen::Index r = 0; r < 25; ++r) c += (d.features(r, i) - mi) * (d.features(r, j) - mj);
      EXPECT_NEAR(m.values(i, j), std::abs(c / 25.0), 1e-12);
    }
  }
}

TEST(BuildMatrix, PropertiesOnRandomDatasets) {
  Rng rng(8);
  std::uniform_int_distribution<int> size(2, 6);
  for (int trial = 0; trial < 100; ++trial) {
    auto d = fsns::testing::gaussian_dataset(30, static_cast<std::size_t>(size(rng)), 100 + trial);
    for (auto metric : {RedundancyMetric::kPearson, RedundancyMetric::kCovariance,
                        RedundancyMetric::kMutualInformation}) {
      const auto m = build_matrix(d, metric);
      ASSERT_EQ(m.values, m.values.transpose()) << trial;
      ASSERT_GE(m.values.minCoeff(), 0.0);
      if (metric == RedundancyMetric::kPearson)
        for (Eigen::Index i = 0; i < m.values.rows(); ++i) ASSERT_NEAR(m.values(i, i), 1.0, 1e-12);
    }
  }
}

TEST(BuildMatrix, DefaultBins) {
  EXPECT_EQ(default_bins(1), 2);
  EXPECT_EQ(default_bins(3), 2);
  EXPECT_EQ(default_bins(100), 10);
  EXPECT_EQ(default_bins(99), 9);
}

TEST(SubsetRedundancy, PairSums) {
  const auto m = random_matrix(6, 9);
  EXPECT_EQ(subset_redundancy(m, FeatureSubset({3})), 0.0);
  EXPECT_DOUBLE_EQ(subset_redundancy(m, FeatureSubset({1, 4})), m.values(1, 4));
  const std::vector<std::size_t> s{0, 2, 3, 5};
  double oracle = 0;
  for (std::size_t a = 0; a < s.size(); ++a)
    for (std::size_t b = a + 1; b < s.size(); ++b)
      oracle += m.values(static_cast<Eigen::Index>(s[a]), static_cast<Eigen::Index>(s[b]));
  EXPECT_NEAR(subset_redundancy(m, FeatureSubset(s)), oracle, 1e-12);
  EXPECT_FSNS_ERROR(subset_redundancy(m, FeatureSubset({0, 6})), kInvalidSubset);
}

TEST(SubsetRedundancy, MonotoneUnderAddition) {
  Rng rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_matrix(8, 200 + trial);
    std::vector<std::size_t> order{0, 1, 2, 3, 4, 5, 6, 7};
    std::shuffle(order.begin(), order.end(), rng);
    double previous = 0.0;
    for (std::size_t k = 1; k <= order.size(); ++k) {
      const double r = subset_redundancy(m, FeatureSubset({order.begin(), order.begin() + static_cast<long>(k)}));
      ASSERT_GE(r, previous);
      previous = r;
    }
  }
}

TEST(NormalizeRedundancy, Examples) {
  EXPECT_EQ(normalize_redundancy(3.5, 3.5), 1.0);
  EXPECT_EQ(normalize_redundancy(0.0, 3.5), 0.0);
  EXPECT_DOUBLE_EQ(normalize_redundancy(1.0, 4.0), 0.25);
  EXPECT_EQ(normalize_redundancy(5.0, 4.0), 1.0);
  EXPECT_FSNS_ERROR(normalize_redundancy(1.0, 0.0), kRedundancyUnavailable);
}

TEST(RedundancyMatrixFile, RoundTripsLosslessly) {
  fsns::testing::TempDir dir;
  auto m = random_matrix(5, 11);
  m.metric = RedundancyMetric::kCovariance;
  m.values(1, 2) = m.values(2, 1) = 1.0 / 3.0;
  save_redundancy_matrix(m, dir / "r.json", "abc");
  std::string hash;
  const auto back = load_redundancy_matrix(dir / "r.json", &hash);
  EXPECT_EQ(back.values, m.values);
  EXPECT_EQ(back.metric, RedundancyMetric::kCovariance);
  EXPECT_EQ(hash, "abc");
  EXPECT_FSNS_ERROR(load_redundancy_matrix(dir / "none.json"), kMissingArtifact);
}

TEST(RedundancyMetricNames, ParseRoundTrip) {
  for (auto metric : {RedundancyMetric::kPearson, RedundancyMetric::kCovariance,
                      RedundancyMetric::kMutualInformation})
    EXPECT_EQ(parse_redundancy_metric(to_string(metric)), metric);
  EXPECT_FSNS_ERROR(parse_redundancy_metric("cosine"), kInvalidArgument);
}
