#include <gtest/gtest.h>

#include "fsns/random_forest.hpp"
#include "test_support.hpp"

using namespace fsns;

namespace {

struct Xy {
  RowMatrix x;
  Eigen::VectorXd y;
};

// y depends on column 0 only; the other columns are noise.
Xy step_problem(int n, int p, std::uint64_t seed, bool classification) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Xy d{RowMatrix(n, p), Eigen::VectorXd(n)};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) d.x(i, j) = normal(rng);
    d.y(i) = classification ? (d.x(i, 0) > 0 ? 1.0 : 0.0) : 3.0 * d.x(i, 0);
  }
  return d;
}

}  // namespace

TEST(RandomForest, SingleTreeMemorisesTrainingData) {
  const auto d = step_problem(60, 3, 1, false);
  ForestOptions options;
  options.n_trees = 1;
  options.max_features = 3;
  RandomForest forest(Task::kRegression, 0, options, 7);
  forest.fit(d.x, d.y);
  // A fully grown tree on a bootstrap sample reproduces every in-bag label;
  // out-of-bag rows land in a leaf of some training value.
  const Eigen::VectorXd pred = forest.predict(d.x);
  for (int i = 0; i < 60; ++i) {
    bool matches_some_label = false;
    for (int k = 0; k < 60; ++k) matches_some_label |= pred(i) == d.y(k);
    EXPECT_TRUE(matches_some_label) << i;
  }
}

TEST(RandomForest, ClassificationAndImportances) {
  const auto train = step_problem(200, 4, 2, true);
  const auto test = step_problem(200, 4, 3, true);
  ForestOptions options;
  options.n_trees = 25;
  RandomForest forest(Task::kClassification, 2, options, 11);
  forest.fit(train.x, train.y);
  EXPECT_GE(accuracy(test.y, forest.predict(test.x)), 0.9);
  const Eigen::VectorXd imp = forest.feature_importances();
  ASSERT_EQ(imp.size(), 4);
  EXPECT_NEAR(imp.sum(), 1.0, 1e-12);
  EXPECT_GT(imp(0), 0.5);
  EXPECT_GE(imp.minCoeff(), 0.0);
  for (int i = 0; i < test.y.size(); ++i) EXPECT_TRUE(forest.predict(test.x)(i) == 0.0 || forest.predict(test.x)(i) == 1.0);
}

TEST(RandomForest, DeterministicPerSeed) {
  const auto d = step_problem(80, 3, 4, false);
  ForestOptions options;
  options.n_trees = 10;
  RandomForest a(Task::kRegression, 0, options, 3), b(Task::kRegression, 0, options, 3);
  a.fit(d.x, d.y);
  b.fit(d.x, d.y);
  EXPECT_EQ(a.predict(d.x), b.predict(d.x));
  EXPECT_EQ(a.feature_importances(), b.feature_importances());
}

TEST(RandomForest, ConstantTargetMakesNoSplits) {
  auto d = step_problem(30, 2, 5, false);
  d.y.setConstant(2.5);
  ForestOptions options;
  options.n_trees = 5;
  RandomForest forest(Task::kRegression, 0, options, 1);
  forest.fit(d.x, d.y);
  EXPECT_EQ(forest.feature_importances(), Eigen::VectorXd::Zero(2));
  EXPECT_TRUE((forest.predict(d.x).array() == 2.5).all());
}
