#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "fsns/synthetic.hpp"
#include "test_support.hpp"

using namespace fsns;

TEST(Synthetic, NoiseSpecMirrorsCaseStudyLayout) {
  SyntheticSpec spec;  // defaults: 5 informative, 45 noise, 500 samples, regression
  const auto data = generate_synthetic(spec);
  EXPECT_EQ(data.dataset.n_features(), 50u);
  EXPECT_EQ(data.dataset.n_samples(), 500u);
  EXPECT_EQ(data.dataset.task, Task::kRegression);
  EXPECT_EQ(data.informative, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
}

TEST(Synthetic, DeterministicPerSeed) {
  SyntheticSpec spec;
  spec.noise = 5;
  spec.samples = 50;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  EXPECT_EQ(a.dataset.features, b.dataset.features);
  EXPECT_EQ(a.dataset.labels, b.dataset.labels);
  spec.seed = 1;
  EXPECT_NE(generate_synthetic(spec).dataset.features, a.dataset.features);
}

TEST(Synthetic, UnitCorrelationGivesExactDuplicates) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::kRedundant;
  spec.informative = 3;
  spec.duplicates = 2;
  spec.noise = 2;
  spec.correlation = 1.0;
  spec.samples = 60;
  const auto data = generate_synthetic(spec);
  ASSERT_EQ(data.dataset.n_features(), 3u + 6u + 2u);
  ASSERT_EQ(data.duplicate_of.size(), 6u);
  for (const auto& [copy, source] : data.duplicate_of)
    EXPECT_EQ(data.dataset.column(copy), data.dataset.column(source));
}

TEST(Synthetic, DuplicateCorrelationIsControlled) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::kRedundant;
  spec.informative = 2;
  spec.noise = 0;
  spec.correlation = 0.8;
  spec.samples = 20000;
  const auto data = generate_synthetic(spec);
  const auto [copy, source] = data.duplicate_of[0];
  const Eigen::VectorXd a = data.dataset.column(copy), b = data.dataset.column(source);
  const Eigen::ArrayXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  const double r = (ca * cb).sum() / std::sqrt(ca.square().sum() * cb.square().sum());
  EXPECT_NEAR(r, 0.8, 0.02);
}

TEST(Synthetic, SeparableBlobAxesAreNearlyPerfect) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::kSeparable;
  spec.informative = 2;
  spec.noise = 3;
  spec.samples = 300;
  const auto data = generate_synthetic(spec);
  ASSERT_EQ(data.dataset.task, Task::kClassification);
  const auto split = split_ab(data.dataset, 0.2, 0);
  ForestOptions forest;
  forest.n_trees = 50;
  // Best 2-feature subset among all 2-subsets, checked by enumeration.
  double best = 0.0;
  std::vector<std::size_t> best_pair;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) {
      const double s = evaluate_subset(data.dataset, split, FeatureSubset({i, j}), 0, forest);
      if (s > best) {
        best = s;
        best_pair = {i, j};
      }
    }
  EXPECT_GE(evaluate_subset(data.dataset, split, FeatureSubset({0, 1}), 0, forest), 0.95);
  EXPECT_GE(best, 0.95);
}

TEST(Synthetic, ClassificationVariantsAreBalancedBinary) {
  SyntheticSpec spec;
  spec.task = Task::kClassification;
  spec.noise = 3;
  spec.samples = 200;
  const auto data = generate_synthetic(spec);
  EXPECT_EQ(data.dataset.n_classes(), 2);
  EXPECT_NEAR(data.dataset.labels.mean(), 0.5, 0.01);  // median threshold
}

TEST(Synthetic, InvalidCounts) {
  SyntheticSpec spec;
  spec.informative = 0;
  EXPECT_FSNS_ERROR(generate_synthetic(spec), kInvalidArgument);
  spec = {};
  spec.samples = 5;
  EXPECT_FSNS_ERROR(generate_synthetic(spec), kInvalidArgument);
  spec = {};
  spec.informative = 1;
  spec.noise = 0;
  EXPECT_FSNS_ERROR(generate_synthetic(spec), kInvalidArgument);
  spec = {};
  spec.kind = SyntheticKind::kRedundant;
  spec.correlation = 1.5;
  EXPECT_FSNS_ERROR(generate_synthetic(spec), kInvalidArgument);
}

TEST(Synthetic, SpecJsonRoundTripAndMetadata) {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::kRedundant;
  spec.correlation = 0.7;
  spec.seed = 42;
  const nlohmann::json j = spec;
  const auto back = j.get<SyntheticSpec>();
  EXPECT_EQ(back.kind, spec.kind);
  EXPECT_EQ(back.correlation, 0.7);
  EXPECT_EQ(back.seed, 42u);

  fsns::testing::TempDir dir;
  spec.noise = 2;
  spec.samples = 20;
  const auto data = generate_synthetic(spec);
  save_synthetic_metadata(data, dir / "m.json");
  const auto doc = nlohmann::json::parse(fsns::testing::read_text(dir / "m.json"));
  EXPECT_EQ(doc.at("informative").get<std::vector<std::size_t>>(), data.informative);
}
