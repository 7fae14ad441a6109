#include <gtest/gtest.h>

#include <fstream>

#include "fsns/hashing.hpp"
#include "fsns/pipeline.hpp"
#include "test_support.hpp"

using namespace fsns;
using fsns::testing::TempDir;

namespace {

PipelineConfig small_config(const std::filesystem::path& out, std::uint64_t seed = 0) {
  return resolve_config(nlohmann::json::object(),
                        {{"profile", "desk"},
                         {"output_dir", out.string()},
                         {"seed", std::to_string(seed)},
                         {"synth_kind", "noise"},
                         {"synth_informative", "3"},
                         {"synth_noise", "5"},
                         {"synth_samples", "120"},
                         {"forest_trees", "10"},
                         {"episodes", "6"},
                         {"steps_per_episode", "2"},
                         {"augment_copies", "2"},
                         {"embedding_dim", "8"},
                         {"encoder_layers", "1"},
                         {"decoder_layers", "1"},
                         {"attention_heads", "2"},
                         {"feedforward_dim", "16"},
                         {"latent_dim", "4"},
                         {"evaluator_hidden", "8"},
                         {"pretrain_epochs", "2"},
                         {"finetune_epochs", "1"},
                         {"n_starts", "3"},
                         {"search_steps", "3"}});
}

void append(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::app);
  out << text;
}

}  // namespace

TEST(Pipeline, StagesRequireUpstreamArtifacts) {
  TempDir dir;
  const auto config = small_config(dir.path());
  const auto data = prepare_data(config);
  try {
    run_train_stage(config, data);
    FAIL() << "train ran without collection artifacts";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingArtifact);
    EXPECT_NE(std::string(e.what()).find("collection"), std::string::npos) << e.what();
  }
  EXPECT_FSNS_ERROR(run_search_stage(config, data), kMissingArtifact);
  EXPECT_FSNS_ERROR(run_evaluate_stage(config, data), kMissingArtifact);
}

TEST(Pipeline, StagewiseRunMatchesChainAndDetectsTampering) {
  TempDir dir;
  const auto config = small_config(dir.path());
  const auto data = prepare_data(config);
  run_collect_stage(config, data);
  run_train_stage(config, data);
  const auto searched = run_search_stage(config, data);
  const auto evaluated = run_evaluate_stage(config, data);
  EXPECT_EQ(evaluated.subset, searched.result.subset);
  EXPECT_GE(evaluated.redundancy, 0.0);
  EXPECT_LE(evaluated.redundancy, 1.0 + 1e-12);

  const ArtifactPaths paths(dir.path());
  const auto hashes = verify_chain(paths);
  EXPECT_EQ(hashes.size(), 8u);
  for (const auto& [name, hash] : hashes) EXPECT_EQ(hash, sha256_file(dir.path() / name)) << name;

  append(paths.corpus, "\n");
  EXPECT_FSNS_ERROR(verify_chain(paths), kHashMismatch);
  EXPECT_FSNS_ERROR(run_search_stage(config, data), kHashMismatch);
}

TEST(Pipeline, TamperedCollectionLogIsRejectedByTrain) {
  TempDir dir;
  const auto config = small_config(dir.path());
  const auto data = prepare_data(config);
  run_collect_stage(config, data);
  append(ArtifactPaths(dir.path()).collection_log, "\n");
  EXPECT_FSNS_ERROR(run_train_stage(config, data), kHashMismatch);
}

TEST(Pipeline, OutputLockIsExclusive) {
  TempDir dir;
  {
    OutputLock first(dir.path());
    EXPECT_FSNS_ERROR(OutputLock second(dir.path()), kIo);
  }
  EXPECT_NO_THROW(OutputLock again(dir.path()));
}

TEST(Pipeline, DatasetFingerprintTracksContent) {
  auto a = fsns::testing::gaussian_dataset(20, 3, 1);
  auto b = a;
  EXPECT_EQ(dataset_fingerprint(a), dataset_fingerprint(b));
  b.features(0, 0) += 1e-9;
  EXPECT_NE(dataset_fingerprint(a), dataset_fingerprint(b));
  b = a;
  b.feature_names[1] = "renamed";
  EXPECT_NE(dataset_fingerprint(a), dataset_fingerprint(b));
}

TEST(Pipeline, BenchmarkIsReproducibleAndComplete) {
  TempDir one, two;
  const auto a = run_benchmark(small_config(one.path(), 4));
  const auto b = run_benchmark(small_config(two.path(), 4));

  const auto& report = a.report;
  ASSERT_NE(report.row("fsns"), nullptr);
  ASSERT_NE(report.row("full_set"), nullptr);
  for (const char* m : {"k_best", "mrmr", "lasso", "rfe"}) ASSERT_NE(report.row(m), nullptr) << m;
  // LASSO chooses its own support size by cross-validation; the others match FSNS.
  for (const char* m : {"k_best", "mrmr", "rfe"})
    EXPECT_EQ(report.row(m)->subset.size(), report.row("fsns")->subset.size()) << m;
  EXPECT_DOUBLE_EQ(report.row("full_set")->redundancy, 100.0);
  EXPECT_EQ(report.informative, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(report.loss_history.size(), 3u);
  EXPECT_EQ(report.trajectories.size(), 3u);
  EXPECT_TRUE(std::filesystem::exists(one.path() / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(one.path() / "feature_importance.svg"));

  // Identical up to wall-clock fields and the output location; the collection
  // metadata embeds the config (including output_dir), so its hash is excluded.
  auto ja = strip_timing(nlohmann::json(a.report));
  auto jb = strip_timing(nlohmann::json(b.report));
  for (auto* j : {&ja, &jb}) {
    (*j)["config"].erase("output_dir");
    (*j)["artifacts"].erase("collection.meta.json");
  }
  EXPECT_EQ(ja, jb);
}

TEST(Pipeline, HashedArtifactsAreIdenticalAcrossRepeatedRuns) {
  TempDir dir;
  BenchmarkOptions options;
  options.baselines = false;
  const auto first = run_benchmark(small_config(dir.path(), 2), options);
  const auto second = run_benchmark(small_config(dir.path(), 2), options);
  EXPECT_EQ(first.report.artifacts.size(), 8u);
  EXPECT_EQ(first.report.artifacts, second.report.artifacts);
}
