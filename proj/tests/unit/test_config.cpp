#include <gtest/gtest.h>

#include <set>

#include <nlohmann/json.hpp>

#include "fsns/config.hpp"
#include "fsns/hashing.hpp"
#include "fsns/random.hpp"
#include "test_support.hpp"

using namespace fsns;
using Overrides = std::map<std::string, std::string>;

namespace {

std::string field_error_of(const nlohmann::json& file, const Overrides& overrides) {
  try {
    resolve_config(file, overrides);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidConfig);
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, FullDefaultsMatchPublishedHyperparameters) {
  const auto c = resolve_config({}, {{"synth_kind", "noise"}});
  EXPECT_EQ(c.episodes, 300);
  EXPECT_EQ(c.augment_copies, 25);
  EXPECT_EQ(c.embedding_dim, 64);
  EXPECT_EQ(c.n_starts, 25);
  EXPECT_EQ(c.learning_rate, 1e-4);
  EXPECT_EQ(c.redundancy_metric, "pearson");
  EXPECT_EQ(c.kl_form, "verbatim");
  // Redundancy-aware weights.
  EXPECT_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.beta, 0.3);
  EXPECT_EQ(c.gamma, 0.001);
  EXPECT_EQ(c.delta, 0.2);
  EXPECT_EQ(c.lambda, 0.1);
}

TEST(Config, UnawareWeights) {
  const auto c = resolve_config({}, {{"synth_kind", "noise"}, {"redundancy_aware", "false"}});
  EXPECT_EQ(c.alpha, 0.8);
  EXPECT_EQ(c.beta, 0.2);
  EXPECT_EQ(c.gamma, 0.001);
  EXPECT_EQ(c.delta, 0.0);
  EXPECT_EQ(c.lambda, 0.0);
}

TEST(Config, ExplicitWeightsSurviveRedundancyDefaults) {
  const auto c = resolve_config({{"redundancy_aware", false}, {"alpha", 0.7}}, {{"synth_kind", "noise"}});
  EXPECT_EQ(c.alpha, 0.7);
  EXPECT_EQ(c.beta, 0.2);
}

TEST(Config, DeskProfile) {
  const auto c = resolve_config({{"profile", "desk"}, {"synth_kind", "noise"}}, {});
  EXPECT_EQ(c.profile, "desk");
  EXPECT_EQ(c.episodes, 50);
  EXPECT_EQ(c.pretrain_epochs, 100);
  EXPECT_EQ(c.finetune_epochs, 40);
  EXPECT_EQ(c.embedding_dim % c.attention_heads, 0);
}

TEST(Config, OverridesBeatFileBeatProfile) {
  const nlohmann::json file = {{"profile", "desk"}, {"synth_kind", "noise"}, {"episodes", 7}, {"seed", 3}};
  const auto c = resolve_config(file, {{"episodes", "9"}});
  EXPECT_EQ(c.episodes, 9);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.pretrain_epochs, 100);
}

TEST(Config, FieldLevelErrors) {
  EXPECT_NE(field_error_of({{"episodse", 3}}, {{"synth_kind", "noise"}}).find("field 'episodse'"), std::string::npos);
  EXPECT_NE(field_error_of({}, {{"synth_kind", "noise"}, {"episodes", "many"}}).find("field 'episodes'"),
            std::string::npos);
  EXPECT_NE(field_error_of({{"episodes", "3"}}, {{"synth_kind", "noise"}}).find("field 'episodes'"),
            std::string::npos);
  EXPECT_NE(field_error_of({}, {{"synth_kind", "noise"}, {"attention_heads", "5"}}).find("field 'attention_heads'"),
            std::string::npos);
  EXPECT_NE(field_error_of({}, {{"synth_kind", "noise"}, {"channel", "psychic"}}).find("field 'channel'"),
            std::string::npos);
  EXPECT_NE(field_error_of({}, {}).find("field 'dataset'"), std::string::npos);
  EXPECT_NE(field_error_of({}, {{"dataset", "/nonexistent/x.csv"}}).find("field 'dataset'"), std::string::npos);
  EXPECT_NE(field_error_of({}, {{"synth_kind", "noise"}, {"profile", "huge"}}).find("field 'profile'"),
            std::string::npos);
  EXPECT_FSNS_ERROR(resolve_config(nlohmann::json::array(), {}), kInvalidConfig);
}

TEST(Config, EveryFieldHasAUniqueNameAndHelp) {
  std::set<std::string> names;
  for (const auto& f : config_fields()) {
    EXPECT_TRUE(names.insert(f.name).second) << f.name;
    EXPECT_FALSE(f.help.empty()) << f.name;
  }
  // Each field serialises, and the serialised config resolves to itself.
  const auto c = resolve_config({}, {{"synth_kind", "separable"}, {"seed", "12"}});
  const nlohmann::json j = c;
  for (const auto& f : config_fields()) EXPECT_TRUE(j.contains(f.name)) << f.name;
  const nlohmann::json again = resolve_config(j, {});
  EXPECT_EQ(again, j);
}

TEST(Config, DerivedStageConfigs) {
  const auto c = resolve_config({}, {{"synth_kind", "noise"}, {"kl_form", "standard"}, {"forest_trees", "17"}});
  EXPECT_EQ(c.model_config().kl_form, KlForm::kStandard);
  EXPECT_EQ(c.forest_options().n_trees, 17);
  EXPECT_EQ(c.collector_config().forest.n_trees, 17);
  EXPECT_EQ(c.search_config().lambda, c.lambda);
  EXPECT_EQ(c.synthetic_spec().kind, SyntheticKind::kNoise);
  EXPECT_NE(c.model_config().seed, c.collector_config().seed);
}

TEST(ConfigFile, LoadErrors) {
  fsns::testing::TempDir dir;
  fsns::testing::write_text(dir / "bad.json", "{ not json");
  EXPECT_FSNS_ERROR(load_config_file(dir / "bad.json"), kInvalidConfig);
  EXPECT_FSNS_ERROR(load_config_file(dir / "none.json"), kMissingFile);
  fsns::testing::write_text(dir / "ok.json", R"({"synth_kind": "noise", "episodes": 4})");
  EXPECT_EQ(resolve_config(load_config_file(dir / "ok.json"), {}).episodes, 4);
}

TEST(Hashing, KnownVectors) {
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  fsns::testing::TempDir dir;
  fsns::testing::write_text(dir / "f", "abc");
  EXPECT_EQ(sha256_file(dir / "f"), sha256_hex("abc"));
}

TEST(Random, MixSeedSeparatesStreams) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t seed = 0; seed < 10; ++seed)
    for (std::uint64_t stream = 0; stream < 10; ++stream) seen.insert(mix_seed(seed, stream));
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(make_rng(5, 2)(), make_rng(5, 2)());
}
