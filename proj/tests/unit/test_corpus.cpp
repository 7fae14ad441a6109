#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "fsns/collection_log.hpp"
#include "fsns/corpus.hpp"
#include "test_support.hpp"

using namespace fsns;

namespace {

CollectionLog random_log(std::size_t n_features, std::size_t records, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  CollectionLog log;
  log.n_features = n_features;
  log.episodes = static_cast<int>(records);
  for (std::size_t r = 0; r < records; ++r) {
    LoggedSubset s;
    for (std::size_t f = 0; f < n_features; ++f)
      if (unit(rng) < 0.4) s.features.push_back(f);
    if (s.features.empty()) s.features.push_back(r % n_features);
    s.v = unit(rng);
    s.u = unit(rng);
    s.episode = static_cast<int>(r);
    log.records.push_back(s);
  }
  return log;
}

std::vector<int> sorted(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST(Vocabulary, ReservedIdsAndBijection) {
  const Vocabulary vocab(5);
  EXPECT_EQ(vocab.size(), 8);
  for (std::size_t f = 0; f < 5; ++f) {
    EXPECT_EQ(vocab.token(f), static_cast<int>(f) + 3);
    EXPECT_EQ(vocab.feature(vocab.token(f)), f);
  }
  EXPECT_FALSE(vocab.is_feature(Vocabulary::kPad));
  EXPECT_FALSE(vocab.is_feature(Vocabulary::kSos));
  EXPECT_FALSE(vocab.is_feature(Vocabulary::kEos));
  EXPECT_FALSE(vocab.is_feature(8));
  EXPECT_FSNS_ERROR(vocab.token(5), kOutOfVocabulary);
  EXPECT_FSNS_ERROR(vocab.feature(2), kOutOfVocabulary);
}

TEST(AugmentShuffle, KeepsOriginalFirstAndLabels) {
  const SubsetRecord r{{4, 5, 6}, 0.83, 0.71};
  const auto out = augment_shuffle(r, 25, 1);
  ASSERT_EQ(out.size(), 26u);
  EXPECT_EQ(out[0], r);
  std::set<std::vector<int>> orders;
  for (const auto& c : out) {
    EXPECT_EQ(c.v, 0.83);
    EXPECT_EQ(c.u, 0.71);
    EXPECT_EQ(sorted(c.tokens), r.tokens);
    orders.insert(c.tokens);
  }
  // 25 uniform draws over 6 orders miss at least one with probability < 0.0007.
  EXPECT_GT(orders.size(), 1u);
}

TEST(AugmentShuffle, DegenerateCases) {
  const SubsetRecord single{{9}, 0.5, 0.1};
  const auto six = augment_shuffle(single, 5, 3);
  ASSERT_EQ(six.size(), 6u);
  for (const auto& c : six) EXPECT_EQ(c, single);
  EXPECT_EQ(augment_shuffle(single, 0, 3).size(), 1u);
  EXPECT_FSNS_ERROR(augment_shuffle(single, -1, 3), kInvalidArgument);
}

TEST(BuildCorpus, SizeIsCopiesPlusOneTimesBases) {
  CollectionLog log;
  log.n_features = 12;
  for (std::size_t i = 0; i < 10; ++i) log.records.push_back({{i, i + 1}, 0.1 * i, 0.0, 0, 0});
  const auto corpus = build_corpus(log, 25, 4, "hash");
  EXPECT_EQ(corpus.records.size(), 260u);
  EXPECT_EQ(corpus.base_count(), 10u);
  EXPECT_EQ(corpus.max_sequence_length, 4);
  EXPECT_EQ(corpus.source_hash, "hash");
  EXPECT_EQ(corpus.vocabulary.n_features(), 12u);
}

TEST(BuildCorpus, DeduplicationKeepsMaxV) {
  CollectionLog log;
  log.n_features = 4;
  log.records.push_back({{0, 2}, 0.6, 0.3, 0, 0});
  log.records.push_back({{2, 0}, 0.7, 0.4, 1, 0});
  log.records.push_back({{1}, 0.2, 0.0, 2, 0});
  const auto corpus = build_corpus(log, 0, 1);
  ASSERT_EQ(corpus.records.size(), 2u);
  EXPECT_EQ(corpus.records[0].tokens, (std::vector<int>{3, 5}));
  EXPECT_EQ(corpus.records[0].v, 0.7);
  EXPECT_EQ(corpus.records[0].u, 0.4);
}

TEST(BuildCorpus, DeterministicAndRejectsEmptyLog) {
  const auto log = random_log(8, 40, 5);
  EXPECT_EQ(build_corpus(log, 3, 7).records, build_corpus(log, 3, 7).records);
  EXPECT_FSNS_ERROR(build_corpus(CollectionLog{}, 3, 7), kEmptyInput);
}

TEST(BuildCorpus, AugmentationInvariantsOverRandomLogs) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto log = random_log(10, 25, seed);
    std::set<std::vector<std::size_t>> unique;
    for (const auto& r : log.records) unique.insert(r.features);
    const int copies = static_cast<int>(seed % 5);
    const auto corpus = build_corpus(log, copies, seed);
    ASSERT_EQ(corpus.records.size(), unique.size() * static_cast<std::size_t>(copies + 1));
    for (std::size_t b = 0; b < corpus.base_count(); ++b) {
      const auto& base = corpus.base(b);
      for (std::size_t c = 0; c < corpus.group_size(); ++c) {
        const auto& r = corpus.records[b * corpus.group_size() + c];
        ASSERT_EQ(r.v, base.v);
        ASSERT_EQ(r.u, base.u);
        ASSERT_EQ(sorted(r.tokens), sorted(base.tokens));
        const auto enc = encode_sequence(r, corpus.vocabulary, corpus.max_sequence_length);
        ASSERT_EQ(decode_sequence(enc.target_ids), r.tokens);
      }
    }
  }
}

TEST(EncodeSequence, TeacherForcingLayout) {
  const Vocabulary vocab(10);
  const auto enc = encode_sequence({{5, 7}, 0.0, 0.0}, vocab, 5);
  EXPECT_EQ(enc.input_ids, (std::vector<int>{1, 5, 7, 0, 0}));
  EXPECT_EQ(enc.target_ids, (std::vector<int>{5, 7, 2, 0, 0}));
  EXPECT_EQ(enc.mask, (std::vector<char>{1, 1, 1, 0, 0}));
}

TEST(EncodeSequence, Errors) {
  const Vocabulary vocab(10);
  EXPECT_FSNS_ERROR(encode_sequence({{}, 0.0, 0.0}, vocab, 5), kInvalidSubset);
  EXPECT_FSNS_ERROR(encode_sequence({{3, 4, 5, 6}, 0.0, 0.0}, vocab, 5), kSequenceTooLong);
  EXPECT_FSNS_ERROR(encode_sequence({{3, 40}, 0.0, 0.0}, vocab, 5), kOutOfVocabulary);
}

TEST(EncodeSequence, MaskCountsEos) {
  const Vocabulary vocab(30);
  for (int len = 1; len <= 20; ++len) {
    SubsetRecord r;
    for (int i = 0; i < len; ++i) r.tokens.push_back(3 + i);
    const auto enc = encode_sequence(r, vocab, 24);
    EXPECT_EQ(std::count(enc.mask.begin(), enc.mask.end(), 1), len + 1);
  }
}

TEST(CorpusFile, RoundTrips) {
  fsns::testing::TempDir dir;
  const auto corpus = build_corpus(random_log(6, 15, 2), 2, 3, "src");
  save_corpus(corpus, dir / "c.jsonl", dir / "c.header.json");
  const auto back = load_corpus(dir / "c.jsonl", dir / "c.header.json");
  EXPECT_EQ(back.records, corpus.records);
  EXPECT_EQ(back.max_sequence_length, corpus.max_sequence_length);
  EXPECT_EQ(back.augment_copies, 2);
  EXPECT_EQ(back.source_hash, "src");
  EXPECT_EQ(back.vocabulary.n_features(), 6u);
  EXPECT_FSNS_ERROR(load_corpus(dir / "x.jsonl", dir / "c.header.json"), kMissingArtifact);
}

TEST(CollectionLogFile, RoundTrips) {
  fsns::testing::TempDir dir;
  auto log = random_log(7, 12, 9);
  log.channel = Channel::kUnsupervised;
  log.records[0].v = 1.0 / 3.0;
  save_collection_log(log, dir / "log.jsonl");
  const auto back = load_collection_log(dir / "log.jsonl", 7);
  ASSERT_EQ(back.records.size(), log.records.size());
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    EXPECT_EQ(back.records[i].features, log.records[i].features);
    EXPECT_EQ(back.records[i].v, log.records[i].v);
    EXPECT_EQ(back.records[i].u, log.records[i].u);
  }
  EXPECT_EQ(back.channel, Channel::kUnsupervised);
  EXPECT_FSNS_ERROR(load_collection_log(dir / "none.jsonl", 7), kMissingArtifact);
}
