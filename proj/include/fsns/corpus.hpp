#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fsns/collection_log.hpp"

namespace fsns {

/// Token ids: PAD=0, SOS=1, EOS=2, feature i -> i + 3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSos = 1;
  static constexpr int kEos = 2;
  static constexpr int kFirstFeature = 3;

  Vocabulary() = default;
  explicit Vocabulary(std::size_t n_features) : n_features_(n_features) {}

  std::size_t n_features() const { return n_features_; }
  int size() const { return static_cast<int>(n_features_) + kFirstFeature; }
  int token(std::size_t feature) const;
  std::size_t feature(int token) const;
  bool is_feature(int token) const { return token >= kFirstFeature && token < size(); }

 private:
  std::size_t n_features_ = 0;
};

/// Feature tokens only (no specials), with the subset's v and u.
struct SubsetRecord {
  std::vector<int> tokens;
  double v = 0.0;
  double u = 0.0;

  friend bool operator==(const SubsetRecord&, const SubsetRecord&) = default;
};

/// Augmented records stored in groups of (augment_copies + 1); the first
/// record of each group is the deduplicated base record.
struct TokenCorpus {
  std::vector<SubsetRecord> records;
  Vocabulary vocabulary;
  int max_sequence_length = 0;
  int augment_copies = 0;
  std::string source_hash;

  std::size_t group_size() const { return static_cast<std::size_t>(augment_copies) + 1; }
  std::size_t base_count() const { return records.size() / group_size(); }
  const SubsetRecord& base(std::size_t i) const { return records[i * group_size()]; }
};

/// Original first, then `copies` uniform random permutations (with replacement).
std::vector<SubsetRecord> augment_shuffle(const SubsetRecord& record, int copies, std::uint64_t seed);

/// Deduplicates by sorted index set (max v wins), then augments every base record.
TokenCorpus build_corpus(const CollectionLog& log, int copies, std::uint64_t seed,
                         const std::string& source_hash = {});

/// Teacher-forcing layout: input [SOS, t..., PAD...], target [t..., EOS, PAD...].
struct EncodedSequence {
  std::vector<int> input_ids;
  std::vector<int> target_ids;
  std::vector<char> mask;  // 1 on non-PAD target positions
};

EncodedSequence encode_sequence(const SubsetRecord& record, const Vocabulary& vocab, int max_len);

/// Feature tokens of a target row, up to (not including) EOS.
std::vector<int> decode_sequence(const std::vector<int>& target_ids);

void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& records_path,
                 const std::filesystem::path& header_path);
TokenCorpus load_corpus(const std::filesystem::path& records_path,
                        const std::filesystem::path& header_path);

}  // namespace fsns
