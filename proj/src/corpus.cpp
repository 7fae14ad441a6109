#include "fsns/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "fsns/error.hpp"
#include "fsns/random.hpp"

namespace fsns {

const char* to_string(Channel channel) {
  return channel == Channel::kSupervised ? "supervised" : "unsupervised";
}

Channel parse_channel(const std::string& text) {
  if (text == "supervised") return Channel::kSupervised;
  if (text == "unsupervised") return Channel::kUnsupervised;
  throw Error(ErrorKind::kInvalidArgument, "unknown channel '" + text + "'");
}

void save_collection_log(const CollectionLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& r : log.records) {
    nlohmann::json line;
    line["features"] = r.features;
    line["v"] = r.v;
    line["u"] = r.u;
    line["channel"] = to_string(log.channel);
    line["episode"] = r.episode;
    line["step"] = r.step;
    out << line.dump() << '\n';
  }
}

CollectionLog load_collection_log(const std::filesystem::path& path, std::size_t n_features) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing collection log " + path.string());
  CollectionLog log;
  log.n_features = n_features;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      LoggedSubset r;
      r.features = doc.at("features").get<std::vector<std::size_t>>();
      std::sort(r.features.begin(), r.features.end());
      r.v = doc.at("v").get<double>();
      r.u = doc.at("u").get<double>();
      r.episode = doc.value("episode", 0);
      r.step = doc.value("step", 0);
      log.channel = parse_channel(doc.at("channel").get<std::string>());
      log.episodes = std::max(log.episodes, r.episode + 1);
      FeatureSubset(r.features).validate(n_features);
      log.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

int Vocabulary::token(std::size_t feature) const {
  if (feature >= n_features_)
    throw Error(ErrorKind::kOutOfVocabulary, "feature " + std::to_string(feature) + " outside vocabulary");
  return static_cast<int>(feature) + kFirstFeature;
}

std::size_t Vocabulary::feature(int token) const {
  if (!is_feature(token))
    throw Error(ErrorKind::kOutOfVocabulary, "token " + std::to_string(token) + " is not a feature");
  return static_cast<std::size_t>(token - kFirstFeature);
}

std::vector<SubsetRecord> augment_shuffle(const SubsetRecord& record, int copies, std::uint64_t seed) {
  if (copies < 0) throw Error(ErrorKind::kInvalidArgument, "copies must be nonnegative");
  std::vector<SubsetRecord> out;
  out.reserve(static_cast<std::size_t>(copies) + 1);
  out.push_back(record);
  Rng rng = make_rng(seed, 0xA06);
  for (int c = 0; c < copies; ++c) {
    SubsetRecord copy = record;
    std::shuffle(copy.tokens.begin(), copy.tokens.end(), rng);
    out.push_back(std::move(copy));
  }
  return out;
}

TokenCorpus build_corpus(const CollectionLog& log, int copies, std::uint64_t seed,
                         const std::string& source_hash) {
  if (log.records.empty()) throw Error(ErrorKind::kEmptyInput, "collection log is empty");
  if (copies < 0) throw Error(ErrorKind::kInvalidArgument, "copies must be nonnegative");

  std::vector<const LoggedSubset*> bases;
  std::map<std::vector<std::size_t>, std::size_t> position;
  for (const auto& r : log.records) {
    if (r.features.empty()) throw Error(ErrorKind::kInvalidSubset, "log contains an empty subset");
    auto key = r.features;
    std::sort(key.begin(), key.end());
    auto [it, inserted] = position.emplace(key, bases.size());
    if (inserted)
      bases.push_back(&r);
    else if (r.v > bases[it->second]->v)
      bases[it->second] = &r;
  }

  TokenCorpus corpus;
  corpus.vocabulary = Vocabulary(log.n_features);
  corpus.augment_copies = copies;
  corpus.source_hash = source_hash;
  std::size_t longest = 0;
  for (std::size_t i = 0; i < bases.size(); ++i) {
    SubsetRecord base;
    auto features = bases[i]->features;
    std::sort(features.begin(), features.end());
    for (auto f : features) base.tokens.push_back(corpus.vocabulary.token(f));
    base.v = bases[i]->v;
    base.u = bases[i]->u;
    longest = std::max(longest, base.tokens.size());
    auto group = augment_shuffle(base, copies, mix_seed(seed, i));
    corpus.records.insert(corpus.records.end(), group.begin(), group.end());
  }
  corpus.max_sequence_length = static_cast<int>(longest) + 2;
  return corpus;
}

EncodedSequence encode_sequence(const SubsetRecord& record, const Vocabulary& vocab, int max_len) {
  if (record.tokens.empty()) throw Error(ErrorKind::kInvalidSubset, "record has no tokens");
  if (static_cast<int>(record.tokens.size()) + 2 > max_len)
    throw Error(ErrorKind::kSequenceTooLong, "record of length " + std::to_string(record.tokens.size()) +
                                                 " does not fit max_len " + std::to_string(max_len));
  EncodedSequence out;
  const auto len = static_cast<std::size_t>(max_len);
  out.input_ids.assign(len, Vocabulary::kPad);
  out.target_ids.assign(len, Vocabulary::kPad);
  out.mask.assign(len, 0);
  out.input_ids[0] = Vocabulary::kSos;
  for (std::size_t i = 0; i < record.tokens.size(); ++i) {
    if (!vocab.is_feature(record.tokens[i]))
      throw Error(ErrorKind::kOutOfVocabulary, "token " + std::to_string(record.tokens[i]) + " outside vocabulary");
    out.input_ids[i + 1] = record.tokens[i];
    out.target_ids[i] = record.tokens[i];
    out.mask[i] = 1;
  }
  out.target_ids[record.tokens.size()] = Vocabulary::kEos;
  out.mask[record.tokens.size()] = 1;
  return out;
}

std::vector<int> decode_sequence(const std::vector<int>& target_ids) {
  std::vector<int> out;
  for (int t : target_ids) {
    if (t == Vocabulary::kEos || t == Vocabulary::kPad) break;
    out.push_back(t);
  }
  return out;
}

void save_corpus(const TokenCorpus& corpus, const std::filesystem::path& records_path,
                 const std::filesystem::path& header_path) {
  {
    std::ofstream out(records_path);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + records_path.string());
    for (const auto& r : corpus.records) {
      nlohmann::json line;
      line["tokens"] = r.tokens;
      line["v"] = r.v;
      line["u"] = r.u;
      out << line.dump() << '\n';
    }
  }
  nlohmann::json header;
  header["n_features"] = corpus.vocabulary.n_features();
  header["max_len"] = corpus.max_sequence_length;
  header["augment_copies"] = corpus.augment_copies;
  header["source_hash"] = corpus.source_hash;
  std::ofstream out(header_path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + header_path.string());
  out << header.dump(2) << '\n';
}

TokenCorpus load_corpus(const std::filesystem::path& records_path,
                        const std::filesystem::path& header_path) {
  std::ifstream header_in(header_path);
  if (!header_in) throw Error(ErrorKind::kMissingArtifact, "missing corpus header " + header_path.string());
  std::ifstream in(records_path);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing corpus " + records_path.string());
  TokenCorpus corpus;
  try {
    const auto header = nlohmann::json::parse(header_in);
    corpus.vocabulary = Vocabulary(header.at("n_features").get<std::size_t>());
    corpus.max_sequence_length = header.at("max_len").get<int>();
    corpus.augment_copies = header.at("augment_copies").get<int>();
    corpus.source_hash = header.at("source_hash").get<std::string>();
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto doc = nlohmann::json::parse(line);
      SubsetRecord r;
      r.tokens = doc.at("tokens").get<std::vector<int>>();
      r.v = doc.at("v").get<double>();
      r.u = doc.at("u").get<double>();
      corpus.records.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kIo, std::string("corpus parse error: ") + e.what());
  }
  if (corpus.records.size() % corpus.group_size() != 0)
    throw Error(ErrorKind::kIo, "corpus record count is not a multiple of the augmentation group size");
  return corpus;
}

}  // namespace fsns
