#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fsns/baselines.hpp"
#include "fsns/config.hpp"
#include "fsns/corpus.hpp"
#include "fsns/report.hpp"
#include "fsns/search.hpp"
#include "fsns/synthetic.hpp"

namespace fsns {

/// File names of every stage artifact inside the output directory.
struct ArtifactPaths {
  explicit ArtifactPaths(std::filesystem::path dir);

  std::filesystem::path dir;
  std::filesystem::path lock;
  std::filesystem::path redundancy;        // redundancy.json, embeds the dataset fingerprint
  std::filesystem::path collection_log;    // collection.jsonl
  std::filesystem::path collection_meta;   // collection.meta.json, embeds dataset + redundancy hashes
  std::filesystem::path corpus;            // corpus.jsonl
  std::filesystem::path corpus_header;     // corpus.header.json, embeds the collection-log hash
  std::filesystem::path checkpoint;        // model.ckpt, embeds the corpus hash
  std::filesystem::path loss_history;      // loss_history.json
  std::filesystem::path search;            // search.json, embeds checkpoint + corpus hashes
  std::filesystem::path evaluation;        // evaluation.json, embeds the search hash
};

/// Exclusive ownership of an output directory for the lifetime of the object.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct PreparedData {
  TabularDataset dataset;
  DataSplit split;
  std::optional<SyntheticDataset> synthetic;
  std::string fingerprint;
};

/// SHA-256 over a canonical text rendering of features, labels and names.
std::string dataset_fingerprint(const TabularDataset& dataset);

/// Loads or generates the dataset and draws the A/B split.
PreparedData prepare_data(const PipelineConfig& config);

struct CollectStage {
  CollectionLog log;
  RedundancyMatrix redundancy;
  double wall_time_s = 0.0;
};

struct TrainStage {
  TokenCorpus corpus;
  std::vector<EpochLoss> history;
  double teacher_forced_accuracy = 0.0;
  double wall_time_s = 0.0;
};

struct SearchStage {
  SearchResult result;
  double wall_time_s = 0.0;
};

struct EvaluationStage {
  std::vector<std::size_t> subset;
  double score = 0.0;          // partition B
  double redundancy = 0.0;     // normalised, in [0, 1]
  double full_score = 0.0;     // all features, partition B
};

// Each stage reads its upstream artifacts from the output directory, checks
// their hashes and writes its own.
CollectStage run_collect_stage(const PipelineConfig& config, const PreparedData& data);
TrainStage run_train_stage(const PipelineConfig& config, const PreparedData& data);
SearchStage run_search_stage(const PipelineConfig& config, const PreparedData& data);
EvaluationStage run_evaluate_stage(const PipelineConfig& config, const PreparedData& data);

/// Re-hashes every artifact present and checks each downstream reference.
/// Throws kHashMismatch or kMissingArtifact. Returns file name -> hash.
std::map<std::string, std::string> verify_chain(const ArtifactPaths& paths);

struct BenchmarkOptions {
  bool baselines = true;
  bool write_report = true;
};

struct BenchmarkRun {
  BenchmarkReport report;
  CollectStage collect;
  TrainStage train;
  SearchStage search;
  EvaluationStage evaluation;
};

/// collect -> train -> search -> evaluate, then the baselines and the report.
BenchmarkRun run_benchmark(const PipelineConfig& config, const BenchmarkOptions& options = {});

}  // namespace fsns
