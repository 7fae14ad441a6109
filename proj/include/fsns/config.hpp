#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fsns/baselines.hpp"
#include "fsns/collector.hpp"
#include "fsns/model.hpp"
#include "fsns/search.hpp"
#include "fsns/synthetic.hpp"

namespace fsns {

/// Every setting of a pipeline run. The config file is one flat JSON object
/// whose keys are exactly these field names; the CLI exposes each as
/// --field-name (underscores become dashes).
struct PipelineConfig {
  std::string profile = "full";
  std::string output_dir = "fsns-out";
  std::uint64_t seed = 0;

  // Data source: a CSV path, or a synthetic generator when synth_kind is set.
  std::string dataset;
  std::string task = "classification";
  std::string label_column = "label";
  std::string synth_kind;
  int synth_informative = 5;
  int synth_noise = 45;
  int synth_samples = 500;
  std::string synth_task = "regression";
  int synth_duplicates = 1;
  double synth_correlation = 0.95;
  double synth_separation = 1.5;
  double synth_label_noise = 0.1;
  double test_fraction = 0.2;

  // Downstream model.
  int forest_trees = 100;

  // Collection.
  int episodes = 300;
  int steps_per_episode = 1;
  std::string channel = "supervised";
  std::string redundancy_metric = "pearson";
  int mi_bins = 0;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double epsilon_decay_fraction = 0.6;
  int dqn_hidden = 64;
  int replay_capacity = 5000;
  int dqn_batch_size = 32;
  int target_sync_interval = 50;
  double discount = 0.9;
  double dqn_learning_rate = 1e-3;
  double validation_fraction = 0.2;
  int laplacian_neighbors = 5;

  // Corpus.
  int augment_copies = 25;

  // Model and training. The loss weights default from redundancy_aware.
  bool redundancy_aware = true;
  int embedding_dim = 64;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int attention_heads = 8;
  int feedforward_dim = 256;
  int latent_dim = 64;
  int evaluator_hidden = 200;
  int evaluator_layers = 2;
  double alpha = 0.5;
  double beta = 0.3;
  double gamma = 0.001;
  double delta = 0.2;
  int batch_size = 64;
  double learning_rate = 1e-4;
  int pretrain_epochs = 210;
  int finetune_epochs = 90;
  double grad_clip = 1.0;
  double initial_log_scale = -2.0;
  std::string kl_form = "verbatim";

  // Search.
  int n_starts = 25;
  int search_steps = 20;
  double step_size = 0.1;
  double lambda = 0.1;
  int max_decode_length = 0;
  bool rerank_ground_truth = false;

  // Baselines: 0 sizes them like the selected subset.
  int baseline_k = 0;

  /// Throws kInvalidConfig naming the offending field.
  void validate() const;

  ModelConfig model_config() const;
  SearchConfig search_config() const;
  CollectorConfig collector_config() const;
  ForestOptions forest_options() const;
  /// Seed of every downstream-model evaluation (pipeline and baselines).
  std::uint64_t evaluation_seed() const;
  SyntheticSpec synthetic_spec() const;
  Task dataset_task() const;
  bool is_synthetic() const { return !synth_kind.empty(); }
};

enum class FieldType { kInt, kReal, kBool, kString };

struct FieldInfo {
  std::string name;
  FieldType type;
  std::string help;
};

/// All configurable fields in declaration order.
const std::vector<FieldInfo>& config_fields();

/// Profiles: "full" (large-scale defaults) and "desk" (CI scale).
PipelineConfig profile_defaults(const std::string& profile);

/// Resolution order: profile defaults, then `file` keys, then `overrides`
/// (textual values keyed by field name). Unknown keys and type mismatches are
/// reported per field. Loss weights and lambda follow redundancy_aware unless
/// set explicitly.
PipelineConfig resolve_config(const nlohmann::json& file, const std::map<std::string, std::string>& overrides);

nlohmann::json load_config_file(const std::filesystem::path& path);

void to_json(nlohmann::json& j, const PipelineConfig& c);

}  // namespace fsns
