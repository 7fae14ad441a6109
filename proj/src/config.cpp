#include "fsns/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <variant>

#include <nlohmann/json.hpp>

#include "fsns/error.hpp"

namespace fsns {

namespace {

using Member = std::variant<int PipelineConfig::*, std::uint64_t PipelineConfig::*, double PipelineConfig::*,
                            bool PipelineConfig::*, std::string PipelineConfig::*>;

struct FieldBinding {
  FieldInfo info;
  Member member;
};

FieldType type_of(const Member& m) {
  switch (m.index()) {
    case 0:
    case 1: return FieldType::kInt;
    case 2: return FieldType::kReal;
    case 3: return FieldType::kBool;
    default: return FieldType::kString;
  }
}

const std::vector<FieldBinding>& bindings() {
  static const std::vector<FieldBinding> table = [] {
    std::vector<FieldBinding> t;
    auto add = [&t](const char* name, Member member, const char* help) {
      t.push_back({{name, type_of(member), help}, member});
    };
    using C = PipelineConfig;
    add("profile", &C::profile, "defaults profile: full or desk");
    add("output_dir", &C::output_dir, "directory owning all artifacts of the run");
    add("seed", &C::seed, "global seed; every stage derives its generators from it");
    add("dataset", &C::dataset, "CSV input path (ignored when synth_kind is set)");
    add("task", &C::task, "classification or regression (CSV input)");
    add("label_column", &C::label_column, "name of the label column in the CSV header");
    add("synth_kind", &C::synth_kind, "synthetic generator: noise, redundant or separable (empty = CSV)");
    add("synth_informative", &C::synth_informative, "informative features of the synthetic dataset");
    add("synth_noise", &C::synth_noise, "pure-noise features of the synthetic dataset");
    add("synth_samples", &C::synth_samples, "rows of the synthetic dataset");
    add("synth_task", &C::synth_task, "task of the noise/redundant generators");
    add("synth_duplicates", &C::synth_duplicates, "near-copies per informative feature (redundant kind)");
    add("synth_correlation", &C::synth_correlation, "correlation of near-copies with their source");
    add("synth_separation", &C::synth_separation, "blob offset per informative axis (separable kind)");
    add("synth_label_noise", &C::synth_label_noise, "label noise standard deviation");
    add("test_fraction", &C::test_fraction, "share of rows held out as partition B");
    add("forest_trees", &C::forest_trees, "trees in the downstream random forest");
    add("episodes", &C::episodes, "collector episodes");
    add("steps_per_episode", &C::steps_per_episode, "collector steps per episode");
    add("channel", &C::channel, "performance channel: supervised or unsupervised");
    add("redundancy_metric", &C::redundancy_metric, "mutual_information, covariance or pearson");
    add("mi_bins", &C::mi_bins, "histogram bins for mutual information (0 = sqrt rule)");
    add("epsilon_start", &C::epsilon_start, "initial exploration rate");
    add("epsilon_end", &C::epsilon_end, "final exploration rate");
    add("epsilon_decay_fraction", &C::epsilon_decay_fraction, "share of episodes over which epsilon anneals");
    add("dqn_hidden", &C::dqn_hidden, "width of the two hidden layers of each Q-network");
    add("replay_capacity", &C::replay_capacity, "replay buffer capacity per agent");
    add("dqn_batch_size", &C::dqn_batch_size, "replay mini-batch size");
    add("target_sync_interval", &C::target_sync_interval, "updates between target-network syncs");
    add("discount", &C::discount, "Bellman discount");
    add("dqn_learning_rate", &C::dqn_learning_rate, "Q-network learning rate");
    add("validation_fraction", &C::validation_fraction, "validation share of partition A for supervised scoring");
    add("laplacian_neighbors", &C::laplacian_neighbors, "neighbours in the Laplacian-score graph");
    add("augment_copies", &C::augment_copies, "shuffled copies per base record");
    add("redundancy_aware", &C::redundancy_aware, "train the redundancy head and penalise it in search");
    add("embedding_dim", &C::embedding_dim, "token embedding width");
    add("encoder_layers", &C::encoder_layers, "encoder attention blocks");
    add("decoder_layers", &C::decoder_layers, "decoder attention blocks");
    add("attention_heads", &C::attention_heads, "attention heads (must divide embedding_dim)");
    add("feedforward_dim", &C::feedforward_dim, "feed-forward width inside attention blocks");
    add("latent_dim", &C::latent_dim, "latent embedding width");
    add("evaluator_hidden", &C::evaluator_hidden, "hidden width of the evaluator heads");
    add("evaluator_layers", &C::evaluator_layers, "hidden layers of the evaluator heads");
    add("alpha", &C::alpha, "performance-loss weight");
    add("beta", &C::beta, "reconstruction-loss weight");
    add("gamma", &C::gamma, "latent-alignment weight (stage 2)");
    add("delta", &C::delta, "redundancy-loss weight");
    add("batch_size", &C::batch_size, "training batch size");
    add("learning_rate", &C::learning_rate, "training learning rate");
    add("pretrain_epochs", &C::pretrain_epochs, "stage-1 epochs (gamma = 0)");
    add("finetune_epochs", &C::finetune_epochs, "stage-2 epochs");
    add("grad_clip", &C::grad_clip, "global gradient-norm clip (0 disables)");
    add("initial_log_scale", &C::initial_log_scale, "initial bias of the log-scale head");
    add("kl_form", &C::kl_form, "alignment term: verbatim or standard");
    add("n_starts", &C::n_starts, "search starts (top records by v)");
    add("search_steps", &C::search_steps, "gradient steps per start");
    add("step_size", &C::step_size, "gradient step size");
    add("lambda", &C::lambda, "redundancy trade-off in search and ranking");
    add("max_decode_length", &C::max_decode_length, "feature cap per decode (0 = feature count)");
    add("rerank_ground_truth", &C::rerank_ground_truth, "rerank decoded candidates on partition A");
    add("baseline_k", &C::baseline_k, "baseline subset size (0 = size of the selected subset)");
    return t;
  }();
  return table;
}

const std::set<std::string> kDerivedFromRedundancy{"alpha", "beta", "gamma", "delta", "lambda"};

[[noreturn]] void field_error(const std::string& field, const std::string& message) {
  throw Error(ErrorKind::kInvalidConfig, "field '" + field + "': " + message);
}

void assign_json(PipelineConfig& c, const FieldBinding& b, const nlohmann::json& value) {
  const std::string& name = b.info.name;
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (!value.is_boolean()) field_error(name, "expected true or false");
          c.*member = value.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
          if (!value.is_string()) field_error(name, "expected a string");
          c.*member = value.get<std::string>();
        } else if constexpr (std::is_same_v<T, double>) {
          if (!value.is_number()) field_error(name, "expected a number");
          c.*member = value.get<double>();
        } else {
          if (!value.is_number_integer()) field_error(name, "expected an integer");
          if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (value.is_number_unsigned())
              c.*member = value.get<std::uint64_t>();
            else if (value.get<std::int64_t>() < 0)
              field_error(name, "expected a nonnegative integer");
            else
              c.*member = static_cast<std::uint64_t>(value.get<std::int64_t>());
          } else {
            c.*member = value.get<int>();
          }
        }
      },
      b.member);
}

void assign_text(PipelineConfig& c, const FieldBinding& b, const std::string& text) {
  const std::string& name = b.info.name;
  std::visit(
      [&](auto member) {
        using T = std::remove_reference_t<decltype(c.*member)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (text == "true" || text == "1")
            c.*member = true;
          else if (text == "false" || text == "0")
            c.*member = false;
          else
            field_error(name, "expected true or false, got '" + text + "'");
        } else if constexpr (std::is_same_v<T, std::string>) {
          c.*member = text;
        } else if constexpr (std::is_same_v<T, double>) {
          std::size_t used = 0;
          double v = 0.0;
          try {
            v = std::stod(text, &used);
          } catch (const std::exception&) {
            used = 0;
          }
          if (used == 0 || used != text.size()) field_error(name, "expected a number, got '" + text + "'");
          c.*member = v;
        } else {
          T v{};
          const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
          if (ec != std::errc{} || ptr != text.data() + text.size())
            field_error(name, "expected an integer, got '" + text + "'");
          c.*member = v;
        }
      },
      b.member);
}

const FieldBinding* find_binding(const std::string& name) {
  for (const auto& b : bindings())
    if (b.info.name == name) return &b;
  return nullptr;
}

void apply_redundancy_defaults(PipelineConfig& c) {
  if (c.redundancy_aware) {
    c.alpha = 0.5;
    c.beta = 0.3;
    c.gamma = 0.001;
    c.delta = 0.2;
    c.lambda = 0.1;
  } else {
    c.alpha = 0.8;
    c.beta = 0.2;
    c.gamma = 0.001;
    c.delta = 0.0;
    c.lambda = 0.0;
  }
}

}  // namespace

const std::vector<FieldInfo>& config_fields() {
  static const std::vector<FieldInfo> fields = [] {
    std::vector<FieldInfo> out;
    for (const auto& b : bindings()) out.push_back(b.info);
    return out;
  }();
  return fields;
}

PipelineConfig profile_defaults(const std::string& profile) {
  PipelineConfig c;
  c.profile = profile;
  if (profile == "full") return c;
  if (profile != "desk") field_error("profile", "expected full or desk, got '" + profile + "'");
  // CI scale: 50 episodes and 100 + 40 epochs, with a smaller network,
  // fewer shuffled copies and a larger step size to fit a single core.
  c.episodes = 50;
  c.steps_per_episode = 5;
  c.pretrain_epochs = 100;
  c.finetune_epochs = 40;
  c.augment_copies = 4;
  c.embedding_dim = 64;
  c.attention_heads = 4;
  c.feedforward_dim = 128;
  c.latent_dim = 64;
  c.evaluator_hidden = 64;
  c.batch_size = 32;
  c.learning_rate = 1e-3;
  return c;
}

PipelineConfig resolve_config(const nlohmann::json& file, const std::map<std::string, std::string>& overrides) {
  if (!file.is_null() && !file.is_object()) throw Error(ErrorKind::kInvalidConfig, "config file must be a JSON object");
  if (file.is_object())
    for (const auto& item : file.items())
      if (!find_binding(item.key())) field_error(item.key(), "unknown field");
  for (const auto& [key, value] : overrides)
    if (!find_binding(key)) field_error(key, "unknown field");

  std::string profile = "full";
  if (file.is_object() && file.contains("profile")) {
    if (!file["profile"].is_string()) field_error("profile", "expected a string");
    profile = file["profile"].get<std::string>();
  }
  if (auto it = overrides.find("profile"); it != overrides.end()) profile = it->second;

  PipelineConfig c = profile_defaults(profile);
  std::set<std::string> explicit_fields;
  if (file.is_object())
    for (const auto& [key, value] : file.items()) {
      assign_json(c, *find_binding(key), value);
      explicit_fields.insert(key);
    }
  for (const auto& [key, value] : overrides) {
    assign_text(c, *find_binding(key), value);
    explicit_fields.insert(key);
  }
  // Redundancy-dependent defaults, unless the user spelled them out.
  PipelineConfig derived = c;
  apply_redundancy_defaults(derived);
  for (const auto& key : kDerivedFromRedundancy) {
    if (explicit_fields.count(key)) continue;
    const auto* b = find_binding(key);
    std::visit(
        [&](auto member) {
          if constexpr (std::is_same_v<std::remove_reference_t<decltype(c.*member)>, double>) c.*member = derived.*member;
        },
        b->member);
  }
  c.profile = profile;
  c.validate();
  return c;
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingFile, "config file not found: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kInvalidConfig, path.string() + ": " + e.what());
  }
}

void PipelineConfig::validate() const {
  auto require = [](bool ok, const char* field, const std::string& message) {
    if (!ok) field_error(field, message);
  };
  require(profile == "full" || profile == "desk", "profile", "expected full or desk");
  require(!output_dir.empty(), "output_dir", "must not be empty");
  if (is_synthetic()) {
    try {
      synthetic_spec().validate();
    } catch (const Error& e) {
      field_error("synth_kind", e.what());
    }
  } else {
    require(!dataset.empty(), "dataset", "a CSV path or synth_kind is required");
    require(std::filesystem::exists(dataset), "dataset", "file not found: " + dataset);
    require(task == "classification" || task == "regression", "task", "expected classification or regression");
    require(!label_column.empty(), "label_column", "must not be empty");
  }
  require(test_fraction > 0.0 && test_fraction < 1.0, "test_fraction", "must lie in (0, 1)");
  require(forest_trees >= 1, "forest_trees", "must be at least 1");
  require(episodes >= 1, "episodes", "must be at least 1");
  require(steps_per_episode >= 1, "steps_per_episode", "must be at least 1");
  require(channel == "supervised" || channel == "unsupervised", "channel", "expected supervised or unsupervised");
  try {
    parse_redundancy_metric(redundancy_metric);
  } catch (const Error&) {
    field_error("redundancy_metric", "expected mutual_information, covariance or pearson");
  }
  require(mi_bins == 0 || mi_bins >= 2, "mi_bins", "must be 0 or at least 2");
  require(epsilon_start >= 0.0 && epsilon_start <= 1.0, "epsilon_start", "must lie in [0, 1]");
  require(epsilon_end >= 0.0 && epsilon_end <= 1.0, "epsilon_end", "must lie in [0, 1]");
  require(epsilon_decay_fraction > 0.0 && epsilon_decay_fraction <= 1.0, "epsilon_decay_fraction", "must lie in (0, 1]");
  require(dqn_hidden >= 1, "dqn_hidden", "must be at least 1");
  require(replay_capacity >= 1, "replay_capacity", "must be at least 1");
  require(dqn_batch_size >= 1, "dqn_batch_size", "must be at least 1");
  require(target_sync_interval >= 1, "target_sync_interval", "must be at least 1");
  require(discount >= 0.0 && discount < 1.0, "discount", "must lie in [0, 1)");
  require(dqn_learning_rate > 0.0, "dqn_learning_rate", "must be positive");
  require(validation_fraction > 0.0 && validation_fraction < 1.0, "validation_fraction", "must lie in (0, 1)");
  require(laplacian_neighbors >= 1, "laplacian_neighbors", "must be at least 1");
  require(augment_copies >= 0, "augment_copies", "must be nonnegative");
  require(embedding_dim >= 1, "embedding_dim", "must be at least 1");
  require(attention_heads >= 1 && embedding_dim % attention_heads == 0, "attention_heads", "must divide embedding_dim");
  require(encoder_layers >= 0, "encoder_layers", "must be nonnegative");
  require(decoder_layers >= 0, "decoder_layers", "must be nonnegative");
  require(feedforward_dim >= 1, "feedforward_dim", "must be at least 1");
  require(latent_dim >= 1, "latent_dim", "must be at least 1");
  require(evaluator_hidden >= 1, "evaluator_hidden", "must be at least 1");
  require(evaluator_layers >= 1, "evaluator_layers", "must be at least 1");
  require(alpha >= 0.0, "alpha", "must be nonnegative");
  require(beta >= 0.0, "beta", "must be nonnegative");
  require(gamma >= 0.0, "gamma", "must be nonnegative");
  require(delta >= 0.0, "delta", "must be nonnegative");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(learning_rate > 0.0, "learning_rate", "must be positive");
  require(pretrain_epochs >= 0, "pretrain_epochs", "must be nonnegative");
  require(finetune_epochs >= 0, "finetune_epochs", "must be nonnegative");
  require(grad_clip >= 0.0, "grad_clip", "must be nonnegative");
  require(kl_form == "verbatim" || kl_form == "standard", "kl_form", "expected verbatim or standard");
  require(n_starts >= 1, "n_starts", "must be at least 1");
  require(search_steps >= 0, "search_steps", "must be nonnegative");
  require(step_size > 0.0, "step_size", "must be positive");
  require(lambda >= 0.0, "lambda", "must be nonnegative");
  require(max_decode_length >= 0, "max_decode_length", "must be nonnegative");
  require(baseline_k >= 0, "baseline_k", "must be nonnegative");
}

ModelConfig PipelineConfig::model_config() const {
  ModelConfig m;
  m.token_embedding_dim = embedding_dim;
  m.encoder_layers = encoder_layers;
  m.decoder_layers = decoder_layers;
  m.attention_heads = attention_heads;
  m.feedforward_dim = feedforward_dim;
  m.latent_dim = latent_dim;
  m.evaluator_hidden = evaluator_hidden;
  m.evaluator_layers = evaluator_layers;
  m.alpha = alpha;
  m.beta = beta;
  m.gamma = gamma;
  m.delta = delta;
  m.batch_size = batch_size;
  m.learning_rate = learning_rate;
  m.pretrain_epochs = pretrain_epochs;
  m.finetune_epochs = finetune_epochs;
  m.grad_clip = grad_clip;
  m.initial_log_scale = initial_log_scale;
  m.kl_form = kl_form == "standard" ? KlForm::kStandard : KlForm::kVerbatim;
  m.seed = mix_seed(seed, 0x30);
  return m;
}

SearchConfig PipelineConfig::search_config() const {
  SearchConfig s;
  s.n_starts = n_starts;
  s.steps = search_steps;
  s.step_size = step_size;
  s.lambda = lambda;
  s.max_decode_length = max_decode_length;
  s.rerank_ground_truth = rerank_ground_truth;
  s.seed = mix_seed(seed, 0x40);
  return s;
}

ForestOptions PipelineConfig::forest_options() const {
  ForestOptions f;
  f.n_trees = forest_trees;
  return f;
}

std::uint64_t PipelineConfig::evaluation_seed() const { return mix_seed(seed, 0x50); }

CollectorConfig PipelineConfig::collector_config() const {
  CollectorConfig c;
  c.episodes = episodes;
  c.steps_per_episode = steps_per_episode;
  c.channel = parse_channel(channel);
  c.epsilon_start = epsilon_start;
  c.epsilon_end = epsilon_end;
  c.epsilon_decay_fraction = epsilon_decay_fraction;
  c.dqn.hidden = dqn_hidden;
  c.dqn.replay_capacity = static_cast<std::size_t>(replay_capacity);
  c.dqn.batch_size = dqn_batch_size;
  c.dqn.target_sync_interval = target_sync_interval;
  c.dqn.discount = discount;
  c.dqn.learning_rate = dqn_learning_rate;
  c.validation_fraction = validation_fraction;
  c.laplacian_neighbors = laplacian_neighbors;
  c.forest = forest_options();
  c.seed = mix_seed(seed, 0x20);
  return c;
}

SyntheticSpec PipelineConfig::synthetic_spec() const {
  SyntheticSpec s;
  s.kind = parse_synthetic_kind(synth_kind);
  s.informative = synth_informative;
  s.noise = synth_noise;
  s.samples = synth_samples;
  s.task = parse_task(synth_task);
  s.duplicates = synth_duplicates;
  s.correlation = synth_correlation;
  s.separation = synth_separation;
  s.label_noise = synth_label_noise;
  s.seed = mix_seed(seed, 0x10);
  return s;
}

Task PipelineConfig::dataset_task() const { return parse_task(task); }

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json::object();
  for (const auto& b : bindings())
    std::visit([&](auto member) { j[b.info.name] = c.*member; }, b.member);
}

}  // namespace fsns
