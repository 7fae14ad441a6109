#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "fsns/config.hpp"
#include "fsns/error.hpp"
#include "fsns/pipeline.hpp"
#include "fsns/report.hpp"
#include "fsns/synthetic.hpp"

namespace {

using fsns::PipelineConfig;

std::string flag_name(const std::string& field) {
  std::string out = field;
  for (char& c : out)
    if (c == '_') c = '-';
  return "--" + out;
}

/// Config-file path plus one textual override slot per PipelineConfig field.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (flat object of PipelineConfig fields)")
        ->check(CLI::ExistingFile);
    for (const auto& field : fsns::config_fields())
      options[field.name] = app->add_option(flag_name(field.name), values[field.name], field.help);
  }

  std::map<std::string, std::string> given() const {
    std::map<std::string, std::string> out;
    for (const auto& [name, option] : options)
      if (option->count() > 0) out[name] = values.at(name);
    return out;
  }

  PipelineConfig resolve() const {
    nlohmann::json file;
    if (!config_path.empty()) file = fsns::load_config_file(config_path);
    PipelineConfig config = fsns::resolve_config(file, given());
    config.validate();
    return config;
  }
};

void print_stage(const char* stage, const std::filesystem::path& dir) {
  std::printf("%s: artifacts written to %s\n", stage, dir.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fsns: generative feature selection with a learned subset embedding space"};
  app.require_subcommand(1);

  auto* collect = app.add_subcommand("collect", "Explore feature subsets with per-feature agents");
  auto* train = app.add_subcommand("train", "Build the token corpus and train the embedding model");
  auto* search = app.add_subcommand("search", "Gradient search in the latent space and decode a subset");
  auto* evaluate = app.add_subcommand("evaluate", "Score the selected subset on the held-out partition");
  auto* benchmark = app.add_subcommand("benchmark", "Run every stage plus the baselines and write a report");
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset (CSV plus metadata)");

  ConfigFlags collect_flags, train_flags, search_flags, evaluate_flags, benchmark_flags;
  collect_flags.attach(collect);
  train_flags.attach(train);
  search_flags.attach(search);
  evaluate_flags.attach(evaluate);
  benchmark_flags.attach(benchmark);
  bool no_baselines = false;
  benchmark->add_flag("--no-baselines", no_baselines, "Skip the baseline rows");

  fsns::SyntheticSpec synth_spec;
  std::string synth_kind = "noise";
  std::string synth_task = "regression";
  std::string synth_output = "synthetic.csv";
  synth->add_option("--kind", synth_kind, "noise | redundant | separable")->capture_default_str();
  synth->add_option("--informative", synth_spec.informative, "Informative feature count")->capture_default_str();
  synth->add_option("--noise", synth_spec.noise, "Pure-noise feature count")->capture_default_str();
  synth->add_option("--samples", synth_spec.samples, "Row count")->capture_default_str();
  synth->add_option("--task", synth_task, "regression | classification (noise and redundant kinds)")
      ->capture_default_str();
  synth->add_option("--duplicates", synth_spec.duplicates, "Near-duplicates per informative feature")
      ->capture_default_str();
  synth->add_option("--correlation", synth_spec.correlation, "Duplicate correlation (1 = exact copy)")
      ->capture_default_str();
  synth->add_option("--separation", synth_spec.separation, "Blob centre offset")->capture_default_str();
  synth->add_option("--label-noise", synth_spec.label_noise, "Target noise level")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Generator seed")->capture_default_str();
  synth->add_option("--output", synth_output, "CSV path; metadata goes next to it as <stem>.meta.json")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      synth_spec.kind = fsns::parse_synthetic_kind(synth_kind);
      synth_spec.task = fsns::parse_task(synth_task);
      const auto data = fsns::generate_synthetic(synth_spec);
      const std::filesystem::path csv(synth_output);
      if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
      fsns::save_csv(data.dataset, csv);
      auto meta = csv;
      meta.replace_extension(".meta.json");
      fsns::save_synthetic_metadata(data, meta);
      std::printf("synth: %zu samples x %zu features -> %s (metadata %s)\n", data.dataset.n_samples(),
                  data.dataset.n_features(), csv.string().c_str(), meta.string().c_str());
      return 0;
    }

    struct Stage {
      CLI::App* app;
      ConfigFlags* flags;
    };
    for (const Stage& s : {Stage{collect, &collect_flags}, Stage{train, &train_flags}, Stage{search, &search_flags},
                           Stage{evaluate, &evaluate_flags}}) {
      if (!s.app->parsed()) continue;
      const PipelineConfig config = s.flags->resolve();
      fsns::OutputLock lock(config.output_dir);
      const auto data = fsns::prepare_data(config);
      if (s.app == collect) {
        const auto stage = fsns::run_collect_stage(config, data);
        std::printf("collect: %zu records from %d episodes in %.1fs\n", stage.log.records.size(), stage.log.episodes,
                    stage.wall_time_s);
      } else if (s.app == train) {
        const auto stage = fsns::run_train_stage(config, data);
        const double last = stage.history.empty() ? 0.0 : stage.history.back().terms.total;
        std::printf("train: %zu records, %zu epochs, final loss %.5f, teacher-forced accuracy %.4f, %.1fs\n",
                    stage.corpus.records.size(), stage.history.size(), last, stage.teacher_forced_accuracy,
                    stage.wall_time_s);
      } else if (s.app == search) {
        const auto stage = fsns::run_search_stage(config, data);
        std::printf("search: %zu features selected, score on B %.4f\n", stage.result.subset.size(),
                    stage.result.test_score.value_or(0.0));
      } else {
        const auto stage = fsns::run_evaluate_stage(config, data);
        std::printf("evaluate: %zu features, score on B %.4f (all features %.4f), redundancy %.1f\n",
                    stage.subset.size(), stage.score, stage.full_score, stage.redundancy * 100.0);
      }
      print_stage(s.app->get_name().c_str(), config.output_dir);
      return 0;
    }

    if (benchmark->parsed()) {
      const PipelineConfig config = benchmark_flags.resolve();
      fsns::BenchmarkOptions options;
      options.baselines = !no_baselines;
      const auto run = fsns::run_benchmark(config, options);
      std::cout << fsns::format_table(run.report);
      print_stage("benchmark", config.output_dir);
      return 0;
    }
  } catch (const fsns::Error& e) {
    std::fprintf(stderr, "fsns: error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fsns: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
