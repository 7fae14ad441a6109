#include "fsns/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <charconv>
#include <chrono>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fsns/error.hpp"
#include "fsns/hashing.hpp"
#include "fsns/random_forest.hpp"

namespace fsns {

namespace fs = std::filesystem;
using nlohmann::json;

ArtifactPaths::ArtifactPaths(fs::path d)
    : dir(std::move(d)),
      lock(dir / ".fsns.lock"),
      redundancy(dir / "redundancy.json"),
      collection_log(dir / "collection.jsonl"),
      collection_meta(dir / "collection.meta.json"),
      corpus(dir / "corpus.jsonl"),
      corpus_header(dir / "corpus.header.json"),
      checkpoint(dir / "model.ckpt"),
      loss_history(dir / "loss_history.json"),
      search(dir / "search.json"),
      evaluation(dir / "evaluation.json") {}

OutputLock::OutputLock(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::kIo, "cannot create output directory " + dir.string() + ": " + ec.message());
  path_ = dir / ".fsns.lock";
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0)
    throw Error(ErrorKind::kIo, "output directory " + dir.string() + " is in use (remove " + path_.string() +
                                    " if no run is active)");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

json read_json(const fs::path& path, const std::string& produced_by) {
  std::ifstream in(path);
  if (!in)
    throw Error(ErrorKind::kMissingArtifact,
                "missing artifact " + path.string() + " (run `" + produced_by + "` first)");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kIo, path.string() + ": " + e.what());
  }
}

void require_file(const fs::path& path, const std::string& produced_by) {
  if (!fs::exists(path))
    throw Error(ErrorKind::kMissingArtifact,
                "missing artifact " + path.string() + " (run `" + produced_by + "` first)");
}

void expect_hash(const std::string& recorded, const std::string& actual, const std::string& what) {
  if (recorded != actual)
    throw Error(ErrorKind::kHashMismatch, what + ": recorded " + recorded.substr(0, 12) + ", found " +
                                              actual.substr(0, 12));
}

void append_number(std::string& out, double v) {
  char buffer[32];
  const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), v);
  out.append(buffer, end);
  out.push_back(',');
}

}  // namespace

std::string dataset_fingerprint(const TabularDataset& dataset) {
  std::string text;
  text.reserve(dataset.features.size() * 12 + 256);
  text += to_string(dataset.task);
  text.push_back('\n');
  for (const auto& n : dataset.feature_names) text += n + ',';
  text.push_back('\n');
  for (const auto& n : dataset.class_names) text += n + ',';
  text.push_back('\n');
  for (Eigen::Index i = 0; i < dataset.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < dataset.features.cols(); ++j) append_number(text, dataset.features(i, j));
    append_number(text, dataset.labels[i]);
    text.push_back('\n');
  }
  return sha256_hex(text);
}

PreparedData prepare_data(const PipelineConfig& config) {
  PreparedData data;
  if (config.is_synthetic()) {
    data.synthetic = generate_synthetic(config.synthetic_spec());
    data.dataset = data.synthetic->dataset;
  } else {
    data.dataset = load_csv(config.dataset, config.dataset_task(), config.label_column);
  }
  if (data.dataset.n_samples() < 10)
    throw Error(ErrorKind::kInvalidArgument, "the pipeline needs at least 10 samples");
  if (data.dataset.n_features() < 2)
    throw Error(ErrorKind::kInvalidArgument, "the pipeline needs at least 2 features");
  data.split = split_ab(data.dataset, config.test_fraction, mix_seed(config.seed, 0x11));
  data.fingerprint = dataset_fingerprint(data.dataset);
  return data;
}

CollectStage run_collect_stage(const PipelineConfig& config, const PreparedData& data) {
  const ArtifactPaths paths(config.output_dir);
  fs::create_directories(paths.dir);
  CollectStage stage;
  const auto start = Clock::now();
  const TabularDataset part_a = take_rows(data.dataset, data.split.train_indices);
  stage.redundancy = build_matrix(part_a, parse_redundancy_metric(config.redundancy_metric), config.mi_bins);
  stage.log = run_collection(data.dataset, data.split, stage.redundancy, config.collector_config());
  stage.wall_time_s = seconds_since(start);

  save_redundancy_matrix(stage.redundancy, paths.redundancy, data.fingerprint);
  save_collection_log(stage.log, paths.collection_log);
  json meta;
  meta["format"] = "fsns.collection.v1";
  meta["dataset_hash"] = data.fingerprint;
  meta["redundancy_hash"] = sha256_file(paths.redundancy);
  meta["log_hash"] = sha256_file(paths.collection_log);
  meta["channel"] = to_string(stage.log.channel);
  meta["redundancy_metric"] = to_string(stage.log.redundancy_metric);
  meta["episodes"] = stage.log.episodes;
  meta["steps_per_episode"] = config.steps_per_episode;
  meta["n_features"] = stage.log.n_features;
  meta["records"] = stage.log.records.size();
  meta["config"] = config;
  write_json(paths.collection_meta, meta);
  return stage;
}

TrainStage run_train_stage(const PipelineConfig& config, const PreparedData& data) {
  const ArtifactPaths paths(config.output_dir);
  require_file(paths.collection_log, "collect");
  const json meta = read_json(paths.collection_meta, "collect");
  expect_hash(meta.at("dataset_hash").get<std::string>(), data.fingerprint,
              "dataset differs from the one used by `collect`");
  const std::string log_hash = sha256_file(paths.collection_log);
  expect_hash(meta.at("log_hash").get<std::string>(), log_hash, paths.collection_log.string());

  CollectionLog log = load_collection_log(paths.collection_log, data.dataset.n_features());
  log.episodes = meta.at("episodes").get<int>();

  TrainStage stage;
  const auto start = Clock::now();
  stage.corpus = build_corpus(log, config.augment_copies, mix_seed(config.seed, 0x31), log_hash);
  save_corpus(stage.corpus, paths.corpus, paths.corpus_header);
  const std::string corpus_hash = sha256_file(paths.corpus);

  SubsetEmbeddingModel model(config.model_config(), data.dataset.n_features(), stage.corpus.max_sequence_length);
  TrainOptions options;
  options.on_epoch_end = [&](const EpochLoss&, const SubsetEmbeddingModel& m) { m.save(paths.checkpoint, corpus_hash); };
  stage.history = train(model, stage.corpus, options);
  if (stage.history.empty()) model.save(paths.checkpoint, corpus_hash);
  stage.teacher_forced_accuracy = model.teacher_forced_accuracy(stage.corpus.records);
  stage.wall_time_s = seconds_since(start);

  json doc;
  doc["format"] = "fsns.loss_history.v1";
  doc["corpus_hash"] = corpus_hash;
  doc["epochs"] = stage.history;
  doc["teacher_forced_accuracy"] = stage.teacher_forced_accuracy;
  doc["parameters"] = model.parameter_count();
  doc["wall_time_s"] = stage.wall_time_s;
  write_json(paths.loss_history, doc);
  return stage;
}

SearchStage run_search_stage(const PipelineConfig& config, const PreparedData& data) {
  const ArtifactPaths paths(config.output_dir);
  require_file(paths.checkpoint, "train");
  require_file(paths.corpus, "train");
  require_file(paths.corpus_header, "train");
  TokenCorpus corpus = load_corpus(paths.corpus, paths.corpus_header);
  const std::string corpus_hash = sha256_file(paths.corpus);
  std::string recorded_corpus;
  SubsetEmbeddingModel model = SubsetEmbeddingModel::load(paths.checkpoint, &recorded_corpus);
  expect_hash(recorded_corpus, corpus_hash, "checkpoint was trained on a different corpus");
  if (model.vocabulary().n_features() != data.dataset.n_features())
    throw Error(ErrorKind::kHashMismatch, "checkpoint vocabulary does not match the dataset");

  SearchStage stage;
  const auto start = Clock::now();
  const TabularDataset part_a = take_rows(data.dataset, data.split.train_indices);
  const DataSplit inner = split_ab(part_a, config.validation_fraction, mix_seed(config.seed, 0x41));
  const ForestOptions forest = config.forest_options();
  const std::uint64_t eval_seed = config.evaluation_seed();
  SubsetScorer scorer = [&](const FeatureSubset& s) { return evaluate_subset(part_a, inner, s, eval_seed, forest); };
  stage.result = search(model, corpus, config.search_config(), scorer);
  stage.result.test_score = evaluate_subset(data.dataset, data.split, FeatureSubset(stage.result.subset), eval_seed, forest);
  stage.wall_time_s = seconds_since(start);

  json doc;
  doc["format"] = "fsns.search.v1";
  doc["model_hash"] = sha256_file(paths.checkpoint);
  doc["corpus_hash"] = corpus_hash;
  doc["result"] = stage.result;
  write_json(paths.search, doc);
  return stage;
}

EvaluationStage run_evaluate_stage(const PipelineConfig& config, const PreparedData& data) {
  const ArtifactPaths paths(config.output_dir);
  const json doc = read_json(paths.search, "search");
  const auto result = doc.at("result").get<SearchResult>();
  std::string dataset_hash;
  const RedundancyMatrix matrix = load_redundancy_matrix(paths.redundancy, &dataset_hash);
  expect_hash(dataset_hash, data.fingerprint, "dataset differs from the one used by `collect`");

  EvaluationStage stage;
  stage.subset = result.subset;
  const std::uint64_t eval_seed = config.evaluation_seed();
  const ForestOptions forest = config.forest_options();
  const FeatureSubset selected(result.subset);
  const FeatureSubset full = FeatureSubset::full(data.dataset.n_features());
  stage.score = evaluate_subset(data.dataset, data.split, selected, eval_seed, forest);
  stage.full_score = evaluate_subset(data.dataset, data.split, full, eval_seed, forest);
  stage.redundancy = normalize_redundancy(subset_redundancy(matrix, selected), subset_redundancy(matrix, full));

  json out;
  out["format"] = "fsns.evaluation.v1";
  out["search_hash"] = sha256_file(paths.search);
  out["subset"] = stage.subset;
  out["score"] = stage.score;
  out["full_score"] = stage.full_score;
  out["redundancy"] = stage.redundancy;
  out["redundancy_x100"] = stage.redundancy * 100.0;
  write_json(paths.evaluation, out);
  return stage;
}

std::map<std::string, std::string> verify_chain(const ArtifactPaths& paths) {
  std::map<std::string, std::string> hashes;
  auto hash_of = [&](const fs::path& p) -> const std::string& {
    const auto key = p.filename().string();
    auto it = hashes.find(key);
    if (it == hashes.end()) it = hashes.emplace(key, sha256_file(p)).first;
    return it->second;
  };
  if (fs::exists(paths.collection_meta)) {
    const json meta = read_json(paths.collection_meta, "collect");
    require_file(paths.redundancy, "collect");
    require_file(paths.collection_log, "collect");
    expect_hash(meta.at("redundancy_hash"), hash_of(paths.redundancy), paths.redundancy.string());
    expect_hash(meta.at("log_hash"), hash_of(paths.collection_log), paths.collection_log.string());
    hash_of(paths.collection_meta);
  }
  if (fs::exists(paths.corpus_header)) {
    const json header = read_json(paths.corpus_header, "train");
    require_file(paths.collection_log, "collect");
    expect_hash(header.at("source_hash"), hash_of(paths.collection_log), "corpus source " + paths.collection_log.string());
    hash_of(paths.corpus_header);
  }
  if (fs::exists(paths.checkpoint)) {
    std::string corpus_hash;
    SubsetEmbeddingModel::load(paths.checkpoint, &corpus_hash);
    require_file(paths.corpus, "train");
    expect_hash(corpus_hash, hash_of(paths.corpus), "checkpoint corpus " + paths.corpus.string());
    hash_of(paths.checkpoint);
  }
  if (fs::exists(paths.search)) {
    const json doc = read_json(paths.search, "search");
    expect_hash(doc.at("model_hash"), hash_of(paths.checkpoint), "search model " + paths.checkpoint.string());
    expect_hash(doc.at("corpus_hash"), hash_of(paths.corpus), "search corpus " + paths.corpus.string());
  }
  if (fs::exists(paths.evaluation)) {
    const json doc = read_json(paths.evaluation, "evaluate");
    expect_hash(doc.at("search_hash"), hash_of(paths.search), "evaluation source " + paths.search.string());
    hash_of(paths.evaluation);
  }
  return hashes;
}

BenchmarkRun run_benchmark(const PipelineConfig& config, const BenchmarkOptions& options) {
  config.validate();
  const ArtifactPaths paths(config.output_dir);
  OutputLock lock(paths.dir);
  const PreparedData data = prepare_data(config);

  BenchmarkRun run;
  run.collect = run_collect_stage(config, data);
  run.train = run_train_stage(config, data);
  run.search = run_search_stage(config, data);
  run.evaluation = run_evaluate_stage(config, data);

  const std::uint64_t eval_seed = config.evaluation_seed();
  const ForestOptions forest = config.forest_options();
  const RedundancyMatrix& matrix = run.collect.redundancy;
  const std::size_t p = data.dataset.n_features();
  const double full_raw = subset_redundancy(matrix, FeatureSubset::full(p));
  auto redundancy_x100 = [&](const std::vector<std::size_t>& subset) {
    return 100.0 * normalize_redundancy(subset_redundancy(matrix, FeatureSubset(subset)), full_raw);
  };

  BenchmarkReport& report = run.report;
  report.dataset = data.dataset.name.empty() ? config.dataset : data.dataset.name;
  report.task = to_string(data.dataset.task);
  report.n_samples = data.dataset.n_samples();
  report.n_features = p;
  if (data.synthetic) report.informative = data.synthetic->informative;
  report.config = config;
  report.environment = environment_fingerprint();

  ReportRow fsns_row;
  fsns_row.method = "fsns";
  fsns_row.subset = run.evaluation.subset;
  fsns_row.score = run.evaluation.score;
  fsns_row.redundancy = redundancy_x100(fsns_row.subset);
  fsns_row.wall_time_s = run.collect.wall_time_s + run.train.wall_time_s + run.search.wall_time_s;
  report.rows.push_back(fsns_row);

  ReportRow full_row;
  full_row.method = "full_set";
  full_row.subset = FeatureSubset::full(p).indices();
  full_row.score = run.evaluation.full_score;
  full_row.redundancy = 100.0;
  report.rows.push_back(full_row);

  if (options.baselines) {
    for (auto method : all_baselines()) {
      BaselineSpec spec;
      spec.method = method;
      spec.k = config.baseline_k > 0 ? std::min<int>(config.baseline_k, static_cast<int>(p))
                                     : static_cast<int>(fsns_row.subset.size());
      spec.forest = forest;
      spec.seed = eval_seed;
      const auto start = Clock::now();
      const BaselineResult result = run_baseline(spec, data.dataset, data.split, matrix);
      ReportRow row;
      row.method = to_string(method);
      row.subset = result.subset;
      row.score = result.score;
      row.redundancy = redundancy_x100(result.subset);
      row.wall_time_s = seconds_since(start);
      row.note = result.note;
      report.rows.push_back(std::move(row));
    }
  }

  // Importance of each selected feature under the downstream model fit on A.
  {
    const TabularDataset part_a = take_rows(data.dataset, data.split.train_indices);
    RowMatrix x(static_cast<Eigen::Index>(part_a.n_samples()), static_cast<Eigen::Index>(fsns_row.subset.size()));
    for (std::size_t c = 0; c < fsns_row.subset.size(); ++c)
      x.col(static_cast<Eigen::Index>(c)) = part_a.features.col(static_cast<Eigen::Index>(fsns_row.subset[c]));
    RandomForest model(part_a.task, part_a.n_classes(), forest, eval_seed);
    model.fit(x, part_a.labels);
    const Eigen::VectorXd importance = model.feature_importances();
    for (std::size_t c = 0; c < fsns_row.subset.size(); ++c)
      report.importance.emplace_back(fsns_row.subset[c], importance[static_cast<Eigen::Index>(c)]);
  }

  report.loss_history = run.train.history;
  report.trajectories = run.search.result.trajectories;
  report.timing = {{"collect", run.collect.wall_time_s},
                   {"train", run.train.wall_time_s},
                   {"search", run.search.wall_time_s}};
  report.artifacts = verify_chain(paths);
  if (options.write_report) emit_report(report, paths.dir);
  return run;
}

}  // namespace fsns
