#include "fsns/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "fsns/error.hpp"
#include "fsns/random.hpp"

namespace fsns {

const char* to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kNoise: return "noise";
    case SyntheticKind::kRedundant: return "redundant";
    case SyntheticKind::kSeparable: return "separable";
  }
  return "unknown";
}

SyntheticKind parse_synthetic_kind(const std::string& text) {
  for (auto k : {SyntheticKind::kNoise, SyntheticKind::kRedundant, SyntheticKind::kSeparable})
    if (text == to_string(k)) return k;
  throw Error(ErrorKind::kInvalidArgument, "unknown synthetic kind '" + text + "'");
}

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kInvalidArgument, "synthetic spec: " + m); };
  if (informative < 1) fail("informative must be at least 1");
  if (noise < 0) fail("noise must be nonnegative");
  if (samples < 10) fail("samples must be at least 10");
  if (kind == SyntheticKind::kRedundant) {
    if (duplicates < 0) fail("duplicates must be nonnegative");
    if (correlation < 0.0 || correlation > 1.0) fail("correlation must lie in [0, 1]");
  }
  if (kind == SyntheticKind::kSeparable && !(separation > 0.0)) fail("separation must be positive");
  if (label_noise < 0.0) fail("label_noise must be nonnegative");
  const int total = informative + noise + (kind == SyntheticKind::kRedundant ? informative * duplicates : 0);
  if (total < 2) fail("the dataset needs at least two features");
}

namespace {

// Fixed per-feature contribution for the noise kind, cycling through five shapes.
double noise_kind_term(int i, double x) {
  switch (i % 5) {
    case 0: return x;
    case 1: return 2.0 * x;
    case 2: return -1.5 * x;
    case 3: return 1.5 * std::sin(std::numbers::pi / 2.0 * x);
    default: return 0.8 * (x * x - 1.0);
  }
}

double redundant_weight(int i) { return (i % 2 == 0 ? 1.0 : -1.0) * (1.0 - 0.1 * static_cast<double>(i % 5)); }

void set_binary_labels(TabularDataset& d, const Eigen::VectorXd& score, double threshold) {
  d.task = Task::kClassification;
  d.class_names = {"0", "1"};
  d.labels.resize(score.size());
  for (Eigen::Index i = 0; i < score.size(); ++i) d.labels[i] = score[i] > threshold ? 1.0 : 0.0;
}

double median(Eigen::VectorXd v) {
  std::sort(v.data(), v.data() + v.size());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset out;
  out.spec = spec;
  Rng rng = make_rng(spec.seed, 0x5E7);
  std::normal_distribution<double> normal(0.0, 1.0);

  const int m = spec.informative;
  const int copies = spec.kind == SyntheticKind::kRedundant ? m * spec.duplicates : 0;
  const int p = m + copies + spec.noise;
  const int n = spec.samples;

  TabularDataset& d = out.dataset;
  d.name = std::string("synthetic-") + to_string(spec.kind);
  d.features.resize(n, p);
  for (int j = 0; j < p; ++j) d.feature_names.push_back("f" + std::to_string(j));
  for (int j = 0; j < m; ++j) out.informative.push_back(static_cast<std::size_t>(j));

  Eigen::VectorXd classes;
  if (spec.kind == SyntheticKind::kSeparable) {
    classes.resize(n);
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < n; ++i) classes[i] = coin(rng) ? 1.0 : 0.0;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double x = normal(rng);
      if (spec.kind == SyntheticKind::kSeparable) x += classes[i] > 0.5 ? spec.separation : -spec.separation;
      d.features(i, j) = x;
    }
    for (int c = 0; c < copies; ++c) {
      const int source = c % m;
      const double rho = spec.correlation;
      d.features(i, m + c) = rho * d.features(i, source) + std::sqrt(std::max(0.0, 1.0 - rho * rho)) * normal(rng);
    }
    for (int j = m + copies; j < p; ++j) d.features(i, j) = normal(rng);
  }
  for (int c = 0; c < copies; ++c)
    out.duplicate_of.emplace_back(static_cast<std::size_t>(m + c), static_cast<std::size_t>(c % m));

  Eigen::VectorXd score(n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < m; ++j) {
      const double x = d.features(i, j);
      s += spec.kind == SyntheticKind::kNoise ? noise_kind_term(j, x) : redundant_weight(j) * x;
    }
    if (spec.kind != SyntheticKind::kSeparable) s += spec.label_noise * normal(rng);
    score[i] = s;
  }

  switch (spec.kind) {
    case SyntheticKind::kSeparable:
      d.task = Task::kClassification;
      d.class_names = {"0", "1"};
      d.labels = classes;
      break;
    case SyntheticKind::kNoise:
    case SyntheticKind::kRedundant:
      if (spec.task == Task::kRegression) {
        d.task = Task::kRegression;
        d.labels = score;
      } else {
        set_binary_labels(d, score, spec.kind == SyntheticKind::kNoise ? median(score) : 0.0);
      }
      break;
  }
  out.spec.task = d.task;
  d.validate();
  return out;
}

void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},
                     {"informative", s.informative},
                     {"noise", s.noise},
                     {"samples", s.samples},
                     {"task", to_string(s.task)},
                     {"duplicates", s.duplicates},
                     {"correlation", s.correlation},
                     {"separation", s.separation},
                     {"label_noise", s.label_noise},
                     {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  s.kind = parse_synthetic_kind(j.at("kind").get<std::string>());
  j.at("informative").get_to(s.informative);
  j.at("noise").get_to(s.noise);
  j.at("samples").get_to(s.samples);
  s.task = parse_task(j.at("task").get<std::string>());
  j.at("duplicates").get_to(s.duplicates);
  j.at("correlation").get_to(s.correlation);
  j.at("separation").get_to(s.separation);
  j.at("label_noise").get_to(s.label_noise);
  j.at("seed").get_to(s.seed);
}

void save_synthetic_metadata(const SyntheticDataset& data, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["spec"] = data.spec;
  doc["informative"] = data.informative;
  nlohmann::json dup = nlohmann::json::array();
  for (const auto& [copy, source] : data.duplicate_of) dup.push_back({{"copy", copy}, {"source", source}});
  doc["duplicates"] = dup;
  doc["n_features"] = data.dataset.n_features();
  doc["n_samples"] = data.dataset.n_samples();
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace fsns
