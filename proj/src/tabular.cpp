#include "fsns/tabular.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fsns/error.hpp"
#include "fsns/random.hpp"
#include "fsns/random_forest.hpp"

namespace fsns {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid-argument";
    case ErrorKind::kMissingFile: return "missing-file";
    case ErrorKind::kUnknownLabelColumn: return "unknown-label-column";
    case ErrorKind::kNoUsableRows: return "no-usable-rows";
    case ErrorKind::kNonNumericLabel: return "non-numeric-label";
    case ErrorKind::kDegenerateSplit: return "degenerate-split";
    case ErrorKind::kInvalidSubset: return "invalid-subset";
    case ErrorKind::kTooManyFeatures: return "too-many-features";
    case ErrorKind::kLengthMismatch: return "length-mismatch";
    case ErrorKind::kRedundancyUnavailable: return "redundancy-unavailable";
    case ErrorKind::kEmptyInput: return "empty-input";
    case ErrorKind::kSequenceTooLong: return "sequence-too-long";
    case ErrorKind::kOutOfVocabulary: return "out-of-vocabulary";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kEmptyDecode: return "empty-decode";
    case ErrorKind::kSearchFailed: return "search-failed";
    case ErrorKind::kInvalidConfig: return "invalid-config";
    case ErrorKind::kMissingArtifact: return "missing-artifact";
    case ErrorKind::kHashMismatch: return "hash-mismatch";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

const char* to_string(Task task) {
  return task == Task::kClassification ? "classification" : "regression";
}

Task parse_task(const std::string& text) {
  if (text == "classification" || text == "c") return Task::kClassification;
  if (text == "regression" || text == "r") return Task::kRegression;
  throw Error(ErrorKind::kInvalidArgument, "unknown task '" + text + "'");
}

void TabularDataset::validate() const {
  if (labels.size() != features.rows())
    throw Error(ErrorKind::kInvalidArgument, "labels length differs from sample count");
  if (feature_names.size() != n_features())
    throw Error(ErrorKind::kInvalidArgument, "feature_names length differs from feature count");
  std::unordered_set<std::string> seen;
  for (const auto& name : feature_names)
    if (!seen.insert(name).second)
      throw Error(ErrorKind::kInvalidArgument, "duplicate feature name '" + name + "'");
  if (!features.allFinite() || !labels.allFinite())
    throw Error(ErrorKind::kInvalidArgument, "dataset contains non-finite values");
  if (task == Task::kClassification) {
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
      const double c = labels[i];
      if (c < 0 || c >= n_classes() || c != std::floor(c))
        throw Error(ErrorKind::kInvalidArgument, "class code out of range");
    }
  }
}

FeatureSubset::FeatureSubset(std::vector<std::size_t> indices) : indices_(std::move(indices)) {}

bool FeatureSubset::contains(std::size_t index) const {
  return std::find(indices_.begin(), indices_.end(), index) != indices_.end();
}

std::vector<std::size_t> FeatureSubset::sorted() const {
  auto out = indices_;
  std::sort(out.begin(), out.end());
  return out;
}

void FeatureSubset::validate(std::size_t n_features) const {
  if (indices_.empty()) throw Error(ErrorKind::kInvalidSubset, "feature subset is empty");
  auto sorted_indices = sorted();
  if (sorted_indices.back() >= n_features)
    throw Error(ErrorKind::kInvalidSubset,
                "feature index " + std::to_string(sorted_indices.back()) + " out of range");
  if (std::adjacent_find(sorted_indices.begin(), sorted_indices.end()) != sorted_indices.end())
    throw Error(ErrorKind::kInvalidSubset, "feature subset has duplicate indices");
}

FeatureSubset FeatureSubset::full(std::size_t n_features) {
  std::vector<std::size_t> all(n_features);
  std::iota(all.begin(), all.end(), std::size_t{0});
  return FeatureSubset(std::move(all));
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  bool was_quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
      was_quoted = true;
    } else if (ch == ',') {
      fields.push_back(was_quoted ? field : trim(field));
      field.clear();
      was_quoted = false;
    } else {
      field.push_back(ch);
    }
  }
  fields.push_back(was_quoted ? field : trim(field));
  return fields;
}

bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "?" ||
         cell == "null";
}

std::optional<double> parse_number(const std::string& cell) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

// Integer codes for a categorical column: sorted numerically when every value
// is numeric, lexicographically otherwise.
std::map<std::string, int> category_codes(const std::vector<std::string>& values,
                                          std::vector<std::string>* names_out) {
  std::set<std::string> unique(values.begin(), values.end());
  std::vector<std::string> names(unique.begin(), unique.end());
  const bool all_numeric = std::all_of(names.begin(), names.end(),
                                       [](const std::string& s) { return parse_number(s).has_value(); });
  if (all_numeric) {
    std::stable_sort(names.begin(), names.end(), [](const std::string& a, const std::string& b) {
      return *parse_number(a) < *parse_number(b);
    });
  }
  std::map<std::string, int> codes;
  for (std::size_t i = 0; i < names.size(); ++i) codes[names[i]] = static_cast<int>(i);
  if (names_out) *names_out = names;
  return codes;
}

}  // namespace

TabularDataset load_csv(const std::filesystem::path& path, Task task,
                        const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kMissingFile, "cannot open CSV file " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::kNoUsableRows, "CSV file is empty: " + path.string());
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end())
    throw Error(ErrorKind::kUnknownLabelColumn,
                "label column '" + label_column + "' not found in " + path.string());
  const auto label_pos = static_cast<std::size_t>(label_it - header.begin());

  std::vector<std::vector<std::string>> rows;
  std::size_t dropped = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() > header.size())
      throw Error(ErrorKind::kIo, path.string() + ":" + std::to_string(line_no) +
                                      ": more cells than header columns");
    cells.resize(header.size());
    if (std::any_of(cells.begin(), cells.end(), is_missing)) {
      ++dropped;
      continue;
    }
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw Error(ErrorKind::kNoUsableRows, "no complete rows in " + path.string());

  TabularDataset data;
  data.name = path.stem().string();
  data.task = task;
  data.dropped_rows = dropped;
  const std::size_t n = rows.size();
  const std::size_t p = header.size() - 1;
  data.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  data.labels.resize(static_cast<Eigen::Index>(n));

  std::size_t out_col = 0;
  for (std::size_t col = 0; col < header.size(); ++col) {
    std::vector<std::string> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = rows[i][col];

    if (col == label_pos) {
      if (task == Task::kRegression) {
        for (std::size_t i = 0; i < n; ++i) {
          auto v = parse_number(values[i]);
          if (!v)
            throw Error(ErrorKind::kNonNumericLabel,
                        "non-numeric regression label '" + values[i] + "'");
          data.labels[static_cast<Eigen::Index>(i)] = *v;
        }
      } else {
        auto codes = category_codes(values, &data.class_names);
        for (std::size_t i = 0; i < n; ++i) data.labels[static_cast<Eigen::Index>(i)] = codes[values[i]];
      }
      continue;
    }

    data.feature_names.push_back(header[col]);
    std::vector<double> numeric(n);
    bool all_numeric = true;
    for (std::size_t i = 0; i < n && all_numeric; ++i) {
      auto v = parse_number(values[i]);
      if (v) numeric[i] = *v; else all_numeric = false;
    }
    if (!all_numeric) {
      auto codes = category_codes(values, nullptr);
      for (std::size_t i = 0; i < n; ++i) numeric[i] = codes[values[i]];
    }
    for (std::size_t i = 0; i < n; ++i)
      data.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(out_col)) = numeric[i];
    ++out_col;
  }
  data.validate();
  return data;
}

void save_csv(const TabularDataset& dataset, const std::filesystem::path& path,
              const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& name : dataset.feature_names) out << name << ',';
  out << label_column << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < dataset.n_samples(); ++i) {
    for (std::size_t j = 0; j < dataset.n_features(); ++j)
      out << dataset.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) << ',';
    const double y = dataset.labels[static_cast<Eigen::Index>(i)];
    if (dataset.task == Task::kClassification)
      out << dataset.class_names[static_cast<std::size_t>(y)];
    else
      out << y;
    out << '\n';
  }
}

DataSplit split_ab(const TabularDataset& dataset, double test_fraction, std::uint64_t seed) {
  const std::size_t n = dataset.n_samples();
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error(ErrorKind::kDegenerateSplit, "test fraction must lie in (0, 1)");
  const auto n_test = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * test_fraction - 1e-9));
  if (n_test < 1 || n_test >= n)
    throw Error(ErrorKind::kDegenerateSplit,
                "test fraction " + std::to_string(test_fraction) + " leaves an empty side for " +
                    std::to_string(n) + " samples");

  Rng rng = make_rng(seed, 0x5B1);
  std::vector<std::size_t> test;

  bool stratify = dataset.task == Task::kClassification && dataset.n_classes() > 1;
  std::vector<std::vector<std::size_t>> by_class;
  if (stratify) {
    by_class.resize(static_cast<std::size_t>(dataset.n_classes()));
    for (std::size_t i = 0; i < n; ++i)
      by_class[static_cast<std::size_t>(dataset.labels[static_cast<Eigen::Index>(i)])].push_back(i);
    for (const auto& members : by_class)
      if (members.size() < 2) stratify = false;
  }

  if (stratify) {
    const std::size_t k = by_class.size();
    std::vector<std::size_t> quota(k);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double exact = static_cast<double>(by_class[c].size()) * static_cast<double>(n_test) /
                           static_cast<double>(n);
      quota[c] = std::min(static_cast<std::size_t>(std::floor(exact)), by_class[c].size() - 1);
      assigned += quota[c];
      remainders.emplace_back(-(exact - std::floor(exact)), c);
    }
    std::sort(remainders.begin(), remainders.end());
    while (assigned < n_test) {
      bool placed = false;
      for (const auto& [_, c] : remainders) {
        if (assigned >= n_test) break;
        if (quota[c] + 1 < by_class[c].size()) {
          ++quota[c];
          ++assigned;
          placed = true;
        }
      }
      if (!placed) break;
    }
    if (assigned < n_test) {
      stratify = false;
    } else {
      for (std::size_t c = 0; c < k; ++c) {
        auto members = by_class[c];
        std::shuffle(members.begin(), members.end(), rng);
        test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[c]));
      }
    }
  }
  if (!stratify) {
    test.clear();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  }

  std::sort(test.begin(), test.end());
  DataSplit split;
  split.seed = seed;
  split.test_indices = test;
  std::vector<bool> is_test(n, false);
  for (auto i : test) is_test[i] = true;
  for (std::size_t i = 0; i < n; ++i)
    if (!is_test[i]) split.train_indices.push_back(i);
  return split;
}

TabularDataset take_rows(const TabularDataset& dataset, const std::vector<std::size_t>& rows) {
  TabularDataset out;
  out.name = dataset.name;
  out.feature_names = dataset.feature_names;
  out.task = dataset.task;
  out.class_names = dataset.class_names;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), dataset.features.cols());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= dataset.n_samples()) throw Error(ErrorKind::kInvalidArgument, "row index out of range");
    out.features.row(static_cast<Eigen::Index>(i)) = dataset.features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels[static_cast<Eigen::Index>(i)] = dataset.labels[static_cast<Eigen::Index>(rows[i])];
  }
  return out;
}

double one_minus_rae(const Eigen::VectorXd& truth, const Eigen::VectorXd& predicted,
                     double train_mean) {
  if (truth.size() != predicted.size())
    throw Error(ErrorKind::kLengthMismatch, "prediction length differs from truth");
  const double numerator = (truth - predicted).cwiseAbs().sum();
  const double denominator = (truth.array() - train_mean).abs().sum();
  if (denominator == 0.0) return numerator == 0.0 ? 1.0 : 0.0;
  return 1.0 - numerator / denominator;
}

double accuracy(const Eigen::VectorXd& truth, const Eigen::VectorXd& predicted) {
  if (truth.size() != predicted.size())
    throw Error(ErrorKind::kLengthMismatch, "prediction length differs from truth");
  if (truth.size() == 0) return 0.0;
  Eigen::Index hits = 0;
  for (Eigen::Index i = 0; i < truth.size(); ++i)
    if (truth[i] == predicted[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

namespace {

RowMatrix gather(const TabularDataset& data, const std::vector<std::size_t>& rows,
                 const std::vector<std::size_t>& cols) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          data.features(static_cast<Eigen::Index>(rows[i]), static_cast<Eigen::Index>(cols[j]));
  return out;
}

Eigen::VectorXd gather_labels(const TabularDataset& data, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    out[static_cast<Eigen::Index>(i)] = data.labels[static_cast<Eigen::Index>(rows[i])];
  return out;
}

}  // namespace

double evaluate_subset(const TabularDataset& dataset, const DataSplit& split,
                       const FeatureSubset& subset, std::uint64_t seed,
                       const ForestOptions& options) {
  subset.validate(dataset.n_features());
  if (split.train_indices.empty() || split.test_indices.empty())
    throw Error(ErrorKind::kDegenerateSplit, "split has an empty side");
  const auto cols = subset.sorted();

  const RowMatrix x_train = gather(dataset, split.train_indices, cols);
  const Eigen::VectorXd y_train = gather_labels(dataset, split.train_indices);
  const RowMatrix x_test = gather(dataset, split.test_indices, cols);
  const Eigen::VectorXd y_test = gather_labels(dataset, split.test_indices);

  RandomForest forest(dataset.task, dataset.n_classes(), options, seed);
  forest.fit(x_train, y_train);
  const Eigen::VectorXd predicted = forest.predict(x_test);
  if (dataset.task == Task::kClassification) return accuracy(y_test, predicted);
  return one_minus_rae(y_test, predicted, y_train.mean());
}

std::vector<ScoredSubset> brute_force_best_subset(const TabularDataset& dataset,
                                                  const DataSplit& split,
                                                  std::size_t max_features, std::uint64_t seed,
                                                  const ForestOptions& options) {
  if (max_features > 12) throw Error(ErrorKind::kInvalidArgument, "max_features must be <= 12");
  const std::size_t p = dataset.n_features();
  if (p > max_features)
    throw Error(ErrorKind::kTooManyFeatures, std::to_string(p) + " features exceed brute-force limit " +
                                                  std::to_string(max_features));
  std::vector<ScoredSubset> out;
  const std::uint32_t limit = 1u << p;
  out.reserve(limit - 1);
  for (std::uint32_t mask = 1; mask < limit; ++mask) {
    std::vector<std::size_t> indices;
    for (std::size_t j = 0; j < p; ++j)
      if (mask & (1u << j)) indices.push_back(j);
    FeatureSubset subset(std::move(indices));
    const double score = evaluate_subset(dataset, split, subset, seed, options);
    out.push_back({std::move(subset), score});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const ScoredSubset& a, const ScoredSubset& b) { return a.score > b.score; });
  return out;
}

}  // namespace fsns
