#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fsns/tabular.hpp"

namespace fsns {

enum class SyntheticKind { kNoise, kRedundant, kSeparable };

const char* to_string(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(const std::string& text);

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kNoise;
  /// Features that drive the label.
  int informative = 5;
  /// Independent standard-normal features unrelated to the label.
  int noise = 45;
  int samples = 500;
  Task task = Task::kRegression;
  /// Redundant kind: near-copies per informative feature and their correlation
  /// with the source (1.0 gives exact duplicates).
  int duplicates = 1;
  double correlation = 0.95;
  /// Separable kind: class means sit at +-separation on every informative axis.
  double separation = 1.5;
  /// Standard deviation of the label noise (noise and redundant kinds).
  double label_noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  TabularDataset dataset;
  SyntheticSpec spec;
  std::vector<std::size_t> informative;
  /// (copy, source) pairs for the redundant kind.
  std::vector<std::pair<std::size_t, std::size_t>> duplicate_of;
};

/// Column layout: informative features first, then duplicates (redundant kind),
/// then noise features.
///  - noise: label = sum of fixed linear and nonlinear terms over the
///    informative features plus Gaussian noise (thresholded at its median for
///    classification);
///  - redundant: classification by the sign of a weighted sum over the
///    informative features, with correlated copies of each;
///  - separable: two Gaussian blobs (always classification).
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

void to_json(nlohmann::json& j, const SyntheticSpec& s);
void from_json(const nlohmann::json& j, SyntheticSpec& s);

/// Metadata sidecar with the spec and the ground-truth indices.
void save_synthetic_metadata(const SyntheticDataset& data, const std::filesystem::path& path);

}  // namespace fsns
