#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fsns/redundancy.hpp"

namespace fsns {

enum class Channel { kSupervised, kUnsupervised };

const char* to_string(Channel channel);
Channel parse_channel(const std::string& text);

/// One explored subset with its performance v and normalised redundancy u.
struct LoggedSubset {
  std::vector<std::size_t> features;  // sorted ascending
  double v = 0.0;
  double u = 0.0;
  int episode = 0;
  int step = 0;
};

struct CollectionLog {
  std::vector<LoggedSubset> records;
  int episodes = 0;
  Channel channel = Channel::kSupervised;
  RedundancyMetric redundancy_metric = RedundancyMetric::kPearson;
  std::size_t n_features = 0;
};

/// Line-delimited records {"features": [...], "v": .., "u": .., "channel": ..}.
/// Collection metadata (episodes, metric, feature count) lives in a sidecar
/// written by the pipeline.
void save_collection_log(const CollectionLog& log, const std::filesystem::path& path);
CollectionLog load_collection_log(const std::filesystem::path& path, std::size_t n_features);

}  // namespace fsns
