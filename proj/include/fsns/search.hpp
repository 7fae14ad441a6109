#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "fsns/model.hpp"

namespace fsns {

struct SearchConfig {
  int n_starts = 25;
  int steps = 20;
  double step_size = 0.1;
  double lambda = 0.1;
  /// Maximum number of feature tokens a decode may emit; 0 = number of features.
  int max_decode_length = 0;
  /// Re-rank decoded candidates with a caller-supplied ground-truth scorer.
  bool rerank_ground_truth = false;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SearchConfig& c);
void from_json(const nlohmann::json& j, SearchConfig& c);

/// Scalar heads over the latent space together with their gradients.
class LatentHeads {
 public:
  virtual ~LatentHeads() = default;
  virtual SubsetEmbeddingModel::ScoreGradients evaluate(const Eigen::VectorXd& latent) = 0;
};

/// The trained model's performance and redundancy evaluators.
class ModelHeads : public LatentHeads {
 public:
  explicit ModelHeads(SubsetEmbeddingModel& model) : model_(model) {}
  SubsetEmbeddingModel::ScoreGradients evaluate(const Eigen::VectorXd& latent) override {
    return model_.score_gradients(latent);
  }

 private:
  SubsetEmbeddingModel& model_;
};

struct TrajectoryPoint {
  int step = 0;
  double v_hat = 0.0;
  double u_hat = 0.0;
};

struct Trajectory {
  std::vector<Eigen::VectorXd> points;  // steps + 1 entries, start included
  std::vector<TrajectoryPoint> scores;  // same length as points
};

/// e <- e + step_size * (grad v_hat - lambda * grad u_hat), `steps` times.
/// Throws kDivergence on a non-finite gradient.
Trajectory gradient_ascend(LatentHeads& heads, const Eigen::VectorXd& start, const SearchConfig& config);

/// Constrained greedy decode from SOS: specials and already-emitted features
/// are skipped in favour of the next-best token; stops at EOS, after
/// `max_features` features, or at the positional limit. Throws kEmptyDecode
/// when no feature was emitted.
FeatureSubset decode_subset(SubsetEmbeddingModel& model, const Eigen::VectorXd& latent, int max_features);

struct SearchStart {
  std::size_t base_index = 0;  // into the corpus base records
  SubsetRecord record;
  Eigen::VectorXd latent;
};

/// Encodes (deterministically) the n base records with the highest v. Ties
/// are broken by lower u, then lexicographic token order.
std::vector<SearchStart> select_starts(const TokenCorpus& corpus, SubsetEmbeddingModel& model, int n);

struct SearchCandidate {
  int start = 0;
  std::vector<std::size_t> start_subset;
  std::vector<std::size_t> subset;  // decoded, sorted
  bool fell_back = false;           // decode failed; start subset used instead
  bool failed = false;              // ascent diverged; candidate excluded
  std::string failure;
  double v_hat = 0.0;  // predicted scores of the re-encoded decoded subset
  double u_hat = 0.0;
  double endpoint_v_hat = 0.0;  // predicted scores at the ascent endpoint
  double endpoint_u_hat = 0.0;
  std::optional<double> ground_truth;
};

struct SearchResult {
  Eigen::VectorXd best_embedding;
  std::vector<std::size_t> subset;
  double v_hat = 0.0;
  double u_hat = 0.0;
  int best_candidate = -1;
  double lambda = 0.0;
  std::vector<SearchCandidate> candidates;
  std::vector<std::vector<TrajectoryPoint>> trajectories;
  std::optional<double> test_score;  // filled by the harness (partition B)
};

void to_json(nlohmann::json& j, const SearchResult& r);
void from_json(const nlohmann::json& j, SearchResult& r);

/// Index of the candidate maximising v_hat - lambda * u_hat (first on ties;
/// failed candidates skipped). -1 when none is eligible.
int rank_candidates(const std::vector<SearchCandidate>& candidates, double lambda);

using SubsetScorer = std::function<double(const FeatureSubset&)>;

/// Ascend from every start, decode, score and return the best candidate.
/// Throws kSearchFailed when every start fails.
SearchResult search(SubsetEmbeddingModel& model, const TokenCorpus& corpus, const SearchConfig& config,
                    const SubsetScorer& ground_truth = {});

}  // namespace fsns
