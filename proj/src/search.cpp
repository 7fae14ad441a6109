#include "fsns/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fsns/error.hpp"

namespace fsns {

void SearchConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kInvalidConfig, "search config: " + m); };
  if (n_starts < 1) fail("n_starts must be at least 1");
  if (steps < 0) fail("steps must be nonnegative");
  if (!(step_size > 0.0)) fail("step_size must be positive");
  if (lambda < 0.0) fail("lambda must be nonnegative");
  if (max_decode_length < 0) fail("max_decode_length must be nonnegative");
}

void to_json(nlohmann::json& j, const SearchConfig& c) {
  j = nlohmann::json{{"n_starts", c.n_starts},
                     {"steps", c.steps},
                     {"step_size", c.step_size},
                     {"lambda", c.lambda},
                     {"max_decode_length", c.max_decode_length},
                     {"rerank_ground_truth", c.rerank_ground_truth},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SearchConfig& c) {
  j.at("n_starts").get_to(c.n_starts);
  j.at("steps").get_to(c.steps);
  j.at("step_size").get_to(c.step_size);
  j.at("lambda").get_to(c.lambda);
  j.at("max_decode_length").get_to(c.max_decode_length);
  j.at("rerank_ground_truth").get_to(c.rerank_ground_truth);
  j.at("seed").get_to(c.seed);
}

Trajectory gradient_ascend(LatentHeads& heads, const Eigen::VectorXd& start, const SearchConfig& config) {
  config.validate();
  Trajectory out;
  Eigen::VectorXd e = start;
  for (int step = 0;; ++step) {
    const auto g = heads.evaluate(e);
    out.points.push_back(e);
    out.scores.push_back({step, g.value.performance, g.value.redundancy});
    if (step == config.steps) break;
    if (!g.performance_grad.allFinite() || !g.redundancy_grad.allFinite())
      throw Error(ErrorKind::kDivergence, "non-finite latent gradient at step " + std::to_string(step));
    e += config.step_size * (g.performance_grad - config.lambda * g.redundancy_grad);
  }
  return out;
}

FeatureSubset decode_subset(SubsetEmbeddingModel& model, const Eigen::VectorXd& latent, int max_features) {
  const Vocabulary& vocab = model.vocabulary();
  const int feature_cap = max_features > 0 ? max_features : static_cast<int>(vocab.n_features());
  std::vector<int> prefix{Vocabulary::kSos};
  std::vector<char> used(static_cast<std::size_t>(vocab.size()), 0);
  std::vector<std::size_t> features;
  while (static_cast<int>(features.size()) < feature_cap &&
         static_cast<int>(prefix.size()) < model.max_length()) {
    const Eigen::VectorXd probs = model.decode_step(latent, prefix);
    int best = -1;
    for (int t = 0; t < vocab.size(); ++t) {
      if (t == Vocabulary::kPad || t == Vocabulary::kSos || used[static_cast<std::size_t>(t)]) continue;
      if (best < 0 || probs[t] > probs[best]) best = t;
    }
    if (best < 0 || best == Vocabulary::kEos) break;
    used[static_cast<std::size_t>(best)] = 1;
    features.push_back(vocab.feature(best));
    prefix.push_back(best);
  }
  if (features.empty()) throw Error(ErrorKind::kEmptyDecode, "decoder emitted no feature before terminating");
  return FeatureSubset(features);
}

std::vector<SearchStart> select_starts(const TokenCorpus& corpus, SubsetEmbeddingModel& model, int n) {
  if (corpus.records.empty()) throw Error(ErrorKind::kEmptyInput, "corpus is empty");
  std::vector<std::size_t> order(corpus.base_count());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const SubsetRecord& ra = corpus.base(a);
    const SubsetRecord& rb = corpus.base(b);
    if (ra.v != rb.v) return ra.v > rb.v;
    if (ra.u != rb.u) return ra.u < rb.u;
    return ra.tokens < rb.tokens;
  });
  order.resize(std::min(order.size(), static_cast<std::size_t>(std::max(n, 0))));
  std::vector<SearchStart> starts;
  for (std::size_t index : order) {
    SearchStart s;
    s.base_index = index;
    s.record = corpus.base(index);
    s.latent = model.encode(s.record).mean;
    starts.push_back(std::move(s));
  }
  return starts;
}

int rank_candidates(const std::vector<SearchCandidate>& candidates, double lambda) {
  int best = -1;
  double best_score = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].failed) continue;
    const double score = candidates[i].v_hat - lambda * candidates[i].u_hat;
    if (best < 0 || score > best_score) {
      best = static_cast<int>(i);
      best_score = score;
    }
  }
  return best;
}

namespace {

std::vector<std::size_t> features_of(const SubsetRecord& record, const Vocabulary& vocab) {
  std::vector<std::size_t> out;
  for (int t : record.tokens) out.push_back(vocab.feature(t));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

SearchResult search(SubsetEmbeddingModel& model, const TokenCorpus& corpus, const SearchConfig& config,
                    const SubsetScorer& ground_truth) {
  config.validate();
  if (config.rerank_ground_truth && !ground_truth)
    throw Error(ErrorKind::kInvalidConfig, "ground-truth reranking requested without a scorer");
  const Vocabulary& vocab = model.vocabulary();
  const auto starts = select_starts(corpus, model, config.n_starts);
  ModelHeads heads(model);

  SearchResult result;
  result.lambda = config.lambda;
  std::vector<Eigen::VectorXd> endpoints;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    SearchCandidate c;
    c.start = static_cast<int>(i);
    c.start_subset = features_of(starts[i].record, vocab);
    Eigen::VectorXd endpoint = starts[i].latent;
    try {
      Trajectory t = gradient_ascend(heads, starts[i].latent, config);
      endpoint = t.points.back();
      c.endpoint_v_hat = t.scores.back().v_hat;
      c.endpoint_u_hat = t.scores.back().u_hat;
      result.trajectories.push_back(std::move(t.scores));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kDivergence) throw;
      c.failed = true;
      c.failure = e.what();
      result.trajectories.emplace_back();
      result.candidates.push_back(std::move(c));
      endpoints.push_back(endpoint);
      continue;
    }
    try {
      c.subset = decode_subset(model, endpoint, config.max_decode_length).sorted();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kEmptyDecode) throw;
      c.subset = c.start_subset;
      c.fell_back = true;
    }
    SubsetRecord decoded;
    for (auto f : c.subset) decoded.tokens.push_back(vocab.token(f));
    const auto scores = model.predict_scores(model.encode(decoded).mean);
    c.v_hat = scores.performance;
    c.u_hat = scores.redundancy;
    if (config.rerank_ground_truth) c.ground_truth = ground_truth(FeatureSubset(c.subset));
    result.candidates.push_back(std::move(c));
    endpoints.push_back(endpoint);
  }

  int best = -1;
  if (config.rerank_ground_truth) {
    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
      const auto& c = result.candidates[i];
      if (c.failed) continue;
      if (best < 0 || *c.ground_truth > *result.candidates[static_cast<std::size_t>(best)].ground_truth)
        best = static_cast<int>(i);
    }
  } else {
    best = rank_candidates(result.candidates, config.lambda);
  }
  if (best < 0) throw Error(ErrorKind::kSearchFailed, "every search start failed");
  const auto& winner = result.candidates[static_cast<std::size_t>(best)];
  result.best_candidate = best;
  result.best_embedding = endpoints[static_cast<std::size_t>(best)];
  result.subset = winner.subset;
  result.v_hat = winner.v_hat;
  result.u_hat = winner.u_hat;
  return result;
}

void to_json(nlohmann::json& j, const SearchResult& r) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& c : r.candidates) {
    nlohmann::json item{{"start", c.start},
                        {"start_subset", c.start_subset},
                        {"subset", c.subset},
                        {"fell_back", c.fell_back},
                        {"failed", c.failed},
                        {"failure", c.failure},
                        {"v_hat", c.v_hat},
                        {"u_hat", c.u_hat},
                        {"endpoint_v_hat", c.endpoint_v_hat},
                        {"endpoint_u_hat", c.endpoint_u_hat}};
    item["ground_truth"] = c.ground_truth ? nlohmann::json(*c.ground_truth) : nlohmann::json(nullptr);
    candidates.push_back(std::move(item));
  }
  nlohmann::json trajectories = nlohmann::json::array();
  for (const auto& t : r.trajectories) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : t) points.push_back({{"step", p.step}, {"v_hat", p.v_hat}, {"u_hat", p.u_hat}});
    trajectories.push_back(std::move(points));
  }
  j = nlohmann::json{{"subset", r.subset},
                     {"v_hat", r.v_hat},
                     {"u_hat", r.u_hat},
                     {"best_candidate", r.best_candidate},
                     {"lambda", r.lambda},
                     {"best_embedding", std::vector<double>(r.best_embedding.data(),
                                                            r.best_embedding.data() + r.best_embedding.size())},
                     {"candidates", std::move(candidates)},
                     {"trajectories", std::move(trajectories)}};
  j["test_score"] = r.test_score ? nlohmann::json(*r.test_score) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, SearchResult& r) {
  r.subset = j.at("subset").get<std::vector<std::size_t>>();
  r.v_hat = j.at("v_hat").get<double>();
  r.u_hat = j.at("u_hat").get<double>();
  r.best_candidate = j.at("best_candidate").get<int>();
  r.lambda = j.at("lambda").get<double>();
  const auto e = j.at("best_embedding").get<std::vector<double>>();
  r.best_embedding = Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
  r.candidates.clear();
  for (const auto& item : j.at("candidates")) {
    SearchCandidate c;
    c.start = item.at("start").get<int>();
    c.start_subset = item.at("start_subset").get<std::vector<std::size_t>>();
    c.subset = item.at("subset").get<std::vector<std::size_t>>();
    c.fell_back = item.at("fell_back").get<bool>();
    c.failed = item.at("failed").get<bool>();
    c.failure = item.at("failure").get<std::string>();
    c.v_hat = item.at("v_hat").get<double>();
    c.u_hat = item.at("u_hat").get<double>();
    c.endpoint_v_hat = item.at("endpoint_v_hat").get<double>();
    c.endpoint_u_hat = item.at("endpoint_u_hat").get<double>();
    if (!item.at("ground_truth").is_null()) c.ground_truth = item.at("ground_truth").get<double>();
    r.candidates.push_back(std::move(c));
  }
  r.trajectories.clear();
  for (const auto& t : j.at("trajectories")) {
    std::vector<TrajectoryPoint> points;
    for (const auto& p : t)
      points.push_back({p.at("step").get<int>(), p.at("v_hat").get<double>(), p.at("u_hat").get<double>()});
    r.trajectories.push_back(std::move(points));
  }
  if (!j.at("test_score").is_null()) r.test_score = j.at("test_score").get<double>();
}

}  // namespace fsns
