#include "fsns/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "fsns/error.hpp"

namespace fsns {

using nn::Graph;
using nn::Matrix;
using nn::Var;

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::kInvalidConfig, "model config: " + m); };
  if (token_embedding_dim <= 0) fail("token_embedding_dim must be positive");
  if (attention_heads <= 0 || token_embedding_dim % attention_heads != 0)
    fail("attention_heads must divide token_embedding_dim");
  if (encoder_layers < 0 || decoder_layers < 0) fail("layer counts must be nonnegative");
  if (feedforward_dim <= 0) fail("feedforward_dim must be positive");
  if (latent_dim <= 0) fail("latent_dim must be positive");
  if (evaluator_hidden <= 0 || evaluator_layers < 1) fail("evaluator needs at least one hidden layer");
  if (alpha < 0 || beta < 0 || gamma < 0 || delta < 0) fail("loss weights must be nonnegative");
  if (batch_size <= 0) fail("batch_size must be positive");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (pretrain_epochs < 0 || finetune_epochs < 0) fail("epoch counts must be nonnegative");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"token_embedding_dim", c.token_embedding_dim},
                     {"encoder_layers", c.encoder_layers},
                     {"decoder_layers", c.decoder_layers},
                     {"attention_heads", c.attention_heads},
                     {"feedforward_dim", c.feedforward_dim},
                     {"latent_dim", c.latent_dim},
                     {"evaluator_hidden", c.evaluator_hidden},
                     {"evaluator_layers", c.evaluator_layers},
                     {"alpha", c.alpha},
                     {"beta", c.beta},
                     {"gamma", c.gamma},
                     {"delta", c.delta},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"pretrain_epochs", c.pretrain_epochs},
                     {"finetune_epochs", c.finetune_epochs},
                     {"grad_clip", c.grad_clip},
                     {"initial_log_scale", c.initial_log_scale},
                     {"kl_form", c.kl_form == KlForm::kVerbatim ? "verbatim" : "standard"},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("token_embedding_dim").get_to(c.token_embedding_dim);
  j.at("encoder_layers").get_to(c.encoder_layers);
  j.at("decoder_layers").get_to(c.decoder_layers);
  j.at("attention_heads").get_to(c.attention_heads);
  j.at("feedforward_dim").get_to(c.feedforward_dim);
  j.at("latent_dim").get_to(c.latent_dim);
  j.at("evaluator_hidden").get_to(c.evaluator_hidden);
  j.at("evaluator_layers").get_to(c.evaluator_layers);
  j.at("alpha").get_to(c.alpha);
  j.at("beta").get_to(c.beta);
  j.at("gamma").get_to(c.gamma);
  j.at("delta").get_to(c.delta);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("pretrain_epochs").get_to(c.pretrain_epochs);
  j.at("finetune_epochs").get_to(c.finetune_epochs);
  j.at("grad_clip").get_to(c.grad_clip);
  j.at("initial_log_scale").get_to(c.initial_log_scale);
  c.kl_form = j.at("kl_form").get<std::string>() == "standard" ? KlForm::kStandard : KlForm::kVerbatim;
  j.at("seed").get_to(c.seed);
}

double weighted_total(const LossTerms& c, const LossWeights& w) {
  return w.alpha * c.performance + w.beta * c.reconstruction + w.gamma * c.kl + w.delta * c.redundancy;
}

double kl_term(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_scale, KlForm form) {
  if (mean.size() != log_scale.size()) throw Error(ErrorKind::kLengthMismatch, "kl_term: size mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double s = log_scale[i];
    const double m = mean[i];
    if (form == KlForm::kVerbatim)
      total += std::exp(s) - (1.0 + s) + m * m;
    else
      total += 0.5 * (std::exp(2.0 * s) - 1.0 - 2.0 * s + m * m);
  }
  return total;
}

TokenBatch make_batch(const std::vector<const SubsetRecord*>& records) {
  if (records.empty()) throw Error(ErrorKind::kEmptyInput, "empty batch");
  TokenBatch batch;
  int longest = 0;
  for (const auto* r : records) {
    if (r->tokens.empty()) throw Error(ErrorKind::kInvalidSubset, "record has no tokens");
    longest = std::max(longest, static_cast<int>(r->tokens.size()));
  }
  const int b = static_cast<int>(records.size());
  batch.encoder_layout.batch = b;
  batch.encoder_layout.length = longest;
  batch.decoder_layout.batch = b;
  batch.decoder_layout.length = longest + 1;
  batch.encoder_ids.assign(static_cast<std::size_t>(b * longest), Vocabulary::kPad);
  batch.decoder_input.assign(static_cast<std::size_t>(b * (longest + 1)), Vocabulary::kPad);
  batch.decoder_target.assign(static_cast<std::size_t>(b * (longest + 1)), Vocabulary::kPad);
  batch.decoder_mask.assign(static_cast<std::size_t>(b * (longest + 1)), 0);
  batch.v.resize(b, 1);
  batch.u.resize(b, 1);
  for (int i = 0; i < b; ++i) {
    const auto& tokens = records[static_cast<std::size_t>(i)]->tokens;
    const int n = static_cast<int>(tokens.size());
    batch.encoder_layout.lengths.push_back(n);
    batch.decoder_layout.lengths.push_back(n + 1);
    const auto enc0 = static_cast<std::size_t>(i * longest);
    const auto dec0 = static_cast<std::size_t>(i * (longest + 1));
    batch.decoder_input[dec0] = Vocabulary::kSos;
    for (int t = 0; t < n; ++t) {
      batch.encoder_ids[enc0 + static_cast<std::size_t>(t)] = tokens[static_cast<std::size_t>(t)];
      batch.decoder_input[dec0 + static_cast<std::size_t>(t) + 1] = tokens[static_cast<std::size_t>(t)];
      batch.decoder_target[dec0 + static_cast<std::size_t>(t)] = tokens[static_cast<std::size_t>(t)];
      batch.decoder_mask[dec0 + static_cast<std::size_t>(t)] = 1;
    }
    batch.decoder_target[dec0 + static_cast<std::size_t>(n)] = Vocabulary::kEos;
    batch.decoder_mask[dec0 + static_cast<std::size_t>(n)] = 1;
    batch.v(i, 0) = records[static_cast<std::size_t>(i)]->v;
    batch.u(i, 0) = records[static_cast<std::size_t>(i)]->u;
  }
  return batch;
}

namespace {

Matrix sinusoidal_table(int length, int dim) {
  Matrix table(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / dim);
      table(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return table;
}

nn::Parameter normal_parameter(const std::string& name, int rows, int cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return nn::Parameter(name, std::move(m));
}

nn::Parameter constant_parameter(const std::string& name, int rows, int cols, double value) {
  return nn::Parameter(name, Matrix::Constant(rows, cols, value));
}

}  // namespace

SubsetEmbeddingModel::AttentionBlock SubsetEmbeddingModel::make_block(const std::string& prefix, Rng& rng) {
  const int d = config_.token_embedding_dim;
  const int ff = config_.feedforward_dim;
  AttentionBlock block;
  block.query = nn::Linear(prefix + ".query", d, d, rng);
  block.key = nn::Linear(prefix + ".key", d, d, rng);
  block.value = nn::Linear(prefix + ".value", d, d, rng);
  block.output = nn::Linear(prefix + ".output", d, d, rng);
  block.norm1_gain = constant_parameter(prefix + ".norm1.gain", 1, d, 1.0);
  block.norm1_bias = constant_parameter(prefix + ".norm1.bias", 1, d, 0.0);
  block.ff_in = nn::Linear(prefix + ".ff_in", d, ff, rng);
  block.ff_out = nn::Linear(prefix + ".ff_out", ff, d, rng);
  block.norm2_gain = constant_parameter(prefix + ".norm2.gain", 1, d, 1.0);
  block.norm2_bias = constant_parameter(prefix + ".norm2.bias", 1, d, 0.0);
  return block;
}

SubsetEmbeddingModel::SubsetEmbeddingModel(const ModelConfig& config, std::size_t n_features,
                                           int max_length)
    : config_(config), vocab_(n_features), max_length_(max_length) {
  config_.validate();
  if (n_features < 1) throw Error(ErrorKind::kInvalidArgument, "model needs at least one feature");
  if (max_length < 2) throw Error(ErrorKind::kInvalidArgument, "max_length must be at least 2");
  const int d = config_.token_embedding_dim;
  const int v = vocab_.size();
  const int z = config_.latent_dim;
  Rng rng = make_rng(config_.seed, 0x30DE1);
  positional_ = sinusoidal_table(max_length_, d);

  encoder_tokens_ = normal_parameter("encoder.tokens", v, d, 1.0, rng);
  for (int l = 0; l < config_.encoder_layers; ++l)
    encoder_blocks_.push_back(make_block("encoder.block" + std::to_string(l), rng));
  encoder_norm_gain_ = constant_parameter("encoder.norm.gain", 1, d, 1.0);
  encoder_norm_bias_ = constant_parameter("encoder.norm.bias", 1, d, 0.0);
  mean_head_ = nn::Linear("encoder.mean", d, z, rng);
  log_scale_head_ = nn::Linear("encoder.log_scale", d, z, rng);
  log_scale_head_.weight.value *= 0.1;
  log_scale_head_.bias.value.setConstant(config_.initial_log_scale);

  decoder_tokens_ = normal_parameter("decoder.tokens", v, d, 1.0, rng);
  latent_projection_ = nn::Linear("decoder.latent", z, d, rng);
  for (int l = 0; l < config_.decoder_layers; ++l)
    decoder_blocks_.push_back(make_block("decoder.block" + std::to_string(l), rng));
  decoder_norm_gain_ = constant_parameter("decoder.norm.gain", 1, d, 1.0);
  decoder_norm_bias_ = constant_parameter("decoder.norm.bias", 1, d, 0.0);
  output_projection_ = nn::Linear("decoder.output", d, v, rng);

  for (Head* head : {&performance_head_, &redundancy_head_}) {
    const std::string name = head == &performance_head_ ? "performance" : "redundancy";
    int in = z;
    for (int l = 0; l < config_.evaluator_layers; ++l) {
      head->layers.emplace_back(name + ".hidden" + std::to_string(l), in, config_.evaluator_hidden, rng);
      in = config_.evaluator_hidden;
    }
    head->layers.emplace_back(name + ".out", in, 1, rng);
  }
}

std::vector<nn::Parameter*> SubsetEmbeddingModel::parameters() {
  std::vector<nn::Parameter*> out;
  auto add_block = [&out](AttentionBlock& b) {
    for (nn::Linear* l : {&b.query, &b.key, &b.value, &b.output}) {
      out.push_back(&l->weight);
      out.push_back(&l->bias);
    }
    out.push_back(&b.norm1_gain);
    out.push_back(&b.norm1_bias);
    out.push_back(&b.ff_in.weight);
    out.push_back(&b.ff_in.bias);
    out.push_back(&b.ff_out.weight);
    out.push_back(&b.ff_out.bias);
    out.push_back(&b.norm2_gain);
    out.push_back(&b.norm2_bias);
  };
  out.push_back(&encoder_tokens_);
  for (auto& b : encoder_blocks_) add_block(b);
  out.push_back(&encoder_norm_gain_);
  out.push_back(&encoder_norm_bias_);
  for (nn::Linear* l : {&mean_head_, &log_scale_head_}) {
    out.push_back(&l->weight);
    out.push_back(&l->bias);
  }
  out.push_back(&decoder_tokens_);
  out.push_back(&latent_projection_.weight);
  out.push_back(&latent_projection_.bias);
  for (auto& b : decoder_blocks_) add_block(b);
  out.push_back(&decoder_norm_gain_);
  out.push_back(&decoder_norm_bias_);
  out.push_back(&output_projection_.weight);
  out.push_back(&output_projection_.bias);
  for (Head* head : {&performance_head_, &redundancy_head_}) {
    for (auto& l : head->layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<const nn::Parameter*> SubsetEmbeddingModel::parameters() const {
  auto mutable_params = const_cast<SubsetEmbeddingModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

std::size_t SubsetEmbeddingModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

LossWeights SubsetEmbeddingModel::configured_weights() const {
  return {config_.alpha, config_.beta, config_.gamma, config_.delta};
}

Var SubsetEmbeddingModel::embed(Graph& g, nn::Parameter& table, const std::vector<int>& ids,
                                const nn::SequenceLayout& layout) {
  if (layout.length > max_length_)
    throw Error(ErrorKind::kSequenceTooLong, "sequence length " + std::to_string(layout.length) +
                                                 " exceeds positional table of " + std::to_string(max_length_));
  for (int id : ids)
    if (id < 0 || id >= vocab_.size())
      throw Error(ErrorKind::kOutOfVocabulary, "token id " + std::to_string(id) + " outside vocabulary");
  Matrix pos(layout.rows(), config_.token_embedding_dim);
  for (int b = 0; b < layout.batch; ++b)
    pos.middleRows(static_cast<Eigen::Index>(b) * layout.length, layout.length) =
        positional_.topRows(layout.length);
  return nn::add(nn::embedding(g.parameter(table), ids), g.constant(std::move(pos)));
}

Var SubsetEmbeddingModel::block_graph(Graph& g, AttentionBlock& block, const Var& x,
                                      const nn::SequenceLayout& layout, bool causal) {
  // Pre-norm residual block.
  Var h = nn::layer_norm(x, g.parameter(block.norm1_gain), g.parameter(block.norm1_bias));
  Var attended = nn::attention(block.query(g, h), block.key(g, h), block.value(g, h), layout,
                               config_.attention_heads, causal);
  Var y = nn::add(x, block.output(g, attended));
  Var h2 = nn::layer_norm(y, g.parameter(block.norm2_gain), g.parameter(block.norm2_bias));
  Var ff = block.ff_out(g, nn::relu(block.ff_in(g, h2)));
  return nn::add(y, ff);
}

Var SubsetEmbeddingModel::head_graph(Graph& g, Head& head, const Var& latent) {
  Var h = latent;
  for (std::size_t l = 0; l + 1 < head.layers.size(); ++l) h = nn::relu(head.layers[l](g, h));
  return head.layers.back()(g, h);
}

SubsetEmbeddingModel::EncoderHeads SubsetEmbeddingModel::encoder_graph(
    Graph& g, const std::vector<int>& ids, const nn::SequenceLayout& layout) {
  Var x = embed(g, encoder_tokens_, ids, layout);
  for (auto& block : encoder_blocks_) x = block_graph(g, block, x, layout, false);
  x = nn::layer_norm(x, g.parameter(encoder_norm_gain_), g.parameter(encoder_norm_bias_));
  EncoderHeads out;
  out.states = x;
  out.pooled = nn::masked_mean_pool(x, layout);
  out.mean = mean_head_(g, out.pooled);
  out.log_scale = log_scale_head_(g, out.pooled);
  return out;
}

Var SubsetEmbeddingModel::sample_graph(Graph& g, const Var& mean, const Var& log_scale,
                                       const Matrix& noise) {
  return nn::add(mean, nn::mul(g.constant(noise), nn::exp(log_scale)));
}

Var SubsetEmbeddingModel::decoder_graph(Graph& g, const Var& latent, const std::vector<int>& ids,
                                        const nn::SequenceLayout& layout) {
  Var x = embed(g, decoder_tokens_, ids, layout);
  x = nn::add(x, nn::repeat_rows(latent_projection_(g, latent), layout));
  for (auto& block : decoder_blocks_) x = block_graph(g, block, x, layout, true);
  x = nn::layer_norm(x, g.parameter(decoder_norm_gain_), g.parameter(decoder_norm_bias_));
  return output_projection_(g, x);
}

Var SubsetEmbeddingModel::performance_graph(Graph& g, const Var& latent) {
  return head_graph(g, performance_head_, latent);
}

Var SubsetEmbeddingModel::redundancy_graph(Graph& g, const Var& latent) {
  return head_graph(g, redundancy_head_, latent);
}

Var SubsetEmbeddingModel::kl_graph(Graph& g, const Var& mean, const Var& log_scale) {
  (void)g;
  const double batch = static_cast<double>(mean.rows());
  Var per_element;
  if (config_.kl_form == KlForm::kVerbatim) {
    per_element = nn::add(nn::add_scalar(nn::sub(nn::exp(log_scale), log_scale), -1.0), nn::square(mean));
  } else {
    Var two_s = nn::scale(log_scale, 2.0);
    per_element = nn::scale(
        nn::add(nn::add_scalar(nn::sub(nn::exp(two_s), two_s), -1.0), nn::square(mean)), 0.5);
  }
  return nn::scale(nn::sum(per_element), 1.0 / batch);
}

LossGraph SubsetEmbeddingModel::loss_graph(Graph& g, const TokenBatch& batch, const Matrix& noise,
                                           const LossWeights& weights) {
  LossGraph out;
  EncoderHeads enc = encoder_graph(g, batch.encoder_ids, batch.encoder_layout);
  out.mean = enc.mean;
  out.log_scale = enc.log_scale;
  if (noise.rows() != enc.mean.rows() || noise.cols() != enc.mean.cols())
    throw Error(ErrorKind::kLengthMismatch, "noise shape differs from latent batch");
  out.latent = sample_graph(g, enc.mean, enc.log_scale, noise);

  Var logits = decoder_graph(g, out.latent, batch.decoder_input, batch.decoder_layout);
  Var nll = nn::sequence_nll(logits, batch.decoder_target, batch.decoder_mask, batch.decoder_layout);
  out.reconstruction = nn::mean(nll);
  out.performance = nn::mse(performance_graph(g, out.latent), batch.v);
  out.redundancy = nn::mse(redundancy_graph(g, out.latent), batch.u);
  out.kl = kl_graph(g, enc.mean, enc.log_scale);

  out.total = nn::add(nn::add(nn::scale(out.performance, weights.alpha), nn::scale(out.reconstruction, weights.beta)),
                      nn::add(nn::scale(out.kl, weights.gamma), nn::scale(out.redundancy, weights.delta)));
  return out;
}

LatentEncoding SubsetEmbeddingModel::encode(const std::vector<int>& ids, const std::vector<char>& mask,
                                            bool stochastic, Rng* rng) {
  if (ids.size() != mask.size()) throw Error(ErrorKind::kLengthMismatch, "ids and mask differ in length");
  int length = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      if (static_cast<int>(i) != length)
        throw Error(ErrorKind::kInvalidArgument, "mask must cover a prefix of the sequence");
      ++length;
    }
  }
  if (length == 0) throw Error(ErrorKind::kInvalidSubset, "cannot encode an empty sequence");
  nn::SequenceLayout layout{1, static_cast<int>(ids.size()), {length}};
  Graph g(false);
  EncoderHeads enc = encoder_graph(g, ids, layout);
  LatentEncoding out;
  out.mean = enc.mean.value().row(0).transpose();
  out.log_scale = enc.log_scale.value().row(0).transpose();
  out.sample = out.mean;
  if (stochastic) {
    if (rng == nullptr) throw Error(ErrorKind::kInvalidArgument, "stochastic encode needs a generator");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < out.sample.size(); ++i)
      out.sample[i] = out.mean[i] + normal(*rng) * std::exp(out.log_scale[i]);
  }
  return out;
}

LatentEncoding SubsetEmbeddingModel::encode(const SubsetRecord& record) {
  return encode(record.tokens, std::vector<char>(record.tokens.size(), 1), false);
}

Eigen::VectorXd SubsetEmbeddingModel::decode_step(const Eigen::VectorXd& latent,
                                                  const std::vector<int>& prefix) {
  if (prefix.empty() || prefix.front() != Vocabulary::kSos)
    throw Error(ErrorKind::kInvalidArgument, "decode prefix must start with SOS");
  if (static_cast<int>(prefix.size()) > max_length_)
    throw Error(ErrorKind::kSequenceTooLong, "decode prefix longer than positional table");
  if (latent.size() != config_.latent_dim)
    throw Error(ErrorKind::kLengthMismatch, "latent dimension mismatch");
  Graph g(false);
  nn::SequenceLayout layout{1, static_cast<int>(prefix.size()), {static_cast<int>(prefix.size())}};
  Var z = g.constant(latent.transpose());
  Var logits = decoder_graph(g, z, prefix, layout);
  const Matrix last = logits.value().bottomRows(1);
  return nn::softmax_rows(last).row(0).transpose();
}

double SubsetEmbeddingModel::sequence_log_likelihood(const Eigen::VectorXd& latent,
                                                     const EncodedSequence& sequence) {
  if (latent.size() != config_.latent_dim)
    throw Error(ErrorKind::kLengthMismatch, "latent dimension mismatch");
  int length = 0;
  for (std::size_t i = 0; i < sequence.mask.size(); ++i)
    if (sequence.mask[i]) length = static_cast<int>(i) + 1;
  if (length == 0) return 0.0;
  std::vector<int> input(sequence.input_ids.begin(), sequence.input_ids.begin() + length);
  std::vector<int> target(sequence.target_ids.begin(), sequence.target_ids.begin() + length);
  std::vector<char> mask(sequence.mask.begin(), sequence.mask.begin() + length);
  Graph g(false);
  nn::SequenceLayout layout{1, length, {length}};
  Var logits = decoder_graph(g, g.constant(latent.transpose()), input, layout);
  Var nll = nn::sequence_nll(logits, target, mask, layout);
  return -nll.scalar();
}

LossTerms SubsetEmbeddingModel::joint_loss(const TokenBatch& batch, const LossWeights& weights, Rng* rng) {
  Matrix noise = Matrix::Zero(batch.encoder_layout.batch, config_.latent_dim);
  if (rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(*rng);
  }
  Graph g(false);
  LossGraph lg = loss_graph(g, batch, noise, weights);
  LossTerms out;
  out.performance = lg.performance.scalar();
  out.reconstruction = lg.reconstruction.scalar();
  out.kl = lg.kl.scalar();
  out.redundancy = lg.redundancy.scalar();
  out.total = lg.total.scalar();
  return out;
}

SubsetEmbeddingModel::Scores SubsetEmbeddingModel::predict_scores(const Eigen::VectorXd& latent) {
  if (latent.size() != config_.latent_dim)
    throw Error(ErrorKind::kLengthMismatch, "latent dimension mismatch");
  Graph g(false);
  Var z = g.constant(latent.transpose());
  return {performance_graph(g, z).scalar(), redundancy_graph(g, z).scalar()};
}

SubsetEmbeddingModel::ScoreGradients SubsetEmbeddingModel::score_gradients(const Eigen::VectorXd& latent) {
  if (latent.size() != config_.latent_dim)
    throw Error(ErrorKind::kLengthMismatch, "latent dimension mismatch");
  ScoreGradients out;
  {
    Graph g(false);
    Var z = g.input(latent.transpose());
    Var v = performance_graph(g, z);
    g.backward(v);
    out.value.performance = v.scalar();
    out.performance_grad = z.grad().row(0).transpose();
  }
  {
    Graph g(false);
    Var z = g.input(latent.transpose());
    Var u = redundancy_graph(g, z);
    g.backward(u);
    out.value.redundancy = u.scalar();
    out.redundancy_grad = z.grad().row(0).transpose();
  }
  return out;
}

double SubsetEmbeddingModel::teacher_forced_accuracy(const std::vector<SubsetRecord>& records) {
  std::size_t hits = 0;
  std::size_t total = 0;
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, config_.batch_size));
  for (std::size_t start = 0; start < records.size(); start += chunk) {
    std::vector<const SubsetRecord*> slice;
    for (std::size_t i = start; i < std::min(records.size(), start + chunk); ++i) slice.push_back(&records[i]);
    TokenBatch batch = make_batch(slice);
    Graph g(false);
    EncoderHeads enc = encoder_graph(g, batch.encoder_ids, batch.encoder_layout);
    Var logits = decoder_graph(g, enc.mean, batch.decoder_input, batch.decoder_layout);
    const Matrix& z = logits.value();
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      if (!batch.decoder_mask[static_cast<std::size_t>(r)]) continue;
      Eigen::Index best = 0;
      z.row(r).maxCoeff(&best);
      hits += static_cast<int>(best) == batch.decoder_target[static_cast<std::size_t>(r)];
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'S', 'N', 'S', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void SubsetEmbeddingModel::save(const std::filesystem::path& path, const std::string& corpus_hash) const {
  nlohmann::json header;
  header["config"] = config_;
  header["vocabulary"] = {{"n_features", vocab_.n_features()},
                          {"pad", Vocabulary::kPad},
                          {"sos", Vocabulary::kSos},
                          {"eos", Vocabulary::kEos}};
  header["max_length"] = max_length_;
  header["corpus_hash"] = corpus_hash;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto* p : parameters())
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  header["parameters"] = tensors;
  const std::string text = header.dump();

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t length = text.size();
    out.write(reinterpret_cast<const char*>(&length), sizeof(length));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : parameters())
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p->value.size())));
    if (!out) throw Error(ErrorKind::kIo, "failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

SubsetEmbeddingModel SubsetEmbeddingModel::load(const std::filesystem::path& path, std::string* corpus_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingArtifact, "missing model checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw Error(ErrorKind::kIo, path.string() + " is not a checkpoint");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (version != kCheckpointVersion) throw Error(ErrorKind::kIo, "unsupported checkpoint version");
  std::uint64_t length = 0;
  in.read(reinterpret_cast<char*>(&length), sizeof(length));
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(ErrorKind::kIo, "truncated checkpoint header");
  const auto header = nlohmann::json::parse(text);

  SubsetEmbeddingModel model(header.at("config").get<ModelConfig>(),
                             header.at("vocabulary").at("n_features").get<std::size_t>(),
                             header.at("max_length").get<int>());
  const auto& tensors = header.at("parameters");
  auto params = model.parameters();
  if (tensors.size() != params.size()) throw Error(ErrorKind::kIo, "checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    if (t.at("name").get<std::string>() != params[i]->name ||
        t.at("rows").get<Eigen::Index>() != params[i]->value.rows() ||
        t.at("cols").get<Eigen::Index>() != params[i]->value.cols())
      throw Error(ErrorKind::kIo, "checkpoint tensor layout mismatch at " + params[i]->name);
    in.read(reinterpret_cast<char*>(params[i]->value.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(params[i]->value.size())));
    if (!in) throw Error(ErrorKind::kIo, "truncated checkpoint tensor " + params[i]->name);
  }
  if (corpus_hash) *corpus_hash = header.value("corpus_hash", std::string{});
  return model;
}

std::vector<EpochLoss> train(SubsetEmbeddingModel& model, const TokenCorpus& corpus,
                             const TrainOptions& options) {
  if (corpus.records.empty()) throw Error(ErrorKind::kEmptyInput, "cannot train on an empty corpus");
  const nn::FlushSubnormals flush;
  nn::retain_freed_memory();
  const ModelConfig& config = model.config();
  auto params = model.parameters();
  nn::Adam adam(params, config.learning_rate);
  Rng rng = make_rng(config.seed, 0x7EA1);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::size_t> order(corpus.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const int total_epochs = config.pretrain_epochs + config.finetune_epochs;

  std::vector<EpochLoss> history;
  for (int epoch = 0; epoch < total_epochs; ++epoch) {
    EpochLoss entry;
    entry.epoch = epoch;
    entry.stage = epoch < config.pretrain_epochs ? 1 : 2;
    LossWeights weights = model.configured_weights();
    if (entry.stage == 1) weights.gamma = 0.0;
    entry.gamma_used = weights.gamma;

    std::shuffle(order.begin(), order.end(), rng);
    LossTerms sums;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      std::vector<const SubsetRecord*> slice;
      for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
        slice.push_back(&corpus.records[order[i]]);
      TokenBatch batch = make_batch(slice);
      Matrix noise(static_cast<Eigen::Index>(slice.size()), config.latent_dim);
      for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);

      Graph g;
      LossGraph lg = model.loss_graph(g, batch, noise, weights);
      const double total = lg.total.scalar();
      if (!std::isfinite(total))
        throw Error(ErrorKind::kDivergence, "non-finite training loss at epoch " + std::to_string(epoch));
      adam.zero_grad();
      g.backward(lg.total);
      adam.clip_grad_norm(config.grad_clip);
      adam.step();

      const double n = static_cast<double>(slice.size());
      sums.performance += lg.performance.scalar() * n;
      sums.reconstruction += lg.reconstruction.scalar() * n;
      sums.kl += lg.kl.scalar() * n;
      sums.redundancy += lg.redundancy.scalar() * n;
    }
    const double n = static_cast<double>(order.size());
    entry.terms.performance = sums.performance / n;
    entry.terms.reconstruction = sums.reconstruction / n;
    entry.terms.kl = sums.kl / n;
    entry.terms.redundancy = sums.redundancy / n;
    entry.terms.total = weighted_total(entry.terms, weights);
    history.push_back(entry);
    if (options.on_epoch_end) options.on_epoch_end(entry, model);
  }
  return history;
}

}  // namespace fsns
