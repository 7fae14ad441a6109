#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "fsns/autograd.hpp"
#include "fsns/corpus.hpp"

namespace fsns {

/// How the latent alignment term is computed from (m, sigma).
/// kVerbatim: sum(exp(sigma) - (1 + sigma) + m^2)
/// kStandard: 0.5 * sum(exp(2 sigma) - 1 - 2 sigma + m^2), the Gaussian KL with
///            sigma as log standard deviation.
enum class KlForm { kVerbatim, kStandard };

struct ModelConfig {
  int token_embedding_dim = 64;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int attention_heads = 8;
  int feedforward_dim = 256;
  int latent_dim = 64;
  int evaluator_hidden = 200;
  int evaluator_layers = 2;

  double alpha = 0.5;   // performance head
  double beta = 0.3;    // reconstruction
  double gamma = 0.001; // latent alignment
  double delta = 0.2;   // redundancy head

  int batch_size = 64;
  double learning_rate = 1e-4;
  int pretrain_epochs = 210;
  int finetune_epochs = 90;
  double grad_clip = 1.0;
  /// Initial bias of the log-scale head.
  double initial_log_scale = -2.0;
  KlForm kl_form = KlForm::kVerbatim;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct LatentEncoding {
  Eigen::VectorXd mean;
  Eigen::VectorXd log_scale;
  Eigen::VectorXd sample;
};

struct LossTerms {
  double total = 0.0;
  double performance = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double redundancy = 0.0;
};

struct LossWeights {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  double delta = 0.0;
};

/// alpha*per + beta*rec + gamma*kl + delta*red.
double weighted_total(const LossTerms& components, const LossWeights& weights);

/// Closed form of the alignment term for one (m, sigma) pair.
double kl_term(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_scale, KlForm form);

/// A padded training batch ready for the graph.
struct TokenBatch {
  nn::SequenceLayout encoder_layout;
  std::vector<int> encoder_ids;
  nn::SequenceLayout decoder_layout;
  std::vector<int> decoder_input;
  std::vector<int> decoder_target;
  std::vector<char> decoder_mask;
  nn::Matrix v;  // B x 1
  nn::Matrix u;  // B x 1
};

TokenBatch make_batch(const std::vector<const SubsetRecord*>& records);

/// Graph handles of one joint-loss evaluation.
struct LossGraph {
  nn::Var mean;
  nn::Var log_scale;
  nn::Var latent;
  nn::Var performance;
  nn::Var reconstruction;
  nn::Var kl;
  nn::Var redundancy;
  nn::Var total;
};

/// Variational transformer encoder, autoregressive transformer decoder
/// conditioned on the latent, and two scalar evaluator heads on the latent.
class SubsetEmbeddingModel {
 public:
  SubsetEmbeddingModel(const ModelConfig& config, std::size_t n_features, int max_length);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  int max_length() const { return max_length_; }
  int vocab_size() const { return vocab_.size(); }

  std::vector<nn::Parameter*> parameters();
  std::vector<const nn::Parameter*> parameters() const;
  std::size_t parameter_count() const;

  // Graph-level pieces, exposed for training and gradient checks.
  struct EncoderHeads {
    nn::Var states;  // per-token outputs of the encoder stack
    nn::Var pooled;
    nn::Var mean;
    nn::Var log_scale;
  };
  EncoderHeads encoder_graph(nn::Graph& g, const std::vector<int>& ids,
                             const nn::SequenceLayout& layout);
  nn::Var sample_graph(nn::Graph& g, const nn::Var& mean, const nn::Var& log_scale,
                       const nn::Matrix& noise);
  nn::Var decoder_graph(nn::Graph& g, const nn::Var& latent, const std::vector<int>& ids,
                        const nn::SequenceLayout& layout);
  nn::Var performance_graph(nn::Graph& g, const nn::Var& latent);
  nn::Var redundancy_graph(nn::Graph& g, const nn::Var& latent);
  nn::Var kl_graph(nn::Graph& g, const nn::Var& mean, const nn::Var& log_scale);

  /// Builds all four loss terms; `noise` is B x latent_dim (zeros for e* = m).
  LossGraph loss_graph(nn::Graph& g, const TokenBatch& batch, const nn::Matrix& noise,
                       const LossWeights& weights);

  /// Encodes one token sequence (feature tokens, PAD-padded). Stochastic mode
  /// draws the reparameterised sample from `rng`.
  LatentEncoding encode(const std::vector<int>& ids, const std::vector<char>& mask,
                        bool stochastic, Rng* rng = nullptr);
  LatentEncoding encode(const SubsetRecord& record);

  /// P(next token | latent, prefix); prefix starts with SOS.
  Eigen::VectorXd decode_step(const Eigen::VectorXd& latent, const std::vector<int>& prefix);

  /// Teacher-forced sum of log P over unmasked target positions.
  double sequence_log_likelihood(const Eigen::VectorXd& latent, const EncodedSequence& sequence);

  /// Joint loss values for a batch (noise drawn from rng when given, else e* = m).
  LossTerms joint_loss(const TokenBatch& batch, const LossWeights& weights, Rng* rng = nullptr);

  struct Scores {
    double performance = 0.0;
    double redundancy = 0.0;
  };
  Scores predict_scores(const Eigen::VectorXd& latent);

  struct ScoreGradients {
    Scores value;
    Eigen::VectorXd performance_grad;
    Eigen::VectorXd redundancy_grad;
  };
  ScoreGradients score_gradients(const Eigen::VectorXd& latent);

  /// Teacher-forced next-token accuracy over the whole corpus (latent = mean).
  double teacher_forced_accuracy(const std::vector<SubsetRecord>& records);

  void save(const std::filesystem::path& path, const std::string& corpus_hash = {}) const;
  static SubsetEmbeddingModel load(const std::filesystem::path& path, std::string* corpus_hash = nullptr);

  LossWeights configured_weights() const;

 private:
  struct AttentionBlock {
    nn::Linear query, key, value, output;
    nn::Parameter norm1_gain, norm1_bias;
    nn::Linear ff_in, ff_out;
    nn::Parameter norm2_gain, norm2_bias;
  };
  struct Head {
    std::vector<nn::Linear> layers;
  };

  AttentionBlock make_block(const std::string& prefix, Rng& rng);
  nn::Var block_graph(nn::Graph& g, AttentionBlock& block, const nn::Var& x,
                      const nn::SequenceLayout& layout, bool causal);
  nn::Var head_graph(nn::Graph& g, Head& head, const nn::Var& latent);
  nn::Var embed(nn::Graph& g, nn::Parameter& table, const std::vector<int>& ids,
                const nn::SequenceLayout& layout);

  ModelConfig config_;
  Vocabulary vocab_;
  int max_length_;
  nn::Matrix positional_;

  nn::Parameter encoder_tokens_;
  std::vector<AttentionBlock> encoder_blocks_;
  nn::Parameter encoder_norm_gain_, encoder_norm_bias_;
  nn::Linear mean_head_;
  nn::Linear log_scale_head_;

  nn::Parameter decoder_tokens_;
  nn::Linear latent_projection_;
  std::vector<AttentionBlock> decoder_blocks_;
  nn::Parameter decoder_norm_gain_, decoder_norm_bias_;
  nn::Linear output_projection_;

  Head performance_head_;
  Head redundancy_head_;
};

struct EpochLoss {
  int epoch = 0;
  int stage = 1;  // 1 = pretrain (gamma forced to 0), 2 = finetune
  LossTerms terms;
  double gamma_used = 0.0;
};

struct TrainOptions {
  /// Called after each epoch; the pipeline writes checkpoints here.
  std::function<void(const EpochLoss&, const SubsetEmbeddingModel&)> on_epoch_end;
};

/// Two-stage schedule: pretrain_epochs with gamma = 0, then finetune_epochs
/// with the configured gamma. Throws kDivergence on a non-finite loss.
std::vector<EpochLoss> train(SubsetEmbeddingModel& model, const TokenCorpus& corpus,
                             const TrainOptions& options = {});

}  // namespace fsns
