#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fsns/random.hpp"
#include "fsns/tabular.hpp"

// Reverse-mode differentiation over dense row-major matrices. A Graph records
// one forward pass; backward() walks it once in reverse creation order.
namespace fsns::nn {

using Matrix = RowMatrix;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Graph;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  /// Gradient after Graph::backward(); empty when nothing flowed here.
  const Matrix& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

/// Layout of a padded batch: sequence b occupies rows [b*length, (b+1)*length)
/// and only its first lengths[b] rows are real tokens.
struct SequenceLayout {
  int batch = 0;
  int length = 0;
  std::vector<int> lengths;

  int rows() const { return batch * length; }
  bool valid_row(int row) const { return row % length < lengths[static_cast<std::size_t>(row / length)]; }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  /// With track_parameters=false, parameter leaves carry no gradient (inference).
  explicit Graph(bool track_parameters = true) : track_parameters_(track_parameters) {}

  Var constant(Matrix value);
  /// Leaf whose gradient is kept and readable through Var::grad().
  Var input(Matrix value);
  Var parameter(Parameter& p);

  /// Seeds d(loss)/d(loss) = 1 on a 1x1 node and accumulates parameter grads.
  void backward(const Var& loss);

  // Op-building interface.
  Var record(Matrix value, std::vector<int> parents, BackwardFn backward);
  const Matrix& value_of(int id) const {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    return node.param ? node.param->value : node.value;
  }
  const Matrix& grad_of(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  template <class Expr>
  void accumulate(int id, const Expr& expr) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0)
      node.grad = expr;
    else
      node.grad += expr;
  }
  Matrix& mutable_grad(int id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    std::vector<int> parents;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool track_parameters_ = true;
};

// Elementwise and algebraic ops.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast a 1xC row over a
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
Var sum(const Var& a);             // 1x1
Var mean(const Var& a);            // 1x1
Var row_sum(const Var& a);         // R x 1
Var column(const Var& a, Eigen::Index c);  // R x 1

// Sequence ops.
Var embedding(const Var& table, const std::vector<int>& ids);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var attention(const Var& q, const Var& k, const Var& v, const SequenceLayout& layout, int heads,
              bool causal);
Var masked_mean_pool(const Var& x, const SequenceLayout& layout);
Var repeat_rows(const Var& x, const SequenceLayout& layout);
/// Per-sequence sum of -log softmax(logits)[target] over rows with mask set. B x 1.
Var sequence_nll(const Var& logits, const std::vector<int>& targets, const std::vector<char>& mask,
                 const SequenceLayout& layout);
/// Mean squared error against a constant target of the same shape. 1x1.
Var mse(const Var& prediction, const Matrix& target);

/// Row-wise softmax of a plain matrix.
Matrix softmax_rows(const Matrix& logits);

/// Affine layer with weight [in, out] and bias [1, out].
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng);
  Var operator()(Graph& g, const Var& x);
};

/// Flushes subnormal floating-point results to zero for its lifetime and
/// restores the previous mode afterwards. Training produces long tails of
/// subnormal gradients (softmax rows far from their maximum) that are
/// numerically irrelevant but slow x86 arithmetic down several-fold.
class FlushSubnormals {
 public:
  FlushSubnormals();
  ~FlushSubnormals();
  FlushSubnormals(const FlushSubnormals&) = delete;
  FlushSubnormals& operator=(const FlushSubnormals&) = delete;

 private:
  unsigned int saved_ = 0;
};

/// Asks the allocator to keep freed blocks instead of returning them to the
/// system. Every batch allocates and frees the same large temporaries, and
/// round-tripping them through mmap costs more than the arithmetic.
/// Process-wide and idempotent; a no-op outside glibc.
void retain_freed_memory();

/// Adam with optional global-norm clipping.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8);

  void zero_grad();
  /// Rescales all gradients so their joint L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);
  void step();

  double learning_rate() const { return learning_rate_; }
  void set_learning_rate(double lr) { learning_rate_ = lr; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  double learning_rate_;
  double beta1_;
  double beta2_;
  double epsilon_;
  long step_count_ = 0;
};

}  // namespace fsns::nn
