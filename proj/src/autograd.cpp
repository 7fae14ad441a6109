#include "fsns/autograd.hpp"

#include <cmath>
#include <limits>

#include "fsns/error.hpp"

#if defined(__SSE__)
#include <xmmintrin.h>
#endif
#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fsns::nn {

const Matrix& Var::value() const { return graph_->value_of(id_); }
const Matrix& Var::grad() const { return graph_->grad_of(id_); }

Var Graph::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::input(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::parameter(Parameter& p) {
  Node node;
  node.requires_grad = track_parameters_;
  node.param = &p;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Graph::record(Matrix value, std::vector<int> parents, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (int p : parents) node.requires_grad = node.requires_grad || requires_grad(p);
  node.parents = std::move(parents);
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Graph::mutable_grad(int id) {
  Node& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.size() == 0) {
    const Matrix& v = value_of(id);
    node.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return node.grad;
}

void Graph::backward(const Var& loss) {
  if (loss.graph() != this) throw Error(ErrorKind::kInvalidArgument, "loss belongs to another graph");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw Error(ErrorKind::kInvalidArgument, "backward needs a scalar loss");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  nodes_[static_cast<std::size_t>(loss.id())].grad = Matrix::Ones(1, 1);
  for (int id = loss.id(); id >= 0; --id) {
    Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.grad.size() == 0 || !node.requires_grad) continue;
    if (node.backward) node.backward(*this, id);
    if (node.param) node.param->grad += nodes_[static_cast<std::size_t>(id)].grad;
  }
}

namespace {

void same_graph(const Var& a, const Var& b) {
  if (a.graph() != b.graph()) throw Error(ErrorKind::kInvalidArgument, "operands live in different graphs");
}

void same_shape(const Var& a, const Var& b, const char* op) {
  same_graph(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorKind::kLengthMismatch, std::string(op) + ": shape mismatch");
}

}  // namespace

#if defined(__SSE__)
// FTZ (bit 15) and DAZ (bit 6) of MXCSR.
FlushSubnormals::FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
FlushSubnormals::~FlushSubnormals() { _mm_setcsr(saved_); }
#else
FlushSubnormals::FlushSubnormals() = default;
FlushSubnormals::~FlushSubnormals() = default;
#endif

void retain_freed_memory() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)once;
#endif
}

Var matmul(const Var& a, const Var& b) {
  same_graph(a, b);
  if (a.cols() != b.rows()) throw Error(ErrorKind::kLengthMismatch, "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  const int ia = a.id();
  const int ib = b.id();
  return a.graph()->record(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
    const Matrix& d = g.grad_of(self);
    if (g.requires_grad(ia)) g.accumulate(ia, d * g.value_of(ib).transpose());
    if (g.requires_grad(ib)) g.accumulate(ib, g.value_of(ia).transpose() * d);
  });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  const int ia = a.id();
  const int ib = b.id();
  return a.graph()->record(a.value() + b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
    g.accumulate(ia, g.grad_of(self));
    g.accumulate(ib, g.grad_of(self));
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  const int ia = a.id();
  const int ib = b.id();
  return a.graph()->record(a.value() - b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
    g.accumulate(ia, g.grad_of(self));
    g.accumulate(ib, -g.grad_of(self));
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  const int ia = a.id();
  const int ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return a.graph()->record(std::move(out), {ia, ib}, [ia, ib](Graph& g, int self) {
    const Matrix& d = g.grad_of(self);
    if (g.requires_grad(ia)) g.accumulate(ia, d.cwiseProduct(g.value_of(ib)));
    if (g.requires_grad(ib)) g.accumulate(ib, d.cwiseProduct(g.value_of(ia)));
  });
}

Var add_row(const Var& a, const Var& row) {
  same_graph(a, row);
  if (row.rows() != 1 || row.cols() != a.cols())
    throw Error(ErrorKind::kLengthMismatch, "add_row: bias shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const int ia = a.id();
  const int ir = row.id();
  return a.graph()->record(std::move(out), {ia, ir}, [ia, ir](Graph& g, int self) {
    const Matrix& d = g.grad_of(self);
    g.accumulate(ia, d);
    if (g.requires_grad(ir)) g.accumulate(ir, d.colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.graph()->record(a.value() * s, {ia}, [ia, s](Graph& g, int self) {
    g.accumulate(ia, g.grad_of(self) * s);
  });
}

Var add_scalar(const Var& a, double s) {
  const int ia = a.id();
  Matrix out = a.value().array() + s;
  return a.graph()->record(std::move(out), {ia}, [ia](Graph& g, int self) {
    g.accumulate(ia, g.grad_of(self));
  });
}

Var relu(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().cwiseMax(0.0);
  return a.graph()->record(std::move(out), {ia}, [ia](Graph& g, int self) {
    const Matrix mask = (g.value_of(ia).array() > 0.0).cast<double>().matrix();
    g.accumulate(ia, g.grad_of(self).cwiseProduct(mask));
  });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().array().tanh().matrix();
  return a.graph()->record(std::move(out), {ia}, [ia](Graph& g, int self) {
    const Matrix& y = g.value_of(self);
    g.accumulate(ia, g.grad_of(self).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var exp(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().array().exp().matrix();
  return a.graph()->record(std::move(out), {ia}, [ia](Graph& g, int self) {
    g.accumulate(ia, g.grad_of(self).cwiseProduct(g.value_of(self)));
  });
}

Var square(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().array().square().matrix();
  return a.graph()->record(std::move(out), {ia}, [ia](Graph& g, int self) {
    g.accumulate(ia, 2.0 * g.grad_of(self).cwiseProduct(g.value_of(ia)));
  });
}

Var sum(const Var& a) {
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph()->record(std::move(out), {ia}, [ia](Graph& g, int self) {
    const Matrix& x = g.value_of(ia);
    g.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g.grad_of(self)(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var row_sum(const Var& a) {
  const int ia = a.id();
  Matrix out = a.value().rowwise().sum();
  return a.graph()->record(std::move(out), {ia}, [ia](Graph& g, int self) {
    const Matrix& x = g.value_of(ia);
    Matrix d = g.grad_of(self).col(0).replicate(1, x.cols());
    g.accumulate(ia, d);
  });
}

Var column(const Var& a, Eigen::Index c) {
  if (c < 0 || c >= a.cols()) throw Error(ErrorKind::kInvalidArgument, "column index out of range");
  const int ia = a.id();
  Matrix out = a.value().col(c);
  return a.graph()->record(std::move(out), {ia}, [ia, c](Graph& g, int self) {
    Matrix& d = g.mutable_grad(ia);
    d.col(c) += g.grad_of(self).col(0);
  });
}

Var embedding(const Var& table, const std::vector<int>& ids) {
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows())
      throw Error(ErrorKind::kOutOfVocabulary, "token id " + std::to_string(ids[i]) + " outside vocabulary");
    out.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  const int it = table.id();
  return table.graph()->record(std::move(out), {it}, [it, ids](Graph& g, int self) {
    Matrix& d = g.mutable_grad(it);
    const Matrix& up = g.grad_of(self);
    for (std::size_t i = 0; i < ids.size(); ++i) d.row(ids[i]) += up.row(static_cast<Eigen::Index>(i));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  same_graph(x, gain);
  same_graph(x, bias);
  const Matrix& in = x.value();
  const Eigen::Index rows = in.rows();
  const Eigen::Index cols = in.cols();
  if (gain.cols() != cols || bias.cols() != cols)
    throw Error(ErrorKind::kLengthMismatch, "layer_norm: parameter width mismatch");
  Matrix normalized(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mu = in.row(r).mean();
    const double var = (in.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    normalized.row(r) = (in.row(r).array() - mu) * inv_std[r];
  }
  Matrix out = (normalized.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const int ix = x.id();
  const int ig = gain.id();
  const int ib = bias.id();
  return x.graph()->record(
      std::move(out), {ix, ig, ib},
      [ix, ig, ib, normalized = std::move(normalized), inv_std = std::move(inv_std)](Graph& g, int self) {
        const Matrix& d = g.grad_of(self);
        if (g.requires_grad(ig)) g.accumulate(ig, d.cwiseProduct(normalized).colwise().sum());
        if (g.requires_grad(ib)) g.accumulate(ib, d.colwise().sum());
        if (g.requires_grad(ix)) {
          const Matrix dn = (d.array().rowwise() * g.value_of(ig).row(0).array()).matrix();
          Matrix dx(d.rows(), d.cols());
          for (Eigen::Index r = 0; r < d.rows(); ++r) {
            const double m1 = dn.row(r).mean();
            const double m2 = dn.row(r).cwiseProduct(normalized.row(r)).mean();
            dx.row(r) = (dn.row(r).array() - m1 - normalized.row(r).array() * m2) * inv_std[r];
          }
          g.accumulate(ix, dx);
        }
      });
}

Var attention(const Var& q, const Var& k, const Var& v, const SequenceLayout& layout, int heads,
              bool causal) {
  same_shape(q, k, "attention");
  same_shape(q, v, "attention");
  const Eigen::Index d_model = q.cols();
  if (heads < 1 || d_model % heads != 0)
    throw Error(ErrorKind::kInvalidArgument, "attention: heads must divide model width");
  if (q.rows() != layout.rows()) throw Error(ErrorKind::kLengthMismatch, "attention: layout rows mismatch");
  const Eigen::Index dk = d_model / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dk));
  const int length = layout.length;

  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  Matrix out = Matrix::Zero(qv.rows(), d_model);
  std::vector<Matrix> probs(static_cast<std::size_t>(layout.batch * heads));

  for (int b = 0; b < layout.batch; ++b) {
    const int n_keys = layout.lengths[static_cast<std::size_t>(b)];
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * length;
    for (int h = 0; h < heads; ++h) {
      const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
      Matrix scores = qv.block(r0, c0, length, dk) * kv.block(r0, c0, n_keys, dk).transpose();
      scores *= scale_factor;
      for (int i = 0; i < length; ++i) {
        const int visible = causal ? std::min(i + 1, n_keys) : n_keys;
        for (int j = visible; j < n_keys; ++j) scores(i, j) = -std::numeric_limits<double>::infinity();
      }
      Matrix p = softmax_rows(scores);
      out.block(r0, c0, length, dk) = p * vv.block(r0, c0, n_keys, dk);
      probs[static_cast<std::size_t>(b * heads + h)] = std::move(p);
    }
  }

  const int iq = q.id();
  const int ik = k.id();
  const int iv = v.id();
  return q.graph()->record(
      std::move(out), {iq, ik, iv},
      [iq, ik, iv, layout, heads, dk, scale_factor, probs = std::move(probs)](Graph& g, int self) {
        const Matrix& d = g.grad_of(self);
        const Matrix& qv = g.value_of(iq);
        const Matrix& kv = g.value_of(ik);
        const Matrix& vv = g.value_of(iv);
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dkm = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dv = Matrix::Zero(qv.rows(), qv.cols());
        const int length = layout.length;
        for (int b = 0; b < layout.batch; ++b) {
          const int n_keys = layout.lengths[static_cast<std::size_t>(b)];
          const Eigen::Index r0 = static_cast<Eigen::Index>(b) * length;
          for (int h = 0; h < heads; ++h) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(h) * dk;
            const Matrix& p = probs[static_cast<std::size_t>(b * heads + h)];
            const auto d_out = d.block(r0, c0, length, dk);
            dv.block(r0, c0, n_keys, dk) += p.transpose() * d_out;
            Matrix dp = d_out * vv.block(r0, c0, n_keys, dk).transpose();
            const Eigen::VectorXd row_dot = dp.cwiseProduct(p).rowwise().sum();
            Matrix ds = p.cwiseProduct(Matrix(dp.colwise() - row_dot));
            ds *= scale_factor;
            dq.block(r0, c0, length, dk) += ds * kv.block(r0, c0, n_keys, dk);
            dkm.block(r0, c0, n_keys, dk) += ds.transpose() * qv.block(r0, c0, length, dk);
          }
        }
        g.accumulate(iq, dq);
        g.accumulate(ik, dkm);
        g.accumulate(iv, dv);
      });
}

Var masked_mean_pool(const Var& x, const SequenceLayout& layout) {
  if (x.rows() != layout.rows()) throw Error(ErrorKind::kLengthMismatch, "pool: layout rows mismatch");
  const Matrix& in = x.value();
  Matrix out = Matrix::Zero(layout.batch, in.cols());
  for (int b = 0; b < layout.batch; ++b) {
    const int n = layout.lengths[static_cast<std::size_t>(b)];
    out.row(b) = in.block(static_cast<Eigen::Index>(b) * layout.length, 0, n, in.cols()).colwise().sum() /
                 static_cast<double>(n);
  }
  const int ix = x.id();
  return x.graph()->record(std::move(out), {ix}, [ix, layout](Graph& g, int self) {
    const Matrix& d = g.grad_of(self);
    Matrix dx = Matrix::Zero(layout.rows(), d.cols());
    for (int b = 0; b < layout.batch; ++b) {
      const int n = layout.lengths[static_cast<std::size_t>(b)];
      for (int t = 0; t < n; ++t)
        dx.row(static_cast<Eigen::Index>(b) * layout.length + t) = d.row(b) / static_cast<double>(n);
    }
    g.accumulate(ix, dx);
  });
}

Var repeat_rows(const Var& x, const SequenceLayout& layout) {
  if (x.rows() != layout.batch) throw Error(ErrorKind::kLengthMismatch, "repeat_rows: batch mismatch");
  const Matrix& in = x.value();
  Matrix out(layout.rows(), in.cols());
  for (int b = 0; b < layout.batch; ++b)
    out.middleRows(static_cast<Eigen::Index>(b) * layout.length, layout.length) =
        in.row(b).replicate(layout.length, 1);
  const int ix = x.id();
  return x.graph()->record(std::move(out), {ix}, [ix, layout](Graph& g, int self) {
    const Matrix& d = g.grad_of(self);
    Matrix dx(layout.batch, d.cols());
    for (int b = 0; b < layout.batch; ++b)
      dx.row(b) = d.middleRows(static_cast<Eigen::Index>(b) * layout.length, layout.length).colwise().sum();
    g.accumulate(ix, dx);
  });
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Var sequence_nll(const Var& logits, const std::vector<int>& targets, const std::vector<char>& mask,
                 const SequenceLayout& layout) {
  const Matrix& z = logits.value();
  if (z.rows() != layout.rows() || targets.size() != static_cast<std::size_t>(z.rows()) ||
      mask.size() != targets.size())
    throw Error(ErrorKind::kLengthMismatch, "sequence_nll: shape mismatch");
  Matrix probs = Matrix::Zero(z.rows(), z.cols());
  Matrix out = Matrix::Zero(layout.batch, 1);
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    if (!mask[static_cast<std::size_t>(r)]) continue;
    const double m = z.row(r).maxCoeff();
    const Eigen::ArrayXd shifted = z.row(r).array() - m;
    const double log_norm = std::log(shifted.exp().sum());
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= z.cols()) throw Error(ErrorKind::kOutOfVocabulary, "target id outside vocabulary");
    out(r / layout.length, 0) -= shifted[t] - log_norm;
    probs.row(r) = (shifted - log_norm).exp().matrix().transpose();
  }
  const int il = logits.id();
  return logits.graph()->record(
      std::move(out), {il}, [il, targets, mask, layout, probs = std::move(probs)](Graph& g, int self) {
        const Matrix& d = g.grad_of(self);
        Matrix dz = probs;
        for (Eigen::Index r = 0; r < dz.rows(); ++r) {
          if (!mask[static_cast<std::size_t>(r)]) continue;
          dz(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
          dz.row(r) *= d(r / layout.length, 0);
        }
        g.accumulate(il, dz);
      });
}

Var mse(const Var& prediction, const Matrix& target) {
  if (prediction.rows() != target.rows() || prediction.cols() != target.cols())
    throw Error(ErrorKind::kLengthMismatch, "mse: shape mismatch");
  Graph& g = *prediction.graph();
  return mean(square(sub(prediction, g.constant(target))));
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  weight = Parameter(name + ".weight", std::move(w));
  bias = Parameter(name + ".bias", Matrix::Zero(1, out));
}

Var Linear::operator()(Graph& g, const Var& x) {
  return add_row(matmul(x, g.parameter(weight)), g.parameter(bias));
}

Adam::Adam(std::vector<Parameter*> params, double learning_rate, double beta1, double beta2,
           double epsilon)
    : params_(std::move(params)),
      learning_rate_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      epsilon_(epsilon) {
  for (auto* p : params_) {
    first_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    second_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (auto* p : params_) p->zero_grad();
}

double Adam::clip_grad_norm(double max_norm) {
  double total = 0.0;
  for (auto* p : params_) total += p->grad.squaredNorm();
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (auto* p : params_) p->grad *= factor;
  }
  return norm;
}

void Adam::step() {
  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    first_[i] = beta1_ * first_[i] + (1.0 - beta1_) * p.grad;
    second_[i] = beta2_ * second_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= learning_rate_ * (first_[i].array() / c1) /
                       ((second_[i].array() / c2).sqrt() + epsilon_);
  }
}

}  // namespace fsns::nn
