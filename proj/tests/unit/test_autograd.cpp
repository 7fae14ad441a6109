#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "fsns/autograd.hpp"
#include "test_support.hpp"

using namespace fsns;
using namespace fsns::nn;

namespace {

using Builder = std::function<Var(Graph&, const std::vector<Var>&)>;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

double evaluate(const Builder& f, const std::vector<Matrix>& values) {
  Graph g(false);
  std::vector<Var> in;
  for (const auto& v : values) in.push_back(g.constant(v));
  return f(g, in).scalar();
}

// Central differences on every input entry versus the reverse-mode gradient.
void check_gradients(const Builder& f, std::vector<Matrix> values, double tolerance = 1e-6) {
  Graph g;
  std::vector<Var> in;
  for (const auto& v : values) in.push_back(g.input(v));
  const Var out = f(g, in);
  ASSERT_EQ(out.rows(), 1);
  ASSERT_EQ(out.cols(), 1);
  g.backward(out);
  const double h = 1e-6;
  for (std::size_t k = 0; k < values.size(); ++k) {
    const Matrix analytic = in[k].grad().size() ? in[k].grad() : Matrix::Zero(values[k].rows(), values[k].cols());
    for (Eigen::Index i = 0; i < values[k].size(); ++i) {
      const double saved = values[k].data()[i];
      values[k].data()[i] = saved + h;
      const double up = evaluate(f, values);
      values[k].data()[i] = saved - h;
      const double down = evaluate(f, values);
      values[k].data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      EXPECT_NEAR(a, numeric, tolerance * std::max(1.0, std::abs(numeric))) << "input " << k << " entry " << i;
    }
  }
}

}  // namespace

TEST(Autograd, ElementwiseOps) {
  check_gradients([](Graph&, const std::vector<Var>& x) { return sum(mul(tanh(x[0]), exp(scale(x[1], 0.5)))); },
                  {random_matrix(3, 4, 1), random_matrix(3, 4, 2)});
  check_gradients([](Graph&, const std::vector<Var>& x) { return mean(square(sub(x[0], add_scalar(x[1], 0.3)))); },
                  {random_matrix(2, 5, 3), random_matrix(2, 5, 4)});
  check_gradients([](Graph&, const std::vector<Var>& x) { return sum(mul(relu(x[0]), x[0])); },
                  {random_matrix(4, 4, 5)});
}

TEST(Autograd, MatmulAndBroadcast) {
  check_gradients(
      [](Graph&, const std::vector<Var>& x) { return sum(square(add_row(matmul(x[0], x[1]), x[2]))); },
      {random_matrix(3, 4, 6), random_matrix(4, 2, 7), random_matrix(1, 2, 8)});
  check_gradients([](Graph&, const std::vector<Var>& x) { return sum(mul(row_sum(x[0]), column(x[1], 1))); },
                  {random_matrix(3, 4, 9), random_matrix(3, 2, 10)});
}

TEST(Autograd, LayerNormAndEmbedding) {
  check_gradients(
      [](Graph&, const std::vector<Var>& x) {
        return sum(mul(layer_norm(x[0], x[1], x[2]), x[3]));
      },
      {random_matrix(3, 6, 11), random_matrix(1, 6, 12), random_matrix(1, 6, 13), random_matrix(3, 6, 14)});
  check_gradients(
      [](Graph&, const std::vector<Var>& x) { return sum(square(embedding(x[0], {2, 0, 2, 1}))); },
      {random_matrix(3, 4, 15)});
}

TEST(Autograd, MaskedAttentionAndPooling) {
  const SequenceLayout layout{2, 3, {3, 2}};
  for (bool causal : {false, true}) {
    check_gradients(
        [&](Graph&, const std::vector<Var>& x) {
          const Var a = attention(x[0], x[1], x[2], layout, 2, causal);
          return sum(mul(masked_mean_pool(a, layout), x[3]));
        },
        {random_matrix(6, 4, 16), random_matrix(6, 4, 17), random_matrix(6, 4, 18), random_matrix(2, 4, 19)});
  }
  check_gradients([&](Graph&, const std::vector<Var>& x) { return sum(mul(repeat_rows(x[0], layout), x[1])); },
                  {random_matrix(2, 3, 20), random_matrix(6, 3, 21)});
}

TEST(Autograd, SequenceNllAndMse) {
  const SequenceLayout layout{2, 3, {3, 2}};
  const std::vector<int> targets{1, 4, 2, 3, 2, 0};
  const std::vector<char> mask{1, 1, 1, 1, 1, 0};
  check_gradients([&](Graph&, const std::vector<Var>& x) { return sum(sequence_nll(x[0], targets, mask, layout)); },
                  {random_matrix(6, 5, 22)});
  const Matrix target = random_matrix(4, 1, 23);
  check_gradients([&](Graph&, const std::vector<Var>& x) { return mse(x[0], target); }, {random_matrix(4, 1, 24)});
}

TEST(Autograd, SequenceNllMatchesHandArithmetic) {
  // Two-token vocabulary with logits (0, ln 3): p = (1/4, 3/4).
  Graph g(false);
  Matrix logits(2, 2);
  logits << 0.0, std::log(3.0), 0.0, std::log(3.0);
  const SequenceLayout layout{1, 2, {2}};
  const Var nll = sequence_nll(g.constant(logits), {1, 0}, {1, 1}, layout);
  EXPECT_NEAR(nll.scalar(), -std::log(0.75) - std::log(0.25), 1e-12);
}

TEST(Autograd, AttentionIgnoresPaddedKeys) {
  // Changing the padded row of a sequence must not change its real rows.
  const SequenceLayout layout{1, 3, {2}};
  Matrix q = random_matrix(3, 4, 25), k = random_matrix(3, 4, 26), v = random_matrix(3, 4, 27);
  Graph g1(false);
  const Matrix a = attention(g1.constant(q), g1.constant(k), g1.constant(v), layout, 2, false).value();
  k.row(2).setConstant(50.0);
  v.row(2).setConstant(-50.0);
  Graph g2(false);
  const Matrix b = attention(g2.constant(q), g2.constant(k), g2.constant(v), layout, 2, false).value();
  EXPECT_TRUE(a.topRows(2).isApprox(b.topRows(2), 1e-12));
}

TEST(Autograd, CausalAttentionIgnoresFuture) {
  const SequenceLayout layout{1, 3, {3}};
  Matrix q = random_matrix(3, 4, 28), k = random_matrix(3, 4, 29), v = random_matrix(3, 4, 30);
  Graph g1(false);
  const Matrix a = attention(g1.constant(q), g1.constant(k), g1.constant(v), layout, 1, true).value();
  k.row(2).setConstant(9.0);
  v.row(2).setConstant(9.0);
  Graph g2(false);
  const Matrix b = attention(g2.constant(q), g2.constant(k), g2.constant(v), layout, 1, true).value();
  EXPECT_TRUE(a.topRows(2).isApprox(b.topRows(2), 1e-12));
}

TEST(Autograd, SingleHeadAttentionMatchesDirectFormula) {
  const SequenceLayout layout{1, 3, {3}};
  const Matrix q = random_matrix(3, 2, 31), k = random_matrix(3, 2, 32), v = random_matrix(3, 2, 33);
  Graph g(false);
  const Matrix got = attention(g.constant(q), g.constant(k), g.constant(v), layout, 1, false).value();
  const Matrix scores = (q * k.transpose()) / std::sqrt(2.0);
  const Matrix want = softmax_rows(scores) * v;
  EXPECT_TRUE(got.isApprox(want, 1e-12));
}

TEST(Autograd, SoftmaxRowsAreDistributions) {
  const Matrix p = softmax_rows(random_matrix(5, 7, 34, 30.0));
  for (Eigen::Index r = 0; r < 5; ++r) {
    EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
    EXPECT_GE(p.row(r).minCoeff(), 0.0);
  }
}

TEST(Autograd, ParameterGradientsAccumulateAndInferenceSkipsThem) {
  Rng rng(35);
  Linear layer("l", 3, 2, rng);
  const Matrix x = random_matrix(4, 3, 36);
  {
    Graph g;
    g.backward(sum(layer(g, g.constant(x))));
  }
  // d sum(xW + b)/dW = column sums of x broadcast over outputs; d/db = batch size.
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(layer.weight.grad(i, j), x.col(i).sum(), 1e-12);
  EXPECT_NEAR(layer.bias.grad(0, 1), 4.0, 1e-12);
  layer.weight.zero_grad();
  {
    Graph g(false);
    g.backward(sum(layer(g, g.constant(x))));
  }
  EXPECT_EQ(layer.weight.grad.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Adam, MinimisesQuadraticAndClips) {
  Parameter p("p", Matrix::Constant(1, 2, 5.0));
  Adam adam({&p}, 0.1);
  for (int i = 0; i < 500; ++i) {
    Graph g;
    adam.zero_grad();
    g.backward(sum(square(g.parameter(p))));
    adam.step();
  }
  EXPECT_LT(p.value.cwiseAbs().maxCoeff(), 1e-2);

  p.grad << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(adam.clip_grad_norm(1.0), 5.0);
  EXPECT_NEAR(p.grad.norm(), 1.0, 1e-12);
}

TEST(FlushSubnormals, RestoresMode) {
  volatile double tiny = 1e-310;
  {
    const FlushSubnormals flush;
    volatile double y = tiny * 0.5;
    (void)y;
  }
  volatile double z = tiny * 0.5;
  EXPECT_GT(z, 0.0);
}
