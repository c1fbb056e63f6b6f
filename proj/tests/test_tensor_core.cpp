#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "t3t/ops.hpp"

using namespace t3t;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Projects an op's output onto fixed random weights so any output shape
// yields a scalar loss.
using Op = std::function<Var(Tape&, std::vector<Var>&)>;

double projected_loss(const Op& op, std::vector<Tensor*>& inputs, std::uint64_t seed, bool backward) {
  Tape tape;
  std::vector<Var> vars;
  for (auto* t : inputs) vars.push_back(tape.leaf(*t));
  Var out = op(tape, vars);
  Var loss = sum(mul(out, tape.constant(random_tensor(out.shape(), seed))));
  if (backward) tape.backward(loss);
  return loss.value().item();
}

void expect_gradients(const Op& op, std::vector<Tensor> values, double tol = 1e-7) {
  std::vector<Tensor*> inputs;
  for (auto& v : values) {
    v.set_requires_grad(true);
    inputs.push_back(&v);
  }
  projected_loss(op, inputs, 99, true);
  const double h = 1e-6;
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t k = 0; k < values[i].size(); ++k) {
      const double keep = values[i][k];
      values[i][k] = keep + h;
      const double up = projected_loss(op, inputs, 99, false);
      values[i][k] = keep - h;
      const double down = projected_loss(op, inputs, 99, false);
      values[i][k] = keep;
      EXPECT_NEAR(values[i].grad()[k], (up - down) / (2 * h), tol) << "input " << i << " element " << k;
    }
  }
}

}  // namespace

TEST(Tensor, RejectsZeroDimensionsAndSizeMismatch) {
  EXPECT_THROW(Tensor({0, 3}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::matrix({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, RowMajorLayout) {
  Tensor t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.shape(), (Shape{2, 3}));
  EXPECT_EQ(t.at(1, 0), 4.0);
  EXPECT_EQ(t[5], 6.0);
  EXPECT_THROW((void)t.item(), ContractError);
  EXPECT_EQ(Tensor::scalar(2.5).item(), 2.5);
}

TEST(Tape, BackwardRequiresScalarLoss) {
  Tape tape;
  Tensor x = random_tensor({2, 2}, 1);
  x.set_requires_grad(true);
  Var v = tape.leaf(x);
  EXPECT_THROW(tape.backward(v), ContractError);
}

TEST(Tape, ReusedLeafAccumulatesBothPaths) {
  Tensor x = Tensor::matrix({{3.0}});
  x.set_requires_grad(true);
  Tape tape;
  Var a = tape.leaf(x);
  Var b = tape.leaf(x);
  EXPECT_EQ(a.id, b.id);
  tape.backward(sum(mul(a, b)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tape, GradientsAccumulateAcrossTapesUntilZeroed) {
  Tensor x = Tensor::matrix({{1.0, 2.0}});
  x.set_requires_grad(true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(sum(scale(tape.leaf(x), 3.0)));
  }
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tensor w = Tensor::matrix({{2.0}});
  w.set_requires_grad(true);
  Tape tape;
  Var c = tape.constant(Tensor::matrix({{5.0}}));
  EXPECT_FALSE(tape.needs_grad(c));
  tape.backward(sum(mul(c, tape.leaf(w))));
  EXPECT_DOUBLE_EQ(w.grad()[0], 5.0);
}

TEST(Ops, MatmulMatchesNaiveProduct) {
  Tensor a = random_tensor({3, 4}, 1), b = random_tensor({4, 5}, 2);
  Tape tape;
  const Tensor& c = matmul(tape.constant(a), tape.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-14);
    }
  EXPECT_THROW(matmul(tape.constant(a), tape.constant(a)), DimensionError);
}

TEST(Ops, SoftmaxRowsAreStableDistributions) {
  Tape tape;
  const Tensor& s = softmax_rows(tape.constant(Tensor::matrix({{1000, 1001, 999}, {-5, -5, -5}}))).value();
  for (std::size_t r = 0; r < 2; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_TRUE(std::isfinite(s.at(r, c)));
      total += s.at(r, c);
    }
    EXPECT_NEAR(total, 1.0, 1e-15);
  }
  EXPECT_NEAR(s.at(1, 0), 1.0 / 3.0, 1e-15);
  const Tensor& l = log_softmax_rows(tape.constant(Tensor::matrix({{1000, 0}}))).value();
  EXPECT_NEAR(l.at(0, 0), 0.0, 1e-12);
  EXPECT_NEAR(l.at(0, 1), -1000.0, 1e-9);
}

TEST(Ops, ConvMatchesNaiveSamePaddedConvolution) {
  const std::size_t n = 7, din = 3, dout = 4, k = 3;
  Tensor x = random_tensor({n, din}, 3), w = random_tensor({dout, din, k}, 4), b = random_tensor({dout}, 5);
  Tape tape;
  const Tensor& y = conv1d_time(tape.constant(x), tape.constant(w), tape.constant(b)).value();
  ASSERT_EQ(y.shape(), (Shape{n, dout}));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t o = 0; o < dout; ++o) {
      double s = b[o];
      for (std::size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(t) + static_cast<long>(j) - 1;
        if (src < 0 || src >= static_cast<long>(n)) continue;
        for (std::size_t i = 0; i < din; ++i) s += w[(o * din + i) * k + j] * x.at(static_cast<std::size_t>(src), i);
      }
      EXPECT_NEAR(y.at(t, o), s, 1e-14);
    }
}

TEST(Ops, ConvRejectsEvenKernel) {
  Tape tape;
  EXPECT_THROW(conv1d_time(tape.constant(Tensor({4, 2})), tape.constant(Tensor({2, 2, 2})), tape.constant(Tensor({2}))),
               ConfigError);
}

TEST(Ops, ShapeChecks) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3})), b = tape.constant(Tensor({3, 2}));
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(slice_rows(a, 1, 3), DimensionError);
  EXPECT_THROW(concat_rows({a, b}), DimensionError);
  EXPECT_THROW(embedding(tape.constant(Tensor({4, 2})), {4}), DimensionError);
}

TEST(Gradients, ElementwiseAndReductions) {
  const auto x = random_tensor({3, 4}, 10), y = random_tensor({3, 4}, 11);
  expect_gradients([](Tape&, std::vector<Var>& v) { return add(v[0], v[1]); }, {x, y});
  expect_gradients([](Tape&, std::vector<Var>& v) { return sub(v[0], v[1]); }, {x, y});
  expect_gradients([](Tape&, std::vector<Var>& v) { return mul(v[0], v[1]); }, {x, y});
  expect_gradients([](Tape&, std::vector<Var>& v) { return scale(v[0], -2.5); }, {x});
  expect_gradients([](Tape&, std::vector<Var>& v) { return scale_rows(v[0], {0.5, -1.0, 2.0}); }, {x});
  expect_gradients([](Tape&, std::vector<Var>& v) { return relu(v[0]); }, {x});
  expect_gradients([](Tape&, std::vector<Var>& v) { return log(v[0]); }, {random_tensor({2, 3}, 12, 0.5, 2.0)});
  expect_gradients([](Tape&, std::vector<Var>& v) { return sum(v[0]); }, {x});
  expect_gradients([](Tape&, std::vector<Var>& v) { return mean(v[0]); }, {x});
}

TEST(Gradients, LinearAlgebraAndLayout) {
  const auto a = random_tensor({3, 4}, 20), b = random_tensor({4, 2}, 21), bias = random_tensor({4}, 22);
  expect_gradients([](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); }, {a, b});
  expect_gradients([](Tape&, std::vector<Var>& v) { return add_row_bias(v[0], v[1]); }, {a, bias});
  expect_gradients([](Tape&, std::vector<Var>& v) { return transpose(v[0]); }, {a});
  expect_gradients([](Tape&, std::vector<Var>& v) { return slice_rows(v[0], 1, 3); }, {a});
  expect_gradients([](Tape&, std::vector<Var>& v) { return slice_cols(v[0], 1, 3); }, {a});
  expect_gradients([](Tape&, std::vector<Var>& v) { return concat_rows({v[0], v[1], v[0]}); },
                   {a, random_tensor({2, 4}, 23)});
  expect_gradients([](Tape&, std::vector<Var>& v) { return concat_cols({v[0], v[1]}); }, {a, random_tensor({3, 2}, 24)});
}

TEST(Gradients, SoftmaxFamily) {
  const auto x = random_tensor({3, 5}, 30, -2.0, 2.0);
  expect_gradients([](Tape&, std::vector<Var>& v) { return softmax_rows(v[0]); }, {x});
  expect_gradients([](Tape&, std::vector<Var>& v) { return log_softmax_rows(v[0]); }, {x});
}

TEST(Gradients, EmbeddingScatterAddsRepeatedIds) {
  expect_gradients([](Tape&, std::vector<Var>& v) { return embedding(v[0], {2, 0, 2, 3}); }, {random_tensor({5, 3}, 40)});
}

TEST(Gradients, ConvolutionAllInputs) {
  expect_gradients([](Tape&, std::vector<Var>& v) { return conv1d_time(v[0], v[1], v[2]); },
                   {random_tensor({6, 3}, 50), random_tensor({2, 3, 3}, 51), random_tensor({2}, 52)});
  expect_gradients([](Tape&, std::vector<Var>& v) { return conv1d_time(v[0], v[1], v[2]); },
                   {random_tensor({4, 2}, 53), random_tensor({2, 2, 5}, 54), random_tensor({2}, 55)});
}

TEST(Gradients, ReluSubgradientAtZeroIsZero) {
  Tensor x = Tensor::matrix({{0.0, -1.0, 2.0}});
  x.set_requires_grad(true);
  Tape tape;
  tape.backward(sum(relu(tape.leaf(x))));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}
