#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "chronoscope/errors.hpp"
#include "chronoscope/grad_check.hpp"
#include "chronoscope/ops.hpp"
#include "chronoscope/tensor.hpp"

using namespace chronoscope;

namespace {

Tensor leaf(const Shape& s, std::vector<double> v) {
  Tensor t = Tensor::from_data(s, std::move(v));
  t.set_requires_grad(true);
  return t;
}

std::vector<double> grad_of(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }

}  // namespace

TEST(Tensor, CreateRejectsEmptyAndZeroDims) {
  EXPECT_THROW(Tensor::create({}), ShapeError);
  EXPECT_THROW(Tensor::create({2, 0}), ShapeError);
  EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Tensor, NormalInitIsSeedDeterministic) {
  const auto a = Tensor::create({4, 9}, init::Normal{7, init::FanMode::kRelu});
  const auto b = Tensor::create({4, 9}, init::Normal{7, init::FanMode::kRelu});
  const auto c = Tensor::create({4, 9}, init::Normal{8, init::FanMode::kRelu});
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  EXPECT_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST(Tensor, NormalInitScaleFollowsFanIn) {
  // 2/fan_in with fan_in = 50 gives variance 0.04.
  const auto t = Tensor::create({400, 50}, init::Normal{3, init::FanMode::kRelu});
  double sq = 0.0;
  for (double v : t.data()) sq += v * v;
  EXPECT_NEAR(sq / static_cast<double>(t.numel()), 2.0 / 50.0, 0.002);
}

TEST(Tensor, CloneIsDeep) {
  Tensor a = Tensor::from_data({2}, {1, 2});
  Tensor b = a;
  Tensor c = a.clone();
  a.data()[0] = 9;
  EXPECT_EQ(b.data()[0], 9);
  EXPECT_EQ(c.data()[0], 1);
}

TEST(Ops, MatmulValuesAndShapeError) {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(grad_of(c).size(), 0u);
  const std::vector<double> want{58, 64, 139, 154};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(c.data()[i], want[i]);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Ops, ElementwiseRejectsBroadcast) {
  Tensor a = Tensor::create({2, 3});
  Tensor b = Tensor::create({3});
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
}

TEST(Ops, ActivationDefinitions) {
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
  auto r = relu(x);
  EXPECT_EQ(r.data()[0], 0.0);
  EXPECT_EQ(r.data()[2], 2.0);
  EXPECT_DOUBLE_EQ(sigmoid(x).data()[1], 0.5);
  EXPECT_DOUBLE_EQ(chronoscope::tanh(x).data()[1], 0.0);
}

TEST(Ops, MaxPoolValueAndTieRouting) {
  Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(max_pool2d(x, 2, 2).data()[0], 4.0);

  Tensor t = leaf({1, 1, 2, 2}, {5, 5, 0, 0});
  Tape tape;
  {
    TapeScope s(tape);
    tape.backward(sum(max_pool2d(t, 2, 2)));
  }
  EXPECT_EQ(grad_of(t), (std::vector<double>{1, 0, 0, 0}));
  EXPECT_THROW(max_pool2d(Tensor::create({1, 1, 2, 2}), 3, 1), ShapeError);
}

TEST(Ops, GlobalAvgPoolConstantAndUniformGrad) {
  Tensor x = leaf({1, 2, 3, 3}, std::vector<double>(18, 2.5));
  Tape tape;
  TapeScope s(tape);
  Tensor y = global_avg_pool(x);
  EXPECT_EQ(y.shape(), (Shape{1, 2}));
  EXPECT_DOUBLE_EQ(y.data()[0], 2.5);
  tape.backward(sum(y));
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0 / 9.0);
}

TEST(Ops, ConvIsCrossCorrelation) {
  // A kernel with a single 1 at the top-left picks the input shifted, not flipped.
  Tensor x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  std::vector<double> k(9, 0.0);
  k[0] = 1.0;
  ConvParams p{Tensor::from_data({1, 1, 3, 3}, k), Tensor()};
  Tensor y = conv2d(x, p, 1, 1);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y.data()[4], 1.0);  // centre sees input (0,0)
  EXPECT_EQ(y.data()[8], 5.0);
}

TEST(Ops, Conv2dMatchesDirectLoop) {
  std::mt19937_64 g(11);
  std::normal_distribution<double> d;
  const std::size_t n = 2, ci = 3, co = 4, h = 6, w = 5, k = 3;
  std::vector<double> xv(n * ci * h * w), wv(co * ci * k * k), bv(co);
  for (auto* v : {&xv, &wv, &bv}) for (auto& e : *v) e = d(g);
  ConvParams p{Tensor::from_data({co, ci, k, k}, wv), Tensor::from_data({co}, bv)};
  Tensor y = conv2d(Tensor::from_data({n, ci, h, w}, xv), p, 1, 1);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          double acc = bv[o];
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long rr = static_cast<long>(r + u) - 1, cc = static_cast<long>(c + v) - 1;
                if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
                acc += wv[((o * ci + i) * k + u) * k + v] * xv[((b * ci + i) * h + rr) * w + cc];
              }
          EXPECT_NEAR(y.data()[((b * co + o) * h + r) * w + c], acc, 1e-12);
        }
}

TEST(Ops, DropoutModes) {
  Tensor x = Tensor::create({100, 100}, init::Full{1.0});
  Tensor id = dropout(x, 0.0, Mode::kTrain, 1);
  EXPECT_TRUE(std::equal(id.data().begin(), id.data().end(), x.data().begin()));
  Tensor ev = dropout(x, 0.7, Mode::kEval, 1);
  EXPECT_TRUE(std::equal(ev.data().begin(), ev.data().end(), x.data().begin()));

  Tensor y = dropout(x, 0.5, Mode::kTrain, 42);
  std::size_t alive = 0;
  for (double v : y.data()) {
    if (v != 0.0) {
      ++alive;
      EXPECT_DOUBLE_EQ(v, 2.0);
    }
  }
  EXPECT_NEAR(static_cast<double>(alive) / 1e4, 0.5, 0.03);
  Tensor y2 = dropout(x, 0.5, Mode::kTrain, 42);
  EXPECT_TRUE(std::equal(y.data().begin(), y.data().end(), y2.data().begin()));
  EXPECT_THROW(dropout(x, 1.0, Mode::kTrain, 0), InvalidArgument);
}

TEST(Ops, CrossEntropyExamples) {
  const std::vector<int> t0{0};
  EXPECT_NEAR(softmax_cross_entropy(Tensor::create({1, 4}), t0).item(), std::log(4.0), 1e-12);
  EXPECT_LT(softmax_cross_entropy(Tensor::from_data({1, 3}, {30, 0, 0}), t0).item(), 1e-9);
  const std::vector<int> bad{3};
  EXPECT_THROW(softmax_cross_entropy(Tensor::create({1, 3}), bad), InvalidArgument);
}

TEST(Ops, CrossEntropyGradRowsSumToZeroAndShiftInvariant) {
  std::mt19937_64 g(5);
  std::normal_distribution<double> d(0, 3);
  std::vector<double> v(5 * 6);
  for (auto& e : v) e = d(g);
  const std::vector<int> targets{0, 5, 2, 2, 1};
  Tensor logits = leaf({5, 6}, v);
  Tape tape;
  TapeScope s(tape);
  const double l1 = softmax_cross_entropy(logits, targets).item();
  tape.backward(softmax_cross_entropy(logits, targets));
  for (std::size_t r = 0; r < 5; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 6; ++c) acc += logits.grad()[r * 6 + c];
    EXPECT_NEAR(acc, 0.0, 1e-12);
  }
  for (auto& e : v) e += 17.25;
  const double l2 = softmax_cross_entropy(Tensor::from_data({5, 6}, v), targets).item();
  EXPECT_NEAR(l1, l2, 1e-12);
}

TEST(Tape, BackwardLinearAndQuadratic) {
  Tensor x = leaf({2, 3}, {1, -2, 3, 0.5, 4, -1});
  {
    Tape tape;
    TapeScope s(tape);
    tape.backward(sum(x));
  }
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
  x.zero_grad();
  {
    Tape tape;
    TapeScope s(tape);
    tape.backward(sum(mul(x, x)));
    EXPECT_EQ(tape.size(), 0u);  // cleared after the sweep
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Tape, NonScalarLossRejected) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape;
  TapeScope s(tape);
  Tensor y = scale(x, 2.0);
  EXPECT_THROW(tape.backward(y), InvalidArgument);
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  Tensor x = leaf({3}, {1, 2, 3});
  Tape tape;
  TapeScope s(tape);
  tape.backward(sum(add(x, scale(x, 3.0))));
  for (double g : x.grad()) EXPECT_EQ(g, 4.0);
}

TEST(Tape, NodeInputsPrecedeNode) {
  Tensor x = leaf({1, 2, 4, 4}, std::vector<double>(32, 0.3));
  ConvParams p{Tensor::create({3, 2, 3, 3}, init::Normal{1}), Tensor::create({3})};
  p.weight.set_requires_grad(true);
  auto bn = BatchNormParams::create(3);
  Tape tape;
  TapeScope s(tape);
  Tensor y = sum(max_pool2d(relu(batchnorm2d(conv2d(x, p, 1, 1), bn, Mode::kTrain)), 2, 2));
  ASSERT_GT(tape.size(), 3u);
  for (std::size_t id = 0; id < tape.size(); ++id) {
    for (std::size_t in : tape.node(id).inputs) EXPECT_LT(in, id);
  }
}

TEST(Tape, NoTapeScopeSuspendsRecording) {
  Tensor x = leaf({2}, {1, 2});
  Tape tape;
  TapeScope s(tape);
  {
    NoTapeScope off;
    (void)scale(x, 2.0);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)scale(x, 2.0);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(GradCheck, ExactLinearCase) {
  std::mt19937_64 g(1);
  std::normal_distribution<double> d;
  std::vector<double> v(12);
  for (auto& e : v) e = d(g);
  const auto r = grad_check([](const Tensor& x) { return sum(x); }, Tensor::from_data({3, 4}, v));
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, SigmoidSum) {
  std::mt19937_64 g(2);
  std::normal_distribution<double> d;
  std::vector<double> v(12);
  for (auto& e : v) e = d(g);
  const auto r = grad_check([](const Tensor& x) { return sum(sigmoid(x)); }, Tensor::from_data({3, 4}, v));
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, TinyConvNetCrossEntropy) {
  std::mt19937_64 g(3);
  std::normal_distribution<double> d;
  std::vector<double> v(2 * 1 * 6 * 6);
  for (auto& e : v) e = d(g);
  Tensor x = Tensor::from_data({2, 1, 6, 6}, v);
  ConvParams conv{Tensor::create({2, 1, 3, 3}, init::Normal{4, init::FanMode::kRelu}),
                  Tensor::create({2}, init::Full{0.2})};
  LinearParams fc{Tensor::create({3, 8}, init::Normal{5}), Tensor::create({3})};
  const std::vector<int> targets{2, 0};
  const auto r = grad_check_all(
      [&] { return softmax_cross_entropy(linear(flatten(max_pool2d(relu(conv2d(x, conv)), 2, 2)), fc), targets); },
      {conv.weight, conv.bias, fc.weight, fc.bias});
  EXPECT_LT(r.max_rel_error, 1e-4);
}
