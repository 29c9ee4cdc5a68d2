#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "chronoscope/errors.hpp"
#include "chronoscope/trainer.hpp"
#include "test_util.hpp"

using namespace chronoscope;

namespace {

NamedTensor param(std::string name, std::vector<double> v) {
  const std::size_t n = v.size();
  Tensor t = Tensor::from_data({n}, std::move(v));
  t.set_requires_grad(true);
  return {std::move(name), t};
}

void set_grad(Tensor& t, std::vector<double> g) {
  t.zero_grad();
  t.storage()->accumulate_grad(g);
}

TrainConfig plain(double lr, double momentum = 0.0, double wd = 0.0) {
  TrainConfig c;
  c.lr = lr;
  c.momentum = momentum;
  c.weight_decay = wd;
  return c;
}

}  // namespace

TEST(Sgd, PlainGradientStep) {
  std::vector<NamedTensor> p{param("w", {1.0, -2.0})};
  set_grad(p[0].tensor, {0.5, -1.0});
  SgdState s;
  sgd_step(p, s, plain(0.1));
  EXPECT_DOUBLE_EQ(p[0].tensor.data()[0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(p[0].tensor.data()[1], -2.0 + 0.1);
  EXPECT_EQ(s.step, 1u);
}

TEST(Sgd, ZeroGradientWithoutDecayIsANoOp) {
  std::vector<NamedTensor> p{param("w", {3.0, 4.0})};
  SgdState s;
  for (int i = 0; i < 5; ++i) sgd_step(p, s, plain(0.1, 0.9));
  EXPECT_EQ(p[0].tensor.data()[0], 3.0);
  EXPECT_EQ(p[0].tensor.data()[1], 4.0);
}

TEST(Sgd, QuadraticBowlMatchesRecurrence) {
  // f(p) = 0.5 a p^2; momentum recurrence evaluated independently.
  const double a = 2.0, lr = 0.05, mu = 0.9, wd = 1e-3;
  std::vector<NamedTensor> p{param("w", {1.5})};
  SgdState s;
  double ref = 1.5, v = 0.0;
  for (int step = 0; step < 50; ++step) {
    set_grad(p[0].tensor, {a * p[0].tensor.data()[0]});
    sgd_step(p, s, plain(lr, mu, wd));
    v = mu * v + a * ref + wd * ref;
    ref -= lr * v;
    ASSERT_NEAR(p[0].tensor.data()[0], ref, 1e-12) << step;
  }
  EXPECT_LT(std::abs(ref), 0.1);
}

TEST(Sgd, WeightDecayShrinks) {
  std::vector<NamedTensor> p{param("w", {2.0, -2.0})};
  SgdState s;
  sgd_step(p, s, plain(0.1, 0.0, 0.5));
  EXPECT_DOUBLE_EQ(p[0].tensor.data()[0], 1.9);
  EXPECT_DOUBLE_EQ(p[0].tensor.data()[1], -1.9);
}

TEST(Sgd, NonFiniteGradientNamesLayerAndStep) {
  std::vector<NamedTensor> p{param("ok", {1.0}), param("head.fc.weight", {1.0})};
  SgdState s;
  set_grad(p[1].tensor, {0.1});
  sgd_step(p, s, plain(0.1));
  set_grad(p[1].tensor, {std::numeric_limits<double>::quiet_NaN()});
  set_grad(p[0].tensor, {1.0});
  const double before = p[0].tensor.data()[0];
  try {
    sgd_step(p, s, plain(0.1));
    FAIL();
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("head.fc.weight"), std::string::npos) << msg;
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
  }
  EXPECT_EQ(p[0].tensor.data()[0], before);
}

TEST(Sgd, ClipGradNorm) {
  std::vector<NamedTensor> p{param("a", {0, 0}), param("b", {0})};
  set_grad(p[0].tensor, {3.0, 0.0});
  set_grad(p[1].tensor, {4.0});
  EXPECT_DOUBLE_EQ(clip_grad_norm(p, 1.0), 5.0);
  EXPECT_NEAR(p[0].tensor.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(p[1].tensor.grad()[0], 0.8, 1e-15);
}

TEST(TrainConfig, FamilyDefaults) {
  EXPECT_DOUBLE_EQ(default_train_config(Family::kHierarchical).lr, 1e-4);
  EXPECT_DOUBLE_EQ(default_train_config(Family::kTimeAligned).lr, 1e-3);
  EXPECT_GT(default_train_config(Family::kLstm).clip_norm, 0.0);
  EXPECT_EQ(default_train_config(Family::kTimeAligned).clip_norm, 0.0);
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

namespace {

struct Fixture {
  Dataset train, test;
  TaskRunner task;
  Fixture()
      : train(build_template_dataset(0, 8)), test(build_template_dataset(1000, 16)),
        task(TaskKind::kTemplate, train, test, 4) {}
};

EncoderSpec small_spec() {
  EncoderSpec s;
  s.family = Family::kTimeAligned;
  s.time_steps = 4;
  s.growth = 4;
  s.base_channels = {4, 8};
  s.num_classes = 8;
  return s;
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.lr = 0.01;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(TrainLoop, ZeroEpochsOnlyEvaluatesInitialModel) {
  Fixture f;
  VideoModel m(small_spec(), 1);
  RunInfo info;
  const auto r = train_loop(quick(0), f.task, m, info);
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].epoch, 0u);
  EXPECT_FALSE(r.records[0].train_loss.has_value());
  EXPECT_TRUE(r.epoch_losses.empty());
}

TEST(TrainLoop, BitwiseDeterministic) {
  Fixture f;
  const auto dir = test_util::scratch_dir("trainloop");
  std::string text[2];
  for (int run = 0; run < 2; ++run) {
    VideoModel m(small_spec(), 1);
    RunInfo info;
    info.metrics_path = dir / ("m" + std::to_string(run) + ".jsonl");
    const auto r = train_loop(quick(3), f.task, m, info);
    EXPECT_EQ(r.records.size(), 4u);
    std::ifstream in(*info.metrics_path);
    text[run].assign(std::istreambuf_iterator<char>(in), {});
  }
  EXPECT_FALSE(text[0].empty());
  EXPECT_EQ(text[0], text[1]);
}

TEST(TrainLoop, EvalEverySkipsButKeepsLast) {
  Fixture f;
  VideoModel m(small_spec(), 1);
  auto cfg = quick(5);
  cfg.eval_every = 2;
  const auto r = train_loop(cfg, f.task, m, {});
  std::vector<std::size_t> epochs;
  for (const auto& rec : r.records) epochs.push_back(rec.epoch);
  EXPECT_EQ(epochs, (std::vector<std::size_t>{0, 2, 4, 5}));
  EXPECT_EQ(r.epoch_losses.size(), 5u);
}

TEST(TrainLoop, RejectsMismatchedModel) {
  Fixture f;
  auto s = small_spec();
  s.num_classes = 2;
  VideoModel m(s, 1);
  EXPECT_THROW(train_loop(quick(1), f.task, m, {}), InvalidArgument);
}

TEST(TrainLoop, DivergenceRestoresLastGoodState) {
  Fixture f;
  VideoModel m(small_spec(), 1);
  auto cfg = quick(2);
  cfg.lr = 1e300;
  cfg.momentum = 0.0;
  cfg.weight_decay = 0.0;
  std::vector<double> before;
  for (auto& nt : m.parameters()) before.insert(before.end(), nt.tensor.data().begin(), nt.tensor.data().end());
  EXPECT_THROW(train_loop(cfg, f.task, m, {}), DivergenceError);
  for (auto& nt : m.parameters()) {
    for (double v : nt.tensor.data()) ASSERT_TRUE(std::isfinite(v)) << nt.name;
  }
}

TEST(Evaluate, PureAndConsistent) {
  Fixture f;
  VideoModel m(small_spec(), 2);
  std::vector<double> before;
  for (auto& nt : m.state_tensors()) before.insert(before.end(), nt.tensor.data().begin(), nt.tensor.data().end());
  const auto a = f.task.evaluate(m);
  const auto b = f.task.evaluate(m, 3);
  std::vector<double> after;
  for (auto& nt : m.state_tensors()) after.insert(after.end(), nt.tensor.data().begin(), nt.tensor.data().end());
  EXPECT_EQ(before, after);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.loss, b.loss);
  // Balanced classes: per-class mean weighted by counts equals accuracy.
  double sum = 0;
  for (const auto& [name, acc] : a.per_class) sum += acc * 2;
  EXPECT_NEAR(sum / 16.0, a.accuracy, 1e-12);
  EXPECT_LE(a.prec1, a.prec5);
  EXPECT_THROW(f.task.evaluate(m, std::span<const TaskInstance>{}), InvalidArgument);
}

TEST(Evaluate, ConstantPredictorHitsOneClass) {
  Fixture f;
  VideoModel m(small_spec(), 2);
  // Zero every weight; a bias on class 3 makes the prediction constant.
  for (auto& nt : m.parameters()) std::fill(nt.tensor.data().begin(), nt.tensor.data().end(), 0.0);
  auto& b = m.head_params().fc.bias;
  b.data()[3] = 1.0;
  const auto r = f.task.evaluate(m);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.125);
  for (const auto& [name, acc] : r.per_class) EXPECT_DOUBLE_EQ(acc, name == "cover" ? 1.0 : 0.0) << name;
}

TEST(Metrics, JsonRoundTrip) {
  MetricsRecord r;
  r.task = "template";
  r.encoder = "tad";
  r.epoch = 7;
  r.loss = 0.123456789012345678;
  r.accuracy = 0.75;
  r.prec1 = 0.75;
  r.prec5 = 0.9;
  r.per_class = {{"b", 0.5}, {"a", 1.0}};
  r.train_loss = 0.2;
  r.seed = 42;
  r.config_hash = "abc";
  r.dataset_hash = "def";
  r.instances = 8;
  r.chance = 0.125;
  const auto back = MetricsRecord::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(back.loss, r.loss);
  EXPECT_EQ(back.per_class, r.per_class);
  EXPECT_EQ(back.train_loss, r.train_loss);
}

TEST(Metrics, Validation) {
  MetricsRecord r;
  r.prec5 = 1.0;
  EXPECT_NO_THROW(MetricsRecord::from_json(r.to_json()));
  EXPECT_THROW(MetricsRecord::from_json("{not json"), InvalidArgument);
  EXPECT_THROW(MetricsRecord::from_json("[1,2]"), InvalidArgument);
  EXPECT_THROW(MetricsRecord::from_json(R"({"task":"arrow"})"), InvalidArgument);
  r.accuracy = 1.5;
  EXPECT_THROW(MetricsRecord::from_json(r.to_json()), InvalidArgument);
  r.accuracy = 0.5;
  r.prec1 = 0.9;
  r.prec5 = 0.8;
  EXPECT_THROW(MetricsRecord::from_json(r.to_json()), InvalidArgument);
}
