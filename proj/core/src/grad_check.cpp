#include "chronoscope/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "chronoscope/encoders.hpp"
#include "chronoscope/errors.hpp"
#include "chronoscope/ops.hpp"
#include "seed.hpp"

namespace chronoscope {

GradCheckResult grad_check_all(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    if (y.numel() != 1) throw InvalidArgument("grad_check: function must be scalar-valued");
    tape.backward(y);
  }
  GradCheckResult res;
  std::size_t flat = 0;
  NoTapeScope no_tape;
  for (auto& p : params) {
    const std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                      : std::vector<double>(p.numel(), 0.0);
    auto data = p.data();
    for (std::size_t i = 0; i < data.size(); ++i, ++flat) {
      const double v = data[i];
      // Use the step that is actually representable around v.
      volatile double up = v + eps;
      volatile double down = v - eps;
      data[i] = up;
      const double fp = f().item();
      data[i] = down;
      const double fm = f().item();
      data[i] = v;
      const double numeric = (fp - fm) / (up - down);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      if (err > res.max_rel_error || res.coordinates == 0) {
        res.max_rel_error = err;
        res.worst_index = flat;
        res.analytic_at_worst = a;
        res.numeric_at_worst = numeric;
      }
      ++res.coordinates;
    }
  }
  for (auto& p : params) p.zero_grad();
  return res;
}

GradCheckResult grad_check(const ScalarFn& f, Tensor x, double eps) {
  return grad_check_all([&] { return f(x); }, {x}, eps);
}

namespace {

using detail::mix_seed;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed), seed_(seed) {}

  Tensor normal(const Shape& shape, double sd = 1.0) {
    std::normal_distribution<double> dist(0.0, sd);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(gen_);
    return Tensor::from_data(shape, std::move(v));
  }
  Tensor uniform(const Shape& shape, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = dist(gen_);
    return Tensor::from_data(shape, std::move(v));
  }
  // Values at least 0.05 away from zero (keeps relu off its kink).
  Tensor off_kink(const Shape& shape) {
    Tensor t = normal(shape);
    for (auto& x : t.data()) {
      if (std::abs(x) < 0.05) x = x < 0 ? x - 0.05 : x + 0.05;
    }
    return t;
  }
  // Distinct values spaced far apart relative to eps, in random order (no max-pool near-ties).
  Tensor distinct(const Shape& shape) {
    const std::size_t n = shape_numel(shape);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n);
    std::shuffle(v.begin(), v.end(), gen_);
    return Tensor::from_data(shape, std::move(v));
  }
  std::vector<double> weights(std::size_t n) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> w(n);
    for (auto& x : w) x = dist(gen_);
    return w;
  }
  std::size_t index(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(gen_); }
  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& gen() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_;
};

// Random linear readout so every output element gets a distinct weight.
Tensor readout(const Tensor& y, const std::vector<double>& w) { return weighted_sum(y, w); }

template <class Build>
GradCheckCase primitive(std::string name, Build build) {
  return {std::move(name), "primitive", 100, build};
}

ConvParams conv_params(Rng& r, const Shape& w_shape) {
  return {r.normal(w_shape, 0.5), r.normal({w_shape[0]}, 0.5)};
}

// Moves the model off its initialization: zero biases put relu inputs
// exactly on the kink wherever a receptive field is all zeros. Positive
// biases and unit-gain weights keep units active and gates unsaturated, so
// no coordinate's gradient sinks below the finite-difference noise floor.
void randomize_parameters(VideoModel& m, Rng& r) {
  for (auto& nt : m.parameters()) {
    const Shape& sh = nt.tensor.shape();
    if (sh.size() > 1) {
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(nt.tensor.numel() / sh[0])));
      for (auto& v : nt.tensor.data()) v = dist(r.gen());
    } else {
      std::uniform_real_distribution<double> dist(0.1, 0.5);
      for (auto& v : nt.tensor.data()) v = dist(r.gen());
    }
  }
}

void randomize_running_stats(VideoModel& m, Rng& r) {
  for (BatchNormParams* bn : m.batchnorms()) {
    for (auto& v : bn->running_mean) v = std::uniform_real_distribution<double>(-0.5, 0.5)(r.gen());
    for (auto& v : bn->running_var) v = std::uniform_real_distribution<double>(0.5, 1.5)(r.gen());
    bn->stats_initialized = true;
    for (auto& v : bn->scale.data()) v = std::uniform_real_distribution<double>(0.5, 1.5)(r.gen());
    for (auto& v : bn->shift.data()) v = std::uniform_real_distribution<double>(-0.3, 0.3)(r.gen());
  }
}

EncoderSpec tiny_spec(Family family) {
  EncoderSpec s;
  s.family = family;
  s.time_steps = family == Family::kHierarchical ? 4 : 3;
  s.hidden = 3;
  s.growth = 2;
  s.base_channels = {3, 3};
  s.frame_size = 8;
  s.num_classes = 3;
  return s;
}

std::vector<Tensor> tensors_of(VideoModel& m) {
  std::vector<Tensor> out;
  for (auto& nt : m.parameters()) out.push_back(nt.tensor);
  return out;
}

GradCheckResult model_case(Family family, std::uint64_t seed) {
  Rng r(seed);
  VideoModel m(tiny_spec(family), mix_seed(seed, 1));
  randomize_parameters(m, r);
  randomize_running_stats(m, r);
  const auto& s = m.spec();
  Tensor clips = r.uniform({2, s.time_steps, 1, s.frame_size, s.frame_size}, 0.0, 1.0);
  const auto w = r.weights(2 * s.num_classes);
  // Inputs are covered by the per-stage cases; here only the parameters.
  return grad_check_all([&] { return readout(m.logits(clips, Mode::kEval), w); }, tensors_of(m));
}

std::vector<GradCheckCase> build_registry() {
  std::vector<GradCheckCase> cases;

  cases.push_back(primitive("matmul", [](std::uint64_t seed) {
    Rng r(seed);
    const std::size_t m = r.index(1, 4), k = r.index(1, 5), n = r.index(1, 4);
    Tensor a = r.normal({m, k}), b = r.normal({k, n});
    const auto w = r.weights(m * n);
    return grad_check_all([&] { return readout(matmul(a, b), w); }, {a, b});
  }));
  cases.push_back(primitive("linear", [](std::uint64_t seed) {
    Rng r(seed);
    const std::size_t n = r.index(1, 4), in = r.index(1, 5), out = r.index(1, 4);
    Tensor x = r.normal({n, in});
    LinearParams p{r.normal({out, in}), r.normal({out})};
    const auto w = r.weights(n * out);
    return grad_check_all([&] { return readout(linear(x, p), w); }, {x, p.weight, p.bias});
  }));
  cases.push_back(primitive("add", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({3, 4}), b = r.normal({3, 4});
    const auto w = r.weights(12);
    return grad_check_all([&] { return readout(add(a, b), w); }, {a, b});
  }));
  cases.push_back(primitive("mul", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({2, 5}), b = r.normal({2, 5});
    const auto w = r.weights(10);
    return grad_check_all([&] { return readout(mul(a, b), w); }, {a, b});
  }));
  cases.push_back(primitive("scale", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({6});
    const double c = r.weights(1)[0];
    const auto w = r.weights(6);
    return grad_check_all([&] { return readout(scale(a, c), w); }, {a});
  }));
  cases.push_back(primitive("sum", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({2, 3, 2});
    return grad_check_all([&] { return sum(mul(a, a)); }, {a});
  }));
  cases.push_back(primitive("weighted_sum", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({4, 3});
    const auto w = r.weights(12);
    return grad_check_all([&] { return weighted_sum(a, w); }, {a});
  }));
  cases.push_back(primitive("reshape", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({2, 3, 4});
    const auto w = r.weights(24);
    return grad_check_all([&] { return readout(reshape(a, {6, 4}), w); }, {a});
  }));
  cases.push_back(primitive("take_rows", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({4, 3});
    std::vector<std::size_t> rows(5);
    for (auto& i : rows) i = r.index(0, 3);
    const auto w = r.weights(15);
    return grad_check_all([&] { return readout(take_rows(a, rows), w); }, {a});
  }));
  cases.push_back(primitive("slice_cols", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({3, 6});
    const std::size_t b = r.index(0, 4), e = r.index(b + 1, 6);
    const auto w = r.weights(3 * (e - b));
    return grad_check_all([&] { return readout(slice_cols(a, b, e), w); }, {a});
  }));
  cases.push_back(primitive("concat_channels", [](std::uint64_t seed) {
    Rng r(seed);
    std::vector<Tensor> xs{r.normal({2, 1, 2, 2}), r.normal({2, 3, 2, 2}), r.normal({2, 2, 2, 2})};
    const auto w = r.weights(2 * 6 * 4);
    return grad_check_all([&] { return readout(concat_channels(xs), w); }, xs);
  }));
  cases.push_back(primitive("mean_axis1", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor a = r.normal({2, 4, 3});
    const auto w = r.weights(6);
    return grad_check_all([&] { return readout(mean_axis1(a), w); }, {a});
  }));
  cases.push_back(primitive("conv2d", [](std::uint64_t seed) {
    Rng r(seed);
    const std::size_t cin = r.index(1, 3), cout = r.index(1, 3), pad = r.index(0, 1);
    const std::size_t stride = pad == 1 ? r.index(1, 2) : 1;
    Tensor x = r.normal({2, cin, 5, 5});
    ConvParams p = conv_params(r, {cout, cin, 3, 3});
    const std::size_t side = (5 + 2 * pad - 3) / stride + 1;
    const auto w = r.weights(2 * cout * side * side);
    return grad_check_all([&] { return readout(conv2d(x, p, stride, pad), w); }, {x, p.weight, p.bias});
  }));
  cases.push_back(primitive("conv3d", [](std::uint64_t seed) {
    Rng r(seed);
    const std::size_t cin = r.index(1, 2), cout = r.index(1, 2);
    Tensor x = r.normal({1, cin, 4, 4, 4});
    ConvParams p = conv_params(r, {cout, cin, 3, 3, 3});
    const auto w = r.weights(cout * 64);
    return grad_check_all([&] { return readout(conv3d(x, p, 1, 1), w); }, {x, p.weight, p.bias});
  }));
  cases.push_back(primitive("max_pool2d", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.distinct({2, 2, 4, 4});
    const std::size_t k = r.index(1, 2);
    const std::size_t side = (4 - k) / k + 1;
    const auto w = r.weights(4 * side * side);
    return grad_check_all([&] { return readout(max_pool2d(x, k, k), w); }, {x});
  }));
  cases.push_back(primitive("max_pool3d", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.distinct({1, 2, 4, 4, 4});
    const auto w = r.weights(2 * 8);
    return grad_check_all([&] { return readout(max_pool3d(x, {2, 2, 2}, {2, 2, 2}), w); }, {x});
  }));
  cases.push_back(primitive("global_avg_pool", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.normal({2, 3, 3, 3});
    const auto w = r.weights(6);
    return grad_check_all([&] { return readout(global_avg_pool(x), w); }, {x});
  }));
  cases.push_back(primitive("batchnorm_train", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.normal({3, 2, 2, 2});
    BatchNormParams p = BatchNormParams::create(2);
    p.scale = r.uniform({2}, 0.5, 1.5);
    p.shift = r.normal({2});
    const auto w = r.weights(24);
    return grad_check_all([&] { return readout(batchnorm2d(x, p, Mode::kTrain), w); }, {x, p.scale, p.shift});
  }));
  cases.push_back(primitive("batchnorm_eval", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.normal({2, 3, 2, 2});
    BatchNormParams p = BatchNormParams::create(3);
    p.scale = r.uniform({3}, 0.5, 1.5);
    p.shift = r.normal({3});
    p.running_mean = r.weights(3);
    p.running_var = {0.6, 1.0, 1.7};
    p.stats_initialized = true;
    const auto w = r.weights(24);
    return grad_check_all([&] { return readout(batchnorm2d(x, p, Mode::kEval), w); }, {x, p.scale, p.shift});
  }));
  cases.push_back(primitive("relu", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.off_kink({3, 4});
    const auto w = r.weights(12);
    return grad_check_all([&] { return readout(relu(x), w); }, {x});
  }));
  cases.push_back(primitive("sigmoid", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.normal({3, 4}, 2.0);
    const auto w = r.weights(12);
    return grad_check_all([&] { return readout(sigmoid(x), w); }, {x});
  }));
  cases.push_back(primitive("tanh", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.normal({3, 4});
    const auto w = r.weights(12);
    return grad_check_all([&] { return readout(tanh(x), w); }, {x});
  }));
  cases.push_back(primitive("dropout", [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.normal({4, 5});
    const auto w = r.weights(20);
    return grad_check_all([&] { return readout(dropout(x, 0.3, Mode::kTrain, seed), w); }, {x});
  }));
  cases.push_back(primitive("softmax_cross_entropy", [](std::uint64_t seed) {
    Rng r(seed);
    const std::size_t n = r.index(1, 4), c = r.index(2, 5);
    Tensor logits = r.normal({n, c}, 2.0);
    std::vector<int> targets(n);
    for (auto& t : targets) t = static_cast<int>(r.index(0, c - 1));
    return grad_check_all([&] { return softmax_cross_entropy(logits, targets); }, {logits});
  }));

  // --- composites ---
  auto composite = [&](std::string name, std::size_t trials, std::function<GradCheckResult(std::uint64_t)> fn) {
    cases.push_back({std::move(name), "composite", trials, std::move(fn)});
  };
  composite("conv_bn_relu_pool_fc", 5, [](std::uint64_t seed) {
    Rng r(seed);
    Tensor x = r.normal({3, 2, 4, 4});
    ConvParams conv{r.normal({3, 2, 3, 3}, 0.5), Tensor()};
    BatchNormParams bn = BatchNormParams::create(3);
    bn.shift = r.normal({3}, 0.3);
    LinearParams fc{r.normal({4, 12}, 0.5), r.normal({4})};
    const std::vector<int> targets{0, 3, 1};
    return grad_check_all(
        [&] {
          Tensor h = max_pool2d(relu(batchnorm2d(conv2d(x, conv, 1, 1), bn, Mode::kTrain)), 2, 2);
          return softmax_cross_entropy(linear(flatten(h), fc), targets);
        },
        {x, conv.weight, bn.scale, bn.shift, fc.weight, fc.bias});
  });
  composite("frame_cnn", 5, [](std::uint64_t seed) {
    Rng r(seed);
    VideoModel m(tiny_spec(Family::kRnn), mix_seed(seed, 1));
    randomize_parameters(m, r);
    Tensor x = r.uniform({3, 1, 8, 8}, 0.0, 1.0);
    const auto w1 = r.weights(3 * 3 * 4 * 4);
    const auto w2 = r.weights(3 * 3);
    std::vector<Tensor> params;
    for (auto& c : m.frame_cnn_params().blocks) {
      params.push_back(c.weight);
      params.push_back(c.bias);
    }
    params.push_back(x);
    return grad_check_all(
        [&] {
          FrameFeatures f = frame_cnn(x, m.frame_cnn_params());
          return add(readout(f.map, w1), readout(f.vector, w2));
        },
        params);
  });
  composite("rnn_forward", 5, [](std::uint64_t seed) {
    Rng r(seed);
    VideoModel m(tiny_spec(Family::kRnn), mix_seed(seed, 1));
    randomize_parameters(m, r);
    Tensor seq = r.normal({2, 4, 3});
    auto& p = m.rnn_params();
    const auto w = r.weights(2 * 3);
    return grad_check_all([&] { return readout(rnn_forward(seq, p), w); },
                          {seq, p.input.weight, p.input.bias, p.recurrent.weight});
  });
  composite("lstm_forward", 5, [](std::uint64_t seed) {
    Rng r(seed);
    VideoModel m(tiny_spec(Family::kLstm), mix_seed(seed, 1));
    randomize_parameters(m, r);
    Tensor seq = r.normal({2, 4, 3});
    auto& p = m.lstm_params();
    const auto w = r.weights(2 * 3);
    return grad_check_all([&] { return readout(lstm_forward(seq, p), w); },
                          {seq, p.input.weight, p.input.bias, p.recurrent.weight});
  });
  composite("hier_forward", 3, [](std::uint64_t seed) {
    Rng r(seed);
    VideoModel m(tiny_spec(Family::kHierarchical), mix_seed(seed, 1));
    randomize_parameters(m, r);
    Tensor clip = r.uniform({2, 1, 4, 8, 8}, 0.0, 1.0);
    std::vector<Tensor> params{clip};
    for (auto& c : m.hier_params().blocks) {
      params.push_back(c.weight);
      params.push_back(c.bias);
    }
    const auto w = r.weights(2 * 3);
    return grad_check_all([&] { return readout(hier_forward(clip, m.hier_params()), w); }, params);
  });
  composite("tad_forward", 3, [](std::uint64_t seed) {
    Rng r(seed);
    VideoModel m(tiny_spec(Family::kTimeAligned), mix_seed(seed, 1));
    randomize_parameters(m, r);
    randomize_running_stats(m, r);
    std::vector<Tensor> maps;
    for (int t = 0; t < 3; ++t) maps.push_back(r.normal({2, 3, 2, 2}));
    std::vector<Tensor> params = maps;
    for (auto& s : m.tad_params().steps) {
      for (Tensor* t : {&s.bn.scale, &s.bn.shift, &s.conv.weight, &s.conv.bias}) params.push_back(*t);
    }
    const auto w = r.weights(2 * 6 * 4);
    return grad_check_all(
        [&] { return readout(tad_forward(maps, m.tad_params(), 2, 0.1, Mode::kEval, seed).encoding, w); }, params);
  });
  for (Family f : {Family::kRnn, Family::kLstm, Family::kHierarchical, Family::kTimeAligned, Family::kFrameMean}) {
    composite("model_" + std::string(family_name(f)), 2, [f](std::uint64_t seed) { return model_case(f, seed); });
  }
  return cases;
}

}  // namespace

const std::vector<GradCheckCase>& gradcheck_registry() {
  static const std::vector<GradCheckCase> cases = build_registry();
  return cases;
}

std::vector<std::string> registered_primitive_ops() {
  // Tape op names; batchnorm is exercised in both modes by two cases.
  return {"matmul",     "linear",      "add",        "mul",        "scale",           "sum",
          "weighted_sum", "reshape",   "take_rows",  "slice_cols", "concat_channels", "mean_axis1",
          "conv2d",     "conv3d",      "max_pool2d", "max_pool3d", "global_avg_pool", "batchnorm",
          "relu",       "sigmoid",     "tanh",       "dropout",    "softmax_cross_entropy"};
}

std::vector<GradCheckReportRow> run_gradcheck_suite(double tolerance, std::uint64_t base_seed) {
  std::vector<GradCheckReportRow> rows;
  const auto& cases = gradcheck_registry();
  for (std::size_t c = 0; c < cases.size(); ++c) {
    GradCheckReportRow row{cases[c].name, cases[c].kind, cases[c].trials, 0.0, false};
    for (std::size_t t = 0; t < cases[c].trials; ++t) {
      const GradCheckResult r = cases[c].run(mix_seed(mix_seed(base_seed, c), t));
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
    }
    row.passed = row.max_rel_error < tolerance;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace chronoscope
