#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "chronoscope/encoders.hpp"
#include "chronoscope/errors.hpp"
#include "chronoscope/grad_check.hpp"
#include "chronoscope/ops.hpp"
#include "chronoscope/synthvid.hpp"

using namespace chronoscope;

namespace {

Tensor random_tensor(const Shape& s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 g(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(s));
  for (auto& e : v) e = d(g);
  return Tensor::from_data(s, std::move(v));
}

EncoderSpec spec_for(Family f, std::size_t t = 16) {
  EncoderSpec s;
  s.family = f;
  s.time_steps = t;
  return s;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(Spec, Validation) {
  EncoderSpec s;
  EXPECT_NO_THROW(s.validate());
  s.family = Family::kLstm;
  s.time_steps = 1;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = EncoderSpec{};
  s.growth = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = EncoderSpec{};
  s.hidden = 0;
  EXPECT_THROW(s.validate(), InvalidArgument);
  EXPECT_EQ(parse_family("tad"), Family::kTimeAligned);
  EXPECT_THROW(parse_family("gru"), InvalidArgument);
}

TEST(FrameCnn, ShapesForDefaultSpec) {
  VideoModel m(spec_for(Family::kTimeAligned), 1);
  const FrameFeatures f = frame_cnn(random_tensor({3, 1, 16, 16}, 2), m.frame_cnn_params());
  EXPECT_EQ(f.map.shape(), (Shape{3, 32, 4, 4}));
  EXPECT_EQ(f.vector.shape(), (Shape{3, 32}));
}

TEST(FrameCnn, ZeroInputGivesFiniteBiasPath) {
  VideoModel m(spec_for(Family::kTimeAligned), 1);
  const FrameFeatures f = frame_cnn(Tensor::create({2, 1, 16, 16}), m.frame_cnn_params());
  for (double v : f.vector.data()) EXPECT_TRUE(std::isfinite(v));
  for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(f.vector.data()[c], f.vector.data()[32 + c]);
  EXPECT_THROW(frame_cnn(Tensor::create({2, 2, 16, 16}), m.frame_cnn_params()), ShapeError);
}

TEST(Rnn, ZeroParamsGiveZeroState) {
  RnnParams p{{Tensor::create({4, 8}), Tensor::create({4})}, {Tensor::create({4, 4}), Tensor()}};
  const Tensor h = rnn_step(random_tensor({2, 8}, 3), random_tensor({2, 4}, 4), p);
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
}

TEST(Rnn, IdentityRecurrenceNearLinearRegion) {
  std::vector<double> eye(16, 0.0);
  for (int i = 0; i < 4; ++i) eye[i * 5] = 1.0;
  RnnParams p{{Tensor::create({4, 3}), Tensor::create({4})}, {Tensor::from_data({4, 4}, eye), Tensor()}};
  const Tensor hp = random_tensor({2, 4}, 5, -1e-3, 1e-3);
  const Tensor h = rnn_step(Tensor::create({2, 3}), hp, p);
  EXPECT_LT(max_abs_diff(h, hp), 1e-6);
}

TEST(Rnn, MatchesAffineTanhOracle) {
  const std::size_t n = 3, d = 5, hd = 4;
  RnnParams p{{random_tensor({hd, d}, 6, -1, 1), random_tensor({hd}, 7, -1, 1)},
              {random_tensor({hd, hd}, 8, -1, 1), Tensor()}};
  const Tensor x = random_tensor({n, d}, 9, -1, 1), hp = random_tensor({n, hd}, 10, -1, 1);
  const Tensor h = rnn_step(x, hp, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < hd; ++j) {
      double z = p.input.bias.data()[j];
      for (std::size_t k = 0; k < d; ++k) z += p.input.weight.data()[j * d + k] * x.data()[i * d + k];
      for (std::size_t k = 0; k < hd; ++k) z += p.recurrent.weight.data()[j * hd + k] * hp.data()[i * hd + k];
      EXPECT_NEAR(h.data()[i * hd + j], std::tanh(z), 1e-12);
    }
  EXPECT_THROW(rnn_step(random_tensor({n, d + 1}, 1), hp, p), ShapeError);
}

TEST(Lstm, ClosedGatesGiveZeroState) {
  const std::size_t d = 3, hd = 4;
  std::vector<double> bias(4 * hd, -50.0);
  LstmParams p{{random_tensor({4 * hd, d}, 1, -0.1, 0.1), Tensor::from_data({4 * hd}, bias)},
               {random_tensor({4 * hd, hd}, 2, -0.1, 0.1), Tensor()}};
  const Tensor h = lstm_forward(random_tensor({2, 5, d}, 3), p);
  for (double v : h.data()) EXPECT_LT(std::abs(v), 1e-6);
}

TEST(Lstm, SingleStepEqualsCell) {
  const std::size_t d = 3, hd = 2;
  LstmParams p{{random_tensor({4 * hd, d}, 4, -1, 1), random_tensor({4 * hd}, 5, -1, 1)},
               {random_tensor({4 * hd, hd}, 6, -1, 1), Tensor()}};
  const Tensor x = random_tensor({2, 1, d}, 7);
  const LstmState s =
      lstm_cell(reshape(x, {2, d}), {Tensor::create({2, hd}), Tensor::create({2, hd})}, p);
  const Tensor h = lstm_forward(x, p);
  for (std::size_t i = 0; i < h.numel(); ++i) EXPECT_EQ(h.data()[i], s.h.data()[i]);
}

TEST(Lstm, ForgetGateBiasStartsAtOne) {
  VideoModel m(spec_for(Family::kLstm), 3);
  const auto& b = m.lstm_params().input.bias;
  const std::size_t hd = m.spec().hidden;
  for (std::size_t j = 0; j < hd; ++j) {
    EXPECT_EQ(b.data()[hd + j], 1.0);
    EXPECT_EQ(b.data()[j], 0.0);
  }
}

TEST(Lstm, FourStepGradCheck) {
  const std::size_t d = 3, hd = 3;
  LstmParams p{{random_tensor({4 * hd, d}, 8, -1, 1), random_tensor({4 * hd}, 9, -0.5, 0.5)},
               {random_tensor({4 * hd, hd}, 10, -1, 1), Tensor()}};
  const Tensor x = random_tensor({2, 4, d}, 11, -1, 1);
  const std::vector<double> w{0.3, -1.2, 0.7, 1.1, -0.4, 0.9};
  const auto r = grad_check_all([&] { return weighted_sum(lstm_forward(x, p), w); },
                                {x, p.input.weight, p.input.bias, p.recurrent.weight});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Hier, TemporalDimsHalvePerPooledBlock) {
  VideoModel m(spec_for(Family::kHierarchical), 1);
  Tensor h = random_tensor({1, 1, 16, 16, 16}, 2);
  const auto& blocks = m.hier_params().blocks;
  ASSERT_EQ(blocks.size(), 3u);
  std::vector<std::size_t> temporal{h.dim(2)};
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    h = relu(conv3d(h, blocks[b], 1, 1));
    if (b + 1 < blocks.size()) h = max_pool3d(h, {2, 2, 2}, {2, 2, 2});
    temporal.push_back(h.dim(2));
  }
  EXPECT_EQ(temporal, (std::vector<std::size_t>{16, 8, 4, 4}));
  EXPECT_EQ(hier_forward(random_tensor({2, 1, 16, 16, 16}, 3), m.hier_params()).shape(), (Shape{2, 32}));
  EXPECT_THROW(hier_forward(random_tensor({1, 1, 2, 16, 16}, 3), m.hier_params()), ShapeError);
}

TEST(Hier, ConstantClipInvariantToFrameOrder) {
  VideoModel m(spec_for(Family::kHierarchical, 8), 4);
  const Tensor c = Tensor::create({1, 8, 1, 16, 16}, init::Full{0.4});
  const Tensor a = m.logits(c, Mode::kEval);
  const Tensor b = m.logits(c.clone(), Mode::kEval);
  EXPECT_EQ(max_abs_diff(a, b), 0.0);
}

TEST(Tad, StepInputWidthsAndOutputChannels) {
  EncoderSpec s = spec_for(Family::kTimeAligned, 5);
  s.growth = 7;
  VideoModel m(s, 2);
  const std::size_t F = s.frame_features();
  for (std::size_t t = 1; t <= 5; ++t) {
    EXPECT_EQ(m.tad_params().steps[t - 1].conv.weight.dim(1), F + (t - 1) * s.growth);
    EXPECT_EQ(m.tad_params().steps[t - 1].conv.weight.dim(0), s.growth);
  }
  const auto states = m.time_aligned_states(random_tensor({2, 5, 1, 16, 16}, 3), Mode::kEval);
  ASSERT_EQ(states.size(), 5u);
  for (const auto& h : states) EXPECT_EQ(h.shape(), (Shape{2, 7, 4, 4}));
}

TEST(Tad, FirstStepSeesOnlyItsFrame) {
  EncoderSpec s = spec_for(Family::kTimeAligned, 2);
  VideoModel m(s, 5);
  std::vector<Tensor> maps{random_tensor({1, 32, 4, 4}, 1), random_tensor({1, 32, 4, 4}, 2)};
  const Tensor h1 = tad_step(std::span(maps.data(), 1), m.tad_params().steps[0], s.growth, 0.0, Mode::kEval, 0);
  const TadOutput out = tad_forward(maps, m.tad_params(), s.growth, 0.0, Mode::kEval, 0);
  EXPECT_EQ(max_abs_diff(h1, out.states[0]), 0.0);
  EXPECT_THROW(tad_forward(std::span(maps.data(), 1), m.tad_params(), s.growth, 0.0, Mode::kEval, 0), InvalidArgument);
  std::vector<Tensor> bad{random_tensor({1, 32, 4, 4}, 1), random_tensor({1, 32, 2, 2}, 2)};
  EXPECT_THROW(tad_forward(bad, m.tad_params(), s.growth, 0.0, Mode::kEval, 0), ShapeError);
}

TEST(Tad, EncodingArity) {
  for (auto [k, t] : {std::pair<std::size_t, std::size_t>{12, 16}, {4, 4}, {1, 2}, {3, 7}}) {
    EncoderSpec s = spec_for(Family::kTimeAligned, t);
    s.growth = k;
    VideoModel m(s, k * 100 + t);
    std::vector<Tensor> maps;
    for (std::size_t i = 0; i < t; ++i) maps.push_back(random_tensor({1, 32, 4, 4}, i));
    const TadOutput out = tad_forward(maps, m.tad_params(), k, 0.1, Mode::kEval, 0);
    EXPECT_EQ(out.encoding.dim(1), k * t);
  }
}

TEST(Tad, SingleStepIsOneDenseBlock) {
  EncoderSpec s = spec_for(Family::kTimeAligned, 2);
  VideoModel m(s, 6);
  TadParams one;
  one.steps.push_back(m.tad_params().steps[0]);
  std::vector<Tensor> maps{random_tensor({2, 32, 4, 4}, 9)};
  const TadOutput out = tad_forward(maps, one, s.growth, 0.0, Mode::kEval, 0);
  EXPECT_EQ(out.encoding.shape(), (Shape{2, s.growth, 4, 4}));
}

TEST(Tad, LaterFramesNeverReachEarlierStates) {
  EncoderSpec s = spec_for(Family::kTimeAligned, 8);
  VideoModel m(s, 7);
  const Tensor clip = random_tensor({2, 8, 1, 16, 16}, 8);
  const auto base = m.time_aligned_states(clip, Mode::kEval);
  for (std::size_t frame = 0; frame < 8; ++frame) {
    Tensor p = clip.clone();
    for (std::size_t i = 0; i < 256; ++i) p.data()[(0 * 8 + frame) * 256 + i] += 1e-3;
    const auto moved = m.time_aligned_states(p, Mode::kEval);
    for (std::size_t t = 0; t < 8; ++t) {
      const bool same = std::equal(base[t].data().begin(), base[t].data().end(), moved[t].data().begin());
      if (t < frame) {
        EXPECT_TRUE(same) << "frame " << frame << " leaked into h_" << t + 1;
      } else if (t == frame) {
        EXPECT_FALSE(same);
      }
    }
  }
}

TEST(Tad, StepParamsOnlyAffectLaterStates) {
  EncoderSpec s = spec_for(Family::kTimeAligned, 4);
  VideoModel m(s, 11);
  const Tensor clip = random_tensor({2, 4, 1, 16, 16}, 12);
  const auto base = m.time_aligned_states(clip, Mode::kEval);
  m.tad_params().steps[2].conv.weight.data()[0] += 0.5;
  const auto moved = m.time_aligned_states(clip, Mode::kEval);
  for (std::size_t t = 0; t < 4; ++t) {
    const bool same = max_abs_diff(base[t], moved[t]) == 0.0;
    EXPECT_EQ(same, t < 2) << t;
  }
}

TEST(Tad, OrderSensitive) {
  EncoderSpec s = spec_for(Family::kTimeAligned, 16);
  VideoModel m(s, 13);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const VideoClip c = gen_asym_clip(seed, 16);
    std::vector<double> fwd(c.pixels.begin(), c.pixels.end()), bwd;
    const VideoClip r = reverse_clip(c);
    bwd.assign(r.pixels.begin(), r.pixels.end());
    const Tensor a = m.logits(Tensor::from_data({1, 16, 1, 16, 16}, fwd), Mode::kEval);
    const Tensor b = m.logits(Tensor::from_data({1, 16, 1, 16, 16}, bwd), Mode::kEval);
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) d2 += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
    EXPECT_GT(std::sqrt(d2), 1e-6) << seed;
  }
}

TEST(FrameMean, BlindToReversalExactly) {
  VideoModel m(spec_for(Family::kFrameMean, 16), 14);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const VideoClip c = gen_asym_clip(seed, 16);
    const VideoClip r = reverse_clip(c);
    const Tensor a = m.logits(Tensor::from_data({1, 16, 1, 16, 16}, {c.pixels.begin(), c.pixels.end()}), Mode::kEval);
    const Tensor b = m.logits(Tensor::from_data({1, 16, 1, 16, 16}, {r.pixels.begin(), r.pixels.end()}), Mode::kEval);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
  }
}

TEST(Head, TwoClassLogitsAndZeroEncoding) {
  VideoModel m(spec_for(Family::kRnn), 15);
  const Tensor logits = m.logits(random_tensor({3, 16, 1, 16, 16}, 16), Mode::kEval);
  EXPECT_EQ(logits.shape(), (Shape{3, 2}));
  m.head_params().fc.bias.data()[0] = 0.25;
  m.head_params().fc.bias.data()[1] = -0.5;
  const HeadOutput out = classifier_head(Tensor::create({2, m.spec().hidden}), m.head_params(), Mode::kEval);
  EXPECT_EQ(out.logits.data()[0], 0.25);
  EXPECT_EQ(out.logits.data()[3], -0.5);
  EXPECT_THROW(classifier_head(Tensor::create({2, 5}), m.head_params(), Mode::kEval), ShapeError);
}

TEST(CountParams, RnnClosedForm) {
  RnnParams p{{Tensor::create({4, 8}), Tensor::create({4})}, {Tensor::create({4, 4}), Tensor()}};
  EXPECT_EQ(p.input.weight.numel() + p.input.bias.numel() + p.recurrent.weight.numel(), 52u);
  EncoderSpec s = spec_for(Family::kRnn);
  s.base_channels = {8};
  s.hidden = 4;
  EXPECT_EQ(count_params(s).temporal, 4u * 8 + 4 * 4 + 4);
}

TEST(CountParams, MatchesEnumerationForEveryFamily) {
  for (Family f : {Family::kRnn, Family::kLstm, Family::kHierarchical, Family::kTimeAligned, Family::kFrameMean}) {
    for (std::size_t t : {2u, 4u, 16u}) {
      if (f == Family::kHierarchical && t < 4) continue;  // two temporal pools need T >= 4
      EncoderSpec s = spec_for(f, t);
      VideoModel m(s, 1);
      std::size_t n = 0;
      for (auto& nt : m.parameters()) n += nt.tensor.numel();
      EXPECT_EQ(count_params(s).total(), n) << family_name(f) << " T=" << t;
      EXPECT_EQ(m.num_params(), n);
    }
  }
}

TEST(CountParams, TadSummation) {
  for (std::size_t t_max : {2u, 5u, 16u}) {
    EncoderSpec s = spec_for(Family::kTimeAligned, t_max);
    const std::size_t F = 32, K = s.growth;
    std::size_t want = 0;
    for (std::size_t t = 1; t <= t_max; ++t) want += K * (9 * (F + (t - 1) * K)) + K + 2 * (F + (t - 1) * K);
    EXPECT_EQ(count_params(s).temporal, want);
  }
}

TEST(Checkpoint, RoundTripAndDigest) {
  VideoModel m(spec_for(Family::kTimeAligned, 4), 21);
  ConfigDigest digest{};
  digest[0] = 0xab;
  const auto path = std::filesystem::temp_directory_path() / "chronoscope_ckpt_test.ckpt";
  write_checkpoint(path, digest, m.state_tensors());
  const Checkpoint ck = read_checkpoint(path);
  EXPECT_EQ(ck.digest, digest);
  const auto st = m.state_tensors();
  ASSERT_EQ(ck.tensors.size(), st.size());
  for (std::size_t i = 0; i < st.size(); ++i) {
    EXPECT_EQ(ck.tensors[i].name, st[i].name);
    for (std::size_t j = 0; j < st[i].tensor.numel(); ++j) {
      EXPECT_EQ(ck.tensors[i].tensor.data()[j], static_cast<double>(static_cast<float>(st[i].tensor.data()[j])));
    }
  }
  std::filesystem::remove(path);
}
