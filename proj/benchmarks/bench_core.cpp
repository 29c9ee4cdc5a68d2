#include <benchmark/benchmark.h>

#include <vector>

#include "chronoscope/encoders.hpp"
#include "chronoscope/ops.hpp"
#include "chronoscope/synthvid.hpp"
#include "chronoscope/tasks.hpp"

using namespace chronoscope;

namespace {

Tensor normal(const Shape& s, std::uint64_t seed) { return Tensor::create(s, init::Normal{seed}); }

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = normal({n, n}, 1), b = normal({n, n}, 2);
  NoTapeScope no_tape;
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).data().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const Tensor x = normal({16, c, 16, 16}, 3);
  ConvParams p{normal({c, c, 3, 3}, 4), Tensor::create({c})};
  NoTapeScope no_tape;
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, p, 1, 1).data().data());
}
BENCHMARK(BM_Conv2d)->Arg(16)->Arg(32);

Tensor clip_batch(std::size_t n, std::size_t t) {
  std::vector<double> v;
  v.reserve(n * t * 256);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = gen_asym_clip(i);
    const auto idx = sample_frames(c.length, t, Uniform{});
    for (auto f : idx) v.insert(v.end(), c.frame(f).begin(), c.frame(f).end());
  }
  return Tensor::from_data({n, t, 1, 16, 16}, std::move(v));
}

void BM_ModelForward(benchmark::State& state) {
  EncoderSpec s;
  s.family = static_cast<Family>(state.range(0));
  VideoModel m(s, 1);
  const Tensor x = clip_batch(8, s.time_steps);
  NoTapeScope no_tape;
  for (auto _ : state) benchmark::DoNotOptimize(m.logits(x, Mode::kEval).data().data());
  state.SetLabel(std::string(family_name(s.family)));
}
BENCHMARK(BM_ModelForward)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

void BM_TadTrainStep(benchmark::State& state) {
  EncoderSpec s;
  VideoModel m(s, 1);
  const Tensor x = clip_batch(8, s.time_steps);
  const std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 1};
  auto params = m.parameters();
  for (auto _ : state) {
    for (auto& p : params) p.tensor.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    const Tensor loss = softmax_cross_entropy(m.logits(x, Mode::kTrain, 7), y);
    tape.backward(loss);
  }
}
BENCHMARK(BM_TadTrainStep)->Unit(benchmark::kMillisecond);

void BM_GenerateClip(benchmark::State& state) {
  std::uint64_t seed = 0;
  const auto kind = state.range(0);
  for (auto _ : state) {
    VideoClip c = kind == 0 ? gen_asym_clip(seed) : kind == 1 ? gen_sym_clip(seed) : gen_template_clip(seed, seed % 8);
    benchmark::DoNotOptimize(c.pixels.data());
    ++seed;
  }
  state.SetLabel(kind == 0 ? "asym" : kind == 1 ? "sym" : "template");
}
BENCHMARK(BM_GenerateClip)->DenseRange(0, 2);

}  // namespace

BENCHMARK_MAIN();
