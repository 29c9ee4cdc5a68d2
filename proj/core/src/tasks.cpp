#include "chronoscope/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "chronoscope/errors.hpp"
#include "chronoscope/ops.hpp"
#include "seed.hpp"

namespace chronoscope {

using detail::mix_seed;

std::string_view task_name(TaskKind k) {
  switch (k) {
    case TaskKind::kArrow:
      return "arrow";
    case TaskKind::kFuture:
      return "future";
    case TaskKind::kTemplate:
      return "template";
  }
  return "?";
}

TaskKind parse_task(std::string_view name) {
  for (auto k : {TaskKind::kArrow, TaskKind::kFuture, TaskKind::kTemplate}) {
    if (task_name(k) == name) return k;
  }
  throw InvalidArgument("unknown task '" + std::string(name) + "' (expected arrow|future|template)");
}

// --- sampling -----------------------------------------------------------------------

namespace {

void check_sample(std::size_t length, std::size_t n) {
  if (n == 0) throw InvalidArgument("sample_frames: n must be >= 1");
  if (length < n) {
    throw InvalidArgument("sample_frames: clip has " + std::to_string(length) + " frames, need " + std::to_string(n));
  }
}

}  // namespace

std::vector<std::size_t> sample_frames(std::size_t length, std::size_t n, Multinomial how) {
  check_sample(length, n);
  // Partial Fisher-Yates over [0, length): uniform weights, no replacement.
  std::vector<std::size_t> pool(length);
  std::iota(pool.begin(), pool.end(), 0);
  std::mt19937_64 rng(how.seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, length - 1)(rng);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::size_t> sample_frames(std::size_t length, std::size_t n, Uniform) {
  check_sample(length, n);
  if (n == 1) return {0};
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = static_cast<std::size_t>(std::llround(static_cast<double>(i) * static_cast<double>(length - 1) /
                                                   static_cast<double>(n - 1)));
  }
  return out;
}

namespace {

std::vector<std::size_t> sample(std::size_t length, std::size_t n, const Sampling& how, std::uint64_t clip_key) {
  if (const auto* m = std::get_if<Multinomial>(&how)) return sample_frames(length, n, Multinomial{mix_seed(m->seed, clip_key)});
  return sample_frames(length, n, Uniform{});
}

}  // namespace

// --- arrow ----------------------------------------------------------------------------

std::vector<TaskInstance> build_arrow_dataset(const Dataset& base, std::size_t n, const Sampling& how) {
  std::vector<TaskInstance> out;
  out.reserve(2 * base.clips.size());
  for (std::size_t i = 0; i < base.clips.size(); ++i) {
    const auto& clip = base.clips[i];
    TaskInstance fwd;
    fwd.clip_index = i;
    fwd.clip_length = clip.length;
    fwd.frame_indices = sample(clip.length, n, how, i);
    fwd.target = 1;
    TaskInstance bwd = fwd;
    bwd.reversed = true;
    bwd.target = 0;
    out.push_back(std::move(fwd));
    out.push_back(std::move(bwd));
  }
  return out;
}

// --- future ---------------------------------------------------------------------------

void FutureTaskConfig::validate() const {
  if (choices < 2) throw InvalidArgument("future task: choices must be >= 2");
  if (!(horizon_fraction > 0.0 && horizon_fraction < 1.0)) {
    throw InvalidArgument("future task: horizon fraction must lie in (0, 1)");
  }
  if (tau_schedule.empty()) throw InvalidArgument("future task: empty tau schedule");
}

namespace {

std::size_t horizon_end(std::size_t length, const FutureTaskConfig& cfg) {
  return static_cast<std::size_t>(std::floor(cfg.horizon_fraction * static_cast<double>(length)));
}

}  // namespace

std::size_t tau_frame(const VideoClip& clip, double tau, std::size_t n, const FutureTaskConfig& cfg) {
  const double idx = std::round(tau * clip.fps);
  const std::size_t end = horizon_end(clip.length, cfg);
  if (!(idx >= 0.0) || idx >= static_cast<double>(end)) {
    throw InvalidArgument("tau " + std::to_string(tau) + "s maps to frame " + std::to_string(idx) +
                          ", outside [0, " + std::to_string(end) + ")");
  }
  const auto frame = static_cast<std::size_t>(idx);
  if (frame + 1 < n) {
    throw InvalidArgument("tau " + std::to_string(tau) + "s leaves " + std::to_string(frame + 1) +
                          " observable frames, need " + std::to_string(n));
  }
  return frame;
}

std::vector<TaskInstance> build_future_instances(const VideoClip& clip, std::size_t clip_index,
                                                 const FutureTaskConfig& cfg, double tau, FutureMode mode,
                                                 std::size_t n, std::uint64_t seed) {
  cfg.validate();
  const std::size_t last_observed = tau_frame(clip, tau, n, cfg);
  const std::size_t end = horizon_end(clip.length, cfg);
  const std::size_t truth = clip.length - 1;
  std::mt19937_64 rng(seed);

  TaskInstance base;
  base.clip_index = clip_index;
  base.clip_length = clip.length;
  base.tau = tau;
  base.frame_indices = mode == FutureMode::kTrain ? sample_frames(last_observed + 1, n, Multinomial{rng()})
                                                  : sample_frames(last_observed + 1, n, Uniform{});

  if (mode == FutureMode::kTrain) {
    TaskInstance pos = base, neg = base;
    pos.candidates = {truth};
    pos.target = 1;
    neg.candidates = {std::uniform_int_distribution<std::size_t>(0, end - 1)(rng)};
    neg.target = 0;
    return {pos, neg};
  }
  if (cfg.choices - 1 > end) {
    throw InvalidArgument("future task: " + std::to_string(cfg.choices - 1) + " distractors requested from " +
                          std::to_string(end) + " frames");
  }
  // Distractors without replacement from [0, end), then a seeded shuffle.
  std::vector<std::size_t> pool(end);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i + 1 < cfg.choices; ++i) {
    std::swap(pool[i], pool[std::uniform_int_distribution<std::size_t>(i, end - 1)(rng)]);
  }
  std::vector<std::size_t> cands(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.choices - 1));
  cands.push_back(truth);
  std::shuffle(cands.begin(), cands.end(), rng);
  base.candidates = cands;
  base.target = static_cast<int>(std::find(cands.begin(), cands.end(), truth) - cands.begin());
  return {base};
}

double eval_future_selection(std::span<const TaskInstance> instances, const CandidateScorer& score) {
  if (instances.empty()) throw InvalidArgument("eval_future_selection: no instances");
  std::size_t correct = 0;
  for (const auto& inst : instances) {
    std::size_t best = 0;
    double best_score = 0.0;
    for (std::size_t c = 0; c < inst.candidates.size(); ++c) {
      const double s = score(inst, c);
      if (c == 0 || s > best_score) {
        best = c;
        best_score = s;
      }
    }
    correct += static_cast<int>(best) == inst.target;
  }
  return static_cast<double>(correct) / static_cast<double>(instances.size());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

double frame_similarity_baseline(std::span<const TaskInstance> instances, const Dataset& clips,
                                 const FrameCnnParams& frame_cnn_params) {
  NoTapeScope no_tape;
  auto embed = [&](std::size_t clip, std::size_t frame) {
    const auto& c = clips.clips.at(clip);
    const auto px = c.frame(frame);
    Tensor x = Tensor::from_data({1, 1, c.height, c.width}, std::vector<double>(px.begin(), px.end()));
    const Tensor v = frame_cnn(x, frame_cnn_params).vector;
    return std::vector<double>(v.data().begin(), v.data().end());
  };
  std::vector<std::vector<double>> last(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    last[i] = embed(inst.clip_index, inst.source_frame(inst.frame_indices.back()));
  }
  return eval_future_selection(instances, [&](const TaskInstance& inst, std::size_t c) {
    const std::size_t i = static_cast<std::size_t>(&inst - instances.data());
    return cosine_similarity(last[i], embed(inst.clip_index, inst.candidates[c]));
  });
}

// --- template -------------------------------------------------------------------------

std::vector<TaskInstance> build_template_instances(const Dataset& base, std::size_t n, const Sampling& how) {
  std::vector<TaskInstance> out;
  out.reserve(base.clips.size());
  for (std::size_t i = 0; i < base.clips.size(); ++i) {
    const auto& clip = base.clips[i];
    if (!clip.class_id) throw InvalidArgument("template task: clip " + std::to_string(i) + " has no class id");
    TaskInstance inst;
    inst.clip_index = i;
    inst.clip_length = clip.length;
    inst.frame_indices = sample(clip.length, n, how, i);
    inst.target = *clip.class_id;
    out.push_back(std::move(inst));
  }
  return out;
}

Dataset build_template_dataset(std::uint64_t seed_begin, std::size_t count, std::size_t length, double fps) {
  GenerateOptions opts;
  opts.kind = GeneratorKind::kTemplate;
  opts.seed_begin = seed_begin;
  opts.count = count;
  opts.length = length;
  opts.fps = fps;
  return generate_dataset(opts);
}

// --- scoring --------------------------------------------------------------------------

std::size_t class_rank(std::span<const double> row, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= row.size()) {
    throw InvalidArgument("target " + std::to_string(target) + " outside [0, " + std::to_string(row.size()) + ")");
  }
  const double t = row[static_cast<std::size_t>(target)];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] > t || (row[j] == t && j < static_cast<std::size_t>(target))) ++rank;
  }
  return rank;
}

double prec_at_k(const Tensor& logits, std::span<const int> targets, std::size_t k) {
  if (logits.rank() != 2) throw ShapeError("prec_at_k: logits must be [N, C], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) throw ShapeError("prec_at_k: " + std::to_string(targets.size()) + " targets for " +
                                            std::to_string(n) + " rows");
  if (k == 0 || k > c) throw InvalidArgument("prec_at_k: k=" + std::to_string(k) + " with " + std::to_string(c) + " classes");
  if (n == 0) throw InvalidArgument("prec_at_k: no rows");
  std::size_t hits = 0;
  const auto d = logits.data();
  for (std::size_t i = 0; i < n; ++i) hits += class_rank(d.subspan(i * c, c), targets[i]) < k;
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<Example> to_examples(std::span<const TaskInstance> instances) {
  std::vector<Example> out;
  for (const auto& inst : instances) {
    Example ex;
    ex.clip_index = inst.clip_index;
    for (std::size_t f : inst.frame_indices) ex.frames.push_back(inst.source_frame(f));
    if (inst.candidates.empty()) {
      ex.label = inst.target;
      out.push_back(std::move(ex));
    } else if (inst.candidates.size() == 1) {
      ex.frames.push_back(inst.candidates[0]);
      ex.label = inst.target;
      out.push_back(std::move(ex));
    } else {
      for (std::size_t c = 0; c < inst.candidates.size(); ++c) {
        Example e = ex;
        e.frames.push_back(inst.candidates[c]);
        e.label = static_cast<int>(c) == inst.target ? 1 : 0;
        out.push_back(std::move(e));
      }
    }
  }
  return out;
}

Tensor assemble_batch(const Dataset& clips, std::span<const Example> examples) {
  if (examples.empty()) throw InvalidArgument("assemble_batch: no examples");
  const auto& first = clips.clips.at(examples[0].clip_index);
  const std::size_t t = examples[0].frames.size(), h = first.height, w = first.width, fs = h * w;
  std::vector<double> data(examples.size() * t * fs);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const auto& clip = clips.clips.at(ex.clip_index);
    if (ex.frames.size() != t || clip.height != h || clip.width != w) {
      throw ShapeError("assemble_batch: examples disagree on frame count or size");
    }
    for (std::size_t s = 0; s < t; ++s) {
      const auto px = clip.frame(ex.frames[s]);
      std::copy(px.begin(), px.end(), data.begin() + static_cast<std::ptrdiff_t>((i * t + s) * fs));
    }
  }
  return Tensor::from_data({examples.size(), t, 1, h, w}, std::move(data));
}

// --- runner ---------------------------------------------------------------------------

namespace {

constexpr std::uint64_t kTestSeed = 0x5eed7e57;
constexpr std::size_t kEvalChunk = 64;

struct ModelOutputs {
  std::vector<double> logits;      // rows x classes
  std::vector<double> embeddings;  // rows x width (optional)
  std::size_t classes = 0;
  std::size_t width = 0;
};

// Runs the model over examples in fixed chunks; workers own disjoint chunks
// and write into preallocated slots, so results do not depend on scheduling.
ModelOutputs run_model(VideoModel& model, const Dataset& clips, const std::vector<Example>& examples,
                       std::size_t threads, bool want_embeddings) {
  ModelOutputs out;
  out.classes = model.spec().num_classes;
  out.width = model.embedding_width();
  out.logits.resize(examples.size() * out.classes);
  if (want_embeddings) out.embeddings.resize(examples.size() * out.width);
  const std::size_t chunks = (examples.size() + kEvalChunk - 1) / kEvalChunk;
  auto work = [&](std::size_t chunk) {
    NoTapeScope no_tape;
    const std::size_t b = chunk * kEvalChunk, e = std::min(examples.size(), b + kEvalChunk);
    const std::span<const Example> part(examples.data() + b, e - b);
    const auto res = model.forward(assemble_batch(clips, part), Mode::kEval);
    std::copy(res.logits.data().begin(), res.logits.data().end(),
              out.logits.begin() + static_cast<std::ptrdiff_t>(b * out.classes));
    if (want_embeddings) {
      std::copy(res.embedding.data().begin(), res.embedding.data().end(),
                out.embeddings.begin() + static_cast<std::ptrdiff_t>(b * out.width));
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(threads, chunks));
  if (workers == 1) {
    for (std::size_t c = 0; c < chunks; ++c) work(c);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < chunks; c += workers) work(c);
      });
    }
  }
  return out;
}

double row_cross_entropy(std::span<const double> row, int target) {
  const double m = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (double v : row) z += std::exp(v - m);
  return std::log(z) + m - row[static_cast<std::size_t>(target)];
}

}  // namespace

TaskRunner::TaskRunner(TaskKind kind, const Dataset& train, const Dataset& test, std::size_t frames,
                       FutureTaskConfig future)
    : kind_(kind), train_(train), test_(test), frames_(frames), future_(std::move(future)) {
  if (frames_ == 0) throw InvalidArgument("task: frame count must be >= 1");
  if (kind_ == TaskKind::kFuture) future_.validate();
  test_instances_ = build(test_, Uniform{}, FutureMode::kTest, kTestSeed);
}

std::size_t TaskRunner::model_time_steps() const { return frames_ + (kind_ == TaskKind::kFuture ? 1 : 0); }

std::size_t TaskRunner::num_classes() const { return kind_ == TaskKind::kTemplate ? kNumTemplateClasses : 2; }

double TaskRunner::chance_level() const {
  switch (kind_) {
    case TaskKind::kArrow:
      return 0.5;
    case TaskKind::kFuture:
      return 1.0 / static_cast<double>(future_.choices);
    case TaskKind::kTemplate:
      return 1.0 / static_cast<double>(kNumTemplateClasses);
  }
  return 0.0;
}

std::vector<std::string> TaskRunner::class_names() const {
  switch (kind_) {
    case TaskKind::kArrow:
      return {"backward", "forward"};
    case TaskKind::kFuture:
      return {"distractor", "future"};
    case TaskKind::kTemplate:
      return template_class_names();
  }
  return {};
}

std::vector<TaskInstance> TaskRunner::build(const Dataset& d, const Sampling& how, FutureMode mode,
                                            std::uint64_t seed) const {
  switch (kind_) {
    case TaskKind::kArrow:
      return build_arrow_dataset(d, frames_, how);
    case TaskKind::kTemplate:
      return build_template_instances(d, frames_, how);
    case TaskKind::kFuture: {
      std::vector<TaskInstance> out;
      const auto& taus = future_.tau_schedule;
      for (std::size_t i = 0; i < d.clips.size(); ++i) {
        // Test clips cycle through the schedule; train clips draw tau per epoch.
        const std::uint64_t s = mix_seed(seed, i);
        const double tau = mode == FutureMode::kTest ? taus[i % taus.size()] : taus[s % taus.size()];
        auto v = build_future_instances(d.clips[i], i, future_, tau, mode, frames_, mix_seed(s, 1));
        out.insert(out.end(), v.begin(), v.end());
      }
      return out;
    }
  }
  return {};
}

std::vector<Example> TaskRunner::train_examples(std::uint64_t seed) const {
  const auto instances = build(train_, Multinomial{seed}, FutureMode::kTrain, seed);
  return to_examples(instances);
}

EvalResult TaskRunner::evaluate(VideoModel& model, std::size_t threads) const {
  return evaluate(model, test_instances_, threads);
}

EvalResult TaskRunner::evaluate(VideoModel& model, std::span<const TaskInstance> instances,
                                std::size_t threads) const {
  if (instances.empty()) throw InvalidArgument("evaluate: empty instance set");
  const auto examples = to_examples(instances);
  const ModelOutputs out = run_model(model, test_, examples, threads, false);
  const std::size_t c = out.classes;
  const std::span<const double> logits(out.logits);
  EvalResult r;
  r.instances = instances.size();
  std::size_t correct = 0, top5 = 0;
  double loss = 0.0;

  if (kind_ == TaskKind::kFuture) {
    std::vector<std::size_t> tau_hits(future_.tau_schedule.size()), tau_total(future_.tau_schedule.size());
    std::size_t row = 0;
    for (const auto& inst : instances) {
      const std::size_t k = inst.candidates.size();
      std::vector<double> scores(k);
      for (std::size_t j = 0; j < k; ++j, ++row) {
        const auto lr = logits.subspan(row * c, c);
        // log-odds of "this candidate is the future frame"
        scores[j] = lr[1] - lr[0];
        loss += row_cross_entropy(lr, examples[row].label);
      }
      const std::size_t rank = class_rank(scores, inst.target);
      correct += rank == 0;
      top5 += rank < std::min<std::size_t>(5, k);
      const auto ti = static_cast<std::size_t>(
          std::find(future_.tau_schedule.begin(), future_.tau_schedule.end(), inst.tau) - future_.tau_schedule.begin());
      if (ti < tau_hits.size()) {
        tau_hits[ti] += rank == 0;
        ++tau_total[ti];
      }
    }
    loss /= static_cast<double>(examples.size());
    for (std::size_t i = 0; i < tau_hits.size(); ++i) {
      if (tau_total[i] == 0) continue;
      char name[32];
      std::snprintf(name, sizeof name, "tau=%.3fs", future_.tau_schedule[i]);
      r.per_class.emplace_back(name, static_cast<double>(tau_hits[i]) / static_cast<double>(tau_total[i]));
    }
  } else {
    const auto names = class_names();
    std::vector<std::size_t> hits(c), total(c);
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto lr = logits.subspan(i * c, c);
      const int t = instances[i].target;
      const std::size_t rank = class_rank(lr, t);
      correct += rank == 0;
      top5 += rank < std::min<std::size_t>(5, c);
      loss += row_cross_entropy(lr, t);
      hits[static_cast<std::size_t>(t)] += rank == 0;
      ++total[static_cast<std::size_t>(t)];
    }
    loss /= static_cast<double>(instances.size());
    for (std::size_t k = 0; k < c; ++k) {
      if (total[k] == 0) continue;
      r.per_class.emplace_back(names[k], static_cast<double>(hits[k]) / static_cast<double>(total[k]));
    }
  }
  const double n = static_cast<double>(instances.size());
  r.loss = loss;
  r.accuracy = static_cast<double>(correct) / n;
  r.prec1 = r.accuracy;
  r.prec5 = static_cast<double>(top5) / n;
  return r;
}

std::vector<EmbeddingRow> TaskRunner::embeddings(VideoModel& model, std::size_t threads) const {
  // One input per test instance; the future task uses the true candidate.
  std::vector<Example> examples;
  std::vector<int> labels;
  for (const auto& inst : test_instances_) {
    Example ex;
    ex.clip_index = inst.clip_index;
    for (std::size_t f : inst.frame_indices) ex.frames.push_back(inst.source_frame(f));
    if (!inst.candidates.empty()) {
      ex.frames.push_back(inst.candidates[static_cast<std::size_t>(inst.target)]);
      ex.label = 1;
    } else {
      ex.label = inst.target;
    }
    labels.push_back(ex.label);
    examples.push_back(std::move(ex));
  }
  const ModelOutputs out = run_model(model, test_, examples, threads, true);
  std::vector<EmbeddingRow> rows;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto b = out.embeddings.begin() + static_cast<std::ptrdiff_t>(i * out.width);
    rows.push_back({i, labels[i], std::vector<double>(b, b + static_cast<std::ptrdiff_t>(out.width))});
  }
  return rows;
}

}  // namespace chronoscope
