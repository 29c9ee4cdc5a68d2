#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "chronoscope/encoders.hpp"
#include "chronoscope/synthvid.hpp"
#include "chronoscope/tensor.hpp"

namespace chronoscope {

enum class TaskKind { kArrow, kFuture, kTemplate };
std::string_view task_name(TaskKind k);
TaskKind parse_task(std::string_view name);

// --- frame sampling -----------------------------------------------------------

struct Multinomial {
  std::uint64_t seed;
};
struct Uniform {};

// n sorted indices from [0, length). Multinomial draws without replacement;
// uniform takes round(i * (length - 1) / (n - 1)).
std::vector<std::size_t> sample_frames(std::size_t length, std::size_t n, Multinomial how);
std::vector<std::size_t> sample_frames(std::size_t length, std::size_t n, Uniform);

// --- instances ------------------------------------------------------------------

struct TaskInstance {
  std::size_t clip_index = 0;
  bool reversed = false;  // clip is presented back to front
  // Strictly increasing indices on the presented timeline.
  std::vector<std::size_t> frame_indices;
  // Future task: candidate frame indices. Empty otherwise.
  std::vector<std::size_t> candidates;
  // Arrow: 1 forward / 0 backward. Future train: 1 if the candidate is the
  // true last frame. Future test: index of the true candidate. Template: class id.
  int target = 0;
  double tau = 0.0;  // seconds, future task only
  std::size_t clip_length = 0;

  // Clip index of the k-th presented frame (undoes the reversal).
  std::size_t source_frame(std::size_t presented) const {
    return reversed ? clip_length - 1 - presented : presented;
  }
};

// One model input: frames (source indices, in presentation order) and a class.
struct Example {
  std::size_t clip_index = 0;
  std::vector<std::size_t> frames;
  int label = 0;
};

using Sampling = std::variant<Multinomial, Uniform>;

// Forward (label 1) and reversed (label 0) instance for every clip; both
// members of a pair use the same presented-timeline indices.
std::vector<TaskInstance> build_arrow_dataset(const Dataset& base, std::size_t n, const Sampling& how);

struct FutureTaskConfig {
  std::size_t choices = 5;  // C
  // Seconds; index = round(tau * fps) is the last observed frame.
  std::vector<double> tau_schedule{15.0 / 12.0, 20.0 / 12.0, 25.0 / 12.0, 30.0 / 12.0, 35.0 / 12.0};
  double horizon_fraction = 0.8;

  void validate() const;
};

enum class FutureMode { kTrain, kTest };

// Last observed frame for tau; throws unless n context frames fit and the
// index stays below floor(horizon * length).
std::size_t tau_frame(const VideoClip& clip, double tau, std::size_t n, const FutureTaskConfig& cfg);

// Train: a positive and a negative pair (target = is_correct, one candidate).
// Test: one C-way instance, candidates shuffled, target = index of the true one.
std::vector<TaskInstance> build_future_instances(const VideoClip& clip, std::size_t clip_index,
                                                 const FutureTaskConfig& cfg, double tau, FutureMode mode,
                                                 std::size_t n, std::uint64_t seed);

// Scores one candidate of an instance; higher means "more likely the future".
using CandidateScorer = std::function<double(const TaskInstance&, std::size_t candidate)>;
// Argmax per instance, lowest candidate index on ties.
double eval_future_selection(std::span<const TaskInstance> instances, const CandidateScorer& score);

// Cosine similarity between frame-CNN vectors of the last observed frame and
// each candidate; zero vectors have similarity 0.
double frame_similarity_baseline(std::span<const TaskInstance> instances, const Dataset& clips,
                                 const FrameCnnParams& frame_cnn);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

std::vector<TaskInstance> build_template_instances(const Dataset& base, std::size_t n, const Sampling& how);
// Balanced template dataset: clip i has class i % 8.
Dataset build_template_dataset(std::uint64_t seed_begin, std::size_t count, std::size_t length = 48,
                               double fps = 12.0);

// Fraction of rows whose target ranks among the top k (lower class index wins ties).
double prec_at_k(const Tensor& logits, std::span<const int> targets, std::size_t k);
// Rank of `target` in one row under the same tie rule (0 = best).
std::size_t class_rank(std::span<const double> row, int target);

// Flattens instances into model inputs. Future test instances expand to one
// example per candidate (label 1 on the true candidate).
std::vector<Example> to_examples(std::span<const TaskInstance> instances);

// [N, T, 1, H, W] input volume from clip frames.
Tensor assemble_batch(const Dataset& clips, std::span<const Example> examples);

// --- task runner ----------------------------------------------------------------

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  double prec1 = 0.0;
  double prec5 = 0.0;
  std::vector<std::pair<std::string, double>> per_class;
  std::size_t instances = 0;
};

struct EmbeddingRow {
  std::size_t instance_id;
  int label;
  std::vector<double> vector;
};

// Wires a task's sampling protocol to a pair of datasets.
class TaskRunner {
 public:
  TaskRunner(TaskKind kind, const Dataset& train, const Dataset& test, std::size_t frames,
             FutureTaskConfig future = {});

  TaskKind kind() const { return kind_; }
  // Input steps the model sees (future task appends the candidate).
  std::size_t model_time_steps() const;
  std::size_t num_classes() const;
  std::vector<std::string> class_names() const;
  // Expected accuracy of a uniform random guess on the test protocol.
  double chance_level() const;

  // Freshly resampled training examples (multinomial frames).
  std::vector<Example> train_examples(std::uint64_t seed) const;
  // Fixed evaluation instances (uniform frames).
  const std::vector<TaskInstance>& test_instances() const { return test_instances_; }

  // Eval-mode metrics; `threads` workers score disjoint chunks.
  EvalResult evaluate(VideoModel& model, std::size_t threads = 1) const;
  EvalResult evaluate(VideoModel& model, std::span<const TaskInstance> instances, std::size_t threads = 1) const;
  // Penultimate-layer vectors, one row per test instance.
  std::vector<EmbeddingRow> embeddings(VideoModel& model, std::size_t threads = 1) const;

  const Dataset& train_set() const { return train_; }
  const Dataset& test_set() const { return test_; }

 private:
  std::vector<TaskInstance> build(const Dataset& d, const Sampling& how, FutureMode mode, std::uint64_t seed) const;

  TaskKind kind_;
  const Dataset& train_;
  const Dataset& test_;
  std::size_t frames_;
  FutureTaskConfig future_;
  std::vector<TaskInstance> test_instances_;
};

}  // namespace chronoscope
