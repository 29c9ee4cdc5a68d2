#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "chronoscope/encoders.hpp"
#include "chronoscope/tasks.hpp"

namespace chronoscope {

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::size_t eval_every = 1;
  double clip_norm = 0.0;  // global gradient norm cap; 0 disables
  std::size_t threads = 1; // evaluation workers

  void validate() const;
};

// lr 1e-4 for the hierarchical family, 1e-3 otherwise; clipping at norm 5
// for the sequential family only.
TrainConfig default_train_config(Family family);

struct SgdState {
  std::vector<std::vector<double>> velocity;
  std::size_t step = 0;
};

// v = momentum * v + grad + weight_decay * p;  p -= lr * v.
// Tensors without a gradient are treated as having a zero gradient.
// Throws DivergenceError naming the tensor and step on a non-finite gradient.
void sgd_step(std::vector<NamedTensor>& params, SgdState& state, const TrainConfig& cfg);

// Scales all gradients so their joint L2 norm is at most max_norm; returns
// the norm before scaling.
double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm);

struct MetricsRecord {
  std::string task;
  std::string encoder;
  std::string split = "test";
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double prec1 = 0.0;
  double prec5 = 0.0;
  std::vector<std::pair<std::string, double>> per_class;
  std::optional<double> train_loss;  // mean minibatch loss of the epoch
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string dataset_hash;
  std::size_t instances = 0;
  double chance = 0.0;

  std::string to_json() const;
  // Throws InvalidArgument describing the first problem.
  static MetricsRecord from_json(const std::string& line);
};

struct RunInfo {
  std::string task;
  std::string encoder;
  std::string config_hash;
  std::string dataset_hash;
  ConfigDigest config_digest{};
  std::optional<std::filesystem::path> metrics_path;
  std::optional<std::filesystem::path> checkpoint_path;
  bool record_wall_time = false;  // off keeps metrics files bitwise reproducible
  std::function<void(const MetricsRecord&)> on_record;
};

struct TrainResult {
  std::vector<MetricsRecord> records;
  std::vector<double> epoch_losses;  // mean training loss per epoch
};

// Epoch 0 evaluates the initial model; then per epoch: resample frames,
// shuffle, minibatch SGD; evaluate every eval_every epochs and after the last.
// On a non-finite loss the last good parameters are restored (and written
// to the checkpoint path) before DivergenceError propagates.
TrainResult train_loop(const TrainConfig& cfg, const TaskRunner& task, VideoModel& model, const RunInfo& info);

}  // namespace chronoscope
