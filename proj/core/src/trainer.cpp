#include "chronoscope/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "chronoscope/errors.hpp"
#include "chronoscope/ops.hpp"
#include "seed.hpp"

namespace chronoscope {

using detail::mix_seed;

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidArgument("train: lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("train: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("train: weight decay must be >= 0");
  if (batch_size == 0) throw InvalidArgument("train: batch size must be >= 1");
  if (eval_every == 0) throw InvalidArgument("train: eval_every must be >= 1");
  if (!(clip_norm >= 0.0)) throw InvalidArgument("train: clip norm must be >= 0");
}

TrainConfig default_train_config(Family family) {
  TrainConfig cfg;
  if (family == Family::kHierarchical) cfg.lr = 1e-4;
  if (is_sequential(family)) cfg.clip_norm = 5.0;
  return cfg;
}

void sgd_step(std::vector<NamedTensor>& params, SgdState& state, const TrainConfig& cfg) {
  if (state.velocity.size() != params.size()) {
    state.velocity.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) state.velocity[i].assign(params[i].tensor.numel(), 0.0);
  }
  // Validate everything first so a bad gradient leaves all parameters untouched.
  for (const auto& nt : params) {
    if (!nt.tensor.has_grad()) continue;
    for (double g : nt.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw DivergenceError("non-finite gradient in '" + nt.name + "' at step " + std::to_string(state.step));
      }
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    auto data = p.data();
    auto& v = state.velocity[i];
    if (v.size() != data.size()) throw ShapeError("sgd_step: velocity size mismatch for '" + params[i].name + "'");
    const bool has = p.has_grad();
    const auto grad = has ? p.grad() : std::span<const double>();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has ? grad[j] : 0.0;
      v[j] = cfg.momentum * v[j] + g + cfg.weight_decay * data[j];
      data[j] -= cfg.lr * v[j];
    }
  }
  ++state.step;
}

double clip_grad_norm(std::vector<NamedTensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& nt : params) {
    if (!nt.tensor.has_grad()) continue;
    for (double g : nt.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& nt : params) {
      if (!nt.tensor.has_grad()) continue;
      for (double& g : nt.tensor.storage()->grad_buffer()) g *= s;
    }
  }
  return norm;
}

// --- metrics records ------------------------------------------------------------------

std::string MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task;
  j["encoder"] = encoder;
  j["split"] = split;
  j["epoch"] = epoch;
  j["loss"] = loss;
  j["accuracy"] = accuracy;
  j["prec1"] = prec1;
  j["prec5"] = prec5;
  nlohmann::ordered_json pc = nlohmann::ordered_json::object();
  for (const auto& [k, v] : per_class) pc[k] = v;
  j["per_class"] = pc;
  if (train_loss) j["train_loss"] = *train_loss;
  j["instances"] = instances;
  j["chance"] = chance;
  j["wall_seconds"] = wall_seconds;
  j["seed"] = seed;
  j["config_hash"] = config_hash;
  j["dataset_hash"] = dataset_hash;
  return j.dump();
}

MetricsRecord MetricsRecord::from_json(const std::string& line) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("metrics line is not a JSON object");
  MetricsRecord r;
  try {
    r.task = j.at("task").get<std::string>();
    r.encoder = j.at("encoder").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.loss = j.at("loss").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.prec1 = j.at("prec1").get<double>();
    r.prec5 = j.at("prec5").get<double>();
    for (const auto& [k, v] : j.at("per_class").items()) r.per_class.emplace_back(k, v.get<double>());
    if (j.contains("train_loss")) r.train_loss = j["train_loss"].get<double>();
    r.instances = j.value("instances", std::size_t{0});
    r.chance = j.value("chance", 0.0);
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.dataset_hash = j.at("dataset_hash").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad metrics record: ") + e.what());
  }
  for (double v : {r.accuracy, r.prec1, r.prec5}) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("metric outside [0, 1]");
  }
  if (!(r.chance >= 0.0 && r.chance <= 1.0)) throw InvalidArgument("chance outside [0, 1]");
  if (r.prec1 > r.prec5) throw InvalidArgument("prec1 exceeds prec5");
  return r;
}

// --- training loop ----------------------------------------------------------------------

namespace {

std::vector<NamedTensor> snapshot(VideoModel& model) {
  std::vector<NamedTensor> out;
  for (auto& nt : model.state_tensors()) out.push_back({nt.name, nt.tensor.clone()});
  return out;
}

}  // namespace

TrainResult train_loop(const TrainConfig& cfg, const TaskRunner& task, VideoModel& model, const RunInfo& info) {
  cfg.validate();
  if (model.spec().time_steps != task.model_time_steps()) {
    throw InvalidArgument("train: model expects " + std::to_string(model.spec().time_steps) + " steps, task provides " +
                          std::to_string(task.model_time_steps()));
  }
  if (model.spec().num_classes != task.num_classes()) {
    throw InvalidArgument("train: model has " + std::to_string(model.spec().num_classes) + " classes, task needs " +
                          std::to_string(task.num_classes()));
  }
  std::ofstream metrics;
  if (info.metrics_path) {
    metrics.open(*info.metrics_path, std::ios::binary | std::ios::trunc);
    if (!metrics) throw IoError("cannot write metrics file " + info.metrics_path->string());
  }
  const auto start = std::chrono::steady_clock::now();
  TrainResult result;

  auto emit = [&](std::size_t epoch, std::optional<double> train_loss) {
    const EvalResult ev = task.evaluate(model, cfg.threads);
    MetricsRecord rec;
    rec.task = info.task;
    rec.encoder = info.encoder;
    rec.epoch = epoch;
    rec.loss = ev.loss;
    rec.accuracy = ev.accuracy;
    rec.prec1 = ev.prec1;
    rec.prec5 = ev.prec5;
    rec.per_class = ev.per_class;
    rec.train_loss = train_loss;
    rec.instances = ev.instances;
    rec.chance = task.chance_level();
    if (info.record_wall_time) {
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    rec.seed = cfg.seed;
    rec.config_hash = info.config_hash;
    rec.dataset_hash = info.dataset_hash;
    if (metrics) {
      metrics << rec.to_json() << '\n';
      metrics.flush();
    }
    if (info.on_record) info.on_record(rec);
    result.records.push_back(std::move(rec));
  };

  emit(0, std::nullopt);

  std::vector<NamedTensor> params = model.parameters();
  SgdState sgd;
  std::vector<NamedTensor> last_good = snapshot(model);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::uint64_t epoch_seed = mix_seed(cfg.seed, epoch);
    std::vector<Example> examples = task.train_examples(mix_seed(epoch_seed, 0));
    std::mt19937_64 shuffle_rng(mix_seed(epoch_seed, 1));
    std::shuffle(examples.begin(), examples.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < examples.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(examples.size(), b + cfg.batch_size);
      const std::span<const Example> batch(examples.data() + b, e - b);
      std::vector<int> labels;
      for (const auto& ex : batch) labels.push_back(ex.label);
      const Tensor x = assemble_batch(task.train_set(), batch);

      for (auto& nt : params) nt.tensor.zero_grad();
      Tape tape;
      TapeScope scope(tape);
      const Tensor logits = model.logits(x, Mode::kTrain, mix_seed(epoch_seed, 2 + batches));
      const Tensor loss = softmax_cross_entropy(logits, labels);
      const double lv = loss.item();
      try {
        if (!std::isfinite(lv)) {
          throw DivergenceError("loss became " + std::to_string(lv) + " at epoch " + std::to_string(epoch) +
                                ", step " + std::to_string(sgd.step));
        }
        tape.backward(loss);
        if (cfg.clip_norm > 0.0) clip_grad_norm(params, cfg.clip_norm);
        sgd_step(params, sgd, cfg);
      } catch (const DivergenceError&) {
        model.load_state_tensors(last_good);
        if (info.checkpoint_path) write_checkpoint(*info.checkpoint_path, info.config_digest, last_good);
        throw;
      }
      loss_sum += lv;
      ++batches;
    }
    const double mean_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
    result.epoch_losses.push_back(mean_loss);
    last_good = snapshot(model);
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) emit(epoch, mean_loss);
  }
  for (auto& nt : params) nt.tensor.zero_grad();
  if (info.checkpoint_path) write_checkpoint(*info.checkpoint_path, info.config_digest, model.state_tensors());
  return result;
}

}  // namespace chronoscope
