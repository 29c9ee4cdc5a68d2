#include "chronoscope/config.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "chronoscope/errors.hpp"

namespace chronoscope {

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 15]);
  }
  return s;
}

ConfigDigest sha256(std::string_view text) {
  ConfigDigest out{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
    throw IoError("SHA-256 computation failed");
  }
  return out;
}

namespace {

enum class Kind { kText, kUint, kReal, kRealList, kUintList, kTask, kEncoder, kGenerator };

const std::map<std::string, Kind>& key_kinds() {
  static const std::map<std::string, Kind> kinds{
      {"task", Kind::kTask},
      {"encoder", Kind::kEncoder},
      {"seed", Kind::kUint},
      {"out", Kind::kText},
      {"data.generator", Kind::kGenerator},
      {"data.train_count", Kind::kUint},
      {"data.test_count", Kind::kUint},
      {"data.train_seed", Kind::kUint},
      {"data.test_seed", Kind::kUint},
      {"data.length", Kind::kUint},
      {"data.fps", Kind::kReal},
      {"model.frames", Kind::kUint},
      {"model.hidden", Kind::kUint},
      {"model.growth", Kind::kUint},
      {"model.base_channels", Kind::kUintList},
      {"model.dropout", Kind::kReal},
      {"train.lr", Kind::kReal},
      {"train.momentum", Kind::kReal},
      {"train.weight_decay", Kind::kReal},
      {"train.epochs", Kind::kUint},
      {"train.batch_size", Kind::kUint},
      {"train.eval_every", Kind::kUint},
      {"train.clip_norm", Kind::kReal},
      {"future.choices", Kind::kUint},
      {"future.tau", Kind::kRealList},
      {"future.horizon", Kind::kReal},
  };
  return kinds;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw InvalidArgument("cannot format number");
  return std::string(buf, p);
}

std::uint64_t parse_uint(const std::string& key, std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw InvalidArgument("config key '" + key + "': expected a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

double parse_real(const std::string& key, std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    throw InvalidArgument("config key '" + key + "': expected a number, got '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t b = 0;
  while (true) {
    const auto e = s.find(',', b);
    out.push_back(trim(s.substr(b, e == std::string_view::npos ? std::string_view::npos : e - b)));
    if (e == std::string_view::npos) break;
    b = e + 1;
  }
  return out;
}

// Canonical spelling of a value, so equivalent spellings hash identically.
std::string normalize(const std::string& key, const std::string& value) {
  const auto it = key_kinds().find(key);
  if (it == key_kinds().end()) throw InvalidArgument("unknown config key '" + key + "'");
  switch (it->second) {
    case Kind::kText:
      if (value.empty()) throw InvalidArgument("config key '" + key + "' is empty");
      return value;
    case Kind::kUint:
      return std::to_string(parse_uint(key, value));
    case Kind::kReal:
      return format_real(parse_real(key, value));
    case Kind::kUintList:
    case Kind::kRealList: {
      std::string out;
      for (const auto& item : split_list(value)) {
        if (!out.empty()) out += ',';
        out += it->second == Kind::kUintList ? std::to_string(parse_uint(key, item)) : format_real(parse_real(key, item));
      }
      return out;
    }
    case Kind::kTask:
      return std::string(task_name(parse_task(value)));
    case Kind::kEncoder:
      return std::string(family_name(parse_family(value)));
    case Kind::kGenerator:
      return std::string(generator_name(parse_generator(value)));
  }
  return value;
}

}  // namespace

const std::vector<std::string>& ExperimentConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, kind] : key_kinds()) k.push_back(name);
    return k;
  }();
  return keys;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  explicit_[key] = normalize(key, trim(value));
}

ExperimentConfig ExperimentConfig::parse(std::string_view text, std::string_view origin) {
  ExperimentConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw InvalidArgument(where + ": expected key=value, got '" + t + "'");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (cfg.explicit_.count(key)) throw InvalidArgument(where + ": duplicate key '" + key + "'");
    try {
      cfg.set(key, t.substr(eq + 1));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(where + ": " + e.what());
    }
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    if (!std::filesystem::exists(path)) throw FileNotFound(path);
    throw IoError("cannot read config " + path.string());
  }
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path.string());
}

std::string ExperimentConfig::get(const std::string& key) const {
  if (auto it = explicit_.find(key); it != explicit_.end()) return it->second;
  const TaskKind t = explicit_.count("task") ? parse_task(explicit_.at("task")) : TaskKind::kArrow;
  const Family f = explicit_.count("encoder") ? parse_family(explicit_.at("encoder")) : Family::kTimeAligned;
  static const std::map<std::string, std::string> fixed{
      {"task", "arrow"},
      {"encoder", "tad"},
      {"seed", "0"},
      {"out", "runs"},
      {"data.train_count", "1000"},
      {"data.test_count", "1000"},
      {"data.train_seed", "0"},
      {"data.test_seed", "1000000"},
      {"data.length", "48"},
      {"data.fps", "12"},
      {"model.hidden", "32"},
      {"model.growth", "12"},
      {"model.base_channels", "16,32,32"},
      {"model.dropout", "0.1"},
      {"train.momentum", "0.9"},
      {"train.weight_decay", "0.0005"},
      {"train.epochs", "30"},
      {"train.batch_size", "8"},
      {"train.eval_every", "1"},
      {"future.choices", "5"},
      {"future.horizon", "0.8"},
  };
  if (auto it = fixed.find(key); it != fixed.end()) return it->second;
  if (key == "data.generator") return t == TaskKind::kTemplate ? "template" : "asym";
  if (key == "model.frames") return t == TaskKind::kTemplate ? "4" : "16";
  if (key == "train.lr") return format_real(default_train_config(f).lr);
  if (key == "train.clip_norm") return format_real(default_train_config(f).clip_norm);
  if (key == "future.tau") {
    std::string out;
    for (double v : FutureTaskConfig{}.tau_schedule) {
      if (!out.empty()) out += ',';
      out += format_real(v);
    }
    return out;
  }
  throw InvalidArgument("unknown config key '" + key + "'");
}

TaskKind ExperimentConfig::task() const { return parse_task(get("task")); }
Family ExperimentConfig::encoder() const { return parse_family(get("encoder")); }
std::uint64_t ExperimentConfig::seed() const { return parse_uint("seed", get("seed")); }
std::filesystem::path ExperimentConfig::out() const { return get("out"); }
std::size_t ExperimentConfig::frames() const { return parse_uint("model.frames", get("model.frames")); }

DataConfig ExperimentConfig::data() const {
  DataConfig d;
  d.generator = parse_generator(get("data.generator"));
  d.train_count = parse_uint("data.train_count", get("data.train_count"));
  d.test_count = parse_uint("data.test_count", get("data.test_count"));
  d.train_seed = parse_uint("data.train_seed", get("data.train_seed"));
  d.test_seed = parse_uint("data.test_seed", get("data.test_seed"));
  d.length = parse_uint("data.length", get("data.length"));
  d.fps = parse_real("data.fps", get("data.fps"));
  return d;
}

EncoderSpec ExperimentConfig::model_spec() const {
  EncoderSpec s;
  s.family = encoder();
  s.time_steps = frames() + (task() == TaskKind::kFuture ? 1 : 0);
  s.hidden = parse_uint("model.hidden", get("model.hidden"));
  s.growth = parse_uint("model.growth", get("model.growth"));
  s.base_channels.clear();
  for (const auto& item : split_list(get("model.base_channels"))) s.base_channels.push_back(parse_uint("model.base_channels", item));
  s.dropout = parse_real("model.dropout", get("model.dropout"));
  s.num_classes = task() == TaskKind::kTemplate ? kNumTemplateClasses : 2;
  return s;
}

TrainConfig ExperimentConfig::train() const {
  TrainConfig c;
  c.lr = parse_real("train.lr", get("train.lr"));
  c.momentum = parse_real("train.momentum", get("train.momentum"));
  c.weight_decay = parse_real("train.weight_decay", get("train.weight_decay"));
  c.epochs = parse_uint("train.epochs", get("train.epochs"));
  c.batch_size = parse_uint("train.batch_size", get("train.batch_size"));
  c.eval_every = parse_uint("train.eval_every", get("train.eval_every"));
  c.clip_norm = parse_real("train.clip_norm", get("train.clip_norm"));
  c.seed = seed();
  return c;
}

FutureTaskConfig ExperimentConfig::future() const {
  FutureTaskConfig f;
  f.choices = parse_uint("future.choices", get("future.choices"));
  f.horizon_fraction = parse_real("future.horizon", get("future.horizon"));
  f.tau_schedule.clear();
  for (const auto& item : split_list(get("future.tau"))) f.tau_schedule.push_back(parse_real("future.tau", item));
  return f;
}

std::map<std::string, std::string> ExperimentConfig::resolved() const {
  std::map<std::string, std::string> out;
  for (const auto& key : known_keys()) out[key] = get(key);
  return out;
}

std::string ExperimentConfig::canonical_text() const {
  std::string text;
  for (const auto& [k, v] : resolved()) {
    if (k == "out") continue;
    text += k + "=" + v + "\n";
  }
  return text;
}

ConfigDigest ExperimentConfig::digest() const { return sha256(canonical_text()); }

ConfigDigest ExperimentConfig::dataset_digest() const {
  std::string text;
  for (const auto& [k, v] : resolved()) {
    if (k.rfind("data.", 0) == 0) text += k + "=" + v + "\n";
  }
  return sha256(text);
}

void ExperimentConfig::validate() const {
  const DataConfig d = data();
  if (d.length < kMinClipLength) throw InvalidArgument("data.length must be >= " + std::to_string(kMinClipLength));
  if (!(d.fps > 0.0)) throw InvalidArgument("data.fps must be > 0");
  if (d.train_count == 0 || d.test_count == 0) throw InvalidArgument("data.train_count and data.test_count must be >= 1");
  const bool disjoint = d.train_seed + d.train_count <= d.test_seed || d.test_seed + d.test_count <= d.train_seed;
  if (!disjoint) {
    throw InvalidArgument("train seeds [" + std::to_string(d.train_seed) + ", " +
                          std::to_string(d.train_seed + d.train_count) + ") overlap test seeds [" +
                          std::to_string(d.test_seed) + ", " + std::to_string(d.test_seed + d.test_count) + ")");
  }
  const TaskKind t = task();
  if (t == TaskKind::kTemplate && d.generator != GeneratorKind::kTemplate) {
    throw InvalidArgument("the template task needs data.generator=template");
  }
  if (t != TaskKind::kTemplate && d.generator == GeneratorKind::kTemplate) {
    throw InvalidArgument("task " + std::string(task_name(t)) + " needs a ball generator (asym|sym)");
  }
  model_spec().validate();
  train().validate();
  if (frames() > d.length) throw InvalidArgument("model.frames exceeds data.length");
  if (t == TaskKind::kFuture) {
    const FutureTaskConfig f = future();
    f.validate();
    VideoClip probe;
    probe.length = static_cast<std::uint32_t>(d.length);
    probe.fps = d.fps;
    for (double tau : f.tau_schedule) tau_frame(probe, tau, frames(), f);
  }
}

}  // namespace chronoscope
