#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chronoscope/encoders.hpp"
#include "chronoscope/synthvid.hpp"
#include "chronoscope/tasks.hpp"
#include "chronoscope/trainer.hpp"

namespace chronoscope {

std::string to_hex(std::span<const std::uint8_t> bytes);
ConfigDigest sha256(std::string_view text);

struct DataConfig {
  GeneratorKind generator = GeneratorKind::kAsym;
  std::size_t train_count = 1000;
  std::size_t test_count = 1000;
  std::uint64_t train_seed = 0;
  std::uint64_t test_seed = 1'000'000;
  std::size_t length = 48;
  double fps = 12.0;
};

// Flat key=value experiment description. Blank lines and lines starting with
// '#' are ignored. Keys left unset take defaults that may depend on the task
// and encoder (see README for the full key list).
class ExperimentConfig {
 public:
  ExperimentConfig() = default;

  static ExperimentConfig parse(std::string_view text, std::string_view origin = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);

  // Sets one key; throws InvalidArgument on unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return explicit_.count(key) > 0; }

  TaskKind task() const;
  Family encoder() const;
  std::uint64_t seed() const;
  std::filesystem::path out() const;
  DataConfig data() const;
  EncoderSpec model_spec() const;  // time steps and classes follow the task
  std::size_t frames() const;      // sampled frames per instance
  TrainConfig train() const;
  FutureTaskConfig future() const;

  // Every key with its resolved value, sorted by key.
  std::map<std::string, std::string> resolved() const;
  // Resolved keys except `out`, one "key=value" per line.
  std::string canonical_text() const;
  ConfigDigest digest() const;
  std::string hash() const { return to_hex(digest()); }
  // Digest of the data.* keys only; identifies the generated datasets.
  ConfigDigest dataset_digest() const;
  std::string dataset_hash() const { return to_hex(dataset_digest()); }

  // Cross-field checks: value ranges, disjoint train/test seed ranges.
  void validate() const;

  static const std::vector<std::string>& known_keys();

 private:
  std::string get(const std::string& key) const;

  std::map<std::string, std::string> explicit_;
};

}  // namespace chronoscope
