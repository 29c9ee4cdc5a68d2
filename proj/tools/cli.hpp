#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "chronoscope/config.hpp"
#include "chronoscope/tasks.hpp"
#include "chronoscope/trainer.hpp"

namespace chronoscope::cli {

// Artifact locations for one experiment, all under config.out().
struct Paths {
  std::filesystem::path train_data;
  std::filesystem::path test_data;
  std::filesystem::path metrics;
  std::filesystem::path checkpoint;
  std::filesystem::path similarity;  // future task only
  std::filesystem::path resolved_config;
};
Paths paths_for(const ExperimentConfig& cfg);

// CHRONOSCOPE_THREADS, default 1. Malformed values are an error.
std::size_t env_threads();

void cmd_gen(const ExperimentConfig& cfg, std::size_t threads, std::ostream& out);

struct TrainOutcome {
  TrainResult result;
  Paths paths;
};
// Throws FileNotFound for missing datasets and DivergenceError on NaN.
TrainOutcome cmd_train(const ExperimentConfig& cfg, std::size_t threads, std::ostream& out);

// Evaluates the saved checkpoint; optionally writes the embeddings CSV.
MetricsRecord cmd_eval(const ExperimentConfig& cfg, std::size_t threads, const std::filesystem::path& embeddings_csv,
                       std::ostream& out);

// Returns the process exit code (0 when every case passes).
int cmd_gradcheck(double tolerance, std::ostream& out);

struct ReportRow {
  std::string task;
  std::string label;
  MetricsRecord last;
};
// Last record of every file, grouped by task. Throws InvalidArgument naming
// file:line for malformed input and refuses mixed dataset hashes in a task.
std::vector<ReportRow> load_report_rows(const std::vector<std::filesystem::path>& files);
std::string render_report(const std::vector<ReportRow>& rows);

void write_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingRow>& rows,
                          const std::string& config_hash);

// Full command line entry point; returns the exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace chronoscope::cli
