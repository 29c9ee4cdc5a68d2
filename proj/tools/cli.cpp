#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "chronoscope/errors.hpp"
#include "chronoscope/grad_check.hpp"
#include "chronoscope/ops.hpp"

namespace chronoscope::cli {

namespace {

std::string stem_for(const ExperimentConfig& cfg) {
  return std::string(task_name(cfg.task())) + "-" + std::string(family_name(cfg.encoder()));
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

Dataset load_split(const std::filesystem::path& path, const ExperimentConfig& cfg, Split expected) {
  if (!std::filesystem::exists(path)) throw FileNotFound(path);
  Dataset d = read_dataset(path);
  if (d.split != expected) throw InvalidArgument(path.string() + ": wrong split tag");
  if (d.config_digest != cfg.dataset_digest()) {
    throw InvalidArgument(path.string() + ": dataset hash " + to_hex(d.config_digest) +
                          " does not match the data.* settings (" + cfg.dataset_hash() + "); rerun gen");
  }
  return d;
}

void write_resolved(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "# config_hash=" << cfg.hash() << "\n" << cfg.canonical_text();
}

}  // namespace

Paths paths_for(const ExperimentConfig& cfg) {
  const auto dir = cfg.out();
  const std::string stem = stem_for(cfg);
  Paths p;
  p.train_data = dir / "train.vtds";
  p.test_data = dir / "test.vtds";
  p.metrics = dir / (stem + ".jsonl");
  p.checkpoint = dir / (stem + ".ckpt");
  p.similarity = dir / (std::string(task_name(cfg.task())) + "-framesim.jsonl");
  p.resolved_config = dir / (stem + ".config");
  return p;
}

std::size_t env_threads() {
  const char* v = std::getenv("CHRONOSCOPE_THREADS");
  if (v == nullptr || *v == '\0') return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (*end != '\0' || n == 0) throw InvalidArgument(std::string("CHRONOSCOPE_THREADS must be a positive integer, got '") + v + "'");
  return n;
}

void cmd_gen(const ExperimentConfig& cfg, std::size_t threads, std::ostream& out) {
  cfg.validate();
  const DataConfig d = cfg.data();
  const Paths p = paths_for(cfg);
  std::filesystem::create_directories(cfg.out());

  GenerateOptions g{d.generator, d.train_seed, d.train_count, d.length, d.fps, Split::kTrain, threads};
  Dataset train = generate_dataset(g);
  train.config_digest = cfg.dataset_digest();
  write_dataset(train, p.train_data);

  g.seed_begin = d.test_seed;
  g.count = d.test_count;
  g.split = Split::kTest;
  Dataset test = generate_dataset(g);
  test.config_digest = cfg.dataset_digest();
  write_dataset(test, p.test_data);

  out << "wrote " << p.train_data.string() << " (" << train.clips.size() << " clips) and " << p.test_data.string()
      << " (" << test.clips.size() << " clips), dataset hash " << cfg.dataset_hash() << "\n";
}

TrainOutcome cmd_train(const ExperimentConfig& cfg, std::size_t threads, std::ostream& out) {
  cfg.validate();
  const Paths p = paths_for(cfg);
  const Dataset train = load_split(p.train_data, cfg, Split::kTrain);
  const Dataset test = load_split(p.test_data, cfg, Split::kTest);
  const TaskRunner runner(cfg.task(), train, test, cfg.frames(), cfg.future());
  VideoModel model(cfg.model_spec(), cfg.seed());
  write_resolved(cfg, p.resolved_config);

  TrainConfig tc = cfg.train();
  tc.threads = threads;
  RunInfo info;
  info.task = std::string(task_name(cfg.task()));
  info.encoder = std::string(family_name(cfg.encoder()));
  info.config_hash = cfg.hash();
  info.dataset_hash = cfg.dataset_hash();
  info.config_digest = cfg.digest();
  info.metrics_path = p.metrics;
  info.checkpoint_path = p.checkpoint;
  info.on_record = [&out](const MetricsRecord& r) {
    out << "epoch " << r.epoch << "  acc " << fmt("%.4f", r.accuracy) << "  loss " << fmt("%.4f", r.loss);
    if (r.train_loss) out << "  train_loss " << fmt("%.4f", *r.train_loss);
    out << "\n" << std::flush;
  };

  TrainOutcome outcome{train_loop(tc, runner, model, info), p};

  if (cfg.task() == TaskKind::kFuture) {
    // Frame-similarity reference: the trained frame CNN where the family has
    // one, an untrained one otherwise.
    FrameCnnParams fc = model.frame_cnn_params();
    if (fc.blocks.empty()) {
      EncoderSpec s = cfg.model_spec();
      s.family = Family::kTimeAligned;
      fc = VideoModel(s, cfg.seed()).frame_cnn_params();
    }
    MetricsRecord r;
    r.task = info.task;
    r.encoder = "framesim";
    r.epoch = tc.epochs;
    r.accuracy = r.prec1 = frame_similarity_baseline(runner.test_instances(), test, fc);
    r.prec5 = 1.0;
    r.instances = runner.test_instances().size();
    r.chance = runner.chance_level();
    r.seed = cfg.seed();
    r.config_hash = info.config_hash;
    r.dataset_hash = info.dataset_hash;
    std::ofstream f(p.similarity, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + p.similarity.string());
    f << r.to_json() << "\n";
    out << "frame similarity baseline " << fmt("%.4f", r.accuracy) << "\n";
  }
  out << "metrics: " << p.metrics.string() << "\ncheckpoint: " << p.checkpoint.string() << "\n";
  return outcome;
}

MetricsRecord cmd_eval(const ExperimentConfig& cfg, std::size_t threads, const std::filesystem::path& embeddings_csv,
                       std::ostream& out) {
  cfg.validate();
  const Paths p = paths_for(cfg);
  if (!std::filesystem::exists(p.checkpoint)) throw FileNotFound(p.checkpoint);
  const Checkpoint ck = read_checkpoint(p.checkpoint);
  if (ck.digest != cfg.digest()) {
    throw InvalidArgument(p.checkpoint.string() + " was written under config " + to_hex(ck.digest) +
                          ", current config is " + cfg.hash());
  }
  const Dataset train = load_split(p.train_data, cfg, Split::kTrain);
  const Dataset test = load_split(p.test_data, cfg, Split::kTest);
  const TaskRunner runner(cfg.task(), train, test, cfg.frames(), cfg.future());
  VideoModel model(cfg.model_spec(), cfg.seed());
  model.load_state_tensors(ck.tensors);

  const EvalResult ev = runner.evaluate(model, threads);
  MetricsRecord r;
  r.task = std::string(task_name(cfg.task()));
  r.encoder = std::string(family_name(cfg.encoder()));
  r.epoch = cfg.train().epochs;
  r.loss = ev.loss;
  r.accuracy = ev.accuracy;
  r.prec1 = ev.prec1;
  r.prec5 = ev.prec5;
  r.per_class = ev.per_class;
  r.instances = ev.instances;
  r.chance = runner.chance_level();
  r.seed = cfg.seed();
  r.config_hash = cfg.hash();
  r.dataset_hash = cfg.dataset_hash();
  out << r.to_json() << "\n";
  if (!embeddings_csv.empty()) {
    write_embeddings_csv(embeddings_csv, runner.embeddings(model, threads), cfg.hash());
    out << "embeddings: " << embeddings_csv.string() << "\n";
  }
  return r;
}

int cmd_gradcheck(double tolerance, std::ostream& out) {
  const auto rows = run_gradcheck_suite(tolerance);
  bool ok = true;
  out << std::left << std::setw(26) << "case" << std::setw(11) << "kind" << std::setw(8) << "trials"
      << "max_rel_error\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(26) << r.name << std::setw(11) << r.kind << std::setw(8) << r.trials
        << fmt("%.3e", r.max_rel_error) << (r.passed ? "" : "  FAIL") << "\n";
    ok = ok && r.passed;
  }
  // Every primitive recorded on a tape must have a case of its own.
  for (const auto& op : registered_primitive_ops()) {
    const bool covered = std::any_of(rows.begin(), rows.end(), [&](const auto& r) {
      return r.name == op || r.name.rfind(op + "_", 0) == 0;  // batchnorm_train covers batchnorm
    });
    if (!covered) {
      out << "no gradient check for primitive '" << op << "'\n";
      ok = false;
    }
  }
  out << (ok ? "all cases within " : "FAILED: tolerance ") << fmt("%.0e", tolerance) << "\n";
  return ok ? 0 : 1;
}

std::vector<ReportRow> load_report_rows(const std::vector<std::filesystem::path>& files) {
  if (files.empty()) throw InvalidArgument("report needs at least one metrics file");
  std::vector<ReportRow> rows;
  std::map<std::string, std::pair<std::string, std::string>> dataset_of;  // task -> (hash, file)
  for (const auto& path : files) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
      if (!std::filesystem::exists(path)) throw FileNotFound(path);
      throw IoError("cannot read " + path.string());
    }
    std::string line;
    std::size_t lineno = 0;
    std::optional<MetricsRecord> last;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      MetricsRecord r;
      try {
        r = MetricsRecord::from_json(line);
      } catch (const InvalidArgument& e) {
        throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
      auto [it, inserted] = dataset_of.emplace(r.task, std::make_pair(r.dataset_hash, path.string()));
      if (!inserted && it->second.first != r.dataset_hash) {
        throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": dataset hash " + r.dataset_hash +
                              " differs from " + it->second.first + " in " + it->second.second +
                              " for task " + r.task);
      }
      if (!last || r.epoch >= last->epoch) last = std::move(r);
    }
    if (!last) throw InvalidArgument(path.string() + ": no metrics records");
    rows.push_back({last->task, last->encoder, *last});
  }
  // Repeated (task, encoder) pairs are told apart by seed.
  for (auto& r : rows) {
    const auto n = std::count_if(rows.begin(), rows.end(), [&](const ReportRow& o) {
      return o.task == r.task && o.last.encoder == r.last.encoder;
    });
    if (n > 1) r.label = r.last.encoder + "/s" + std::to_string(r.last.seed);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) { return a.task < b.task; });
  return rows;
}

std::string render_report(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  std::size_t i = 0;
  while (i < rows.size()) {
    const std::string task = rows[i].task;
    std::size_t j = i;
    while (j < rows.size() && rows[j].task == task) ++j;

    // Future-task columns are the per-horizon accuracies.
    std::vector<std::string> extra;
    if (task == "future") {
      for (std::size_t k = i; k < j; ++k) {
        for (const auto& [name, v] : rows[k].last.per_class) {
          (void)v;
          if (std::find(extra.begin(), extra.end(), name) == extra.end()) extra.push_back(name);
        }
      }
    }
    const bool show_prec5 = task == "template";

    os << "task " << task << "  (dataset " << rows[i].last.dataset_hash.substr(0, 12) << ")\n";
    os << std::left << std::setw(14) << "method" << std::right << std::setw(7) << "epoch" << std::setw(9) << "acc";
    if (show_prec5) os << std::setw(9) << "prec@5";
    for (const auto& e : extra) os << std::setw(12) << e;
    os << "   config\n";
    double chance = 0.0;
    for (std::size_t k = i; k < j; ++k) {
      const auto& r = rows[k].last;
      chance = std::max(chance, r.chance);
      os << std::left << std::setw(14) << rows[k].label << std::right << std::setw(7) << r.epoch << std::setw(9)
         << fmt("%.1f", 100.0 * r.accuracy);
      if (show_prec5) os << std::setw(9) << fmt("%.1f", 100.0 * r.prec5);
      for (const auto& e : extra) {
        auto it = std::find_if(r.per_class.begin(), r.per_class.end(), [&](const auto& pc) { return pc.first == e; });
        os << std::setw(12) << (it == r.per_class.end() ? std::string("-") : fmt("%.1f", 100.0 * it->second));
      }
      os << "   " << r.config_hash.substr(0, 12) << "\n";
    }
    os << std::left << std::setw(14) << "chance" << std::right << std::setw(7) << "" << std::setw(9)
       << fmt("%.1f", 100.0 * chance);
    if (show_prec5) os << std::setw(9) << fmt("%.1f", 100.0 * std::min(1.0, 5.0 * chance));
    for (std::size_t k = 0; k < extra.size(); ++k) os << std::setw(12) << fmt("%.1f", 100.0 * chance);
    os << "\n";
    if (j < rows.size()) os << "\n";
    i = j;
  }
  return os.str();
}

void write_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingRow>& rows,
                          const std::string& config_hash) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  const std::size_t width = rows.empty() ? 0 : rows.front().vector.size();
  f << "# config_hash=" << config_hash << "\n";
  f << "instance_id,label";
  for (std::size_t k = 0; k < width; ++k) f << ",v" << k;
  f << "\n";
  f << std::setprecision(17);
  for (const auto& r : rows) {
    f << r.instance_id << "," << r.label;
    for (double v : r.vector) f << "," << v;
    f << "\n";
  }
}

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"chronoscope: temporal video encoders on synthetic clips"};
  app.require_subcommand(1);

  std::string config_path, out_dir, encoder, task, fault, embeddings;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::vector<std::string> metrics_files;
  double tolerance = 1e-4;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--out", out_dir, "output directory (overrides `out`)");
    sub->add_option("--seed", seed, "model/training seed (overrides `seed`)");
    sub->add_option("--encoder", encoder, "rnn|lstm|hier|tad|mean");
    sub->add_option("--task", task, "arrow|future|template");
    sub->add_option("--set", sets, "extra KEY=VALUE overrides")->take_all();
  };
  auto* gen = app.add_subcommand("gen", "generate train/test datasets");
  auto* train = app.add_subcommand("train", "train and write metrics + checkpoint");
  auto* eval = app.add_subcommand("eval", "evaluate the saved checkpoint");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and encoder");
  auto* report = app.add_subcommand("report", "table of final metrics");
  for (auto* sub : {gen, train, eval, report}) add_common(sub);
  eval->add_option("--embeddings", embeddings, "write penultimate-layer vectors to this CSV");
  report->add_option("--embeddings", embeddings, "also export embeddings for the --config experiment");
  report->add_option("metrics", metrics_files, "metrics .jsonl files")->required();
  grad->add_option("--tolerance", tolerance, "max relative error");
  grad->add_option("--inject-fault", fault, "test fixture")->check(CLI::IsMember({"relu-grad"}))->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, e2;
    const int code = app.exit(e, o, e2);
    out << o.str();
    err << e2.str();
    return code == 0 ? 0 : 2;
  }

  auto make_config = [&] {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    if (!task.empty()) cfg.set("task", task);
    if (!encoder.empty()) cfg.set("encoder", encoder);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (!out_dir.empty()) cfg.set("out", out_dir);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw InvalidArgument("--set expects KEY=VALUE, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  };

  try {
    if (*gen) {
      cmd_gen(make_config(), env_threads(), out);
    } else if (*train) {
      cmd_train(make_config(), env_threads(), out);
    } else if (*eval) {
      cmd_eval(make_config(), env_threads(), embeddings, out);
    } else if (*grad) {
      if (fault == "relu-grad") testing_hooks::set_relu_grad_fault(true);
      const int code = cmd_gradcheck(tolerance, out);
      testing_hooks::set_relu_grad_fault(false);
      return code;
    } else if (*report) {
      std::vector<std::filesystem::path> files(metrics_files.begin(), metrics_files.end());
      out << render_report(load_report_rows(files));
      if (!embeddings.empty()) {
        if (config_path.empty()) throw InvalidArgument("--embeddings needs --config to locate the checkpoint");
        std::ostringstream sink;
        cmd_eval(make_config(), env_threads(), embeddings, sink);
        out << "embeddings: " << embeddings << "\n";
      }
    }
  } catch (const DivergenceError& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return 3;
  } catch (const FileNotFound& e) {
    err << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace chronoscope::cli
