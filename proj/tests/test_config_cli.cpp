#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "chronoscope/config.hpp"
#include "chronoscope/errors.hpp"
#include "cli.hpp"
#include "test_util.hpp"

using namespace chronoscope;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "chronoscope");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t count_lines(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const auto p = dir / "exp.cfg";
  std::ofstream(p) << "# tiny experiment\n"
                      "task = arrow\n"
                      "encoder = tad\n"
                      "data.train_count = 6\n"
                      "data.test_count = 6\n"
                      "data.test_seed = 5000\n"
                      "model.frames = 4\n"
                      "model.growth = 3\n"
                      "model.base_channels = 4,6\n"
                      "train.epochs = 2\n"
                      "train.batch_size = 4\n"
                   << "out = " << (dir / "out").string() << "\n"
                   << extra;
  return p;
}

}  // namespace

TEST(Config, ParseErrorsNameTheLine) {
  try {
    ExperimentConfig::parse("task=arrow\n\nbogus line\n", "x.cfg");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:3"), std::string::npos) << e.what();
  }
  try {
    ExperimentConfig::parse("# c\nseed=1\nseed=2\n", "y.cfg");
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("y.cfg:3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
  }
  EXPECT_THROW(ExperimentConfig::parse("no.such.key=1\n"), InvalidArgument);
  EXPECT_THROW(ExperimentConfig::parse("train.epochs=-3\n"), InvalidArgument);
  EXPECT_THROW(ExperimentConfig::parse("encoder=gru\n"), InvalidArgument);
}

TEST(Config, DefaultsAndValidation) {
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.frames(), 16u);
  c.set("data.test_seed", "500");
  EXPECT_THROW(c.validate(), InvalidArgument);  // overlaps [0, 1000)
  ExperimentConfig h;
  h.set("encoder", "hier");
  EXPECT_DOUBLE_EQ(h.train().lr, 1e-4);
  ExperimentConfig t;
  t.set("task", "template");
  EXPECT_NO_THROW(t.validate());  // generator follows the task
  t.set("data.generator", "asym");
  EXPECT_THROW(t.validate(), InvalidArgument);
}

TEST(Config, DigestIgnoresOutAndFormatting) {
  const auto a = ExperimentConfig::parse("seed=3\nout=/a\ntrain.lr=0.01\n");
  const auto b = ExperimentConfig::parse("  train.lr = 1e-2 \n# note\nseed=3\nout=/b\n");
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 64u);
  const auto c = ExperimentConfig::parse("seed=4\n");
  EXPECT_NE(a.hash(), c.hash());
  EXPECT_EQ(a.dataset_hash(), c.dataset_hash());
}

TEST(Cli, GenIsReproducibleAndReadable) {
  const auto dir = test_util::scratch_dir("cli_gen");
  const auto cfg = write_config(dir);
  ASSERT_EQ(invoke({"gen", "--config", cfg.string()}).code, 0);
  const auto train1 = slurp(dir / "out" / "train.vtds");
  ASSERT_EQ(invoke({"gen", "--config", cfg.string()}).code, 0);
  EXPECT_EQ(slurp(dir / "out" / "train.vtds"), train1);
  const Dataset d = read_dataset(dir / "out" / "test.vtds");
  EXPECT_EQ(d.clips.size(), 6u);
  EXPECT_EQ(d.split, Split::kTest);
  EXPECT_EQ(d.clips[0].seed, 5000u);
}

TEST(Cli, MissingDatasetExitsWithFourAndNamesPath) {
  const auto dir = test_util::scratch_dir("cli_missing");
  const auto cfg = write_config(dir);
  const auto r = invoke({"train", "--config", cfg.string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_NE(r.err.find("train.vtds"), std::string::npos) << r.err;
}

TEST(Cli, StaleDatasetIsRefused) {
  const auto dir = test_util::scratch_dir("cli_stale");
  const auto cfg = write_config(dir);
  ASSERT_EQ(invoke({"gen", "--config", cfg.string()}).code, 0);
  const auto r = invoke({"train", "--config", cfg.string(), "--set", "data.length=40"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("gen"), std::string::npos) << r.err;
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(invoke({}).code, 2);
  EXPECT_EQ(invoke({"frobnicate"}).code, 2);
  EXPECT_EQ(invoke({"gradcheck", "--tolerance", "abc"}).code, 2);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, TrainEvalReportEndToEnd) {
  const auto dir = test_util::scratch_dir("cli_e2e");
  const auto cfg = write_config(dir);
  ASSERT_EQ(invoke({"gen", "--config", cfg.string()}).code, 0);
  const auto t1 = invoke({"train", "--config", cfg.string()});
  ASSERT_EQ(t1.code, 0) << t1.err;
  const auto metrics = dir / "out" / "arrow-tad.jsonl";
  ASSERT_TRUE(fs::exists(metrics));
  EXPECT_EQ(count_lines(metrics), 3u);  // epoch 0 plus two epochs
  EXPECT_TRUE(fs::exists(dir / "out" / "arrow-tad.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "out" / "arrow-tad.config"));

  const auto first = slurp(metrics);
  ASSERT_EQ(invoke({"train", "--config", cfg.string()}).code, 0);
  EXPECT_EQ(slurp(metrics), first);

  const auto csv = dir / "emb.csv";
  const auto ev = invoke({"eval", "--config", cfg.string(), "--embeddings", csv.string()});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto rec = MetricsRecord::from_json(ev.out.substr(0, ev.out.find('\n')));
  EXPECT_EQ(rec.instances, 12u);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# config_hash=", 0), 0u);
  std::getline(in, line);
  const auto header_cols = std::count(line.begin(), line.end(), ',') + 1;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ',') + 1, header_cols);
  }
  EXPECT_EQ(rows, 12u);
  const auto spec = ExperimentConfig::load(cfg).model_spec();
  EXPECT_EQ(static_cast<std::size_t>(header_cols), 2 + VideoModel(spec, 0).embedding_width());

  const auto rep = invoke({"report", metrics.string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(rep.out.find("tad"), std::string::npos);
  EXPECT_NE(rep.out.find("chance"), std::string::npos);
  EXPECT_NE(rep.out.find("50.0"), std::string::npos) << rep.out;
}

TEST(Cli, ReportRejectsMalformedAndMixedInputs) {
  const auto dir = test_util::scratch_dir("cli_report");
  MetricsRecord r;
  r.task = "arrow";
  r.encoder = "tad";
  r.prec5 = 0.5;
  r.dataset_hash = "aaa";
  const auto good = dir / "good.jsonl";
  std::ofstream(good) << r.to_json() << "\n";
  const auto bad = dir / "bad.jsonl";
  std::ofstream(bad) << r.to_json() << "\n{oops\n";
  auto res = invoke({"report", bad.string()});
  EXPECT_EQ(res.code, 1);
  EXPECT_NE(res.err.find("bad.jsonl:2"), std::string::npos) << res.err;

  r.encoder = "rnn";
  r.dataset_hash = "bbb";
  const auto other = dir / "other.jsonl";
  std::ofstream(other) << r.to_json() << "\n";
  res = invoke({"report", good.string(), other.string()});
  EXPECT_EQ(res.code, 1);
  EXPECT_NE(res.err.find("dataset"), std::string::npos) << res.err;

  EXPECT_EQ(invoke({"report", (dir / "none.jsonl").string()}).code, 4);
}

TEST(Cli, GradcheckExitCodes) {
  const auto ok = invoke({"gradcheck"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("model_tad"), std::string::npos);
  const auto bad = invoke({"gradcheck", "--inject-fault", "relu-grad"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}
