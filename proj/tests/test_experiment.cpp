#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "defuse/defuse.hpp"

using namespace defuse;
namespace fs = std::filesystem;

namespace {

const std::string kCli = DEFUSE_CLI_PATH;

// Scratch directory wiped at construction.
fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("defuse_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int status = -1;
  std::string out, err;
};

Run cli(const std::string& args, const fs::path& dir) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = kCli + " " + args + " > " + out.string() + " 2> " + err.string();
  const int raw = std::system(cmd.c_str());
  Run r;
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = io::read_file(out.string());
  r.err = io::read_file(err.string());
  return r;
}

std::string slurp(const fs::path& p) { return io::read_file(p.string()); }

// Small training budget keeps the end-to-end runs short.
const std::string kQuickTrain =
    " --epoch-grid 100 200 --lambda-grid 0.001 0.05 --hidden-width 10 ";

ExperimentConfig quick_config(const fs::path& out) {
  ExperimentConfig c;
  c.p = 5;
  c.n = 200;
  c.reps = 3;
  c.seed = 12;
  c.out_dir = out.string();
  c.train.epoch_grid = {100, 200};
  c.train.lambda_grid = {0.001, 0.05};
  c.train.hidden_width = 10;
  return c;
}

}  // namespace

TEST(ExperimentConfig, Validation) {
  ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.edge_probability(), 1.0 / 30.0);
  c.reps = 0;
  EXPECT_THROW(c.validate(), Error);
  c = ExperimentConfig{};
  c.alphas = {0.0};
  EXPECT_THROW(c.validate(), Error);
  c = ExperimentConfig{};
  c.edge_prob = 1.5;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_THROW(parse_graph_family("grid"), Error);
  EXPECT_EQ(parse_graph_family("hub"), GraphFamily::Hub);
}

TEST(ExperimentConfig, ReplicationStreamsIgnoreOtherReplications) {
  ExperimentConfig a;
  a.p = 8;
  a.n = 50;
  a.seed = 3;
  ExperimentConfig b = a;
  b.reps = 10;
  const auto ra = simulate_replication(a, 0);
  const auto rb = simulate_replication(b, 0);
  EXPECT_EQ(ra.truth, rb.truth);
  EXPECT_EQ(ra.data.values, rb.data.values);
  EXPECT_NE(simulate_replication(a, 1).data.values, ra.data.values);
}

TEST(Benchmark, CsvRoundTripAndSummaryConsistency) {
  const auto dir = scratch("bench_lib");
  auto c = quick_config(dir);
  c.alphas = {0.05, 0.01};
  const auto result = benchmark_to_dir(c);
  ASSERT_EQ(result.rows.size(), 6u);
  ASSERT_EQ(result.summaries.size(), 2u);
  const auto rows = parse_benchmark_csv(slurp(dir / "replications.csv"));
  ASSERT_EQ(rows.size(), result.rows.size());
  for (const auto& [alpha, summary] : result.summaries) {
    std::vector<GraphMetrics> ms;
    for (const auto& r : rows) {
      if (r.alpha == alpha) ms.push_back(r.metrics);
    }
    const auto again = replication_summary(ms);
    EXPECT_EQ(again.count, summary.count);
    EXPECT_EQ(again.shd.mean, summary.shd.mean);
    EXPECT_EQ(again.shd.sd, summary.shd.sd);
    EXPECT_EQ(again.tpr.mean, summary.tpr.mean);
    EXPECT_EQ(again.fdr.mean, summary.fdr.mean);
    EXPECT_EQ(again.fpr.sd, summary.fpr.sd);
  }
}

TEST(Benchmark, ThreadCountDoesNotChangeOutputs) {
  const auto one = scratch("bench_t1");
  const auto two = scratch("bench_t2");
  auto c = quick_config(one);
  benchmark_to_dir(c);
  c.out_dir = two.string();
  c.threads = 3;
  benchmark_to_dir(c);
  for (const char* f : {"replications.csv", "summary.csv", "summary.json"}) {
    EXPECT_EQ(slurp(one / f), slurp(two / f)) << f;
  }
}

TEST(Benchmark, FailureStillWritesFinishedRows) {
  const auto dir = scratch("bench_fail");
  auto c = quick_config(dir);
  c.n = 30;  // below the discovery minimum: every job fails
  EXPECT_THROW(benchmark_to_dir(c), Error);
  EXPECT_TRUE(fs::exists(dir / "replications.csv"));
  EXPECT_TRUE(parse_benchmark_csv(slurp(dir / "replications.csv")).empty());
}

TEST(Cli, SimulateIsDeterministic) {
  const auto dir = scratch("sim");
  ASSERT_EQ(cli("simulate --graph random --p 30 --n 500 --seed 7 --reps 2 --out " + (dir / "a").string(), dir).status, 0);
  ASSERT_EQ(cli("simulate --graph random --p 30 --n 500 --seed 7 --reps 2 --out " + (dir / "b").string(), dir).status, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 6u);
}

TEST(Cli, SingleReplicationAndHubOfTwo) {
  const auto dir = scratch("hub");
  ASSERT_EQ(cli("simulate --graph hub --p 2 --n 60 --reps 1 --out " + dir.string() + "/o", dir).status, 0);
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "o")) ++files;
  EXPECT_EQ(files, 3u);
  const auto g = nlohmann::json::parse(slurp(dir / "o" / "rep_001_graph.json"));
  EXPECT_EQ(g.at("edges"), nlohmann::json::parse("[[1,2]]"));
  EXPECT_EQ(g.at("provenance").at("command"), "simulate");
}

TEST(Cli, DiscoverExampleOne) {
  const auto dir = scratch("ex1");
  io::write_file((dir / "ex1.csv").string(), dataset_to_csv(sample_example1(5000, 2)));
  const auto r = cli("discover " + (dir / "ex1.csv").string() + " --alpha 0.05 --out " + (dir / "o").string(), dir);
  ASSERT_EQ(r.status, 0) << r.err;
  const auto g = nlohmann::json::parse(slurp(dir / "o" / "graph.json"));
  EXPECT_EQ(g.at("edges"), nlohmann::json::parse("[[1,3]]"));
  EXPECT_NE(slurp(dir / "o" / "graph.dot").find("\"Y1\" -> \"Y3\""), std::string::npos);
  EXPECT_EQ(slurp(dir / "o" / "graph.dot").rfind("// defuse discover", 0), 0u);
  const auto audit = nlohmann::json::parse(slurp(dir / "o" / "audit.json"));
  EXPECT_EQ(audit.at("rounds").size(), 2u);
}

TEST(Cli, StandardizeOnStandardizedDataIsIdempotent) {
  const auto dir = scratch("std");
  ExperimentConfig c;
  c.p = 4;
  c.n = 300;
  c.seed = 5;
  const auto data = standardize(simulate_replication(c, 0).data);
  io::write_file((dir / "d.csv").string(), dataset_to_csv(data));
  const std::string base = "discover " + (dir / "d.csv").string() + kQuickTrain;
  ASSERT_EQ(cli(base + "--out " + (dir / "plain").string(), dir).status, 0);
  ASSERT_EQ(cli(base + "--standardize --out " + (dir / "std").string(), dir).status, 0);
  const auto a = nlohmann::json::parse(slurp(dir / "plain" / "graph.json"));
  const auto b = nlohmann::json::parse(slurp(dir / "std" / "graph.json"));
  EXPECT_EQ(a.at("edges"), b.at("edges"));
}

TEST(Cli, MalformedCsvIsADataError) {
  const auto dir = scratch("bad_csv");
  io::write_file((dir / "bad.csv").string(), "Y1,Y2\n1,2\n3,x\n");
  const auto r = cli("discover " + (dir / "bad.csv").string(), dir);
  EXPECT_EQ(r.status, 3);
  EXPECT_NE(r.err.find("line 3"), std::string::npos) << r.err;
}

TEST(Cli, EvaluateCases) {
  const auto dir = scratch("eval");
  auto write = [&](const std::string& name, const Dag& g) {
    io::write_file((dir / name).string(), dag_to_json(g).dump());
    return (dir / name).string();
  };
  const auto truth = write("t.json", Dag::from_edges(3, {{0, 1}}));
  const auto rev = write("r.json", Dag::from_edges(3, {{1, 0}}));
  const auto big = write("b.json", Dag::from_edges(4, {{1, 0}}));

  auto shd_of = [](const std::string& csv) {
    const auto lines = io::lines(csv);
    const auto header = io::split_csv_line(lines.at(1));
    const auto row = io::split_csv_line(lines.at(2));
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == "shd") return row[i];
    }
    return std::string("missing");
  };
  auto same = cli("evaluate " + truth + " " + truth, dir);
  ASSERT_EQ(same.status, 0) << same.err;
  EXPECT_EQ(shd_of(same.out), "0");
  EXPECT_EQ(same.out.rfind("# defuse evaluate", 0), 0u);
  auto reversed = cli("evaluate " + truth + " " + rev, dir);
  EXPECT_EQ(shd_of(reversed.out), "1");
  EXPECT_EQ(cli("evaluate " + truth + " " + big, dir).status, 3);

  ASSERT_EQ(cli("evaluate " + truth + " " + rev + " --out " + (dir / "m").string(), dir).status, 0);
  const auto m = nlohmann::json::parse(slurp(dir / "m" / "metrics.json"));
  EXPECT_EQ(m.at("shd"), 1);
  EXPECT_TRUE(m.contains("provenance"));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("codes");
  EXPECT_EQ(cli("benchmark --reps 0 --out " + dir.string(), dir).status, 2);
  EXPECT_EQ(cli("benchmark --alpha 1.5 --out " + dir.string(), dir).status, 2);
  EXPECT_EQ(cli("simulate --graph lattice", dir).status, 2);
  EXPECT_EQ(cli("frobnicate", dir).status, 2);
  EXPECT_EQ(cli("evaluate " + (dir / "missing.json").string() + " " + (dir / "missing.json").string(), dir).status,
            3);
  io::write_file((dir / "cyc.json").string(), R"({"p":2,"edges":[[1,2],[2,1]]})");
  EXPECT_EQ(cli("evaluate " + (dir / "cyc.json").string() + " " + (dir / "cyc.json").string(), dir).status, 3);
  io::write_file((dir / "tiny.csv").string(), "a,b\n1,2\n2,1\n");
  EXPECT_EQ(cli("discover " + (dir / "tiny.csv").string(), dir).status, 3);
  EXPECT_EQ(cli("--help", dir).status, 0);
}

TEST(Cli, BenchmarkAlphaGridIsDeterministic) {
  const auto dir = scratch("bench_cli");
  const std::string args = "benchmark --graph random --p 5 --n 200 --reps 2 --seed 4 --alpha-grid 0.1 0.05 0.025 0.01" +
                           kQuickTrain + "--out ";
  ASSERT_EQ(cli(args + (dir / "a").string(), dir).status, 0);
  ASSERT_EQ(cli(args + (dir / "b").string() + " --threads 2", dir).status, 0);
  for (const char* f : {"replications.csv", "summary.csv", "summary.json"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  const auto summary = nlohmann::json::parse(slurp(dir / "a" / "summary.json"));
  EXPECT_EQ(summary.at("summaries").size(), 4u);
  EXPECT_EQ(summary.at("provenance").at("config").at("seed"), 4);
  const auto lines = io::lines(slurp(dir / "a" / "summary.csv"));
  EXPECT_EQ(lines.at(0).rfind("# defuse benchmark", 0), 0u);
  EXPECT_EQ(parse_benchmark_csv(slurp(dir / "a" / "replications.csv")).size(), 8u);
}

TEST(Cli, ConfigFileWithFlagOverride) {
  const auto dir = scratch("config");
  {
    std::ofstream f(dir / "exp.toml");
    f << "p = 6\nn = 80\nreps = 2\nseed = 9\ngraph = \"hub\"\n";
  }
  const auto base = "simulate --config " + (dir / "exp.toml").string() + " --out ";
  ASSERT_EQ(cli(base + (dir / "a").string(), dir).status, 0);
  ASSERT_EQ(cli(base + (dir / "b").string() + " --p 4", dir).status, 0);
  const auto a = nlohmann::json::parse(slurp(dir / "a" / "rep_002_graph.json"));
  const auto b = nlohmann::json::parse(slurp(dir / "b" / "rep_002_graph.json"));
  EXPECT_EQ(a.at("p"), 6);
  EXPECT_EQ(a.at("edges").size(), 5u);
  EXPECT_EQ(a.at("provenance").at("config").at("n"), 80);
  EXPECT_EQ(b.at("p"), 4);
}
