#pragma once

#include <chrono>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "defuse/dataset.hpp"
#include "defuse/engine.hpp"
#include "defuse/error.hpp"
#include "defuse/evaluation.hpp"
#include "defuse/graph.hpp"
#include "defuse/io.hpp"
#include "defuse/regressor.hpp"
#include "defuse/rng.hpp"
#include "defuse/synth.hpp"

namespace defuse {

enum class GraphFamily { Random, Hub };

inline std::string to_string(GraphFamily g) { return g == GraphFamily::Random ? "random" : "hub"; }

inline GraphFamily parse_graph_family(const std::string& s) {
  if (s == "random") return GraphFamily::Random;
  if (s == "hub") return GraphFamily::Hub;
  throw Error(ErrorCode::InvalidConfig, "unknown graph family '" + s + "' (expected random or hub)");
}

struct ExperimentConfig {
  GraphFamily family = GraphFamily::Random;
  int p = 30;
  int n = 500;
  std::optional<double> edge_prob;  // defaults to 1/p
  std::vector<double> alphas = {0.025};
  int reps = 1;
  std::uint64_t seed = 0;
  bool standardize = false;
  int threads = 1;
  TrainConfig train;
  std::string out_dir = ".";

  double edge_probability() const { return edge_prob.value_or(1.0 / static_cast<double>(p)); }

  void validate() const {
    auto bad = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (p < 2) bad("p must be at least 2");
    if (n < 1) bad("n must be positive");
    if (reps < 1) bad("replication count must be at least 1");
    if (threads < 1) bad("threads must be positive");
    const double s = edge_probability();
    if (!(s >= 0.0 && s <= 1.0)) bad("edge probability must lie in [0, 1]");
    if (alphas.empty()) bad("alpha list is empty");
    for (double a : alphas) {
      if (!(a > 0.0 && a < 1.0)) bad("alpha must lie in (0, 1)");
    }
    train.validate();
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  nlohmann::json j = {{"hidden_width", c.hidden_width},
                      {"hidden_layers", c.hidden_layers},
                      {"learning_rate", c.learning_rate},
                      {"epoch_grid", c.epoch_grid},
                      {"lambda_grid", c.lambda_grid},
                      {"tau", c.tau},
                      {"val_fraction", c.val_fraction},
                      {"batch_size", c.batch_size},
                      {"patience", c.patience},
                      {"selection_tolerance", c.selection_tolerance},
                      {"exhaustive_limit", c.exhaustive_limit},
                      {"refit_epochs", c.refit_epochs},
                      {"refit_checkpoint", c.refit_checkpoint},
                      {"kappa_patience", c.kappa_patience},
                      {"kappa_se_multiplier", c.kappa_se_multiplier},
                      {"sigma_se_multiplier", c.sigma_se_multiplier},
                      {"rng_seed", c.rng_seed}};
  j["norm_cap"] = c.norm_cap ? nlohmann::json(*c.norm_cap) : nlohmann::json(nullptr);
  return j;
}

/// Everything needed to rerun an experiment. Thread count is left out on
/// purpose: outputs do not depend on it.
inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  return {{"graph", to_string(c.family)}, {"p", c.p},           {"n", c.n},
          {"edge_prob", c.edge_probability()}, {"alphas", c.alphas}, {"reps", c.reps},
          {"seed", c.seed},           {"standardize", c.standardize}, {"train", train_config_to_json(c.train)}};
}

/// Single-line provenance used as a comment header in CSV output.
inline std::string provenance_line(const std::string& command, const nlohmann::json& config) {
  return "defuse " + command + " " + config.dump();
}

namespace stream {
inline constexpr std::uint64_t kReplication = 0x5EB1;
inline constexpr std::uint64_t kTraining = 0x7A17;
}  // namespace stream

struct Replication {
  int index = 0;
  Dag truth;
  SemSpec spec;
  Dataset data;
};

/// Replication r draws its graph, model and sample from streams keyed by
/// (seed, r) only, so results do not depend on scheduling or thread count.
inline Replication simulate_replication(const ExperimentConfig& c, int r) {
  const auto base = derive_seed(c.seed, {stream::kReplication, static_cast<std::uint64_t>(r)});
  Replication rep;
  rep.index = r;
  rep.truth = c.family == GraphFamily::Hub ? hub_dag(c.p) : random_dag(c.p, c.edge_probability(), derive_seed(base, {1}));
  rep.spec = draw_sem_spec(rep.truth, derive_seed(base, {2}));
  rep.data = sample(rep.spec, c.n, derive_seed(base, {3}));
  return rep;
}

inline TrainConfig replication_train_config(const ExperimentConfig& c, int r) {
  TrainConfig t = c.train;
  t.rng_seed = derive_seed(c.seed, {stream::kTraining, static_cast<std::uint64_t>(r), c.train.rng_seed});
  return t;
}

inline std::string replication_stem(int r) {
  std::string idx = std::to_string(r + 1);
  while (idx.size() < 3) idx.insert(idx.begin(), '0');
  return "rep_" + idx;
}

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw Error(ErrorCode::IoError, "cannot create directory " + dir);
}

inline std::string path_in(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

inline nlohmann::json with_provenance(nlohmann::json body, const std::string& command, const nlohmann::json& config) {
  body["provenance"] = {{"command", command}, {"config", config}};
  return body;
}

/// Writes graph JSON, model JSON and data CSV for every replication.
/// Returns the paths written, in order.
inline std::vector<std::string> simulate_to_dir(const ExperimentConfig& c) {
  c.validate();
  ensure_directory(c.out_dir);
  const auto config = experiment_config_to_json(c);
  std::vector<std::string> written;
  for (int r = 0; r < c.reps; ++r) {
    const auto rep = simulate_replication(c, r);
    nlohmann::json prov = config;
    prov["replication"] = r + 1;
    const auto stem = replication_stem(r);
    const auto graph = path_in(c.out_dir, stem + "_graph.json");
    const auto sem = path_in(c.out_dir, stem + "_sem.json");
    const auto data = path_in(c.out_dir, stem + "_data.csv");
    io::write_file(graph, with_provenance(dag_to_json(rep.truth), "simulate", prov).dump(2) + "\n");
    io::write_file(sem, with_provenance(sem_spec_to_json(rep.spec), "simulate", prov).dump(2) + "\n");
    io::write_file(data, dataset_to_csv(rep.data, provenance_line("simulate", prov)));
    written.insert(written.end(), {graph, sem, data});
  }
  return written;
}

/// Discovery with optional standardization applied first.
inline DiscoveryResult discover_dataset(const Dataset& data, double alpha, const TrainConfig& train, bool standardize,
                                        int threads = 1) {
  DiscoverOptions options;
  options.threads = threads;
  return discover(standardize ? defuse::standardize(data) : data, alpha, train, options);
}

/// Writes graph.json, graph.dot and audit.json for one discovery run.
inline std::vector<std::string> write_discovery(const DiscoveryResult& result, const std::string& out_dir,
                                                const nlohmann::json& provenance) {
  ensure_directory(out_dir);
  const auto& names = result.dag_hat.names();
  const auto graph = path_in(out_dir, "graph.json");
  const auto dot = path_in(out_dir, "graph.dot");
  const auto audit = path_in(out_dir, "audit.json");
  io::write_file(graph, with_provenance(dag_to_json(result.dag_hat), "discover", provenance).dump(2) + "\n");
  io::write_file(dot, "// defuse discover " + provenance.dump() + "\n" + dag_to_dot(result.dag_hat));
  io::write_file(audit, with_provenance(audit_to_json(result, names), "discover", provenance).dump(2) + "\n");
  return {graph, dot, audit};
}

struct BenchmarkRow {
  double alpha = 0.0;
  int replication = 0;
  GraphMetrics metrics;
  std::size_t warnings = 0;
};

struct BenchmarkResult {
  std::vector<BenchmarkRow> rows;  // ordered by alpha then replication
  std::vector<std::pair<double, ReplicationSummary>> summaries;
};

inline std::string benchmark_csv_header() { return "alpha,replication," + metrics_csv_header() + ",warnings"; }

inline std::string benchmark_csv_row(const BenchmarkRow& r) {
  return io::format_double(r.alpha) + "," + std::to_string(r.replication) + "," + metrics_csv_row(r.metrics) + "," +
         std::to_string(r.warnings);
}

/// Inverse of the per-replication CSV, used to recompute summaries.
inline std::vector<BenchmarkRow> parse_benchmark_csv(const std::string& text) {
  std::vector<BenchmarkRow> rows;
  bool header = false;
  const auto all = io::lines(text);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& line = all[i];
    if (line.starts_with("#") || io::trim(line).empty()) continue;
    if (!header) {
      if (line != benchmark_csv_header()) throw Error(ErrorCode::ParseError, "unexpected benchmark csv header");
      header = true;
      continue;
    }
    const auto where = "line " + std::to_string(i + 1);
    const auto f = io::split_csv_line(line);
    if (f.size() != 13) throw Error(ErrorCode::ParseError, where + ": expected 13 fields");
    BenchmarkRow r;
    r.alpha = io::parse_double(f[0], where);
    r.replication = static_cast<int>(io::parse_double(f[1], where));
    auto& m = r.metrics;
    m.fpr = io::parse_double(f[2], where);
    m.fdr = io::parse_double(f[3], where);
    m.tpr = io::parse_double(f[4], where);
    m.shd = static_cast<long>(io::parse_double(f[5], where));
    m.tp = static_cast<long>(io::parse_double(f[6], where));
    m.re = static_cast<long>(io::parse_double(f[7], where));
    m.fp = static_cast<long>(io::parse_double(f[8], where));
    m.tn = static_cast<long>(io::parse_double(f[9], where));
    m.fn = static_cast<long>(io::parse_double(f[10], where));
    m.pe = static_cast<long>(io::parse_double(f[11], where));
    r.warnings = static_cast<std::size_t>(io::parse_double(f[12], where));
    rows.push_back(r);
  }
  return rows;
}

/// Progress callback: (alpha, replication, seconds).
using BenchmarkLog = std::function<void(double, int, double)>;

/// simulate -> discover -> evaluate for every (alpha, replication). The
/// sample for replication r is shared across alphas. If a job throws, the
/// rows that did finish are stored in `partial` before the error propagates.
inline BenchmarkResult run_benchmark(const ExperimentConfig& c, const BenchmarkLog& log = {},
                                     std::vector<BenchmarkRow>* partial = nullptr) {
  c.validate();
  struct Job {
    std::size_t a;
    int r;
  };
  std::vector<Job> jobs;
  for (std::size_t a = 0; a < c.alphas.size(); ++a) {
    for (int r = 0; r < c.reps; ++r) jobs.push_back({a, r});
  }
  std::vector<std::optional<BenchmarkRow>> done(jobs.size());
  std::exception_ptr failure;
  try {
    detail::parallel_for(jobs.size(), c.threads, [&](std::size_t i) {
      const auto start = std::chrono::steady_clock::now();
      const auto [a, r] = jobs[i];
      const auto rep = simulate_replication(c, r);
      const auto result = discover_dataset(rep.data, c.alphas[a], replication_train_config(c, r), c.standardize);
      BenchmarkRow row;
      row.alpha = c.alphas[a];
      row.replication = r + 1;
      row.metrics = graph_metrics(rep.truth, result.dag_hat);
      row.warnings = result.warnings.size();
      done[i] = row;
      if (log) log(row.alpha, row.replication, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    });
  } catch (...) {
    failure = std::current_exception();
  }
  BenchmarkResult out;
  for (const auto& d : done) {
    if (d) out.rows.push_back(*d);
  }
  if (failure) {
    if (partial) *partial = out.rows;
    std::rethrow_exception(failure);
  }
  for (double alpha : c.alphas) {
    std::vector<GraphMetrics> ms;
    for (const auto& row : out.rows) {
      if (row.alpha == alpha) ms.push_back(row.metrics);
    }
    out.summaries.emplace_back(alpha, replication_summary(ms));
  }
  return out;
}

inline nlohmann::json benchmark_summary_json(const BenchmarkResult& result, const nlohmann::json& config) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [alpha, summary] : result.summaries) {
    nlohmann::json row = to_json(summary);
    row["alpha"] = alpha;
    rows.push_back(row);
  }
  return with_provenance({{"summaries", rows}}, "benchmark", config);
}

inline std::string benchmark_summary_csv(const BenchmarkResult& result, const std::string& provenance) {
  std::string out = "# " + provenance + "\n";
  out += "alpha,replications,fpr_mean,fpr_sd,fdr_mean,fdr_sd,tpr_mean,tpr_sd,shd_mean,shd_sd\n";
  for (const auto& [alpha, s] : result.summaries) {
    out += io::format_double(alpha) + "," + std::to_string(s.count);
    for (const auto* m : {&s.fpr, &s.fdr, &s.tpr, &s.shd}) {
      out += "," + io::format_double(m->mean) + "," + io::format_double(m->sd);
    }
    out += "\n";
  }
  return out;
}

inline std::string benchmark_rows_csv(const std::vector<BenchmarkRow>& rows, const std::string& provenance) {
  std::string out = "# " + provenance + "\n" + benchmark_csv_header() + "\n";
  for (const auto& r : rows) out += benchmark_csv_row(r) + "\n";
  return out;
}

/// Runs the benchmark and writes replications.csv, summary.csv and
/// summary.json. On failure the finished rows are still written.
inline BenchmarkResult benchmark_to_dir(const ExperimentConfig& c, const BenchmarkLog& log = {}) {
  c.validate();
  ensure_directory(c.out_dir);
  const auto config = experiment_config_to_json(c);
  const auto prov = provenance_line("benchmark", config);
  const auto rows_path = path_in(c.out_dir, "replications.csv");
  std::vector<BenchmarkRow> partial;
  BenchmarkResult result;
  try {
    result = run_benchmark(c, log, &partial);
  } catch (...) {
    io::write_file(rows_path, benchmark_rows_csv(partial, prov));
    throw;
  }
  io::write_file(rows_path, benchmark_rows_csv(result.rows, prov));
  io::write_file(path_in(c.out_dir, "summary.csv"), benchmark_summary_csv(result, prov));
  io::write_file(path_in(c.out_dir, "summary.json"), benchmark_summary_json(result, config).dump(2) + "\n");
  return result;
}

}  // namespace defuse
