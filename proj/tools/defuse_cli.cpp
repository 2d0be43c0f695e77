// Command-line front end: simulate, discover, evaluate, benchmark.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "defuse/defuse.hpp"

namespace {

using defuse::Error;
using defuse::ErrorCode;
using defuse::ExperimentConfig;

struct Flags {
  ExperimentConfig exp;
  std::string graph = "random";
  double alpha = 0.025;
  std::vector<double> alpha_grid;
  std::uint64_t train_seed = 0;
};

void add_train_flags(CLI::App* cmd, Flags& f) {
  auto& t = f.exp.train;
  cmd->add_option("--learning-rate", t.learning_rate, "Adam step size")->capture_default_str();
  cmd->add_option("--hidden-width", t.hidden_width, "hidden units per layer")->capture_default_str();
  cmd->add_option("--hidden-layers", t.hidden_layers, "number of hidden layers")->capture_default_str();
  cmd->add_option("--epoch-grid", t.epoch_grid, "validation checkpoints (epochs)");
  cmd->add_option("--lambda-grid", t.lambda_grid, "penalty escalation ladder");
  cmd->add_option("--tau", t.tau, "truncation threshold of the group penalty")->capture_default_str();
  cmd->add_option("--patience", t.patience, "stale checkpoints tolerated at the largest penalty")->capture_default_str();
  cmd->add_option("--kappa-se", t.kappa_se_multiplier, "standard errors of slack when choosing kappa")
      ->capture_default_str();
  cmd->add_option("--sigma-se", t.sigma_se_multiplier, "standard errors of slack when choosing varsigma")
      ->capture_default_str();
  cmd->add_option("--batch-size", t.batch_size, "0 = full batch up to 1024 rows")->capture_default_str();
  cmd->add_option("--train-seed", f.train_seed, "extra seed mixed into network initialisation");
}

void add_design_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--graph", f.graph, "graph family")->check(CLI::IsMember({"random", "hub"}))->capture_default_str();
  cmd->add_option("--p", f.exp.p, "number of variables")->capture_default_str();
  cmd->add_option("--n", f.exp.n, "sample size")->capture_default_str();
  cmd->add_option("--edge-prob", f.exp.edge_prob, "edge probability for random graphs (default 1/p)");
  cmd->add_option("--reps", f.exp.reps, "replications")->capture_default_str();
  cmd->add_option("--seed", f.exp.seed, "master seed")->capture_default_str();
}

void finish(Flags& f) {
  f.exp.family = defuse::parse_graph_family(f.graph);
  f.exp.alphas = f.alpha_grid.empty() ? std::vector<double>{f.alpha} : f.alpha_grid;
  f.exp.train.rng_seed = f.train_seed;
}

int cmd_simulate(Flags& f) {
  finish(f);
  for (const auto& path : defuse::simulate_to_dir(f.exp)) std::cout << path << "\n";
  return 0;
}

int cmd_discover(Flags& f, const std::string& data_path) {
  finish(f);
  f.exp.validate();
  const auto data = defuse::read_dataset_csv(data_path);
  defuse::TrainConfig train = f.exp.train;
  train.rng_seed = defuse::derive_seed(f.exp.seed, {defuse::stream::kTraining, 0, f.train_seed});
  const auto result = defuse::discover_dataset(data, f.exp.alphas.front(), train, f.exp.standardize, f.exp.threads);
  nlohmann::json prov = {{"data", data_path},
                         {"alpha", f.exp.alphas.front()},
                         {"seed", f.exp.seed},
                         {"standardize", f.exp.standardize},
                         {"train", defuse::train_config_to_json(f.exp.train)}};
  for (const auto& path : defuse::write_discovery(result, f.exp.out_dir, prov)) std::cout << path << "\n";
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

int cmd_evaluate(const std::string& truth_path, const std::string& estimate_path, const std::string& out_dir) {
  const auto truth = defuse::read_dag_json(truth_path);
  const auto estimate = defuse::read_dag_json(estimate_path);
  const auto m = defuse::graph_metrics(truth, estimate);
  const nlohmann::json prov = {{"truth", truth_path}, {"estimate", estimate_path}};
  const auto csv = "# " + defuse::provenance_line("evaluate", prov) + "\n" + defuse::metrics_csv_header() + "\n" +
                   defuse::metrics_csv_row(m) + "\n";
  if (out_dir.empty()) {
    std::cout << csv;
    return 0;
  }
  defuse::ensure_directory(out_dir);
  defuse::io::write_file(defuse::path_in(out_dir, "metrics.csv"), csv);
  defuse::io::write_file(defuse::path_in(out_dir, "metrics.json"),
                         defuse::with_provenance(defuse::to_json(m), "evaluate", prov).dump(2) + "\n");
  std::cout << defuse::path_in(out_dir, "metrics.csv") << "\n" << defuse::path_in(out_dir, "metrics.json") << "\n";
  return 0;
}

int cmd_benchmark(Flags& f) {
  finish(f);
  const auto result = defuse::benchmark_to_dir(f.exp, [](double alpha, int rep, double seconds) {
    std::fprintf(stderr, "alpha %s replication %d done in %.1f s\n", defuse::io::format_double(alpha).c_str(), rep,
                 seconds);
  });
  for (const auto& [alpha, s] : result.summaries) {
    std::printf("alpha %s: FPR %.4f (%.4f)  FDR %.4f (%.4f)  TPR %.4f (%.4f)  SHD %.2f (%.2f)\n",
                defuse::io::format_double(alpha).c_str(), s.fpr.mean, s.fpr.sd, s.fdr.mean, s.fdr.sd, s.tpr.mean,
                s.tpr.sd, s.shd.mean, s.shd.sd);
  }
  return 0;
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  return std::any_of(args.begin(), args.end(),
                     [&](const std::string& a) { return a == flag || a.starts_with(flag + "="); });
}

/// Arguments after the program name, with the entries of a --config file
/// spliced in right after the subcommand. Keys also given as flags are
/// skipped.
std::vector<std::string> with_config_file(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].starts_with("--config=")) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigTOML().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;
    const std::string flag = "--" + item.name;
    if (given_on_command_line(args, flag)) continue;
    if (item.inputs.size() == 1 && (item.inputs[0] == "true" || item.inputs[0] == "false")) {
      injected.push_back(flag + "=" + item.inputs[0]);
      continue;
    }
    injected.push_back(flag);
    injected.insert(injected.end(), item.inputs.begin(), item.inputs.end());
  }
  args.insert(args.begin() + 1, injected.begin(), injected.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nonlinear causal discovery with hidden confounders"};
  app.require_subcommand(1);
  Flags flags;
  std::string data_path, truth_path, estimate_path, eval_out, config_path;

  auto* simulate = app.add_subcommand("simulate", "sample graphs, models and data sets");
  add_design_flags(simulate, flags);
  simulate->add_option("--out", flags.exp.out_dir, "output directory")->capture_default_str();
  simulate->add_option("--config", config_path, "key = value file; command-line flags take precedence");

  auto* discover = app.add_subcommand("discover", "estimate a DAG from a CSV data set");
  discover->add_option("data", data_path, "CSV with a header row")->required();
  discover->add_option("--alpha", flags.alpha, "normality test level")->capture_default_str();
  discover->add_option("--seed", flags.exp.seed, "seed for network initialisation")->capture_default_str();
  discover->add_flag("--standardize", flags.exp.standardize, "standardize columns before discovery");
  discover->add_option("--threads", flags.exp.threads, "worker threads")->capture_default_str();
  discover->add_option("--out", flags.exp.out_dir, "output directory")->capture_default_str();
  add_train_flags(discover, flags);
  discover->add_option("--config", config_path, "key = value file; command-line flags take precedence");

  auto* evaluate = app.add_subcommand("evaluate", "compare an estimated graph with the truth");
  evaluate->add_option("truth", truth_path, "true graph JSON")->required();
  evaluate->add_option("estimate", estimate_path, "estimated graph JSON")->required();
  evaluate->add_option("--out", eval_out, "write metrics.csv and metrics.json here instead of stdout");

  auto* benchmark = app.add_subcommand("benchmark", "simulate, discover and evaluate over replications");
  add_design_flags(benchmark, flags);
  benchmark->add_option("--alpha", flags.alpha, "normality test level")->capture_default_str();
  benchmark->add_option("--alpha-grid", flags.alpha_grid, "several levels, one summary row each");
  benchmark->add_flag("--standardize", flags.exp.standardize, "standardize columns before discovery");
  benchmark->add_option("--threads", flags.exp.threads, "parallel replications")->capture_default_str();
  benchmark->add_option("--out", flags.exp.out_dir, "output directory")->capture_default_str();
  add_train_flags(benchmark, flags);
  benchmark->add_option("--config", config_path, "key = value file; command-line flags take precedence");

  try {
    auto args = with_config_file(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e);
    return status == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return cmd_simulate(flags);
    if (*discover) return cmd_discover(flags, data_path);
    if (*evaluate) return cmd_evaluate(truth_path, estimate_path, eval_out);
    if (*benchmark) return cmd_benchmark(flags);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return defuse::exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
