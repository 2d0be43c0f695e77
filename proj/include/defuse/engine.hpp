#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "defuse/dataset.hpp"
#include "defuse/error.hpp"
#include "defuse/graph.hpp"
#include "defuse/regressor.hpp"
#include "defuse/rng.hpp"
#include "defuse/stats.hpp"

namespace defuse {

struct DiscoverOptions {
  /// When every pending node rejects normality, admit the one with the
  /// largest p-value instead of failing with NoProgress.
  bool forced_placement = true;
  int threads = 1;
};

/// Algorithm state between depth iterations. Residual columns of placed
/// nodes are frozen at the layer where the node was placed.
struct LayerState {
  int d = 0;
  NodeSet placed;  // V(d), sorted
  NodeSet pending;
  Eigen::MatrixXd residuals;  // n x p; columns of pending nodes are unused
  std::map<Node, FitResult> fits;

  Eigen::MatrixXd xi_hat() const {
    std::vector<Eigen::Index> cols(placed.begin(), placed.end());
    return residuals(Eigen::all, cols);
  }
};

inline LayerState initial_state(const Dataset& data) {
  LayerState s;
  s.residuals = Eigen::MatrixXd::Zero(data.n(), data.p());
  for (Node j = 0; j < data.p(); ++j) s.pending.push_back(j);
  return s;
}

struct AuditRound {
  int d = 0;
  NodeSet tested;
  std::map<Node, NormalityReport> reports;
  NodeSet admitted;
  bool forced = false;
};

struct DiscoveryResult {
  Dag dag_hat;
  DepthProfile depth_profile;
  std::map<Node, FitResult> fits;
  std::vector<int> layer_of;  // iteration at which each node was placed
  std::vector<NodeSet> parents;
  Eigen::MatrixXd residuals;
  std::vector<AuditRound> audit;
  std::vector<std::string> warnings;
};

/// Admits every pending node whose p-value is at least alpha. With forced
/// placement, an empty admission becomes the single best node plus a warning.
inline NodeSet layer_gate(const std::map<Node, NormalityReport>& reports, double alpha, bool forced_placement = true,
                          std::vector<std::string>* warnings = nullptr) {
  NodeSet admitted;
  for (const auto& [j, r] : reports) {
    if (r.p_value >= alpha) admitted.push_back(j);
  }
  if (admitted.empty() && forced_placement && !reports.empty()) {
    auto best = reports.begin();
    for (auto it = reports.begin(); it != reports.end(); ++it) {
      if (it->second.p_value > best->second.p_value) best = it;
    }
    admitted.push_back(best->first);
    if (warnings) {
      warnings->push_back("forced placement of node " + std::to_string(best->first + 1) +
                          " (all pending nodes rejected normality; max p-value " +
                          io::format_double(best->second.p_value) + ")");
    }
  }
  return admitted;
}

/// Freezes the residuals Y_k - Yhat_k of newly placed nodes, computed with the
/// design of the current layer, and advances the state by one depth.
inline LayerState residual_update(const Dataset& data, const LayerState& state, const std::map<Node, FitResult>& fits) {
  LayerState next = state;
  std::vector<Eigen::Index> cols(state.placed.begin(), state.placed.end());
  const Eigen::MatrixXd x = data.values(Eigen::all, cols);
  const Eigen::MatrixXd xi = state.xi_hat();
  for (const auto& [k, fit] : fits) {
    if (std::find(state.pending.begin(), state.pending.end(), k) == state.pending.end()) {
      throw Error(ErrorCode::ShapeMismatch, "node " + std::to_string(k + 1) + " is not pending");
    }
    if (fit.params.input_dim() != x.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "fit for node " + std::to_string(k + 1) + " does not match layer design");
    }
    next.residuals.col(k) = data.values.col(k) - fit.predict(x, xi);
    next.fits[k] = fit;
    next.placed.push_back(k);
    next.pending.erase(std::find(next.pending.begin(), next.pending.end(), k));
  }
  std::sort(next.placed.begin(), next.placed.end());
  next.d = state.d + 1;
  return next;
}

namespace detail {

template <class Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, count); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

inline DiscoveryResult discover(const Dataset& data, double alpha, const TrainConfig& config,
                                const DiscoverOptions& options = {}) {
  config.validate();
  if (data.n() < 50) throw Error(ErrorCode::SampleTooSmall, "discovery needs at least 50 observations");
  if (data.p() < 2) throw Error(ErrorCode::InvalidSize, "discovery needs at least 2 variables");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  if (!data.values.allFinite()) throw Error(ErrorCode::NonFiniteInput, "data contains non-finite values");

  const int p = static_cast<int>(data.p());
  DiscoveryResult result;
  result.layer_of.assign(p, -1);
  result.parents.assign(p, {});

  std::vector<char> degenerate(p, 0);
  for (Node j = 0; j < p; ++j) {
    if (!(sample_sd(data.values.col(j)) > 0.0)) {
      degenerate[j] = 1;
      result.warnings.push_back("column " + data.names[j] + " has zero variance; placed as a root");
    }
  }

  LayerState state = initial_state(data);
  while (!state.pending.empty()) {
    std::vector<Eigen::Index> cols(state.placed.begin(), state.placed.end());
    const Eigen::MatrixXd x = data.values(Eigen::all, cols);
    const Eigen::MatrixXd xi = state.xi_hat();
    const std::size_t count = state.pending.size();
    std::vector<FitResult> fits(count);
    std::vector<NormalityReport> reports(count);
    std::vector<std::string> notes(count);

    detail::parallel_for(count, options.threads, [&](std::size_t i) {
      const Node j = state.pending[i];
      TrainConfig cfg = config;
      cfg.rng_seed = derive_seed(config.rng_seed, {static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(state.d)});
      const Eigen::VectorXd y = data.values.col(j);
      fits[i] = state.placed.empty() ? fit_network_stage(y, x, xi, {}, cfg) : fit_deconfounded(y, x, xi, cfg);
      const Eigen::VectorXd resid = y - fits[i].predict(x, xi);
      if (degenerate[j]) {
        reports[i].n = static_cast<std::size_t>(resid.size());
        reports[i].p_value = 1.0;
        return;
      }
      try {
        reports[i] = anderson_darling(std::vector<double>(resid.data(), resid.data() + resid.size()));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateSample) throw;
        reports[i].n = static_cast<std::size_t>(resid.size());
        reports[i].p_value = 1.0;
        notes[i] = "node " + std::to_string(j + 1) + " has constant residuals at depth " + std::to_string(state.d);
      }
    });
    for (const auto& note : notes) {
      if (!note.empty()) result.warnings.push_back(note);
    }

    AuditRound round;
    round.d = state.d;
    round.tested = state.pending;
    for (std::size_t i = 0; i < count; ++i) round.reports[state.pending[i]] = reports[i];
    std::map<Node, NormalityReport> gate_input = round.reports;
    if (state.d == 0) {
      for (Node j = 0; j < p; ++j) {
        if (degenerate[j]) gate_input[j].p_value = 1.0;
      }
    }
    const auto before = result.warnings.size();
    round.admitted = layer_gate(gate_input, alpha, options.forced_placement, &result.warnings);
    round.forced = result.warnings.size() > before;
    if (round.admitted.empty()) {
      throw Error(ErrorCode::NoProgress, "every pending node rejected normality at depth " + std::to_string(state.d));
    }

    std::map<Node, FitResult> placed_fits;
    for (std::size_t i = 0; i < count; ++i) {
      const Node j = state.pending[i];
      if (!std::binary_search(round.admitted.begin(), round.admitted.end(), j)) continue;
      placed_fits[j] = fits[i];
      result.layer_of[j] = state.d;
      for (Node col : fits[i].selected_parents) result.parents[j].push_back(state.placed[col]);
    }
    result.audit.push_back(std::move(round));
    state = residual_update(data, state, placed_fits);
  }

  std::vector<Edge> edges;
  for (Node j = 0; j < p; ++j) {
    for (Node k : result.parents[j]) edges.emplace_back(k, j);
  }
  result.dag_hat = Dag::from_edges(p, std::move(edges), data.names);
  result.depth_profile = topological_depths(result.dag_hat);
  result.fits = std::move(state.fits);
  result.residuals = std::move(state.residuals);
  return result;
}

inline nlohmann::json audit_to_json(const DiscoveryResult& r, const std::vector<std::string>& names) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& round : r.audit) {
    nlohmann::json tests = nlohmann::json::array();
    for (const auto& [j, rep] : round.reports) {
      nlohmann::json t = to_json(rep);
      t["node"] = names[j];
      t["admitted"] = std::binary_search(round.admitted.begin(), round.admitted.end(), j);
      tests.push_back(t);
    }
    nlohmann::json admitted = nlohmann::json::array();
    for (Node j : round.admitted) admitted.push_back(names[j]);
    rounds.push_back({{"depth", round.d}, {"admitted", admitted}, {"forced", round.forced}, {"tests", tests}});
  }
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& [j, fit] : r.fits) {
    nlohmann::json parents = nlohmann::json::array();
    for (Node k : r.parents[j]) parents.push_back(names[k]);
    nlohmann::json f = fit_result_to_json(fit);
    f["node"] = names[j];
    f["layer"] = r.layer_of[j];
    f["parents"] = parents;
    nodes.push_back(f);
  }
  return {{"rounds", rounds}, {"fits", nodes}, {"warnings", r.warnings}};
}

}  // namespace defuse
