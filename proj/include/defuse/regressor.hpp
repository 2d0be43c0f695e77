#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "defuse/error.hpp"
#include "defuse/graph.hpp"
#include "defuse/network.hpp"
#include "defuse/rng.hpp"

namespace defuse {

struct TrainConfig {
  int hidden_width = 50;
  int hidden_layers = 1;
  double learning_rate = 0.1;
  std::vector<int> epoch_grid = {250,  500,  750,  1000, 1250, 1500, 1750, 2000,
                                 2250, 2500, 2750, 3000, 3250, 3500, 3750, 4000};
  std::vector<double> lambda_grid = {0.0001, 0.001, 0.05};
  double tau = 0.05;
  double val_fraction = 0.1;
  std::optional<double> norm_cap;  // ||theta|| <= s, off by default
  int batch_size = 0;              // 0: full batch up to 1024 rows, else 256
  /// Checkpoints without validation improvement, at the largest lambda,
  /// before training stops. Also used by the top-kappa refits.
  int patience = 4;
  /// Extra relative slack, as a fraction of the best validation MSE, when
  /// picking the sparsest (kappa, varsigma) candidate.
  double selection_tolerance = 0.0;
  /// Exhaustive best-subset search up to this many residual columns.
  int exhaustive_limit = 12;
  /// Re-optimisation budget for each masked top-kappa candidate.
  int refit_epochs = 250;
  int refit_checkpoint = 25;
  /// Stop scanning kappa upward after this many candidates without a new
  /// best validation MSE.
  int kappa_patience = 2;
  /// Standard errors of slack allowed when preferring a smaller kappa.
  double kappa_se_multiplier = 1.0;
  /// Same for varsigma in the linear stage.
  double sigma_se_multiplier = 1.5;
  std::uint64_t rng_seed = 0;

  void validate() const {
    auto bad = [](const char* what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (hidden_width < 1) bad("hidden_width must be positive");
    if (hidden_layers < 1) bad("hidden_layers must be positive");
    if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
    if (epoch_grid.empty() || !std::is_sorted(epoch_grid.begin(), epoch_grid.end()) || epoch_grid.front() < 1) {
      bad("epoch_grid must be a nonempty increasing list of positive counts");
    }
    if (lambda_grid.empty()) bad("lambda_grid must be nonempty");
    for (double l : lambda_grid) {
      if (!(l > 0.0)) bad("lambda values must be positive");
    }
    if (!(tau > 0.0)) bad("tau must be positive");
    if (!(val_fraction > 0.0 && val_fraction <= 0.5)) bad("val_fraction must lie in (0, 0.5]");
    if (norm_cap && !(*norm_cap > 0.0)) bad("norm cap must be positive");
    if (batch_size < 0) bad("batch_size must be nonnegative");
    if (patience < 1) bad("patience must be positive");
    if (selection_tolerance < 0.0) bad("selection_tolerance must be nonnegative");
    if (refit_checkpoint < 1 || refit_epochs < refit_checkpoint) bad("refit schedule must be positive");
    if (kappa_patience < 1) bad("kappa_patience must be positive");
    if (kappa_se_multiplier < 0.0 || sigma_se_multiplier < 0.0) bad("standard-error multipliers must be nonnegative");
  }
};

/// Train/validation partition: seeded shuffle, first part trains, last
/// val_fraction validates.
struct Split {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> val;
};

inline Split make_split(Eigen::Index n, double val_fraction, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(derive_seed(seed, {0x5B117}));
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  auto n_val = static_cast<Eigen::Index>(std::llround(static_cast<double>(n) * val_fraction));
  n_val = std::clamp<Eigen::Index>(n_val, 1, std::max<Eigen::Index>(1, n - 1));
  Split s;
  s.train.assign(idx.begin(), idx.end() - n_val);
  s.val.assign(idx.end() - n_val, idx.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

/// Affine maps from raw data to the unit-scale coordinates used in training,
/// estimated on the training rows.
struct Scaling {
  Eigen::VectorXd x_mean, x_sd, xi_mean, xi_sd;
  double y_mean = 0.0, y_sd = 1.0;

  static std::pair<Eigen::VectorXd, Eigen::VectorXd> columns(const Eigen::MatrixXd& m) {
    Eigen::VectorXd mean = m.colwise().mean().transpose();
    Eigen::VectorXd sd(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m.rows() > 1 ? (m.col(c).array() - mean[c]).square().sum() / double(m.rows() - 1) : 0.0;
      sd[c] = v > 1e-24 ? std::sqrt(v) : 1.0;
    }
    return {mean, sd};
  }

  Eigen::MatrixXd x(const Eigen::MatrixXd& raw) const {
    return ((raw.rowwise() - x_mean.transpose()).array().rowwise() / x_sd.transpose().array()).matrix();
  }
  Eigen::MatrixXd xi(const Eigen::MatrixXd& raw) const {
    return ((raw.rowwise() - xi_mean.transpose()).array().rowwise() / xi_sd.transpose().array()).matrix();
  }
  Eigen::VectorXd y(const Eigen::VectorXd& raw) const { return (raw.array() - y_mean) / y_sd; }
};

namespace detail {

inline Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows) {
  return m(rows, Eigen::all);
}
inline Eigen::VectorXd take_rows(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  return v(rows);
}

/// Paired one-standard-error rule over per-row validation losses: the first
/// candidate whose mean excess over the best candidate is within `se_mult`
/// standard errors of the paired differences (plus a relative tolerance).
inline std::size_t pick_sparsest_paired(const std::vector<Eigen::VectorXd>& errors, double tol, double se_mult) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < errors.size(); ++i) {
    if (errors[i].mean() < errors[best].mean()) best = i;
  }
  const double best_mean = errors[best].mean();
  const double nv = static_cast<double>(errors[best].size());
  for (std::size_t i = 0; i < best; ++i) {
    const Eigen::VectorXd d = errors[i] - errors[best];
    const double excess = d.mean();
    const double sd = nv > 1.0 ? std::sqrt((d.array() - excess).square().sum() / (nv - 1.0)) : 0.0;
    if (excess <= se_mult * sd / std::sqrt(nv) + tol * best_mean + 1e-15) return i;
  }
  return best;
}

/// OLS restricted to `support` via the Gram matrix; nullopt if singular.
inline std::optional<Eigen::VectorXd> restricted_ols(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty,
                                                     const std::vector<Eigen::Index>& support) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(gram.rows());
  if (support.empty()) return beta;
  const Eigen::MatrixXd g = gram(support, support);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(g);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return std::nullopt;
  const double scale = std::max(1.0, g.diagonal().maxCoeff());
  if (ldlt.vectorD().minCoeff() <= 1e-10 * scale) return std::nullopt;
  const Eigen::VectorXd rhs = xty(support);
  const Eigen::VectorXd sol = ldlt.solve(rhs);
  beta(support) = sol;
  return beta;
}

inline double rss_from_gram(const Eigen::MatrixXd& gram, const Eigen::VectorXd& xty, double yty,
                            const Eigen::VectorXd& beta) {
  return yty - 2.0 * beta.dot(xty) + beta.dot(gram * beta);
}

inline std::vector<Eigen::Index> support_of(const Eigen::VectorXd& beta) {
  std::vector<Eigen::Index> s;
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    if (beta[k] != 0.0) s.push_back(k);
  }
  return s;
}

/// Best subset of each size 0..m for centred response y on centred columns z.
/// Exhaustive up to `exhaustive_limit` columns; beyond that, iterative hard
/// thresholding warm-started from the previous size and compared against a
/// greedy forward step.
inline std::vector<Eigen::VectorXd> best_subsets(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                                 int exhaustive_limit) {
  const Eigen::Index m = z.cols();
  const Eigen::MatrixXd gram = z.transpose() * z;
  const Eigen::VectorXd xty = z.transpose() * y;
  const double yty = y.squaredNorm();
  std::vector<Eigen::VectorXd> best(m + 1, Eigen::VectorXd::Zero(m));
  std::vector<double> best_rss(m + 1, std::numeric_limits<double>::infinity());
  best_rss[0] = yty;

  if (m <= exhaustive_limit) {
    const std::uint32_t total = 1u << m;
    std::vector<Eigen::Index> support;
    for (std::uint32_t mask = 1; mask < total; ++mask) {
      support.clear();
      for (Eigen::Index k = 0; k < m; ++k) {
        if (mask & (1u << k)) support.push_back(k);
      }
      auto beta = restricted_ols(gram, xty, support);
      if (!beta) continue;
      const double rss = rss_from_gram(gram, xty, yty, *beta);
      const auto size = static_cast<std::size_t>(std::popcount(mask));
      if (rss < best_rss[size]) {
        best_rss[size] = rss;
        best[size] = *beta;
      }
    }
  } else {
    const double n = static_cast<double>(z.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram / n, Eigen::EigenvaluesOnly);
    const double step = 1.0 / std::max(es.eigenvalues().maxCoeff(), 1e-12);
    for (Eigen::Index s = 1; s <= m; ++s) {
      // Greedy: extend the previous support by the best single column.
      auto prev = support_of(best[s - 1]);
      for (Eigen::Index k = 0; k < m; ++k) {
        if (std::find(prev.begin(), prev.end(), k) != prev.end()) continue;
        auto cand = prev;
        cand.push_back(k);
        std::sort(cand.begin(), cand.end());
        auto beta = restricted_ols(gram, xty, cand);
        if (!beta) continue;
        const double rss = rss_from_gram(gram, xty, yty, *beta);
        if (rss < best_rss[s]) {
          best_rss[s] = rss;
          best[s] = *beta;
        }
      }
      // IHT refinement from the greedy solution.
      Eigen::VectorXd beta = best[s];
      std::vector<Eigen::Index> last_support = support_of(beta);
      for (int it = 0; it < 200; ++it) {
        Eigen::VectorXd g = beta + step * (xty - gram * beta) / n;
        std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](Eigen::Index a, Eigen::Index b) { return std::abs(g[a]) > std::abs(g[b]); });
        std::vector<Eigen::Index> support(order.begin(), order.begin() + s);
        std::sort(support.begin(), support.end());
        auto refit = restricted_ols(gram, xty, support);
        if (!refit) break;
        beta = *refit;
        if (support == last_support) break;
        last_support = support;
      }
      const double rss = rss_from_gram(gram, xty, yty, beta);
      if (rss < best_rss[s] && static_cast<Eigen::Index>(support_of(beta).size()) <= s) {
        best_rss[s] = rss;
        best[s] = beta;
      }
      if (!std::isfinite(best_rss[s])) best[s] = best[s - 1];
    }
  }
  for (Eigen::Index s = 1; s <= m; ++s) {
    if (!std::isfinite(best_rss[s])) best[s] = best[s - 1];
  }
  return best;
}

}  // namespace detail

struct BetaStageResult {
  Eigen::VectorXd beta;            // raw scale, one entry per residual column
  Eigen::VectorXd beta_unit;       // unit-scale coefficients used for thresholding
  NodeSet support;                 // B = { k : |beta_unit_k| >= tau }
  int sigma_used = 0;
  std::vector<double> val_mse_by_sigma;
};

/// Sparsity-constrained linear regression of y on the residual block, with
/// the sparsity level picked on the validation split.
inline BetaStageResult fit_beta_stage(const Eigen::VectorXd& y, const Eigen::MatrixXd& xi_hat,
                                      const TrainConfig& config) {
  config.validate();
  const Eigen::Index m = xi_hat.cols();
  BetaStageResult out;
  out.beta = Eigen::VectorXd::Zero(m);
  out.beta_unit = Eigen::VectorXd::Zero(m);
  if (m == 0) return out;
  if (xi_hat.rows() != y.size()) throw Error(ErrorCode::ShapeMismatch, "residual block rows differ from y");
  if (!xi_hat.allFinite() || !y.allFinite()) throw Error(ErrorCode::NonFiniteInput, "non-finite regression input");

  const Split split = make_split(y.size(), config.val_fraction, config.rng_seed);
  const Eigen::MatrixXd xi_tr = detail::take_rows(xi_hat, split.train);
  const Eigen::VectorXd y_tr = detail::take_rows(y, split.train);
  auto [xi_mean, xi_sd] = Scaling::columns(xi_tr);
  const double y_mean = y_tr.mean();
  const double y_var = y_tr.size() > 1 ? (y_tr.array() - y_mean).square().sum() / double(y_tr.size() - 1) : 0.0;
  const double y_sd = y_var > 1e-24 ? std::sqrt(y_var) : 1.0;
  auto unit_x = [&](const Eigen::MatrixXd& raw) -> Eigen::MatrixXd {
    return ((raw.rowwise() - xi_mean.transpose()).array().rowwise() / xi_sd.transpose().array()).matrix();
  };
  const Eigen::MatrixXd z_tr = unit_x(xi_tr);
  const Eigen::VectorXd t_tr = (y_tr.array() - y_mean) / y_sd;
  const Eigen::MatrixXd z_val = unit_x(detail::take_rows(xi_hat, split.val));
  const Eigen::VectorXd t_val = (detail::take_rows(y, split.val).array() - y_mean) / y_sd;

  const auto candidates = detail::best_subsets(z_tr, t_tr, config.exhaustive_limit);
  std::vector<Eigen::VectorXd> sq_errors;
  for (const auto& beta : candidates) {
    sq_errors.push_back((t_val - z_val * beta).array().square().matrix());
    out.val_mse_by_sigma.push_back(sq_errors.back().mean() * y_sd * y_sd);
  }
  const auto chosen = detail::pick_sparsest_paired(sq_errors, config.selection_tolerance, config.sigma_se_multiplier);
  out.sigma_used = static_cast<int>(chosen);
  out.beta_unit = candidates[chosen];
  for (Eigen::Index k = 0; k < m; ++k) {
    out.beta[k] = out.beta_unit[k] * y_sd / xi_sd[k];
    if (std::abs(out.beta_unit[k]) >= config.tau) out.support.push_back(static_cast<Node>(k));
  }
  return out;
}

struct FitResult {
  NetworkParams params;  // in unit-scale coordinates, see `scaling`
  Scaling scaling;
  NodeSet selected_parents;       // design columns with an unmasked W^1 column of norm >= tau
  NodeSet selected_beta_support;  // subset of B with |beta_unit| >= tau
  // Raw-scale deconfounding coefficients, reported under the convention that
  // the network part carries no component linear in the selected residual
  // columns (least squares with intercept on the training rows). Predictions
  // use params.beta; the two differ only by that linear component.
  Eigen::VectorXd beta;
  double train_mse = 0.0;
  double val_mse = 0.0;
  int kappa_used = 0;
  int sigma_used = 0;
  int best_epoch = 0;
  std::vector<double> lambda_trace;  // lambda in force at each checkpoint
  std::vector<double> val_mse_by_kappa;
  std::vector<double> ranking_norms;  // ||W^1_k|| of the penalised fit, before masking
  std::vector<Eigen::Index> val_rows;

  /// Raw-scale prediction for raw inputs aligned with the training design.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi) const {
    const Eigen::VectorXd unit = defuse::predict(params, scaling.x(x), scaling.xi(xi));
    return (unit.array() * scaling.y_sd + scaling.y_mean).matrix();
  }
};

namespace detail {

inline double unit_mse(const NetworkParams& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi,
                       const Eigen::VectorXd& y) {
  return mse_loss_and_gradient(net, x, xi, y, nullptr);
}

struct TrainOutcome {
  NetworkParams best;
  double best_val = 0.0;
  int best_epoch = 0;
  double final_lambda = 0.0;
  std::vector<double> lambda_trace;
  bool finite = true;
};

/// Checkpoint epochs, lambda escalation ladder and stopping patience.
struct Schedule {
  std::vector<int> checkpoints;
  std::vector<double> lambdas;
  int patience = 1;
};

/// Adam on MSE + lambda * truncated group penalty. At each checkpoint the
/// validation MSE is compared with the best so far: an improvement saves a
/// checkpoint, otherwise lambda moves one rung up the ladder, and once the
/// ladder is exhausted `patience` stale checkpoints end training.
inline TrainOutcome train_network(NetworkParams net, const Eigen::MatrixXd& x_tr, const Eigen::MatrixXd& xi_tr,
                                  const Eigen::VectorXd& y_tr, const Eigen::MatrixXd& x_val,
                                  const Eigen::MatrixXd& xi_val, const Eigen::VectorXd& y_val,
                                  const TrainConfig& config, const Schedule& schedule, double learning_rate,
                                  Rng& rng) {
  TrainOutcome out;
  out.best = net;
  out.best_val = unit_mse(net, x_val, xi_val, y_val);
  const Eigen::Index n_tr = x_tr.rows();
  const Eigen::Index batch = config.batch_size > 0 ? config.batch_size : (n_tr <= 1024 ? n_tr : 256);
  const bool full_batch = batch >= n_tr;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_tr));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  Adam adam(learning_rate);
  Eigen::VectorXd theta = pack(net);
  NetworkParams grad;
  Workspace ws;
  Eigen::VectorXd grad_flat;
  std::size_t lambda_idx = 0;
  std::size_t next_checkpoint = 0;
  int stale = 0;
  const int max_epoch = schedule.checkpoints.back();

  auto step_on = [&](const Eigen::MatrixXd& xb, const Eigen::MatrixXd& xib, const Eigen::VectorXd& yb) {
    const double loss = mse_loss_and_gradient(net, xb, xib, yb, &grad, ws);
    if (!std::isfinite(loss)) return false;
    add_regularizer_subgradient(net, schedule.lambdas[lambda_idx], config.tau, grad);
    pack_into(grad, grad_flat);
    adam.step(theta, grad_flat);
    if (config.norm_cap) project_norm(theta, *config.norm_cap);
    unpack(theta, net);
    return theta.allFinite();
  };

  for (int epoch = 1; epoch <= max_epoch; ++epoch) {
    if (full_batch) {
      if (!step_on(x_tr, xi_tr, y_tr)) {
        out.finite = false;
        return out;
      }
    } else {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
      for (Eigen::Index start = 0; start < n_tr; start += batch) {
        const Eigen::Index len = std::min(batch, n_tr - start);
        std::vector<Eigen::Index> rows(order.begin() + start, order.begin() + start + len);
        if (!step_on(x_tr(rows, Eigen::all), xi_tr(rows, Eigen::all), y_tr(rows))) {
          out.finite = false;
          return out;
        }
      }
    }
    if (epoch != schedule.checkpoints[next_checkpoint]) continue;
    ++next_checkpoint;
    out.lambda_trace.push_back(schedule.lambdas[lambda_idx]);
    const double val = mse_loss_and_gradient(net, x_val, xi_val, y_val, nullptr, ws);
    if (!std::isfinite(val)) {
      out.finite = false;
      return out;
    }
    if (val < out.best_val) {
      out.best_val = val;
      out.best = net;
      out.best_epoch = epoch;
      out.final_lambda = schedule.lambdas[lambda_idx];
      stale = 0;
    } else if (lambda_idx + 1 < schedule.lambdas.size()) {
      ++lambda_idx;
    } else if (++stale >= schedule.patience) {
      break;
    }
    if (next_checkpoint >= schedule.checkpoints.size()) break;
  }
  if (out.best_epoch == 0) out.final_lambda = schedule.lambdas.front();
  return out;
}

/// Copy of `net` whose first layer only sees the listed input columns.
inline NetworkParams restrict_inputs(const NetworkParams& net, const std::vector<Eigen::Index>& cols) {
  NetworkParams sub = net;
  sub.weights[0] = net.weights[0](Eigen::all, cols);
  sub.input_active.assign(cols.size(), 1);
  return sub;
}

/// Inverse of restrict_inputs: columns outside `cols` are zero and pinned.
inline NetworkParams expand_inputs(const NetworkParams& sub, const std::vector<Eigen::Index>& cols, Eigen::Index m) {
  NetworkParams net = sub;
  net.weights[0] = Eigen::MatrixXd::Zero(sub.weights[0].rows(), m);
  net.input_active.assign(static_cast<std::size_t>(m), 0);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    net.weights[0].col(cols[i]) = sub.weights[0].col(static_cast<Eigen::Index>(i));
    net.input_active[cols[i]] = 1;
  }
  return net;
}

/// Least-squares beta on `support` and output bias given the network part:
/// regress y - f(x) on [1, xi_B] over the training rows. Leaves `net`
/// unchanged if the design is rank deficient.
inline void profile_beta(NetworkParams& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi,
                         const Eigen::VectorXd& y, const std::vector<Eigen::Index>& support) {
  if (support.empty()) return;
  NetworkParams net_only = net;
  net_only.beta.setZero();
  const Eigen::VectorXd target = y - predict(net_only, x, xi);
  Eigen::MatrixXd design(y.size(), 1 + static_cast<Eigen::Index>(support.size()));
  design.col(0).setOnes();
  design.rightCols(support.size()) = xi(Eigen::all, support);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < design.cols()) return;
  const Eigen::VectorXd coef = qr.solve(target);
  net.biases.back()[0] += coef[0];
  for (std::size_t i = 0; i < support.size(); ++i) net.beta[support[i]] = coef[1 + static_cast<Eigen::Index>(i)];
}

}  // namespace detail

/// Joint fit of the masked network and the deconfounding coefficients on B,
/// followed by top-kappa input selection on the validation split.
inline FitResult fit_network_stage(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi_hat,
                                   const NodeSet& beta_support, const TrainConfig& config) {
  config.validate();
  const Eigen::Index n = y.size();
  const Eigen::Index m = x.cols();
  if (x.rows() != n || xi_hat.rows() != n || xi_hat.cols() != m) {
    throw Error(ErrorCode::ShapeMismatch, "design blocks must have n rows and matching column counts");
  }
  if (!x.allFinite() || !xi_hat.allFinite() || !y.allFinite()) {
    throw Error(ErrorCode::NonFiniteInput, "non-finite regression input");
  }
  for (Node k : beta_support) {
    if (k < 0 || k >= m) throw Error(ErrorCode::NodeOutOfRange, "beta support index out of range");
  }

  FitResult fit;
  const Split split = make_split(n, config.val_fraction, config.rng_seed);
  fit.val_rows = split.val;
  const Eigen::MatrixXd x_tr = detail::take_rows(x, split.train);
  const Eigen::MatrixXd xi_tr = detail::take_rows(xi_hat, split.train);
  const Eigen::VectorXd y_tr = detail::take_rows(y, split.train);
  std::tie(fit.scaling.x_mean, fit.scaling.x_sd) = Scaling::columns(x_tr);
  std::tie(fit.scaling.xi_mean, fit.scaling.xi_sd) = Scaling::columns(xi_tr);
  Rng rng(derive_seed(config.rng_seed, {0x7E7}));

  if (m == 0) {
    // Intercept-only model: predicts the sample mean.
    fit.scaling.y_mean = y_tr.mean();
    fit.scaling.y_sd = 1.0;
    fit.params = init_network(0, 0, config.hidden_width, config.hidden_layers, rng);
    for (auto& w : fit.params.weights) w.setZero();
    fit.beta = Eigen::VectorXd::Zero(0);
  } else {
    fit.scaling.y_mean = y_tr.mean();
    const double y_var = y_tr.size() > 1 ? (y_tr.array() - fit.scaling.y_mean).square().sum() / double(y_tr.size() - 1) : 0.0;
    fit.scaling.y_sd = y_var > 1e-24 ? std::sqrt(y_var) : 1.0;

    const Eigen::MatrixXd ux_tr = fit.scaling.x(x_tr);
    const Eigen::MatrixXd uxi_tr = fit.scaling.xi(xi_tr);
    const Eigen::VectorXd uy_tr = fit.scaling.y(y_tr);
    const Eigen::MatrixXd ux_val = fit.scaling.x(detail::take_rows(x, split.val));
    const Eigen::MatrixXd uxi_val = fit.scaling.xi(detail::take_rows(xi_hat, split.val));
    const Eigen::VectorXd uy_val = fit.scaling.y(detail::take_rows(y, split.val));

    NetworkParams net = init_network(m, m, config.hidden_width, config.hidden_layers, rng);
    std::fill(net.beta_active.begin(), net.beta_active.end(), 0);
    if (!beta_support.empty()) {
      // Warm start beta_B at its least-squares value.
      std::vector<Eigen::Index> support(beta_support.begin(), beta_support.end());
      const Eigen::MatrixXd z = uxi_tr(Eigen::all, support);
      const Eigen::VectorXd b = z.colPivHouseholderQr().solve(uy_tr);
      for (std::size_t i = 0; i < support.size(); ++i) {
        net.beta[support[i]] = b[static_cast<Eigen::Index>(i)];
        net.beta_active[support[i]] = 1;
      }
    }

    const detail::Schedule main_schedule{config.epoch_grid, config.lambda_grid, config.patience};
    double lr = config.learning_rate;
    auto run = [&](const NetworkParams& start, const Eigen::MatrixXd& xt, const Eigen::MatrixXd& xv,
                   const detail::Schedule& schedule, std::uint64_t tag) {
      Rng train_rng(derive_seed(config.rng_seed, {0xBA7C4, tag}));
      return detail::train_network(start, xt, uxi_tr, uy_tr, xv, uxi_val, uy_val, config, schedule, lr, train_rng);
    };
    auto trained = run(net, ux_tr, ux_val, main_schedule, 0);
    if (!trained.finite) {
      lr = config.learning_rate / 10.0;
      trained = run(net, ux_tr, ux_val, main_schedule, 0);
    }
    if (!trained.finite) throw Error(ErrorCode::NonFiniteLoss, "training diverged twice");
    fit.best_epoch = trained.best_epoch;
    fit.lambda_trace = std::move(trained.lambda_trace);

    // Rank inputs by first-layer column norm; only columns at or above tau
    // are candidates. Each top-kappa masked network is re-optimised on its
    // active columns before it is scored on the validation split.
    const NetworkParams& base = trained.best;
    for (Eigen::Index k = 0; k < m; ++k) fit.ranking_norms.push_back(base.first_layer_column_norm(k));
    std::vector<Eigen::Index> ranked;
    for (Eigen::Index k = 0; k < m; ++k) {
      if (base.first_layer_column_norm(k) >= config.tau) ranked.push_back(k);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [&](Eigen::Index a, Eigen::Index b) {
      return base.first_layer_column_norm(a) > base.first_layer_column_norm(b);
    });
    detail::Schedule refit_schedule;
    for (int e = config.refit_checkpoint; e <= config.refit_epochs; e += config.refit_checkpoint) {
      refit_schedule.checkpoints.push_back(e);
    }
    refit_schedule.lambdas = {trained.final_lambda};
    refit_schedule.patience = config.patience;

    const std::vector<Eigen::Index> b_cols(beta_support.begin(), beta_support.end());
    std::vector<NetworkParams> candidates;
    std::vector<Eigen::VectorXd> sq_errors;
    double best_so_far = std::numeric_limits<double>::infinity();
    int since_best = 0;
    for (std::size_t kappa = 0; kappa <= ranked.size(); ++kappa) {
      std::vector<Eigen::Index> active(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(kappa));
      std::sort(active.begin(), active.end());
      NetworkParams sub = detail::restrict_inputs(base, active);
      const Eigen::MatrixXd sx_tr = ux_tr(Eigen::all, active);
      const Eigen::MatrixXd sx_val = ux_val(Eigen::all, active);
      // Masked columns may have carried linear signal that beta can take over.
      detail::profile_beta(sub, sx_tr, uxi_tr, uy_tr, b_cols);
      auto refit = run(sub, sx_tr, sx_val, refit_schedule, 1 + kappa);
      NetworkParams chosen = refit.finite ? refit.best : sub;
      const Eigen::VectorXd err = (uy_val - predict(chosen, sx_val, uxi_val)).array().square().matrix();
      const double val = err.mean();
      sq_errors.push_back(err);
      candidates.push_back(detail::expand_inputs(chosen, active, m));
      fit.val_mse_by_kappa.push_back(val * fit.scaling.y_sd * fit.scaling.y_sd);
      if (val < best_so_far) {
        best_so_far = val;
        since_best = 0;
      } else if (++since_best >= config.kappa_patience) {
        break;
      }
    }
    const auto kappa = detail::pick_sparsest_paired(sq_errors, config.selection_tolerance, config.kappa_se_multiplier);
    fit.params = candidates[kappa];
    fit.kappa_used = static_cast<int>(kappa);
    for (Eigen::Index k = 0; k < m; ++k) {
      if (!fit.params.input_active[k]) continue;
      if (fit.params.first_layer_column_norm(k) >= config.tau) {
        fit.selected_parents.push_back(static_cast<Node>(k));
      } else {
        fit.params.weights[0].col(k).setZero();
        fit.params.input_active[k] = 0;
      }
    }
    detail::profile_beta(fit.params, ux_tr, uxi_tr, uy_tr, b_cols);

    Eigen::VectorXd beta_unit = fit.params.beta;
    if (!beta_support.empty()) {
      NetworkParams net_only = fit.params;
      net_only.beta.setZero();
      const Eigen::VectorXd f_tr = predict(net_only, ux_tr, uxi_tr);
      std::vector<Eigen::Index> support(beta_support.begin(), beta_support.end());
      Eigen::MatrixXd design(f_tr.size(), 1 + static_cast<Eigen::Index>(support.size()));
      design.col(0).setOnes();
      design.rightCols(support.size()) = uxi_tr(Eigen::all, support);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
      if (qr.rank() == design.cols()) {
        const Eigen::VectorXd gamma = qr.solve(f_tr);
        for (std::size_t i = 0; i < support.size(); ++i) beta_unit[support[i]] += gamma[1 + static_cast<Eigen::Index>(i)];
      }
    }
    fit.beta = Eigen::VectorXd::Zero(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      fit.beta[k] = beta_unit[k] * fit.scaling.y_sd / fit.scaling.xi_sd[k];
      if (fit.params.beta_active[k] && std::abs(beta_unit[k]) >= config.tau) {
        fit.selected_beta_support.push_back(static_cast<Node>(k));
      }
    }
    fit.sigma_used = static_cast<int>(beta_support.size());
  }

  auto raw_mse = [&](const std::vector<Eigen::Index>& rows) {
    const Eigen::VectorXd pred = fit.predict(detail::take_rows(x, rows), detail::take_rows(xi_hat, rows));
    return (detail::take_rows(y, rows) - pred).squaredNorm() / double(rows.size());
  };
  fit.train_mse = raw_mse(split.train);
  fit.val_mse = raw_mse(split.val);
  return fit;
}

/// Both stages back to back: B from the linear stage, then the network.
inline FitResult fit_deconfounded(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi_hat,
                                  const TrainConfig& config) {
  const auto beta_stage = fit_beta_stage(y, xi_hat, config);
  auto fit = fit_network_stage(y, x, xi_hat, beta_stage.support, config);
  fit.sigma_used = beta_stage.sigma_used;
  return fit;
}

inline nlohmann::json fit_result_to_json(const FitResult& fit, bool include_weights = false) {
  nlohmann::json j = {{"selected_parents", fit.selected_parents},
                      {"selected_beta_support", fit.selected_beta_support},
                      {"beta", std::vector<double>(fit.beta.data(), fit.beta.data() + fit.beta.size())},
                      {"train_mse", fit.train_mse},
                      {"val_mse", fit.val_mse},
                      {"kappa", fit.kappa_used},
                      {"sigma", fit.sigma_used},
                      {"best_epoch", fit.best_epoch},
                      {"lambda_trace", fit.lambda_trace},
                      {"val_mse_by_kappa", fit.val_mse_by_kappa}};
  if (include_weights) {
    nlohmann::json layers = nlohmann::json::array();
    for (int l = 0; l < fit.params.layers(); ++l) {
      const auto& w = fit.params.weights[l];
      const auto& b = fit.params.biases[l];
      layers.push_back({{"rows", w.rows()},
                        {"cols", w.cols()},
                        {"weights", std::vector<double>(w.data(), w.data() + w.size())},
                        {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
    }
    j["layers"] = layers;
  }
  return j;
}

}  // namespace defuse
