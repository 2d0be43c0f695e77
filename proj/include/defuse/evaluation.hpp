#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "defuse/dataset.hpp"
#include "defuse/error.hpp"
#include "defuse/graph.hpp"
#include "defuse/io.hpp"

namespace defuse {

struct GraphMetrics {
  long tp = 0, re = 0, fp = 0, tn = 0, fn = 0, pe = 0;
  double fdr = 0.0, fpr = 0.0, tpr = 1.0;
  long shd = 0;
};

/// Directed-edge recovery counts and rates.
///   TP: estimated edge present in truth with the same direction
///   RE: estimated edge whose reversal is a true edge
///   FP: estimated edge outside the true skeleton
///   FN: true skeleton edge with no estimated edge in either direction
///   TN: unordered pair adjacent in neither skeleton
/// Empty denominators give FDR = FPR = 0. TPR is 1 for an empty true graph
/// and 0 when every true edge was recovered only in reverse.
inline GraphMetrics graph_metrics(const Dag& truth, const Dag& estimate) {
  if (truth.p() != estimate.p()) {
    throw Error(ErrorCode::SizeMismatch, "graphs have " + std::to_string(truth.p()) + " and " +
                                             std::to_string(estimate.p()) + " nodes");
  }
  GraphMetrics m;
  for (auto [k, j] : estimate.edges()) {
    if (truth.has_edge(k, j)) {
      ++m.tp;
    } else if (truth.has_edge(j, k)) {
      ++m.re;
    } else {
      ++m.fp;
    }
  }
  m.pe = static_cast<long>(estimate.edge_count());
  for (auto [k, j] : truth.edges()) {
    if (!estimate.has_edge(k, j) && !estimate.has_edge(j, k)) ++m.fn;
  }
  const int p = truth.p();
  for (Node a = 0; a < p; ++a) {
    for (Node b = a + 1; b < p; ++b) {
      const bool in_truth = truth.has_edge(a, b) || truth.has_edge(b, a);
      const bool in_est = estimate.has_edge(a, b) || estimate.has_edge(b, a);
      if (!in_truth && !in_est) ++m.tn;
    }
  }
  m.fdr = m.pe > 0 ? double(m.re + m.fp) / double(m.pe) : 0.0;
  m.fpr = (m.fp + m.tn) > 0 ? double(m.re + m.fp) / double(m.fp + m.tn) : 0.0;
  if (m.tp + m.fn > 0) {
    m.tpr = double(m.tp) / double(m.tp + m.fn);
  } else {
    m.tpr = truth.edge_count() == 0 ? 1.0 : 0.0;
  }
  m.shd = m.fp + m.fn + m.re;
  return m;
}

inline nlohmann::json to_json(const GraphMetrics& m) {
  return {{"tp", m.tp}, {"re", m.re}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}, {"pe", m.pe},
          {"fdr", m.fdr}, {"fpr", m.fpr}, {"tpr", m.tpr}, {"shd", m.shd}};
}

inline std::string metrics_csv_header() { return "fpr,fdr,tpr,shd,tp,re,fp,tn,fn,pe"; }

inline std::string metrics_csv_row(const GraphMetrics& m) {
  return io::format_double(m.fpr) + "," + io::format_double(m.fdr) + "," + io::format_double(m.tpr) + "," +
         std::to_string(m.shd) + "," + std::to_string(m.tp) + "," + std::to_string(m.re) + "," +
         std::to_string(m.fp) + "," + std::to_string(m.tn) + "," + std::to_string(m.fn) + "," +
         std::to_string(m.pe);
}

enum class AicModel { Linear, Quadratic };

struct AicReport {
  AicModel model = AicModel::Linear;
  double aic = 0.0;
  double rss = 0.0;
  double sigma2_fnn = 0.0;
  int dim = 0;  // coefficients including the intercept
};

/// AIC = rss / (n sigma2_fnn) + 2 dim / n for OLS of Y_j on its parents
/// (linear) and on parents plus their squares (quadratic).
inline std::pair<AicReport, AicReport> aic_compare(const Dataset& data, Node j, const NodeSet& parents,
                                                   double sigma2_fnn) {
  if (parents.empty()) throw Error(ErrorCode::InvalidConfig, "AIC comparison needs at least one parent");
  if (!(sigma2_fnn > 0.0)) throw Error(ErrorCode::InvalidConfig, "sigma2_fnn must be positive");
  if (j < 0 || j >= data.p()) throw Error(ErrorCode::NodeOutOfRange, "node out of range");
  const Eigen::Index n = data.n();
  const auto q = static_cast<Eigen::Index>(parents.size());
  const Eigen::VectorXd y = data.values.col(j);

  auto fit = [&](AicModel model) {
    const Eigen::Index cols = 1 + q * (model == AicModel::Quadratic ? 2 : 1);
    Eigen::MatrixXd design(n, cols);
    design.col(0).setOnes();
    for (Eigen::Index c = 0; c < q; ++c) {
      const Node k = parents[c];
      if (k < 0 || k >= data.p()) throw Error(ErrorCode::NodeOutOfRange, "parent out of range");
      design.col(1 + c) = data.values.col(k);
      if (model == AicModel::Quadratic) design.col(1 + q + c) = data.values.col(k).array().square().matrix();
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < cols) throw Error(ErrorCode::SingularDesign, "design matrix is rank deficient");
    const Eigen::VectorXd coef = qr.solve(y);
    AicReport r;
    r.model = model;
    r.rss = (y - design * coef).squaredNorm();
    r.sigma2_fnn = sigma2_fnn;
    r.dim = static_cast<int>(cols);
    r.aic = r.rss / (double(n) * sigma2_fnn) + 2.0 * r.dim / double(n);
    return r;
  };
  return {fit(AicModel::Linear), fit(AicModel::Quadratic)};
}

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;
};

struct ReplicationSummary {
  MetricSummary fpr, fdr, tpr, shd;
  std::size_t count = 0;
  bool sd_undefined = false;  // single replication: sd reported as 0
};

inline ReplicationSummary replication_summary(const std::vector<GraphMetrics>& metrics) {
  if (metrics.empty()) throw Error(ErrorCode::EmptyList, "no replications to summarise");
  auto summarise = [&](auto get) {
    MetricSummary s;
    const double n = double(metrics.size());
    for (const auto& m : metrics) s.mean += get(m);
    s.mean /= n;
    if (metrics.size() > 1) {
      double ss = 0.0;
      for (const auto& m : metrics) ss += (get(m) - s.mean) * (get(m) - s.mean);
      s.sd = std::sqrt(ss / (n - 1.0));
    }
    return s;
  };
  ReplicationSummary r;
  r.count = metrics.size();
  r.sd_undefined = metrics.size() == 1;
  r.fpr = summarise([](const GraphMetrics& m) { return m.fpr; });
  r.fdr = summarise([](const GraphMetrics& m) { return m.fdr; });
  r.tpr = summarise([](const GraphMetrics& m) { return m.tpr; });
  r.shd = summarise([](const GraphMetrics& m) { return double(m.shd); });
  return r;
}

inline nlohmann::json to_json(const ReplicationSummary& s) {
  auto pair = [](const MetricSummary& m) { return nlohmann::json{{"mean", m.mean}, {"sd", m.sd}}; };
  return {{"replications", s.count}, {"sd_undefined", s.sd_undefined}, {"fpr", pair(s.fpr)},
          {"fdr", pair(s.fdr)}, {"tpr", pair(s.tpr)}, {"shd", pair(s.shd)}};
}

}  // namespace defuse
