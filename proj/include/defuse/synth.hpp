#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <json.hpp>

#include "defuse/dataset.hpp"
#include "defuse/error.hpp"
#include "defuse/graph.hpp"
#include "defuse/rng.hpp"

namespace defuse {

// Stream tags for derive_seed. Each purpose owns a disjoint stream.
namespace stream {
inline constexpr std::uint64_t kDagEdge = 1;
inline constexpr std::uint64_t kEdgeTerm = 2;
inline constexpr std::uint64_t kInteraction = 3;
inline constexpr std::uint64_t kNoise = 4;
inline constexpr std::uint64_t kExample1 = 5;
}  // namespace stream

/// Upper-triangular Bernoulli(s) adjacency; node j < k may point to k only.
inline Dag random_dag(int p, double s, std::uint64_t seed) {
  if (!(s >= 0.0 && s <= 1.0)) throw Error(ErrorCode::InvalidProbability, "edge probability must be in [0, 1]");
  if (p < 1) throw Error(ErrorCode::InvalidSize, "p must be positive");
  Rng rng(derive_seed(seed, {stream::kDagEdge}));
  std::vector<Edge> edges;
  for (Node j = 0; j < p; ++j) {
    for (Node k = j + 1; k < p; ++k) {
      if (rng.bernoulli(s)) edges.emplace_back(j, k);
    }
  }
  return Dag::from_edges(p, std::move(edges));
}

/// Node 0 points to every other node.
inline Dag hub_dag(int p) {
  if (p < 2) throw Error(ErrorCode::InvalidSize, "hub DAG needs p >= 2");
  std::vector<Edge> edges;
  for (Node k = 1; k < p; ++k) edges.emplace_back(0, k);
  return Dag::from_edges(p, std::move(edges));
}

enum class Link { Square, Cosine };

inline double apply_link(Link f, double x) { return f == Link::Square ? x * x : std::cos(x); }
inline const char* to_string(Link f) { return f == Link::Square ? "square" : "cosine"; }

struct EdgeTerm {
  Node parent = 0;
  Link link = Link::Square;
  double coef = 0.0;   // alpha_{j,k}
  double shift = 0.0;  // omega_{j,k}
};

struct Interaction {
  double alpha0 = 0.0;  // 0 when |pa(j)| <= 1, else 1
  Node k1 = -1;
  Node k2 = -1;
};

/// Y_j = alpha0 Y_k1 Y_k2 + sum_k coef f(Y_k + shift) + eps_j, eps ~ N(0, sigma).
struct SemSpec {
  Dag dag;
  std::vector<std::vector<EdgeTerm>> terms;  // terms[j] ordered by parent
  std::vector<Interaction> interactions;
  Eigen::MatrixXd sigma;
};

/// Sigma_jj = 2, Sigma_{2k-1,2k} = 1 for consecutive (1-based) pairs.
inline Eigen::MatrixXd paired_error_covariance(int p) {
  Eigen::MatrixXd sigma = 2.0 * Eigen::MatrixXd::Identity(p, p);
  for (int k = 0; k + 1 < p; k += 2) {
    sigma(k, k + 1) = 1.0;
    sigma(k + 1, k) = 1.0;
  }
  return sigma;
}

inline SemSpec draw_sem_spec(const Dag& dag, std::uint64_t seed) {
  SemSpec spec;
  spec.dag = dag;
  spec.terms.resize(dag.p());
  spec.interactions.resize(dag.p());
  for (Node j = 0; j < dag.p(); ++j) {
    for (Node k : dag.parents(j)) {
      Rng rng(derive_seed(seed, {stream::kEdgeTerm, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(k)}));
      EdgeTerm t;
      t.parent = k;
      t.link = rng.bernoulli(0.5) ? Link::Square : Link::Cosine;
      const double magnitude = rng.uniform(2.0, 3.0);
      t.coef = rng.bernoulli(0.5) ? magnitude : -magnitude;
      t.shift = rng.uniform(-1.0, 1.0);
      spec.terms[j].push_back(t);
    }
    const auto& pa = dag.parents(j);
    if (pa.size() > 1) {
      Rng rng(derive_seed(seed, {stream::kInteraction, static_cast<std::uint64_t>(j)}));
      const auto a = rng.below(pa.size());
      auto b = rng.below(pa.size() - 1);
      if (b >= a) ++b;
      spec.interactions[j] = Interaction{1.0, pa[std::min(a, b)], pa[std::max(a, b)]};
    }
  }
  spec.sigma = paired_error_covariance(dag.p());
  return spec;
}

/// Evaluates the structural equations row by row for a given noise matrix.
/// Passing zeros gives the noise-free hook used by structural tests.
inline Eigen::MatrixXd evaluate_sem(const SemSpec& spec, const Eigen::MatrixXd& eps) {
  const int p = spec.dag.p();
  if (eps.cols() != p) throw Error(ErrorCode::ShapeMismatch, "noise matrix has wrong column count");
  const auto order = topological_depths(spec.dag);
  std::vector<Node> nodes(p);
  for (Node j = 0; j < p; ++j) nodes[j] = j;
  std::stable_sort(nodes.begin(), nodes.end(),
                   [&](Node a, Node b) { return order.depths[a] < order.depths[b]; });
  Eigen::MatrixXd y(eps.rows(), p);
  for (Node j : nodes) {
    Eigen::VectorXd col = eps.col(j);
    for (const auto& t : spec.terms[j]) {
      col += t.coef * (y.col(t.parent).array() + t.shift).unaryExpr([&](double v) { return apply_link(t.link, v); }).matrix();
    }
    const auto& inter = spec.interactions[j];
    if (inter.alpha0 != 0.0) col += inter.alpha0 * (y.col(inter.k1).array() * y.col(inter.k2).array()).matrix();
    y.col(j) = col;
  }
  return y;
}

/// n x p draws from N(0, sigma) via the lower Cholesky factor.
inline Eigen::MatrixXd sample_gaussian(const Eigen::MatrixXd& sigma, Eigen::Index n, Rng& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::CovarianceNotPD, "Cholesky factorization failed");
  const Eigen::MatrixXd lower = llt.matrixL();
  Eigen::MatrixXd z(n, sigma.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) z(i, c) = rng.normal();
  }
  return z * lower.transpose();
}

inline Dataset sample(const SemSpec& spec, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::SampleTooSmall, "n must be positive");
  Rng rng(derive_seed(seed, {stream::kNoise}));
  const Eigen::MatrixXd eps = sample_gaussian(spec.sigma, n, rng);
  auto y = evaluate_sem(spec, eps);
  if (!y.allFinite()) throw Error(ErrorCode::NonFiniteInput, "structural equations overflowed");
  return make_dataset(std::move(y), spec.dag.names());
}

struct Example1Draw {
  Dataset data;
  Eigen::MatrixXd latent;  // columns e1, e2, e3, eta
};

/// Y1 = e1 + eta, Y2 = e2 + eta, Y3 = cos(Y1) + e3 + eta; all four N(0, 1).
inline Example1Draw sample_example1_with_latent(Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorCode::SampleTooSmall, "n must be positive");
  Rng rng(derive_seed(seed, {stream::kExample1}));
  Eigen::MatrixXd latent(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < 4; ++c) latent(i, c) = rng.normal();
  }
  Eigen::MatrixXd y(n, 3);
  y.col(0) = latent.col(0) + latent.col(3);
  y.col(1) = latent.col(1) + latent.col(3);
  y.col(2) = y.col(0).array().cos().matrix() + latent.col(2) + latent.col(3);
  return {make_dataset(std::move(y)), std::move(latent)};
}

inline Dataset sample_example1(Eigen::Index n, std::uint64_t seed) {
  return sample_example1_with_latent(n, seed).data;
}

inline Dag example1_dag() { return Dag::from_edges(3, {{0, 2}}); }

inline nlohmann::json sem_spec_to_json(const SemSpec& spec) {
  nlohmann::json terms = nlohmann::json::array();
  nlohmann::json inter = nlohmann::json::array();
  for (Node j = 0; j < spec.dag.p(); ++j) {
    for (const auto& t : spec.terms[j]) {
      terms.push_back({{"parent", t.parent + 1}, {"child", j + 1}, {"f", to_string(t.link)},
                       {"alpha", t.coef}, {"omega", t.shift}});
    }
    const auto& it = spec.interactions[j];
    if (it.alpha0 != 0.0) inter.push_back({{"node", j + 1}, {"k1", it.k1 + 1}, {"k2", it.k2 + 1}, {"alpha0", it.alpha0}});
  }
  nlohmann::json sigma = nlohmann::json::array();
  for (Eigen::Index r = 0; r < spec.sigma.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < spec.sigma.cols(); ++c) row.push_back(spec.sigma(r, c));
    sigma.push_back(row);
  }
  return {{"graph", dag_to_json(spec.dag)}, {"terms", terms}, {"interactions", inter}, {"sigma", sigma}};
}

inline SemSpec sem_spec_from_json(const nlohmann::json& j) {
  try {
    SemSpec spec;
    spec.dag = dag_from_json(j.at("graph"));
    const int p = spec.dag.p();
    spec.terms.resize(p);
    spec.interactions.resize(p);
    for (const auto& t : j.at("terms")) {
      EdgeTerm e;
      e.parent = t.at("parent").get<int>() - 1;
      e.link = t.at("f").get<std::string>() == "square" ? Link::Square : Link::Cosine;
      e.coef = t.at("alpha").get<double>();
      e.shift = t.at("omega").get<double>();
      spec.terms.at(t.at("child").get<int>() - 1).push_back(e);
    }
    for (const auto& it : j.at("interactions")) {
      spec.interactions.at(it.at("node").get<int>() - 1) =
          Interaction{it.at("alpha0").get<double>(), it.at("k1").get<int>() - 1, it.at("k2").get<int>() - 1};
    }
    spec.sigma.resize(p, p);
    for (int r = 0; r < p; ++r) {
      for (int c = 0; c < p; ++c) spec.sigma(r, c) = j.at("sigma").at(r).at(c).get<double>();
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("sem spec json: ") + e.what());
  }
}

}  // namespace defuse
