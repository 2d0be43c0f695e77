#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "defuse/error.hpp"
#include "defuse/rng.hpp"

namespace defuse {

/// ReLU feed-forward network on the raw block plus a linear term on the
/// residual block: g(x, xi) = f^L o ... o f^1 (x) + <xi, beta>.
struct NetworkParams {
  std::vector<Eigen::MatrixXd> weights;  // W^l has shape h_l x h_{l-1}
  std::vector<Eigen::VectorXd> biases;
  Eigen::VectorXd beta;
  std::vector<char> input_active;  // 0 -> W^1 column pinned at zero
  std::vector<char> beta_active;   // 0 -> beta entry pinned at zero

  int layers() const { return static_cast<int>(weights.size()); }
  Eigen::Index input_dim() const { return weights.empty() ? 0 : weights.front().cols(); }
  Eigen::Index beta_dim() const { return beta.size(); }

  double first_layer_column_norm(Eigen::Index k) const { return weights.front().col(k).norm(); }

  Eigen::Index parameter_count() const {
    Eigen::Index count = beta.size();
    for (int l = 0; l < layers(); ++l) count += weights[l].size() + biases[l].size();
    return count;
  }
};

/// He-style symmetric uniform initialisation, U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
inline NetworkParams init_network(Eigen::Index input_dim, Eigen::Index beta_dim, int hidden_width, int hidden_layers,
                                  Rng& rng) {
  NetworkParams net;
  Eigen::Index fan_in = input_dim;
  for (int l = 0; l <= hidden_layers; ++l) {
    const Eigen::Index out = (l == hidden_layers) ? 1 : hidden_width;
    Eigen::MatrixXd w(out, fan_in);
    const double bound = fan_in > 0 ? std::sqrt(6.0 / static_cast<double>(fan_in)) : 0.0;
    for (Eigen::Index c = 0; c < w.cols(); ++c) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-bound, bound);
    }
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::VectorXd::Zero(out));
    fan_in = out;
  }
  net.beta = Eigen::VectorXd::Zero(beta_dim);
  net.input_active.assign(static_cast<std::size_t>(input_dim), 1);
  net.beta_active.assign(static_cast<std::size_t>(beta_dim), 1);
  return net;
}

inline void check_shapes(const NetworkParams& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi) {
  if (x.cols() != net.input_dim()) throw Error(ErrorCode::ShapeMismatch, "input block has wrong column count");
  if (xi.cols() != net.beta_dim()) throw Error(ErrorCode::ShapeMismatch, "residual block has wrong column count");
  if (xi.cols() > 0 && xi.rows() != x.rows()) throw Error(ErrorCode::ShapeMismatch, "row counts differ");
}

/// Scratch buffers reused across loss evaluations so that a training loop
/// does not allocate per step.
struct Workspace {
  std::vector<Eigen::MatrixXd> pre;  // pre-activations, one per layer
  std::vector<Eigen::MatrixXd> act;  // post-ReLU activations of hidden layers
  Eigen::VectorXd out, resid;
  Eigen::MatrixXd delta, delta_prev;
};

namespace detail {

/// Forward pass; hidden pre-activations and activations are left in `ws`.
inline void forward(const NetworkParams& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi, Workspace& ws) {
  const int layers = net.layers();
  ws.pre.resize(layers);
  ws.act.resize(std::max(0, layers - 1));
  for (int l = 0; l < layers; ++l) {
    const Eigen::MatrixXd& in = l == 0 ? x : ws.act[l - 1];
    ws.pre[l].resize(in.rows(), net.weights[l].rows());
    ws.pre[l].noalias() = in * net.weights[l].transpose();
    ws.pre[l].rowwise() += net.biases[l].transpose();
    if (l + 1 < layers) ws.act[l] = ws.pre[l].cwiseMax(0.0);
  }
  ws.out = ws.pre[layers - 1].col(0);
  if (net.beta.size() > 0) ws.out.noalias() += xi * net.beta;
}

}  // namespace detail

inline Eigen::VectorXd predict(const NetworkParams& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi) {
  check_shapes(net, x, xi);
  Workspace ws;
  detail::forward(net, x, xi, ws);
  return ws.out;
}

/// sum_k min(||W^1_k|| / tau, 1)
inline double regularizer_value(const NetworkParams& net, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidConfig, "tau must be positive");
  double total = 0.0;
  for (Eigen::Index k = 0; k < net.input_dim(); ++k) total += std::min(net.first_layer_column_norm(k) / tau, 1.0);
  return total;
}

/// Mean squared error (1/n) sum (y - g)^2 and, optionally, its gradient in
/// `grad` (same layout as `net`). Pinned entries get zero gradient.
inline double mse_loss_and_gradient(const NetworkParams& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi,
                                    const Eigen::VectorXd& y, NetworkParams* grad, Workspace& ws) {
  check_shapes(net, x, xi);
  detail::forward(net, x, xi, ws);
  const double n = static_cast<double>(y.size());
  ws.resid = y - ws.out;
  const double loss = ws.resid.squaredNorm() / n;
  if (!grad) return loss;

  const int layers = net.layers();
  grad->weights.resize(layers);
  grad->biases.resize(layers);
  grad->input_active = net.input_active;
  grad->beta_active = net.beta_active;
  ws.delta = (-2.0 / n) * ws.resid;  // dloss/d output, n x 1
  if (net.beta.size() > 0) {
    grad->beta.resize(net.beta.size());
    grad->beta.noalias() = xi.transpose() * ws.delta.col(0);
  } else {
    grad->beta.resize(0);
  }
  for (int l = layers - 1; l >= 0; --l) {
    const Eigen::MatrixXd& in = l == 0 ? x : ws.act[l - 1];
    grad->weights[l].resize(net.weights[l].rows(), net.weights[l].cols());
    grad->weights[l].noalias() = ws.delta.transpose() * in;
    grad->biases[l] = ws.delta.colwise().sum().transpose();
    if (l > 0) {
      ws.delta_prev.resize(ws.delta.rows(), net.weights[l].cols());
      ws.delta_prev.noalias() = ws.delta * net.weights[l];
      ws.delta_prev.array() *= (ws.pre[l - 1].array() > 0.0).cast<double>();
      std::swap(ws.delta, ws.delta_prev);
    }
  }
  for (Eigen::Index k = 0; k < net.input_dim(); ++k) {
    if (!net.input_active[k]) grad->weights[0].col(k).setZero();
  }
  for (Eigen::Index k = 0; k < net.beta_dim(); ++k) {
    if (!net.beta_active[k]) grad->beta[k] = 0.0;
  }
  return loss;
}

inline double mse_loss_and_gradient(const NetworkParams& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& xi,
                                    const Eigen::VectorXd& y, NetworkParams* grad) {
  Workspace ws;
  return mse_loss_and_gradient(net, x, xi, y, grad, ws);
}

/// Adds lambda * d/dW of the truncated group penalty. Columns at or above tau
/// sit on the plateau and columns at exactly zero have zero subgradient.
inline void add_regularizer_subgradient(const NetworkParams& net, double lambda, double tau, NetworkParams& grad) {
  for (Eigen::Index k = 0; k < net.input_dim(); ++k) {
    const double norm = net.first_layer_column_norm(k);
    if (norm > 0.0 && norm < tau && net.input_active[k]) {
      grad.weights[0].col(k) += (lambda / (tau * norm)) * net.weights[0].col(k);
    }
  }
}

/// Flattened view used by the optimiser and by finite-difference checks.
inline void pack_into(const NetworkParams& net, Eigen::VectorXd& v) {
  v.resize(net.parameter_count());
  Eigen::Index pos = 0;
  for (int l = 0; l < net.layers(); ++l) {
    v.segment(pos, net.weights[l].size()) = net.weights[l].reshaped();
    pos += net.weights[l].size();
    v.segment(pos, net.biases[l].size()) = net.biases[l];
    pos += net.biases[l].size();
  }
  v.segment(pos, net.beta.size()) = net.beta;
}

inline Eigen::VectorXd pack(const NetworkParams& net) {
  Eigen::VectorXd v;
  pack_into(net, v);
  return v;
}

inline void unpack(const Eigen::VectorXd& v, NetworkParams& net) {
  Eigen::Index pos = 0;
  for (int l = 0; l < net.layers(); ++l) {
    net.weights[l].reshaped() = v.segment(pos, net.weights[l].size());
    pos += net.weights[l].size();
    net.biases[l] = v.segment(pos, net.biases[l].size());
    pos += net.biases[l].size();
  }
  net.beta = v.segment(pos, net.beta.size());
}

/// Adam with bias correction (Kingma & Ba defaults for the moment decays).
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(learning_rate), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
    if (m_.size() != theta.size()) {
      m_ = Eigen::VectorXd::Zero(theta.size());
      v_ = Eigen::VectorXd::Zero(theta.size());
    }
    ++t_;
    m_ = b1_ * m_ + (1.0 - b1_) * grad;
    v_ = b2_ * v_ + (1.0 - b2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
  }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

/// Scales theta back onto the ball ||theta|| <= cap.
inline void project_norm(Eigen::VectorXd& theta, double cap) {
  const double norm = theta.norm();
  if (norm > cap && norm > 0.0) theta *= cap / norm;
}

}  // namespace defuse
