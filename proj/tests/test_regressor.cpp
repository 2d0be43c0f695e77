#include <gtest/gtest.h>

#include <algorithm>

#include "defuse/defuse.hpp"

using namespace defuse;

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index n, Eigen::Index m, Rng& rng) {
  Eigen::MatrixXd x(n, m);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  return x;
}

// Residual block of the two roots of the Example 1 system: at depth zero the
// fitted mean is the sample mean.
Eigen::MatrixXd centered(const Eigen::MatrixXd& x) { return x.rowwise() - x.colwise().mean(); }

bool is_subset(const NodeSet& a, const NodeSet& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

}  // namespace

TEST(Split, DeterministicNinetyTen) {
  const auto a = make_split(100, 0.1, 4);
  const auto b = make_split(100, 0.1, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.val.size(), 10u);
  EXPECT_EQ(a.train.size(), 90u);
  std::vector<Eigen::Index> all = a.train;
  all.insert(all.end(), a.val.begin(), a.val.end());
  std::sort(all.begin(), all.end());
  for (Eigen::Index i = 0; i < 100; ++i) EXPECT_EQ(all[i], i);
}

TEST(TrainConfig, RejectsNonsense) {
  TrainConfig c;
  c.val_fraction = 0.7;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.hidden_width = 0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.lambda_grid.clear();
  EXPECT_THROW(c.validate(), Error);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(PickSparsest, OneStandardErrorRule) {
  // Candidate 1 is better than 0 by a margin well inside one standard
  // error of the paired differences, so the sparser one is kept.
  std::vector<Eigen::VectorXd> errors(2, Eigen::VectorXd(4));
  errors[0] << 1.0, 2.0, 1.0, 2.0;
  errors[1] << 0.5, 2.5, 0.4, 2.4;
  EXPECT_EQ(detail::pick_sparsest_paired(errors, 0.0, 1.0), 0u);
  EXPECT_EQ(detail::pick_sparsest_paired(errors, 0.0, 0.0), 1u);
  errors[1] << 0.5, 1.5, 0.5, 1.5;
  EXPECT_EQ(detail::pick_sparsest_paired(errors, 0.0, 1.0), 1u);
}

TEST(BetaStage, RecoversSingleCoefficient) {
  Rng rng(10);
  const Eigen::MatrixXd xi = gaussian_matrix(1000, 5, rng);
  Eigen::VectorXd y = 2.0 * xi.col(0);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += 0.1 * rng.normal();
  const auto r = fit_beta_stage(y, xi, TrainConfig{});
  EXPECT_EQ(r.support, (NodeSet{0}));
  EXPECT_NEAR(r.beta[0], 2.0, 0.1);
  EXPECT_EQ(r.sigma_used, 1);
}

TEST(BetaStage, IndependentResponseKeepsEmptySupport) {
  int empty = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(500 + seed);
    const Eigen::MatrixXd xi = gaussian_matrix(500, 4, rng);
    Eigen::VectorXd y(500);
    for (Eigen::Index i = 0; i < 500; ++i) y[i] = rng.normal();
    TrainConfig c;
    c.rng_seed = seed;
    empty += fit_beta_stage(y, xi, c).support.empty();
  }
  EXPECT_GE(empty, 90);
}

TEST(BetaStage, EmptyLayer) {
  const auto r = fit_beta_stage(Eigen::VectorXd::Ones(20), Eigen::MatrixXd(20, 0), TrainConfig{});
  EXPECT_EQ(r.beta.size(), 0);
  EXPECT_TRUE(r.support.empty());
  EXPECT_EQ(r.sigma_used, 0);
}

TEST(BetaStage, IterativeHardThresholdingAboveExhaustiveLimit) {
  Rng rng(12);
  const Eigen::MatrixXd xi = gaussian_matrix(800, 16, rng);
  Eigen::VectorXd y = 1.5 * xi.col(3) - 2.0 * xi.col(11);
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += 0.2 * rng.normal();
  const auto r = fit_beta_stage(y, xi, TrainConfig{});
  EXPECT_EQ(r.support, (NodeSet{3, 11}));
  EXPECT_NEAR(r.beta[3], 1.5, 0.1);
  EXPECT_NEAR(r.beta[11], -2.0, 0.1);
}

TEST(NetworkStage, ConstantResponse) {
  Rng rng(2);
  const Eigen::MatrixXd x = gaussian_matrix(300, 3, rng);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(300, 4.2);
  const auto fit = fit_deconfounded(y, x, centered(x), TrainConfig{});
  EXPECT_TRUE(fit.selected_parents.empty());
  EXPECT_LT((fit.predict(x, centered(x)).array() - 4.2).abs().maxCoeff(), 1e-2);
}

TEST(NetworkStage, EmptyLayerIsInterceptOnly) {
  Rng rng(2);
  Eigen::VectorXd y(200);
  for (Eigen::Index i = 0; i < 200; ++i) y[i] = 3.0 + rng.normal();
  const auto fit = fit_deconfounded(y, Eigen::MatrixXd(200, 0), Eigen::MatrixXd(200, 0), TrainConfig{});
  EXPECT_TRUE(fit.selected_parents.empty());
  const Eigen::VectorXd pred = fit.predict(Eigen::MatrixXd(200, 0), Eigen::MatrixXd(200, 0));
  const auto split = make_split(200, 0.1, 0);
  double mean = 0.0;
  for (auto i : split.train) mean += y[i];
  mean /= double(split.train.size());
  EXPECT_NEAR(pred[0], mean, 1e-9);
}

TEST(NetworkStage, ExampleOneNodeThree) {
  const auto data = sample_example1(5000, 31);
  const Eigen::MatrixXd x = data.values.leftCols(2);
  const Eigen::MatrixXd xi = centered(x);
  const auto fit = fit_deconfounded(data.values.col(2), x, xi, TrainConfig{});
  EXPECT_EQ(fit.selected_parents, (NodeSet{0}));
  ASSERT_EQ(fit.beta.size(), 2);
  EXPECT_NEAR(fit.beta[0], 1.0 / 3.0, 0.1);
  EXPECT_NEAR(fit.beta[1], 1.0 / 3.0, 0.1);
  // E(Y3 | Y1, Y2) = cos(Y1) + Y1/3 + Y2/3 on a grid, up to a constant.
  Eigen::MatrixXd grid(81, 2);
  for (int a = 0; a < 9; ++a) {
    for (int b = 0; b < 9; ++b) {
      grid(a * 9 + b, 0) = -2.0 + 0.5 * a;
      grid(a * 9 + b, 1) = -2.0 + 0.5 * b;
    }
  }
  const Eigen::MatrixXd grid_xi = grid.rowwise() - x.colwise().mean();
  const Eigen::VectorXd pred = fit.predict(grid, grid_xi);
  Eigen::VectorXd truth(81);
  for (int i = 0; i < 81; ++i) truth[i] = std::cos(grid(i, 0)) + grid(i, 0) / 3.0 + grid(i, 1) / 3.0;
  const Eigen::VectorXd diff = (pred - truth).array() - (pred - truth).mean();
  EXPECT_LT(std::sqrt(diff.squaredNorm() / 81.0), 0.15);
}

TEST(NetworkStage, SelectsTheSingleRelevantInput) {
  int exact = 0;
  constexpr int runs = 10;
  for (int r = 0; r < runs; ++r) {
    Rng rng(900 + r);
    const Eigen::MatrixXd x = gaussian_matrix(2000, 10, rng);
    Eigen::VectorXd y = x.col(0).array().cos();
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += 0.1 * rng.normal();
    TrainConfig c;
    c.rng_seed = static_cast<std::uint64_t>(r);
    const auto fit = fit_network_stage(y, x, Eigen::MatrixXd::Zero(2000, 10), {}, c);
    exact += fit.selected_parents == NodeSet{0};
    EXPECT_LT(fit.val_mse, 2.0 * 0.01) << "run " << r;
  }
  EXPECT_GE(exact, 9);
}

TEST(NetworkStage, ContractsOnFittedModel) {
  Rng rng(44);
  const Eigen::Index n = 600;
  const Eigen::MatrixXd x = gaussian_matrix(n, 5, rng);
  const Eigen::MatrixXd xi = gaussian_matrix(n, 5, rng);
  Eigen::VectorXd y = (x.col(1).array() + 0.3).square().matrix() - 2.0 * x.col(3).array().cos().matrix() +
                      0.8 * xi.col(2);
  for (Eigen::Index i = 0; i < n; ++i) y[i] += 0.3 * rng.normal();
  TrainConfig c;
  c.rng_seed = 5;
  const auto stage1 = fit_beta_stage(y, xi, c);
  const auto fit = fit_network_stage(y, x, xi, stage1.support, c);

  EXPECT_LE(static_cast<int>(fit.selected_parents.size()), fit.kappa_used);
  EXPECT_TRUE(is_subset(fit.selected_beta_support, stage1.support));
  EXPECT_GE(fit.val_mse, 0.0);
  for (Eigen::Index k = 0; k < 5; ++k) {
    if (std::find(stage1.support.begin(), stage1.support.end(), k) == stage1.support.end()) {
      EXPECT_EQ(fit.params.beta[k], 0.0);
    }
  }

  // Reported validation error recomputed from scratch.
  Eigen::MatrixXd xv(fit.val_rows.size(), 5), xiv(fit.val_rows.size(), 5);
  Eigen::VectorXd yv(fit.val_rows.size());
  for (std::size_t i = 0; i < fit.val_rows.size(); ++i) {
    xv.row(i) = x.row(fit.val_rows[i]);
    xiv.row(i) = xi.row(fit.val_rows[i]);
    yv[i] = y[fit.val_rows[i]];
  }
  EXPECT_NEAR(fit.val_mse, (yv - fit.predict(xv, xiv)).squaredNorm() / double(yv.size()), 1e-12);

  // Masked columns are exactly zero and predictions ignore them.
  Eigen::MatrixXd scrambled = x;
  for (Eigen::Index k = 0; k < 5; ++k) {
    if (std::find(fit.selected_parents.begin(), fit.selected_parents.end(), k) != fit.selected_parents.end()) continue;
    EXPECT_EQ(fit.params.first_layer_column_norm(k), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) scrambled(i, k) = 1e3 * rng.normal();
  }
  EXPECT_EQ(fit.predict(scrambled, xi), fit.predict(x, xi));

  // Same seed and config give the same fit.
  const auto again = fit_network_stage(y, x, xi, stage1.support, c);
  EXPECT_EQ(pack(again.params), pack(fit.params));
  EXPECT_EQ(again.selected_parents, fit.selected_parents);
  EXPECT_EQ(again.val_mse, fit.val_mse);
}

TEST(NetworkStage, ShapeErrors) {
  const Eigen::VectorXd y = Eigen::VectorXd::Zero(10);
  try {
    fit_network_stage(y, Eigen::MatrixXd::Zero(9, 2), Eigen::MatrixXd::Zero(10, 2), {}, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
  }
}

TEST(NetworkStage, JsonCarriesSupportAndHyperparameters) {
  Rng rng(3);
  const Eigen::MatrixXd x = gaussian_matrix(200, 2, rng);
  Eigen::VectorXd y = x.col(0).array().square();
  const auto fit = fit_deconfounded(y, x, centered(x), TrainConfig{});
  const auto j = fit_result_to_json(fit);
  EXPECT_TRUE(j.contains("selected_parents"));
  EXPECT_TRUE(j.contains("kappa"));
  EXPECT_TRUE(j.contains("lambda_trace"));
  EXPECT_FALSE(j.contains("layers"));
  EXPECT_TRUE(fit_result_to_json(fit, true).contains("layers"));
}
