#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "defuse/defuse.hpp"
#include "oracles.hpp"

using namespace defuse;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = rng.normal();
  return x;
}

std::vector<double> exponentials(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = -std::log(1.0 - rng.uniform());
  return x;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::InvalidConfig;
}

}  // namespace

TEST(NormalCdf, ReferenceValues) {
  EXPECT_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(1.959964), 0.975, 1e-6);
  for (double z : {0.1, 0.7, 1.3, 2.9, 5.0}) EXPECT_NEAR(normal_cdf(-z), 1.0 - normal_cdf(z), 1e-14);
}

TEST(NormalCdf, Monotone) {
  double prev = 0.0;
  for (double z = -10.0; z <= 10.0; z += 0.01) {
    const double v = normal_cdf(z);
    ASSERT_GE(v, prev);
    prev = v;
  }
}

TEST(NormalCdf, LogTailIsFiniteAndAccurate) {
  EXPECT_NEAR(log_normal_cdf(-1.0), std::log(normal_cdf(-1.0)), 1e-13);
  EXPECT_TRUE(std::isfinite(log_normal_cdf(-40.0)));
  // Mills ratio: log Phi(-z) ~ -z^2/2 - log(z sqrt(2 pi)) for large z.
  const double z = 40.0;
  EXPECT_NEAR(log_normal_cdf(-z), -z * z / 2.0 - std::log(z * std::sqrt(2.0 * std::numbers::pi)), 1e-3);
}

TEST(AndersonDarling, MatchesBruteForceSum) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto x = (seed % 2 == 0) ? normals(8 + seed * 25, seed) : exponentials(8 + seed * 25, seed);
    EXPECT_NEAR(anderson_darling(x).statistic, oracle::brute_force_a2(x), 1e-10) << "seed " << seed;
  }
}

TEST(AndersonDarling, SmallSampleCorrection) {
  const auto r = anderson_darling(normals(40, 1));
  EXPECT_NEAR(r.statistic_adjusted, r.statistic * (1.0 + 0.75 / 40 + 2.25 / 1600.0), 1e-15);
}

TEST(AndersonDarling, RejectsExponential) { EXPECT_LT(anderson_darling(exponentials(2000, 4)).p_value, 0.001); }

TEST(AndersonDarling, NullRejectionRateNearFivePercent) {
  int rejected = 0;
  for (std::uint64_t t = 0; t < 2000; ++t) rejected += anderson_darling(normals(2000, 1000 + t)).rejects(0.05);
  const double rate = rejected / 2000.0;
  EXPECT_GE(rate, 0.03);
  EXPECT_LE(rate, 0.07);
}

TEST(AndersonDarling, AffineInvariance) {
  const auto x = exponentials(300, 8);
  const auto base = anderson_darling(x);
  for (auto [a, b] : std::vector<std::pair<double, double>>{{2.0, 1.0}, {-0.5, 10.0}, {1e3, -7.0}}) {
    std::vector<double> y(x.size());
    std::transform(x.begin(), x.end(), y.begin(), [&](double v) { return a * v + b; });
    const auto r = anderson_darling(y);
    EXPECT_NEAR(r.statistic, base.statistic, 1e-10);
    EXPECT_NEAR(r.p_value, base.p_value, 1e-10);
  }
}

TEST(AndersonDarling, PermutationInvariance) {
  auto x = normals(100, 2);
  const auto base = anderson_darling(x);
  std::reverse(x.begin(), x.end());
  std::rotate(x.begin(), x.begin() + 37, x.end());
  EXPECT_EQ(anderson_darling(x).statistic, base.statistic);
}

TEST(AndersonDarling, PvalueNonincreasing) {
  double prev = 1.0;
  for (double a = 0.0; a <= 200.0; a += 0.001) {
    const double p = anderson_darling_pvalue(a);
    ASSERT_LE(p, prev) << "A* = " << a;
    ASSERT_GE(p, 0.0);
    prev = p;
  }
}

TEST(AndersonDarling, RejectionFlagsFollowPvalue) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto r = anderson_darling(seed % 3 ? normals(60, seed) : exponentials(60, seed));
    EXPECT_GE(r.statistic, 0.0);
    for (const auto& [level, rejected] : r.rejected_at) EXPECT_EQ(rejected, r.p_value < level);
    EXPECT_EQ(r.rejected_at.size(), 4u);
  }
}

TEST(AndersonDarling, ExtremeOutlierKeepsFiniteStatistic) {
  auto x = normals(500, 5);
  x[0] = 1e6;
  const auto r = anderson_darling(x);
  EXPECT_TRUE(std::isfinite(r.statistic));
  EXPECT_LT(r.p_value, 1e-6);
}

TEST(AndersonDarling, InputErrors) {
  EXPECT_EQ(code_of([] { anderson_darling(std::vector<double>(20, 3.5)); }), ErrorCode::DegenerateSample);
  EXPECT_EQ(code_of([] { anderson_darling(std::vector<double>(7, 1.0)); }), ErrorCode::SampleTooSmall);
  EXPECT_EQ(code_of([] {
              auto x = normals(20, 1);
              x[3] = std::nan("");
              anderson_darling(x);
            }),
            ErrorCode::NonFiniteInput);
}
