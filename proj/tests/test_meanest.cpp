// Copyright 2026 The fedmech Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "fedmech/errors.hpp"
#include "fedmech/meanest.hpp"
#include "fedmech/rng.hpp"

namespace fedmech {
namespace {

MeanGameSpec frequentist(std::vector<double> mus, double sigma) {
  MeanGameSpec s;
  s.mus = std::move(mus);
  s.sigma = sigma;
  return s;
}

MeanGameSpec hierarchical(std::vector<double> sigmas, std::size_t n, double tau, double tau0) {
  MeanGameSpec s;
  s.sigmas = std::move(sigmas);
  s.n_samples = n;
  s.tau = tau;
  s.tau0 = tau0;
  return s;
}

// Joint Gaussian of (mu_1..mu_N, xbar_1..xbar_N) after integrating out mu.
struct JointModel {
  Eigen::MatrixXd cov_x;
  Eigen::MatrixXd cov_mu_x;
  double var_mu;

  explicit JointModel(const MeanGameSpec& s) {
    const auto n = static_cast<Eigen::Index>(s.sigmas.size());
    cov_x = Eigen::MatrixXd::Constant(n, n, 1.0 / s.tau0);
    cov_mu_x = Eigen::MatrixXd::Constant(n, n, 1.0 / s.tau0);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double noise = s.sigmas[j] * s.sigmas[j] / static_cast<double>(s.n_samples);
      cov_x(j, j) += 1.0 / s.tau + noise;
      cov_mu_x(j, j) += 1.0 / s.tau;
    }
    var_mu = 1.0 / s.tau0 + 1.0 / s.tau;
  }

  Gaussian condition(std::size_t i, const std::vector<double>& xbars) const {
    const Eigen::Map<const Eigen::VectorXd> x(xbars.data(), static_cast<Eigen::Index>(xbars.size()));
    const Eigen::VectorXd k = cov_mu_x.row(static_cast<Eigen::Index>(i)).transpose();
    const Eigen::LDLT<Eigen::MatrixXd> solve(cov_x);
    return {k.dot(solve.solve(x)), var_mu - k.dot(solve.solve(k))};
  }

  double error(std::size_t i, const std::vector<double>& w) const {
    const Eigen::Map<const Eigen::VectorXd> c(w.data(), static_cast<Eigen::Index>(w.size()));
    const double n = static_cast<double>(w.size());
    const Eigen::VectorXd k = cov_mu_x.row(static_cast<Eigen::Index>(i)).transpose();
    return c.dot(cov_x * c) / (n * n) - 2.0 * c.dot(k) / n + var_mu;
  }
};

MeanGameSpec random_hierarchical(RngStream& rng) {
  const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform(0.0, 5.0));
  std::vector<double> sigmas(n);
  for (double& s : sigmas) s = rng.uniform(0.3, 3.0);
  return hierarchical(sigmas, 1 + static_cast<std::size_t>(rng.uniform(0.0, 10.0)), rng.uniform(0.2, 5.0),
                      rng.uniform(0.2, 5.0));
}

TEST(Frequentist, TruthfulClosedForm) {
  EXPECT_DOUBLE_EQ(truthful_mse(frequentist({2.0, 2.0, 2.0, 2.0}, 1.5), 1), 2.25 / 4.0);
  EXPECT_DOUBLE_EQ(truthful_mse(frequentist({1.0, -1.0}, 1.0), 0), 1.5);
  std::vector<double> many(10000, 0.0);
  many[0] = 1.0;
  const double mu = 1.0 / 10000.0;
  EXPECT_NEAR(truthful_mse(frequentist(many, 1.0), 0), (1.0 - mu) * (1.0 - mu), 2e-4);
  EXPECT_THROW(truthful_mse(frequentist({1.0}, 1.0), 0), ConfigError);
  EXPECT_THROW(truthful_mse(frequentist({1.0, 2.0}, 0.0), 0), ConfigError);
}

TEST(Frequentist, DeviationAtUnitScaleIsTruthful) {
  const auto s = frequentist({0.3, -1.2, 2.0}, 0.7);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(deviation_mse(s, i, 1.0), truthful_mse(s, i), 1e-15);
}

TEST(Frequentist, OptimalScaleExample) {
  const auto r = optimal_scale(frequentist({1.0, -1.0}, 1.0), 0);
  EXPECT_TRUE(r.profitable);
  EXPECT_DOUBLE_EQ(r.c_star, 1.5);
  EXPECT_DOUBLE_EQ(r.mse, 1.375);
  EXPECT_NEAR(deviation_mse(frequentist({1.0, -1.0}, 1.0), 0, 1.5), 1.375, 1e-15);
}

TEST(Frequentist, ClientAtTheMeanCannotProfit) {
  const auto s = frequentist({1.0, 1.0, 1.0}, 0.5);
  const auto r = optimal_scale(s, 0);
  EXPECT_FALSE(r.profitable);
  EXPECT_EQ(r.c_star, 1.0);
  EXPECT_EQ(r.mse, truthful_mse(s, 0));
}

TEST(Frequentist, NoiselessLimit) {
  EXPECT_NEAR(optimal_scale(frequentist({1.0, -1.0}, 1e-6), 0).c_star, 3.0, 1e-9);
}

TEST(Frequentist, ContinuousAtTheFeasibilityBoundary) {
  // mu_1 (mu_1 - mu) = 1 = sigma^2 / N at sigma^2 = 2.
  const double s = std::sqrt(2.0);
  EXPECT_EQ(optimal_scale(frequentist({1.0, -1.0}, s * (1.0 + 1e-12)), 0).c_star, 1.0);
  const auto inside = optimal_scale(frequentist({1.0, -1.0}, s * (1.0 - 1e-9)), 0);
  EXPECT_TRUE(inside.profitable);
  EXPECT_NEAR(inside.c_star, 1.0, 1e-8);
  EXPECT_NEAR(inside.mse, truthful_mse(frequentist({1.0, -1.0}, s * (1.0 - 1e-9)), 0), 1e-15);
}

TEST(Frequentist, OptimalScaleIsTheGridArgmin) {
  auto rng = RngStream::make(21, StreamPurpose::kProbe);
  int profitable = 0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> mus(2 + trial % 5);
    for (double& m : mus) m = rng.uniform(-3.0, 3.0);
    const auto s = frequentist(mus, rng.uniform(0.1, 2.0));
    const auto r = optimal_scale(s, 0);
    if (!r.profitable) continue;
    ++profitable;
    double best_c = 0, best = std::numeric_limits<double>::infinity();
    for (double c = r.c_star - 1.0; c <= r.c_star + 1.0; c += 1e-3) {
      const double v = deviation_mse(s, 0, c);
      if (v < best) {
        best = v;
        best_c = c;
      }
    }
    ASSERT_NEAR(best_c, r.c_star, 1e-3);
    ASSERT_NEAR(deviation_mse(s, 0, r.c_star), r.mse, 1e-12 * (1.0 + r.mse));
    ASSERT_LT(r.mse, truthful_mse(s, 0));
    ASSERT_GT(r.c_star, 1.0);
  }
  EXPECT_GT(profitable, 20);
}

TEST(Frequentist, MonteCarloMatchesClosedForms) {
  const auto s = frequentist({1.0, -1.0}, 1.0);
  const auto t = mc_scaled_mse(s, 0, 1.0, 1000000, 4, 4);
  EXPECT_NEAR(t.mse, 1.5, 3.0 * t.std_error);
  const auto d = mc_scaled_mse(s, 0, 1.5, 1000000, 5, 4);
  EXPECT_NEAR(d.mse, 1.375, 3.0 * d.std_error);
  EXPECT_EQ(d.draws, 1000000u);
}

TEST(Frequentist, MonteCarloIndependentOfJobs) {
  const auto s = frequentist({0.5, 2.0, -1.0}, 0.8);
  const auto a = mc_scaled_mse(s, 1, 2.0, 100000, 7, 1);
  const auto b = mc_scaled_mse(s, 1, 2.0, 100000, 7, 3);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_EQ(a.std_error, b.std_error);
}

TEST(Posterior, MatchesJointGaussianConditioning) {
  auto rng = RngStream::make(31, StreamPurpose::kProbe);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = random_hierarchical(rng);
    std::vector<double> xbars(s.sigmas.size());
    for (double& x : xbars) x = rng.uniform(-2.0, 2.0);
    const JointModel joint(s);
    for (std::size_t i = 0; i < xbars.size(); ++i) {
      const Gaussian got = posterior(s, i, xbars);
      const Gaussian want = joint.condition(i, xbars);
      ASSERT_NEAR(got.mean, want.mean, 1e-10 * (1.0 + std::abs(want.mean)));
      ASSERT_NEAR(got.variance, want.variance, 1e-10 * want.variance);
    }
  }
}

TEST(Posterior, SingleClientIsTheConjugateUpdate) {
  const auto s = hierarchical({2.0}, 4, 1.5, 0.5);
  const double data = 4.0 / 4.0;
  const double prior_var = 1.0 / 1.5 + 1.0 / 0.5;
  const std::vector<double> xbar{0.8};
  const Gaussian g = posterior(s, 0, xbar);
  EXPECT_NEAR(g.variance, 1.0 / (data + 1.0 / prior_var), 1e-14);
  EXPECT_NEAR(g.mean, data * 0.8 / (data + 1.0 / prior_var), 1e-14);
}

TEST(Posterior, HomogeneousLimit) {
  const auto s = hierarchical({1.0, 2.0, 0.5}, 3, 1e12, 2.0);
  const std::vector<double> xbars{0.4, -1.0, 2.0};
  double num = 0, den = 2.0;
  for (std::size_t j = 0; j < 3; ++j) {
    const double tj = 3.0 / (s.sigmas[j] * s.sigmas[j]);
    num += tj * xbars[j];
    den += tj;
  }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(posterior(s, i, xbars).mean, num / den, 1e-9);
}

TEST(Posterior, VarianceDecreasesWithAnyPrecision) {
  const std::vector<double> xbars{0.0, 0.0, 0.0};
  const auto base = hierarchical({1.0, 1.0, 1.0}, 2, 1.0, 1.0);
  const double v = posterior(base, 0, xbars).variance;
  for (std::size_t j = 0; j < 3; ++j) {
    auto better = base;
    better.sigmas[j] = 0.5;
    EXPECT_LT(posterior(better, 0, xbars).variance, v);
  }
  auto more = base;
  more.n_samples = 5;
  EXPECT_LT(posterior(more, 0, xbars).variance, v);
  auto tighter = base;
  tighter.tau0 = 3.0;
  EXPECT_LT(posterior(tighter, 0, xbars).variance, v);
  EXPECT_THROW(posterior(hierarchical({1.0}, 1, 0.0, 1.0), 0, std::vector<double>{0.0}), ConfigError);
}

TEST(ExpectedError, MatchesCovarianceOracle) {
  auto rng = RngStream::make(41, StreamPurpose::kProbe);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = random_hierarchical(rng);
    std::vector<double> w(s.sigmas.size());
    for (double& c : w) c = rng.uniform(-1.0, 3.0);
    const JointModel joint(s);
    for (std::size_t i = 0; i < w.size(); ++i) {
      ASSERT_NEAR(expected_error(s, w, i), joint.error(i, w), 1e-10 * (1.0 + joint.error(i, w)));
    }
  }
}

TEST(ExpectedError, TruthfulFormula) {
  const auto s = hierarchical({1.0, 2.0, 0.5, 1.5}, 3, 0.7, 2.5);
  const Precisions p = precisions(s);
  const std::vector<double> ones(4, 1.0);
  double inv = 0;
  for (double r : p.rho) inv += 1.0 / r;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(expected_error(s, ones, i), inv / 16.0 - 2.0 / (4.0 * 0.7) + 1.0 / 0.7, 1e-12);
  }
}

TEST(Nash, FirstOrderConditionAndClosedFormErrors) {
  auto rng = RngStream::make(51, StreamPurpose::kProbe);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_hierarchical(rng);
    const Precisions p = precisions(s);
    const Equilibrium eq = nash_equilibrium(s);
    const double n = static_cast<double>(eq.weights.size());
    double total = 0;
    for (double c : eq.weights) total += c;
    const double rhs = n / s.tau + n / s.tau0;
    for (std::size_t i = 0; i < eq.weights.size(); ++i) {
      ASSERT_NEAR(eq.weights[i] / p.rho[i] + total / s.tau0, rhs, 1e-9 * rhs);
      ASSERT_NEAR(eq.errors[i], expected_error(s, eq.weights, i), 1e-10 * (1.0 + eq.errors[i]));
    }
  }
}

TEST(Nash, UnilateralGridSearchFindsTheEquilibrium) {
  auto rng = RngStream::make(61, StreamPurpose::kProbe);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_hierarchical(rng);
    const Equilibrium eq = nash_equilibrium(s);
    for (std::size_t i = 0; i < eq.weights.size(); ++i) {
      auto w = eq.weights;
      const double lo = eq.weights[i] - 1.0, step = 2.0 / 199.0;
      double best_c = lo, best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 200; ++k) {
        w[i] = lo + step * k;
        const double e = expected_error(s, w, i);
        if (e < best) {
          best = e;
          best_c = w[i];
        }
      }
      ASSERT_NEAR(best_c, eq.weights[i], step);
    }
  }
}

TEST(Nash, HomogeneousAndLimitForms) {
  const double tau = 0.8, tau0 = 1.7;
  const auto s = hierarchical({1.2, 1.2, 1.2, 1.2, 1.2}, 4, tau, tau0);
  const Precisions p = precisions(s);
  const double rho = p.rho[0];
  for (double c : nash_equilibrium(s).weights) EXPECT_NEAR(c, (1.0 + tau0 / tau) / (1.0 + tau0 / (5.0 * rho)), 1e-12);
  const auto lim = hierarchical({1.0, 2.0, 0.5}, 3, 1e12, 2.0);
  const Precisions q = precisions(lim);
  double sum = 0;
  for (double t : q.data) sum += t;
  const Equilibrium eq = nash_equilibrium(lim);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(eq.weights[i], 3.0 * q.data[i] / (2.0 + sum), 1e-9);
}

TEST(MonteCarlo, ZeroWeightsGivePriorVariance) {
  const auto s = hierarchical({1.0, 2.0}, 2, 1.5, 0.5);
  const std::vector<double> zero(2, 0.0);
  const auto r = mc_mse(s, zero, 0, 200000, 3, 2);
  EXPECT_NEAR(r.mse, 1.0 / 1.5 + 1.0 / 0.5, 3.0 * r.std_error);
  EXPECT_NEAR(expected_error(s, zero, 0), 1.0 / 1.5 + 1.0 / 0.5, 1e-15);
}

TEST(MonteCarlo, ClosedFormsOnRandomSpecs) {
  auto rng = RngStream::make(71, StreamPurpose::kProbe);
  int misses = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_hierarchical(rng);
    const Equilibrium eq = nash_equilibrium(s);
    const std::vector<double> ones(s.sigmas.size(), 1.0);
    const std::size_t i = static_cast<std::size_t>(trial) % s.sigmas.size();
    const auto a = mc_mse(s, eq.weights, i, 1000000, 100 + trial, 4);
    const auto b = mc_mse(s, ones, i, 1000000, 200 + trial, 4);
    misses += std::abs(a.mse - eq.errors[i]) > 3.0 * a.std_error;
    misses += std::abs(b.mse - expected_error(s, ones, i)) > 3.0 * b.std_error;
  }
  // 20 comparisons at 3 s.e.: more than one miss would be a 1-in-600 event.
  EXPECT_LE(misses, 1);
}

TEST(MonteCarlo, RefusesTinyEnsemblesAndIsJobInvariant) {
  const auto s = hierarchical({1.0, 2.0}, 2, 1.5, 0.5);
  const std::vector<double> ones(2, 1.0);
  EXPECT_THROW(mc_mse(s, ones, 0, 9999, 1), StatisticsError);
  const auto a = mc_mse(s, ones, 1, 50000, 8, 1);
  const auto b = mc_mse(s, ones, 1, 50000, 8, 4);
  EXPECT_EQ(a.mse, b.mse);
  EXPECT_THROW(mc_mse(s, std::vector<double>{1.0}, 0, 10000, 1), ConfigError);
}

TEST(Anarchy, HeterogeneityMakesEquilibriumWorse) {
  const auto s = hierarchical(std::vector<double>(50, 1.0), 5, 0.5, 20.0);
  const AnarchyReport r = penalty_of_anarchy(s);
  EXPECT_DOUBLE_EQ(r.eq_error_limit, 2.0 + 80.0);
  EXPECT_DOUBLE_EQ(r.truthful_error_limit, 2.0);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_TRUE(r.heterogeneity_condition[i]);
    EXPECT_TRUE(r.exceeds[i]);
  }
  const auto mc_eq = mc_mse(s, nash_equilibrium(s).weights, 0, 200000, 9, 4);
  EXPECT_NEAR(mc_eq.mse, r.eq_errors[0], 3.0 * mc_eq.std_error);
}

TEST(Anarchy, NoPenaltyWithoutHeterogeneity) {
  EXPECT_NEAR(penalty_of_anarchy(hierarchical({1.0, 1.0}, 1, 1e9, 1.0)).ratio, 1.0, 1e-8);
  EXPECT_GT(penalty_of_anarchy(hierarchical({1.0, 1.0}, 1, 1.0, 1.0)).ratio, 1.0);
}

TEST(Anarchy, LargeNLimits) {
  const double tau = 0.9, tau0 = 2.0;
  const auto s = hierarchical(std::vector<double>(20000, 1.0), 2, tau, tau0);
  const AnarchyReport r = penalty_of_anarchy(s);
  EXPECT_NEAR(r.eq_errors[0], r.eq_error_limit, 1e-3);
  EXPECT_NEAR(r.truthful_errors[0], r.truthful_error_limit, 1e-3);
}

}  // namespace
}  // namespace fedmech
