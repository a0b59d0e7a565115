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

#include <cmath>
#include <vector>

#include "fedmech/errors.hpp"
#include "fedmech/objectives.hpp"

namespace fedmech {
namespace {

ModelVector vec(std::initializer_list<double> xs) {
  ModelVector v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index k = 0;
  for (double x : xs) v(k++) = x;
  return v;
}

ModelVector numeric_gradient(const ClientObjective& c, const ModelVector& theta) {
  ModelVector g(theta.size());
  const double h = 1e-6;
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    ModelVector up = theta, down = theta;
    up(k) += h;
    down(k) -= h;
    g(k) = (evaluate(c, up) - evaluate(c, down)) / (2 * h);
  }
  return g;
}

TEST(Quadratic, ValueAndGradient) {
  Matrix a(2, 2);
  a << 3.0, 1.0, 1.0, 2.0;
  const auto c = make_quadratic_client(vec({1.0, -1.0}), a, 0.5, 0.0);
  const ModelVector theta = vec({0.3, 0.7});
  const ModelVector d = theta - vec({1.0, -1.0});
  EXPECT_NEAR(evaluate(c, theta), 0.5 * d.dot(a * d) + 0.5, 1e-14);
  EXPECT_LT((exact_gradient(c, theta) - numeric_gradient(c, theta)).norm(), 1e-7);
  EXPECT_EQ(objective_center(c), vec({1.0, -1.0}));
}

TEST(Quadratic, RejectsBadCurvature) {
  Matrix nonsym(2, 2);
  nonsym << 1.0, 0.5, 0.0, 1.0;
  EXPECT_THROW(make_quadratic_client(vec({0, 0}), nonsym, 0, 0), ConfigError);
  Matrix indefinite(2, 2);
  indefinite << 1.0, 0.0, 0.0, -1.0;
  EXPECT_THROW(make_quadratic_client(vec({0, 0}), indefinite, 0, 0), ConfigError);
  EXPECT_THROW(make_quadratic_client(vec({0, 0}), Matrix::Identity(2, 2), 0, -1.0), ConfigError);
}

TEST(Quadratic, DimensionMismatchThrows) {
  const auto c = make_quadratic_client(vec({0, 0}), Matrix::Identity(2, 2), 0, 0);
  EXPECT_THROW(evaluate(c, vec({1.0})), ConfigError);
}

TEST(Quadratic, ConstantsMatchEigenvaluesAndSampledLipschitz) {
  Matrix a(2, 2);
  a << 4.0, 1.0, 1.0, 1.5;
  auto c = make_quadratic_client(vec({1.0, 2.0}), a, 0.0, 0.3);
  c.domain_center = vec({0.0, 0.0});
  c.domain_radius = 2.0;
  const ObjectiveConstants k = constants(c);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  EXPECT_NEAR(k.m, eig.eigenvalues()(0), 1e-12);
  EXPECT_NEAR(k.H, eig.eigenvalues()(1), 1e-12);
  EXPECT_EQ(k.sigma, 0.3);
  EXPECT_FALSE(k.approximate);
  // Brute force over the boundary circle (the sup of a convex norm is there).
  double sup = 0.0;
  for (int s = 0; s < 200000; ++s) {
    const double phi = 2 * M_PI * s / 200000.0;
    sup = std::max(sup, exact_gradient(c, vec({2 * std::cos(phi), 2 * std::sin(phi)})).norm());
  }
  EXPECT_GE(k.L, sup - 1e-9);
  EXPECT_NEAR(k.L, sup, 1e-6 * sup);
}

TEST(Quadratic, LipschitzForCenterOutsideBall) {
  auto c = make_quadratic_client(vec({10.0, 0.0}), Matrix::Identity(2, 2) * 2.0, 0.0, 0.0);
  c.domain_center = vec({0.0, 0.0});
  c.domain_radius = 1.0;
  EXPECT_NEAR(constants(c).L, 22.0, 1e-9);
}

TEST(Poly, ConstantsOnInterval) {
  // F = x^4 / 12 + x^2: F'' = x^2 + 2 in [2, 3] on [-1, 1]; F' = x^3/3 + 2x.
  auto c = make_poly_client({0.0, 0.0, 1.0, 0.0, 1.0 / 12.0}, 0.0);
  c.domain_center = vec({0.0});
  c.domain_radius = 1.0;
  const ObjectiveConstants k = constants(c);
  EXPECT_NEAR(k.m, 2.0, 1e-9);
  EXPECT_NEAR(k.H, 3.0, 1e-9);
  EXPECT_NEAR(k.L, 1.0 / 3.0 + 2.0, 1e-9);
  EXPECT_TRUE(k.approximate);
  EXPECT_LT(std::abs(exact_gradient(c, vec({0.4}))(0) - numeric_gradient(c, vec({0.4}))(0)), 1e-7);
}

TEST(Poly, RejectsLowDegree) { EXPECT_THROW(make_poly_client({1.0, 2.0}, 0.0), ConfigError); }

TEST(Toy, GradientMatchesFiniteDifferences) {
  ToyDataSpec spec;
  spec.teacher = {0.5, -1.0};
  spec.samples = 16;
  const auto c = make_toy_client(spec, 1, 0.0);
  EXPECT_FALSE(c.is_convex());
  ModelVector theta(c.dimension());
  for (Eigen::Index k = 0; k < theta.size(); ++k) theta(k) = 0.1 * static_cast<double>(k) - 0.4;
  EXPECT_LT((exact_gradient(c, theta) - numeric_gradient(c, theta)).norm(), 1e-6);
  // Reward uses the held-out batch, which differs from the training batch.
  EXPECT_NE(reward_loss(c, theta), evaluate(c, theta));
}

TEST(SampleGradient, NoiseHasZeroMeanAndSigmaSquaredVariance) {
  const auto c = make_quadratic_client(vec({1.0, 1.0, 1.0}), Matrix::Identity(3, 3), 0.0, 0.7);
  const ModelVector theta = vec({0.0, 2.0, -1.0});
  const ModelVector g = exact_gradient(c, theta);
  MeanAccumulator sq;
  ModelVector mean = ModelVector::Zero(3);
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    auto rng = RngStream::make(3, StreamPurpose::kGradient, 0, static_cast<std::uint64_t>(k));
    const ModelVector e = sample_gradient(c, theta, rng) - g;
    mean += e;
    sq.add(e.squaredNorm());
  }
  EXPECT_LT((mean / n).norm(), 0.01);
  EXPECT_NEAR(sq.mean(), 0.49, 4 * sq.stderr_of_mean());
}

TEST(Global, MinimizerOfExample) {
  std::vector<ClientObjective> c;
  const double curv[] = {2, 2, 6, 2}, centers[] = {0, 1, 2, 0.5}, offsets[] = {0, 1, 2, 3};
  for (int i = 0; i < 4; ++i) {
    c.push_back(make_quadratic_client(vec({centers[i]}), Matrix::Constant(1, 1, curv[i]), offsets[i], 0));
  }
  EXPECT_NEAR(global_minimizer(c)(0), 1.25, 1e-14);
  EXPECT_NEAR(global_gradient(c, vec({1.25})).norm(), 0.0, 1e-14);
  EXPECT_NEAR(global_evaluate(c, vec({0.0})), (0 + 2 + 14 + 3.25) / 4.0, 1e-14);
}

TEST(Heterogeneity, ZetaAndRhoDefinitions) {
  std::vector<ClientObjective> c{make_quadratic_client(vec({1.0}), Matrix::Constant(1, 1, 2.0), 0, 1.0),
                                 make_quadratic_client(vec({-1.0}), Matrix::Constant(1, 1, 2.0), 0, 2.0)};
  const std::vector<ModelVector> probes{vec({0.0}), vec({1.0})};
  const HeterogeneityProfile h = heterogeneity(c, probes);
  // At 0: ||grad F_i||^2 = 4, ||grad F||^2 = 0. At 1: 0 and 16 vs 4.
  EXPECT_NEAR(h.zeta, std::sqrt(12.0), 1e-12);
  EXPECT_NEAR(h.rho, std::sqrt(3.0), 1e-12);
  std::vector<ClientObjective> same{c[0], c[0]};
  EXPECT_EQ(heterogeneity(same, probes).zeta, 0.0);
}

TEST(Domains, DefaultBallCoversCenters) {
  std::vector<ClientObjective> c{make_quadratic_client(vec({0.0, 0.0}), Matrix::Identity(2, 2), 0, 0),
                                 make_quadratic_client(vec({4.0, 0.0}), Matrix::Identity(2, 2), 0, 0)};
  assign_default_domains(c);
  EXPECT_EQ(c[0].domain_center, vec({2.0, 0.0}));
  EXPECT_DOUBLE_EQ(c[1].domain_radius, 5.0);
  assign_default_domains(c, 1.5);
  EXPECT_DOUBLE_EQ(c[0].domain_radius, 1.5);
}


std::vector<ClientObjective> example_clients() {
  std::vector<ClientObjective> c;
  const double curv[] = {2, 2, 6, 2}, centers[] = {0, 1, 2, 0.5}, offsets[] = {0, 1, 2, 3};
  for (int i = 0; i < 4; ++i) {
    c.push_back(make_quadratic_client(vec({centers[i]}), Matrix::Constant(1, 1, curv[i]), offsets[i], 0));
  }
  return c;
}

TEST(Example, ValuesAtBothFixedPoints) {
  const auto c = example_clients();
  EXPECT_NEAR(global_evaluate(c, vec({1.25})), 1.5 * 1.5625 - 3.75 * 1.25 + 4.8125, 1e-12);
  EXPECT_NEAR(global_evaluate(c, vec({1.25})), 2.46875, 1e-12);
  const double d = 15.0 / 16.0 - 2.0;
  EXPECT_NEAR(evaluate(c[2], vec({15.0 / 16.0})), 3.0 * d * d + 2.0, 1e-12);
  EXPECT_GT(evaluate(c[2], vec({15.0 / 16.0})), evaluate(c[2], vec({1.25})));
  EXPECT_NEAR(evaluate(c[2], vec({1.25})), 3.6875, 1e-12);
  EXPECT_EQ(evaluate(c[0], vec({0.0})), 0.0);
  EXPECT_EQ(exact_gradient(c[0], vec({3.0}))(0), 6.0);
}

TEST(Quadratic, SpecConstants) {
  auto c = make_quadratic_client(vec({0.0}), Matrix::Constant(1, 1, 6.0), 0, 0.5);
  c.domain_radius = 2.0;
  const ObjectiveConstants k = constants(c);
  EXPECT_EQ(k.m, 6.0);
  EXPECT_EQ(k.H, 6.0);
  EXPECT_NEAR(k.L, 12.0, 1e-12);
  EXPECT_EQ(k.sigma, 0.5);
  const auto diag = make_quadratic_client(vec({0.0, 0.0}), Eigen::Vector2d(1.0, 3.0).asDiagonal(), 0, 0);
  EXPECT_NEAR(constants(diag).m, 1.0, 1e-14);
  EXPECT_NEAR(constants(diag).H, 3.0, 1e-14);
  const auto id = make_quadratic_client(vec({1.0, 1.0}), Matrix::Identity(2, 2), 0, 0);
  EXPECT_EQ(exact_gradient(id, vec({0.0, 0.0})), vec({-1.0, -1.0}));
}

TEST(Heterogeneity, SpecExampleZetaSquaredIsThree) {
  std::vector<ClientObjective> c{make_quadratic_client(vec({0.0}), Matrix::Constant(1, 1, 2.0), 0, 0.3),
                                 make_quadratic_client(vec({1.0}), Matrix::Constant(1, 1, 2.0), 0, 0.3)};
  const std::vector<ModelVector> probes{vec({0.0})};
  const HeterogeneityProfile h = heterogeneity(c, probes);
  EXPECT_NEAR(h.zeta * h.zeta, 3.0, 1e-12);
  EXPECT_EQ(h.rho, 0.0);
  EXPECT_THROW(heterogeneity(std::vector<ClientObjective>{}, probes), ConfigError);
}

TEST(SampleGradient, ZeroNoiseIsExact) {
  const auto c = make_quadratic_client(vec({1.0, -2.0}), Matrix::Identity(2, 2), 0, 0.0);
  auto rng = RngStream::make(0, StreamPurpose::kGradient);
  EXPECT_EQ(sample_gradient(c, vec({0.5, 0.5}), rng), exact_gradient(c, vec({0.5, 0.5})));
}

TEST(SampleGradient, UnbiasedPerCoordinateAndVarianceInBand) {
  const auto c = make_quadratic_client(vec({1.0, 0.0, -1.0, 2.0}), Matrix::Identity(4, 4) * 2.0, 0, 1.0);
  const ModelVector theta = vec({0.5, 0.5, 0.5, 0.5});
  const ModelVector g = exact_gradient(c, theta);
  std::vector<MeanAccumulator> coords(4);
  MeanAccumulator sq;
  for (int k = 0; k < 100000; ++k) {
    auto rng = RngStream::make(17, StreamPurpose::kGradient, 2, static_cast<std::uint64_t>(k));
    const ModelVector s = sample_gradient(c, theta, rng);
    for (int j = 0; j < 4; ++j) coords[j].add(s(j));
    sq.add((s - g).squaredNorm());
  }
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(coords[j].mean(), g(j), 3.0 * 1.0 / std::sqrt(100000.0));
  EXPECT_GE(sq.mean(), 0.97);
  EXPECT_LE(sq.mean(), 1.03);
}

TEST(Quadratic, StrongConvexityAndSmoothnessOnRandomPairs) {
  Matrix a(3, 3);
  a << 3.0, 0.5, 0.2, 0.5, 2.0, 0.1, 0.2, 0.1, 1.5;
  auto c = make_quadratic_client(vec({0.5, -0.5, 1.0}), a, 0.0, 0.0);
  c.domain_radius = 3.0;
  const ObjectiveConstants k = constants(c);
  auto rng = RngStream::make(4, StreamPurpose::kProbe);
  for (int s = 0; s < 1000; ++s) {
    const ModelVector x = c.domain_center + rng.isotropic(3, 4.0);
    const ModelVector y = c.domain_center + rng.isotropic(3, 4.0);
    const double lin = evaluate(c, y) + exact_gradient(c, y).dot(x - y);
    const double d2 = (x - y).squaredNorm();
    ASSERT_GE(evaluate(c, x), lin + 0.5 * k.m * d2 - 1e-10);
    ASSERT_LE(evaluate(c, x), lin + 0.5 * k.H * d2 + 1e-10);
  }
}

TEST(GradientNormClaim, HoldsAtRandomPoints) {
  const auto c = make_quadratic_client(vec({1.0, 2.0}), Matrix::Identity(2, 2) * 1.5, 0, 0.8);
  auto probe = RngStream::make(5, StreamPurpose::kProbe);
  for (int p = 0; p < 20; ++p) {
    const ModelVector theta = probe.isotropic(2, 9.0);
    MeanAccumulator norms;
    for (int k = 0; k < 4000; ++k) {
      auto rng = RngStream::make(6, StreamPurpose::kGradient, static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(k));
      norms.add(sample_gradient(c, theta, rng).norm());
    }
    EXPECT_LE(norms.mean(), exact_gradient(c, theta).norm() + 0.8 + 3 * norms.stderr_of_mean());
  }
}

TEST(Toy, ConstantsAreFlaggedApproximate) {
  ToyDataSpec spec;
  spec.teacher = {1.0, 0.0};
  const auto c = make_toy_client(spec, 0, 0.1);
  EXPECT_TRUE(constants(c).approximate);
  EXPECT_THROW(make_toy_client(ToyDataSpec{}, 0, 0.1), ConfigError);
}

}  // namespace
}  // namespace fedmech
