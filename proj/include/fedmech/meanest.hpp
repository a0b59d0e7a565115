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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedmech/errors.hpp"
#include "fedmech/numeric.hpp"
#include "fedmech/parallel.hpp"
#include "fedmech/rng.hpp"

namespace fedmech {

/// One-shot mean estimation. The frequentist variant uses `mus` and the
/// common `sigma` (one sample per client); the hierarchical variant uses
/// `sigmas`, `n_samples`, `tau` and `tau0`, with N = sigmas.size().
struct MeanGameSpec {
  std::vector<double> mus;
  double sigma = 1.0;
  std::vector<double> sigmas;
  std::size_t n_samples = 1;
  double tau = 1.0;
  double tau0 = 1.0;
};

struct McEstimate {
  double mse = 0.0;
  double std_error = 0.0;
  std::size_t draws = 0;
};

namespace detail {

inline void check_frequentist(const MeanGameSpec& spec, std::size_t client) {
  if (spec.mus.size() < 2) throw ConfigError("mean game needs N >= 2", "meanest.mus");
  if (!(spec.sigma > 0.0)) throw ConfigError("sigma must be > 0", "meanest.sigma");
  if (client >= spec.mus.size()) throw ConfigError("client index out of range", "meanest.client");
}

inline double population_mean(const MeanGameSpec& spec) { return mean_of_scalars(spec.mus); }

inline void check_bayes(const MeanGameSpec& spec, std::size_t min_n = 2) {
  if (spec.sigmas.size() < min_n) throw ConfigError("hierarchical mean game needs sigmas for every client", "meanest.sigmas");
  if (!(spec.tau > 0.0)) throw ConfigError("tau must be > 0", "meanest.tau");
  if (!(spec.tau0 > 0.0)) throw ConfigError("tau0 must be > 0", "meanest.tau0");
  if (spec.n_samples < 1) throw ConfigError("n_samples must be >= 1", "meanest.n_samples");
  for (double s : spec.sigmas) {
    if (!(s > 0.0)) throw ConfigError("sigmas must be > 0", "meanest.sigmas");
  }
}

// Chunked Monte Carlo: chunk c owns stream (seed, monte-carlo, tag, c), so the
// estimate does not depend on the number of workers.
inline constexpr std::size_t kMcChunk = 1u << 14;

template <class Draw>
McEstimate chunked_mc(std::size_t draws, std::uint64_t seed, std::uint64_t tag, unsigned jobs, Draw draw) {
  const std::size_t chunks = (draws + kMcChunk - 1) / kMcChunk;
  std::vector<MeanAccumulator> parts(chunks);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    auto rng = RngStream::make(seed, StreamPurpose::kMonteCarlo, tag, c);
    const std::size_t count = std::min(kMcChunk, draws - c * kMcChunk);
    for (std::size_t k = 0; k < count; ++k) parts[c].add(draw(rng));
  });
  MeanAccumulator total;
  for (const auto& p : parts) total.merge(p);
  return {total.mean(), total.stderr_of_mean(), total.count()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Frequentist game

/// (mu - mu_i)^2 + sigma^2 / N.
inline double truthful_mse(const MeanGameSpec& spec, std::size_t client) {
  detail::check_frequentist(spec, client);
  const double n = static_cast<double>(spec.mus.size());
  const double bias = detail::population_mean(spec) - spec.mus[client];
  return bias * bias + spec.sigma * spec.sigma / n;
}

/// Error of the average when `client` reports c x_i and everyone else is truthful.
inline double deviation_mse(const MeanGameSpec& spec, std::size_t client, double c) {
  detail::check_frequentist(spec, client);
  const double n = static_cast<double>(spec.mus.size());
  const double mu_i = spec.mus[client];
  const double s2 = spec.sigma * spec.sigma;
  const double bias = detail::population_mean(spec) + (c - 1.0) * mu_i / n - mu_i;
  return bias * bias + s2 / n + (c * c - 1.0) * s2 / (n * n);
}

struct OptimalScale {
  double c_star = 1.0;
  double mse = 0.0;
  bool profitable = false;
};

/// Best constant scaling for `client`. Outside the profitable regime
/// mu_i (mu_i - mu) > sigma^2 / N the truthful point is returned.
inline OptimalScale optimal_scale(const MeanGameSpec& spec, std::size_t client) {
  detail::check_frequentist(spec, client);
  const double n = static_cast<double>(spec.mus.size());
  const double mu = detail::population_mean(spec);
  const double mu_i = spec.mus[client];
  const double s2 = spec.sigma * spec.sigma;
  const double lead = mu_i * (mu_i - mu);
  OptimalScale out;
  out.mse = truthful_mse(spec, client);
  if (!(lead > s2 / n)) return out;
  const double denom = mu_i * mu_i + s2;
  out.c_star = (mu_i * mu_i + lead * n) / denom;
  const double gap = s2 / n - lead;
  out.mse -= gap * gap / denom;
  out.profitable = true;
  return out;
}

/// Monte Carlo of the frequentist error: x_j ~ N(mu_j, sigma^2).
inline McEstimate mc_scaled_mse(const MeanGameSpec& spec, std::size_t client, double c, std::size_t draws,
                                std::uint64_t seed, unsigned jobs = 1) {
  detail::check_frequentist(spec, client);
  const std::size_t n = spec.mus.size();
  return detail::chunked_mc(draws, seed, 1, jobs, [&](RngStream& rng) {
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double x = spec.mus[j] + spec.sigma * rng.normal();
      sum += j == client ? c * x : x;
    }
    const double err = sum / static_cast<double>(n) - spec.mus[client];
    return err * err;
  });
}

// ---------------------------------------------------------------------------
// Hierarchical game

struct Precisions {
  std::vector<double> data;  // tau_j = n / sigma_j^2
  std::vector<double> rho;   // tau tau_j / (tau + tau_j)
  double rho_sum = 0.0;
};

inline Precisions precisions(const MeanGameSpec& spec, std::size_t min_n = 2) {
  detail::check_bayes(spec, min_n);
  Precisions p;
  for (double s : spec.sigmas) {
    const double tj = static_cast<double>(spec.n_samples) / (s * s);
    p.data.push_back(tj);
    p.rho.push_back(spec.tau * tj / (spec.tau + tj));
    p.rho_sum += p.rho.back();
  }
  return p;
}

struct Gaussian {
  double mean = 0.0;
  double variance = 0.0;
};

/// Posterior of mu_i given every client's sample mean.
inline Gaussian posterior(const MeanGameSpec& spec, std::size_t client, std::span<const double> xbars) {
  const Precisions p = precisions(spec, 1);
  if (client >= p.data.size()) throw ConfigError("client index out of range", "meanest.client");
  if (xbars.size() != p.data.size()) throw ConfigError("expected one sample mean per client", "meanest.xbars");
  double others = 0.0;
  double weighted = 0.0;
  for (std::size_t j = 0; j < p.data.size(); ++j) {
    if (j == client) continue;
    others += p.rho[j];
    weighted += p.rho[j] * xbars[j];
  }
  const double beta = spec.tau / (others + spec.tau + spec.tau0);
  const double precision = p.data[client] + beta * (others + spec.tau0);
  return {(p.data[client] * xbars[client] + beta * weighted) / precision, 1.0 / precision};
}

/// E[(mu_bar - mu_i)^2] for mu_bar = (1/N) sum_j c_j xbar_j.
inline double expected_error(const MeanGameSpec& spec, std::span<const double> weights, std::size_t client) {
  const Precisions p = precisions(spec);
  const std::size_t count = p.rho.size();
  if (weights.size() != count) throw ConfigError("expected one weight per client", "meanest.weights");
  if (client >= count) throw ConfigError("client index out of range", "meanest.client");
  const double n = static_cast<double>(count);
  double quad = 0.0;
  double total = 0.0;
  for (std::size_t j = 0; j < count; ++j) {
    quad += weights[j] * weights[j] / (n * n * p.rho[j]);
    total += weights[j];
  }
  const double t = spec.tau;
  const double t0 = spec.tau0;
  return quad + total * total / (n * n * t0) - 2.0 * weights[client] / (n * t) - 2.0 * total / (n * t0) + 1.0 / t +
         1.0 / t0;
}

struct Equilibrium {
  std::vector<double> weights;
  std::vector<double> errors;
};

inline Equilibrium nash_equilibrium(const MeanGameSpec& spec) {
  const Precisions p = precisions(spec);
  const double n = static_cast<double>(p.rho.size());
  const double t = spec.tau;
  const double t0 = spec.tau0;
  const double k = 1.0 / t + 1.0 / t0;
  const double shrink = 1.0 + p.rho_sum / t0;
  Equilibrium eq;
  for (double r : p.rho) {
    eq.weights.push_back(n * r * k / shrink);
    eq.errors.push_back(k * (p.rho_sum - 2.0 * r + t) / (t * shrink));
  }
  return eq;
}

/// Hierarchical Monte Carlo: mu ~ N(0, 1/tau0), mu_j ~ N(mu, 1/tau),
/// xbar_j ~ N(mu_j, sigma_j^2 / n).
inline McEstimate mc_mse(const MeanGameSpec& spec, std::span<const double> weights, std::size_t client,
                         std::size_t draws, std::uint64_t seed, unsigned jobs = 1) {
  const Precisions p = precisions(spec);
  const std::size_t count = p.rho.size();
  if (weights.size() != count) throw ConfigError("expected one weight per client", "meanest.weights");
  if (client >= count) throw ConfigError("client index out of range", "meanest.client");
  if (draws < 10000) throw StatisticsError("mc_mse needs >= 10^4 draws");
  const double sd0 = 1.0 / std::sqrt(spec.tau0);
  const double sd = 1.0 / std::sqrt(spec.tau);
  std::vector<double> sd_data;
  for (double tj : p.data) sd_data.push_back(1.0 / std::sqrt(tj));
  return detail::chunked_mc(draws, seed, 2, jobs, [&](RngStream& rng) {
    const double mu = sd0 * rng.normal();
    double estimate = 0.0;
    double target = 0.0;
    for (std::size_t j = 0; j < count; ++j) {
      const double mu_j = mu + sd * rng.normal();
      estimate += weights[j] * (mu_j + sd_data[j] * rng.normal());
      if (j == client) target = mu_j;
    }
    const double err = estimate / static_cast<double>(count) - target;
    return err * err;
  });
}

struct AnarchyReport {
  double eq_error_limit = 0.0;        // 1/tau + tau0/tau^2
  double truthful_error_limit = 0.0;  // 1/tau
  double ratio = 1.0;
  std::vector<double> eq_errors;
  std::vector<double> truthful_errors;
  // Finite N: equilibrium error above truthful error, per client.
  std::vector<bool> exceeds;
  // tau^2 + tau_j tau < tau_j tau0, per client.
  std::vector<bool> heterogeneity_condition;
};

inline AnarchyReport penalty_of_anarchy(const MeanGameSpec& spec) {
  const Precisions p = precisions(spec);
  const double t = spec.tau;
  const double t0 = spec.tau0;
  AnarchyReport out;
  out.eq_error_limit = 1.0 / t + t0 / (t * t);
  out.truthful_error_limit = 1.0 / t;
  out.ratio = out.eq_error_limit / out.truthful_error_limit;
  const Equilibrium eq = nash_equilibrium(spec);
  const std::vector<double> ones(p.rho.size(), 1.0);
  for (std::size_t i = 0; i < p.rho.size(); ++i) {
    out.eq_errors.push_back(eq.errors[i]);
    out.truthful_errors.push_back(expected_error(spec, ones, i));
    out.exceeds.push_back(out.eq_errors.back() > out.truthful_errors.back());
    out.heterogeneity_condition.push_back(t * t + p.data[i] * t < p.data[i] * t0);
  }
  return out;
}

}  // namespace fedmech
