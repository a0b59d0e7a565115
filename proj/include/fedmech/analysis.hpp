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
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmech/errors.hpp"
#include "fedmech/numeric.hpp"
#include "fedmech/objectives.hpp"
#include "fedmech/parallel.hpp"
#include "fedmech/payments.hpp"
#include "fedmech/protocol.hpp"
#include "fedmech/rng.hpp"
#include "fedmech/strategies.hpp"

namespace fedmech {

// ---------------------------------------------------------------------------
// Best-response search

struct GridPoint {
  double scale = 1.0;
  double noise = 0.0;
  double mean_utility = 0.0;  // deviant
  double stderr_utility = 0.0;
  double mean_gain = 0.0;  // paired against the truthful point
  double stderr_gain = 0.0;
  std::size_t replications = 0;
  bool diverged = false;
  std::vector<double> client_mean_utility;
  std::vector<double> client_stderr_utility;
};

struct BestResponseResult {
  double best_scale = 1.0;
  double best_noise = 0.0;
  double best_utility = 0.0;
  double truthful_utility = 0.0;
  double gain = 0.0;
  // Standard error of the paired utility difference at the best point.
  double gain_stderr = 0.0;
  std::vector<GridPoint> grid;  // a-major, then b
  std::size_t replications = 0;
};

/// Evaluates every (a, b) on the grid for client `deviant` with all other
/// clients truthful. Replication r of every grid point uses the same seed
/// (common random numbers), so utility differences are paired.
inline std::vector<GridPoint> evaluate_deviation_grid(const ProtocolConfig& config,
                                                      std::span<const ClientObjective> clients,
                                                      const PaymentSchedule* payments, const RewardSpec& reward,
                                                      std::size_t deviant, std::span<const double> a_grid,
                                                      std::span<const double> b_grid, std::size_t replications,
                                                      unsigned jobs = 1) {
  if (replications < 1) throw ConfigError("replications must be >= 1", "replications");
  if (deviant >= config.n_clients) throw ConfigError("deviant index out of range", "sweep.deviant");
  if (a_grid.empty() || b_grid.empty()) throw ConfigError("grids must not be empty");
  const std::size_t n = config.n_clients;
  const std::size_t points = a_grid.size() * b_grid.size();

  // Slot (point, rep) -> per-client utilities, or empty when the run diverged.
  std::vector<std::vector<double>> utilities(points * replications);
  // Truthful reference utilities per replication (point (1, 0)).
  std::vector<std::vector<double>> reference(replications);

  auto run_once = [&](double a, double b, std::size_t rep) -> std::vector<double> {
    ProtocolConfig cfg = config;
    cfg.seed = replication_seed(config.seed, rep);
    cfg.strategy_seed = replication_seed(config.strategy_seed.value_or(config.seed) ^ 0x5bd1e995ULL, rep);
    std::vector<StrategyPlan> plans(n, StrategyPlan::truthful());
    if (a != 1.0 || b != 0.0) plans[deviant] = StrategyPlan::pure(a, b);
    try {
      const RunTrace trace = run(cfg, clients, plans, payments);
      std::vector<double> u(n);
      for (std::size_t i = 0; i < n; ++i) u[i] = utility(trace, i, reward);
      return u;
    } catch (const DivergenceError&) {
      return {};
    }
  };

  parallel_for(points * replications + replications, jobs, [&](std::size_t k) {
    if (k < points * replications) {
      const std::size_t point = k / replications;
      const std::size_t rep = k % replications;
      utilities[k] = run_once(a_grid[point / b_grid.size()], b_grid[point % b_grid.size()], rep);
    } else {
      reference[k - points * replications] = run_once(1.0, 0.0, k - points * replications);
    }
  });
  for (const auto& ref : reference) {
    if (ref.empty()) throw AnalysisError("truthful reference run diverged");
  }

  std::vector<GridPoint> grid(points);
  for (std::size_t point = 0; point < points; ++point) {
    GridPoint& gp = grid[point];
    gp.scale = a_grid[point / b_grid.size()];
    gp.noise = b_grid[point % b_grid.size()];
    std::vector<MeanAccumulator> per_client(n);
    MeanAccumulator gain;
    for (std::size_t rep = 0; rep < replications; ++rep) {
      const auto& u = utilities[point * replications + rep];
      if (u.empty()) {
        gp.diverged = true;
        continue;
      }
      for (std::size_t i = 0; i < n; ++i) per_client[i].add(u[i]);
      gain.add(u[deviant] - reference[rep][deviant]);
    }
    gp.replications = per_client[deviant].count();
    gp.mean_utility = per_client[deviant].mean();
    gp.stderr_utility = per_client[deviant].stderr_of_mean();
    gp.mean_gain = gain.mean();
    gp.stderr_gain = gain.stderr_of_mean();
    for (const auto& acc : per_client) {
      gp.client_mean_utility.push_back(acc.mean());
      gp.client_stderr_utility.push_back(acc.stderr_of_mean());
    }
  }
  return grid;
}

/// Argmax over the non-diverged points of an evaluated grid.
inline BestResponseResult summarize_grid(std::vector<GridPoint> grid, std::size_t replications) {
  BestResponseResult out;
  out.replications = replications;
  out.grid = std::move(grid);
  const GridPoint* best = nullptr;
  for (const auto& gp : out.grid) {
    if (gp.scale == 1.0 && gp.noise == 0.0) out.truthful_utility = gp.mean_utility;
    if (gp.diverged) continue;
    if (best == nullptr || gp.mean_utility > best->mean_utility) best = &gp;
  }
  if (best == nullptr) throw AnalysisError("every grid point diverged");
  out.best_scale = best->scale;
  out.best_noise = best->noise;
  out.best_utility = best->mean_utility;
  out.gain = best->mean_gain;
  out.gain_stderr = best->stderr_gain;
  return out;
}

inline BestResponseResult best_response(const ProtocolConfig& config, std::span<const ClientObjective> clients,
                                        const PaymentSchedule* payments, const RewardSpec& reward,
                                        std::size_t deviant, std::span<const double> a_grid,
                                        std::span<const double> b_grid, std::size_t replications,
                                        unsigned jobs = 1) {
  if (std::find(a_grid.begin(), a_grid.end(), 1.0) == a_grid.end()) {
    throw ConfigError("a_grid must contain 1.0", "a_grid");
  }
  if (std::find(b_grid.begin(), b_grid.end(), 0.0) == b_grid.end()) {
    throw ConfigError("b_grid must contain 0.0", "b_grid");
  }
  return summarize_grid(
      evaluate_deviation_grid(config, clients, payments, reward, deviant, a_grid, b_grid, replications, jobs),
      replications);
}

// ---------------------------------------------------------------------------
// Constants and closed-form bounds

struct TheoremConstants {
  double m = 0.0;
  double H = 0.0;
  double L = 0.0;
  double sigma = 0.0;  // max_i sigma_i
  bool approximate = false;
};

/// Conservative single (m, H, L) triple for heterogeneous clients:
/// m = min m_i, H = max H_i, L = max L_i.
inline TheoremConstants theorem_constants(std::span<const ClientObjective> clients, bool allow_nonconvex = false) {
  if (clients.empty()) throw ConfigError("empty client list");
  TheoremConstants out;
  out.m = std::numeric_limits<double>::infinity();
  for (const auto& c : clients) {
    if (!c.is_convex() && !allow_nonconvex) {
      throw AnalysisError("theorem constants are undefined for non-convex objectives");
    }
    const ObjectiveConstants k = constants(c);
    out.m = std::min(out.m, k.m);
    out.H = std::max(out.H, k.H);
    out.L = std::max(out.L, k.L);
    out.sigma = std::max(out.sigma, k.sigma);
    out.approximate = out.approximate || k.approximate;
  }
  return out;
}

inline PaymentSchedule theorem_one_schedule(const LearningRateSchedule& schedule, std::size_t horizon,
                                            const TheoremConstants& k, std::size_t n_clients, double epsilon) {
  return PaymentSchedule::theorem_one({schedule.gammas(horizon), k.m, k.H, k.L, n_clients, epsilon});
}

/// sqrt(2) L G eps / N.
inline double bic_gap_bound(const PaymentSchedule& payments, double L, std::size_t n_clients, double epsilon) {
  if (payments.kind() != PaymentSchedule::Kind::kTheoremOne) {
    throw AnalysisError("the BIC bound is only defined for theorem-one schedules");
  }
  return std::sqrt(2.0) * L * payments.G() * epsilon / static_cast<double>(n_clients);
}

/// Upper bound on client i's total payment when everyone is eps-truthful:
/// (sqrt2 L G / N)[2eps^2 + 2 eps sigma + 2 zeta^2 + rho^2]
///   + (sqrt8 L eps / N) sum_t gamma_t sqrt(CalC_t) ||grad F_i(theta_t)||.
inline double payment_bound(const PaymentSchedule& payments, double epsilon, double sigma, double zeta,
                            double rho, std::span<const double> grad_norm_curve) {
  if (payments.kind() != PaymentSchedule::Kind::kTheoremOne) {
    throw AnalysisError("the payment bound is only defined for theorem-one schedules");
  }
  if (grad_norm_curve.size() != payments.horizon()) {
    throw AnalysisError("gradient-norm curve length differs from the horizon");
  }
  const auto& in = payments.inputs();
  const double n = static_cast<double>(in.n_clients);
  const double head = std::sqrt(2.0) * in.L * payments.G() / n *
                      (2.0 * epsilon * epsilon + 2.0 * epsilon * sigma + 2.0 * zeta * zeta + rho * rho);
  CompensatedSum tail;
  for (std::size_t t = 0; t < grad_norm_curve.size(); ++t) {
    const double root = payments.log_space() ? std::exp(0.5 * payments.log_products()[t])
                                             : std::sqrt(payments.products()[t]);
    tail.add(in.gammas[t] * root * grad_norm_curve[t]);
  }
  return head + std::sqrt(8.0) * in.L * epsilon / n * tail.value();
}

/// max{ 16H(2eps^2 + M + M_V zeta^2) / (3 N m^2 (eta + T)), (eta + 1) gap / (eta + T) }.
inline double convergence_bound(double m, double H, double n_clients, double M, double M_V, double zeta,
                                double epsilon, double eta, double horizon, double initial_gap) {
  if (!(m > 0.0)) throw ConfigError("m must be > 0");
  if (!(horizon >= 1.0)) throw ConfigError("T must be >= 1");
  const double noise_branch =
      16.0 * H * (2.0 * epsilon * epsilon + M + M_V * zeta * zeta) / (3.0 * n_clients * m * m * (eta + horizon));
  const double start_branch = (eta + 1.0) * initial_gap / (eta + horizon);
  return std::max(noise_branch, start_branch);
}

/// 2(2eps^2 + M + 2 M_V zeta^2)/N + (2 M_V / N) ||grad F(theta)||^2.
inline double aggregate_variance_bound(double epsilon, double M, double M_V, double zeta, double n_clients,
                                       double global_grad_sq_norm) {
  return 2.0 * (2.0 * epsilon * epsilon + M + 2.0 * M_V * zeta * zeta) / n_clients +
         2.0 * M_V / n_clients * global_grad_sq_norm;
}

// ---------------------------------------------------------------------------
// Empirical checks

enum class BoundName { kBicGap, kPaymentTotal, kConvergenceRate, kAggregateVariance, kGradientNorm };

inline const char* to_string(BoundName b) {
  switch (b) {
    case BoundName::kBicGap:
      return "bic_gap";
    case BoundName::kPaymentTotal:
      return "payment_total";
    case BoundName::kConvergenceRate:
      return "convergence_rate";
    case BoundName::kAggregateVariance:
      return "aggregate_variance";
    case BoundName::kGradientNorm:
      return "gradient_norm";
  }
  return "unknown";
}

struct BoundReport {
  BoundName bound_name = BoundName::kBicGap;
  double theoretical = 0.0;
  double empirical = 0.0;
  // Statistical allowance; satisfied <=> empirical <= theoretical + tolerance.
  double tolerance = 0.0;
  bool satisfied = false;
  double slack = 0.0;  // theoretical - empirical
  // Context: probe step, client and replication (-1 when not applicable).
  long step = -1;
  long client = -1;
  long replication = -1;
};

inline BoundReport make_report(BoundName name, double theoretical, double empirical, double tolerance) {
  BoundReport r;
  r.bound_name = name;
  r.theoretical = theoretical;
  r.empirical = empirical;
  r.tolerance = tolerance;
  r.satisfied = empirical <= theoretical + tolerance;
  r.slack = theoretical - empirical;
  return r;
}

inline constexpr std::size_t kMinVarianceReplications = 30;
inline constexpr std::size_t kMinGradientNormReplications = 1000;

/// Conditional variance of the aggregate message at fixed models: the
/// reference trajectory is frozen and, at each probe step, every client's
/// gradient and message are redrawn `replications` times from fresh streams.
inline std::vector<BoundReport> aggregate_variance_check(const ProtocolConfig& config,
                                                         std::span<const ClientObjective> clients,
                                                         std::span<const StrategyPlan> plans,
                                                         const RunTrace& reference,
                                                         std::span<const std::size_t> probe_steps,
                                                         std::size_t replications, double epsilon, double M,
                                                         double M_V, double zeta) {
  if (replications < kMinVarianceReplications) {
    throw StatisticsError("aggregate variance check needs >= 30 replications, got " + std::to_string(replications));
  }
  if (config.local_steps != 1) throw AnalysisError("aggregate variance check is defined for FedSGD");
  const std::size_t n = clients.size();
  std::vector<BoundReport> out;
  for (std::size_t t : probe_steps) {
    if (t >= reference.horizon()) throw AnalysisError("probe step beyond the reference horizon");
    const ModelVector& theta = reference.thetas[t];
    std::vector<ModelVector> aggregates(replications);
    for (std::size_t r = 0; r < replications; ++r) {
      const std::uint64_t seed = derive_key(config.seed, StreamPurpose::kReplication, r, t, 1);
      ModelVector agg = ModelVector::Zero(theta.size());
      for (std::size_t i = 0; i < n; ++i) {
        auto grng = RngStream::make(seed, StreamPurpose::kGradient, i, t);
        const ModelVector g = sample_gradient(clients[i], theta, grng);
        auto srng = RngStream::make(seed, StreamPurpose::kStrategy, i, t);
        const HistoryView history(reference, i, t);
        agg += make_message(plans[i], g, t, &history, srng).payload;
      }
      aggregates[r] = agg / static_cast<double>(n);
    }
    const ModelVector centre = mean_of(aggregates);
    MeanAccumulator dev;
    for (const auto& a : aggregates) dev.add((a - centre).squaredNorm());
    const double rd = static_cast<double>(replications);
    const double variance = dev.mean() * rd / (rd - 1.0);
    const double bound = aggregate_variance_bound(epsilon, M, M_V, zeta, static_cast<double>(n),
                                                  global_gradient(clients, theta).squaredNorm());
    // Rounding floor: squared deviations of an exactly constant aggregate are
    // O(eps^2 ||agg||^2), not zero.
    const double eps = std::numeric_limits<double>::epsilon();
    const double rounding = 16.0 * eps * eps * (1.0 + centre.squaredNorm());
    BoundReport rep =
        make_report(BoundName::kAggregateVariance, bound, variance, 3.0 * dev.stderr_of_mean() + rounding);
    rep.step = static_cast<long>(t);
    out.push_back(rep);
  }
  return out;
}

/// E||g_i(theta)|| <= ||grad F_i(theta)|| + sigma at each probe point.
inline std::vector<BoundReport> gradient_norm_check(const ClientObjective& client,
                                                    std::span<const ModelVector> thetas, std::size_t replications,
                                                    std::uint64_t seed = 0) {
  if (replications < kMinGradientNormReplications) {
    throw StatisticsError("gradient norm check needs >= 1000 replications, got " + std::to_string(replications));
  }
  std::vector<BoundReport> out;
  for (std::size_t p = 0; p < thetas.size(); ++p) {
    MeanAccumulator norms;
    for (std::size_t r = 0; r < replications; ++r) {
      auto rng = RngStream::make(seed, StreamPurpose::kMonteCarlo, p, r);
      norms.add(sample_gradient(client, thetas[p], rng).norm());
    }
    const double bound = exact_gradient(client, thetas[p]).norm() + client.noise_sigma;
    BoundReport rep = make_report(BoundName::kGradientNorm, bound, norms.mean(), 3.0 * norms.stderr_of_mean());
    rep.step = static_cast<long>(p);
    out.push_back(rep);
  }
  return out;
}

struct ConvergenceCheck {
  BoundReport report;  // empirical = mean gap + 2 s.e.
  double mean_gap = 0.0;
  double stderr_gap = 0.0;
};

/// Mean of F(theta_T) - F(theta*) over seeded replications against the
/// convergence bound. Requires the theorem-three schedule and quadratic clients.
inline ConvergenceCheck convergence_check(const ProtocolConfig& config, std::span<const ClientObjective> clients,
                                          std::span<const StrategyPlan> plans, std::size_t replications,
                                          double epsilon, double M, double M_V, double zeta, unsigned jobs = 1) {
  const auto& s = config.schedule;
  if (s.kind() != LearningRateSchedule::Kind::kTheoremThree) {
    throw AnalysisError("convergence check needs the theorem-three schedule");
  }
  if (replications < 2) throw StatisticsError("convergence check needs >= 2 replications");
  const ModelVector optimum = global_minimizer(clients);
  const double f_star = global_evaluate(clients, optimum);
  const double gap0 = global_evaluate(clients, config.theta_init) - f_star;
  std::vector<double> gaps(replications);
  parallel_for(replications, jobs, [&](std::size_t r) {
    ProtocolConfig cfg = config;
    cfg.seed = replication_seed(config.seed, r);
    cfg.strategy_seed = replication_seed(config.seed ^ 0x5bd1e995ULL, r);
    const RunTrace trace = run(cfg, clients, plans);
    // theta_T in 1-based notation.
    gaps[r] = global_evaluate(clients, trace.thetas[config.horizon - 1]) - f_star;
  });
  MeanAccumulator acc;
  for (double g : gaps) acc.add(g);
  const double bound = convergence_bound(s.m(), s.H(), static_cast<double>(config.n_clients), M, M_V, zeta,
                                         epsilon, s.eta(), static_cast<double>(config.horizon), gap0);
  ConvergenceCheck out;
  out.mean_gap = acc.mean();
  out.stderr_gap = acc.stderr_of_mean();
  out.report = make_report(BoundName::kConvergenceRate, bound, out.mean_gap + 2.0 * out.stderr_gap, 0.0);
  return out;
}

/// Realized total payment of every client in every replication against the
/// payment bound evaluated on that run's ||grad F_i(theta_t)|| curve.
inline std::vector<BoundReport> payment_check(const ProtocolConfig& config, std::span<const ClientObjective> clients,
                                              std::span<const StrategyPlan> plans, const PaymentSchedule& payments,
                                              std::size_t replications, double epsilon, double sigma, double zeta,
                                              double rho, unsigned jobs = 1) {
  const std::size_t n = clients.size();
  std::vector<std::vector<BoundReport>> slots(replications);
  parallel_for(replications, jobs, [&](std::size_t r) {
    ProtocolConfig cfg = config;
    cfg.seed = replication_seed(config.seed, r);
    cfg.strategy_seed = replication_seed(config.seed ^ 0x5bd1e995ULL, r);
    const RunTrace trace = run(cfg, clients, plans, &payments);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> curve(config.horizon);
      for (std::size_t t = 0; t < config.horizon; ++t) curve[t] = exact_gradient(clients[i], trace.thetas[t]).norm();
      BoundReport rep = make_report(BoundName::kPaymentTotal,
                                    payment_bound(payments, epsilon, sigma, zeta, rho, curve),
                                    total_payment(trace, i), 0.0);
      rep.client = static_cast<long>(i);
      rep.replication = static_cast<long>(r);
      slots[r].push_back(rep);
    }
  });
  std::vector<BoundReport> out;
  for (auto& s : slots) out.insert(out.end(), s.begin(), s.end());
  return out;
}

/// Default probe set for heterogeneity(): the trajectory of a truthful
/// reference run plus the client centers.
inline std::vector<ModelVector> default_probe_set(const ProtocolConfig& config,
                                                  std::span<const ClientObjective> clients) {
  std::vector<StrategyPlan> plans(clients.size(), StrategyPlan::truthful());
  std::vector<ModelVector> probes;
  try {
    probes = run(config, clients, plans).thetas;
  } catch (const DivergenceError&) {
    probes.push_back(config.theta_init);
  }
  for (const auto& c : clients) probes.push_back(objective_center(c));
  return probes;
}

}  // namespace fedmech
