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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmech/errors.hpp"
#include "fedmech/numeric.hpp"
#include "fedmech/objectives.hpp"
#include "fedmech/payments.hpp"
#include "fedmech/rng.hpp"
#include "fedmech/schedule.hpp"
#include "fedmech/strategies.hpp"
#include "fedmech/trace.hpp"

namespace fedmech {

enum class Aggregation { kMean, kCoordinateMedian };

struct ProtocolConfig {
  std::size_t n_clients = 2;
  std::size_t horizon = 1;
  LearningRateSchedule schedule = LearningRateSchedule::constant(0.1);
  Aggregation aggregation = Aggregation::kMean;
  // 1 = FedSGD; K > 1 = FedAvg with K local SGD steps per round.
  std::size_t local_steps = 1;
  ModelVector theta_init;
  std::uint64_t seed = 0;
  // Seed of the strategy-randomness streams; defaults to `seed`.
  std::optional<std::uint64_t> strategy_seed;
  // Abort once ||theta_t|| > divergence_factor * (1 + ||theta_1||).
  double divergence_factor = 1e6;
};

namespace detail {

inline void validate(const ProtocolConfig& config, std::span<const ClientObjective> clients,
                     std::span<const StrategyPlan> plans) {
  if (config.n_clients < 2) throw ConfigError("N must be >= 2", "protocol.n_clients");
  if (config.horizon < 1) throw ConfigError("T must be >= 1", "protocol.horizon");
  if (config.local_steps < 1) throw ConfigError("local_steps must be >= 1", "protocol.local_steps");
  if (clients.size() != config.n_clients) throw ConfigError("expected N client objectives", "clients");
  if (plans.size() != config.n_clients) throw ConfigError("expected N strategy plans", "strategies");
  for (const auto& c : clients) {
    if (c.dimension() != config.theta_init.size()) {
      throw ConfigError("client dimension differs from theta_init", "clients");
    }
  }
  if (!all_finite(config.theta_init)) throw ConfigError("theta_init must be finite", "protocol.theta_init");
}

}  // namespace detail

/// Runs FedSGD (mean or coordinate-median aggregation) or FedAvg and records
/// the whole trajectory. Deterministic in config.seed / config.strategy_seed:
/// the gradient noise of client i at step t (local step k) comes from stream
/// (seed, gradient, i, t, k) and strategy randomness from
/// (strategy_seed, strategy, i, t), independent of every plan.
inline RunTrace run(const ProtocolConfig& config, std::span<const ClientObjective> clients,
                    std::span<const StrategyPlan> plans, const PaymentSchedule* payments = nullptr) {
  detail::validate(config, clients, plans);
  if (payments != nullptr && payments->kind() == PaymentSchedule::Kind::kTheoremOne &&
      payments->horizon() != config.horizon) {
    throw ConfigError("payment schedule horizon differs from protocol horizon", "payment");
  }
  const std::size_t n = config.n_clients;
  const std::size_t horizon = config.horizon;
  const std::uint64_t strategy_seed = config.strategy_seed.value_or(config.seed);

  RunTrace trace;
  trace.thetas.reserve(horizon + 1);
  trace.thetas.push_back(config.theta_init);
  trace.messages.reserve(horizon);
  trace.gradients.reserve(horizon);
  trace.gammas = config.schedule.gammas(horizon);
  if (payments != nullptr) {
    trace.payments.emplace();
    trace.payments->reserve(horizon);
    trace.payment_constants.reserve(horizon);
  }
  trace.global_loss_curve.push_back(global_evaluate(clients, config.theta_init));
  const double guard = config.divergence_factor * (1.0 + config.theta_init.norm());

  std::vector<ModelVector> payloads(n);
  for (std::size_t t = 0; t < horizon; ++t) {
    const ModelVector theta = trace.thetas[t];
    const double gamma = trace.gammas[t];
    trace.gradients.emplace_back(n);
    trace.messages.emplace_back(n);
    for (std::size_t i = 0; i < n; ++i) {
      ModelVector reported;
      if (config.local_steps == 1) {
        auto rng = RngStream::make(config.seed, StreamPurpose::kGradient, i, t, 0);
        reported = sample_gradient(clients[i], theta, rng);
      } else {
        // Pseudo-gradient (theta_t - theta_local_K) / gamma_t, accumulated as
        // the sum of local gradients.
        ModelVector local = theta;
        reported = ModelVector::Zero(theta.size());
        for (std::size_t k = 0; k < config.local_steps; ++k) {
          auto rng = RngStream::make(config.seed, StreamPurpose::kGradient, i, t, k);
          const ModelVector g = sample_gradient(clients[i], local, rng);
          reported += g;
          local -= gamma * g;
        }
      }
      trace.gradients[t][i] = std::move(reported);
      const HistoryView history(trace, i, t);
      auto srng = RngStream::make(strategy_seed, StreamPurpose::kStrategy, i, t);
      trace.messages[t][i] = make_message(plans[i], trace.gradients[t][i], t, &history, srng);
      payloads[i] = trace.messages[t][i].payload;
    }
    const ModelVector update =
        config.aggregation == Aggregation::kMean ? mean_of(payloads) : coordinate_median(payloads);
    ModelVector next = theta - gamma * update;
    if (!all_finite(next)) throw DivergenceError(t + 2, "non-finite model");
    if (next.norm() > guard) throw DivergenceError(t + 2, "model norm exceeded the divergence guard");
    if (payments != nullptr) {
      const double c_t = payments->coefficient(t);
      trace.payment_constants.push_back(c_t);
      trace.payments->push_back(step_payments(trace.messages[t], c_t));
    }
    trace.global_loss_curve.push_back(global_evaluate(clients, next));
    trace.thetas.push_back(std::move(next));
  }
  trace.losses_final.resize(n);
  for (std::size_t i = 0; i < n; ++i) trace.losses_final[i] = reward_loss(clients[i], trace.thetas.back());
  return trace;
}

/// Reward R_i(theta_{T+1}) as a function of the final per-client losses.
struct RewardSpec {
  enum class Kind { kNegLoss, kLogistic, kGroupAverage, kCompetitive };
  Kind kind = Kind::kNegLoss;
  std::vector<std::size_t> group;  // kGroupAverage: the set S_i
  double alpha = 1.0;              // kCompetitive
  double beta = 0.0;               // kCompetitive

  static RewardSpec neg_loss() { return {}; }
  static RewardSpec logistic() { return {Kind::kLogistic, {}, 1.0, 0.0}; }
  static RewardSpec group_average(std::vector<std::size_t> members) {
    if (members.empty()) throw ConfigError("group reward needs a non-empty group", "reward.group");
    return {Kind::kGroupAverage, std::move(members), 1.0, 0.0};
  }
  static RewardSpec competitive(double alpha, double beta) { return {Kind::kCompetitive, {}, alpha, beta}; }

  friend bool operator==(const RewardSpec&, const RewardSpec&) = default;
};

inline double reward(const RewardSpec& spec, std::span<const double> losses, std::size_t client) {
  const double own = losses[client];
  switch (spec.kind) {
    case RewardSpec::Kind::kNegLoss:
      return -own;
    case RewardSpec::Kind::kLogistic:
      // 1 / (1 + exp(-1/F)), continuously extended to 1 at F = 0.
      if (own == 0.0) return 1.0;
      return 1.0 / (1.0 + std::exp(-1.0 / own));
    case RewardSpec::Kind::kGroupAverage: {
      CompensatedSum s;
      for (std::size_t j : spec.group) s.add(losses[j]);
      return -s.value() / static_cast<double>(spec.group.size());
    }
    case RewardSpec::Kind::kCompetitive: {
      CompensatedSum others;
      for (std::size_t j = 0; j < losses.size(); ++j) {
        if (j != client) others.add(losses[j]);
      }
      return -spec.alpha * own + spec.beta / static_cast<double>(losses.size() - 1) * others.value();
    }
  }
  return -own;
}

/// U_i = R_i(theta_{T+1}) - sum_t p_t^i (no payments recorded counts as zero).
inline double utility(const RunTrace& trace, std::size_t client, const RewardSpec& spec) {
  if (client >= trace.n_clients()) throw ConfigError("client index out of range");
  for (std::size_t j : spec.group) {
    if (j >= trace.n_clients()) throw ConfigError("group member out of range", "reward.group");
  }
  const double r = reward(spec, trace.losses_final, client);
  return trace.payments ? r - total_payment(trace, client) : r;
}

}  // namespace fedmech
