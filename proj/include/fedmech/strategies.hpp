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
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedmech/errors.hpp"
#include "fedmech/numeric.hpp"
#include "fedmech/rng.hpp"
#include "fedmech/trace.hpp"

namespace fedmech {

enum class StrategyKind { kTruthful, kPure, kMixed, kHistoryDependent, kDirectional };

struct Action {
  double scale = 1.0;
  double noise = 0.0;
};

/// Distribution of a mixed-strategy parameter: a point mass, a uniform
/// interval, or a finite set of values with weights.
class ScalarDistribution {
 public:
  enum class Kind { kPoint, kUniform, kDiscrete };

  static ScalarDistribution point(double v) { return ScalarDistribution(Kind::kPoint, {v}, {1.0}); }
  static ScalarDistribution uniform(double lo, double hi) {
    if (!(lo <= hi)) throw ConfigError("uniform distribution needs lo <= hi");
    return ScalarDistribution(Kind::kUniform, {lo, hi}, {});
  }
  static ScalarDistribution discrete(std::vector<double> values, std::vector<double> weights) {
    if (values.empty() || values.size() != weights.size()) {
      throw ConfigError("discrete distribution needs matching non-empty values and weights");
    }
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw ConfigError("discrete weights must be >= 0");
      total += w;
    }
    if (!(total > 0.0)) throw ConfigError("discrete weights must not all be zero");
    for (double& w : weights) w /= total;
    return ScalarDistribution(Kind::kDiscrete, std::move(values), std::move(weights));
  }

  double sample(RngStream& rng) const {
    switch (kind_) {
      case Kind::kPoint:
        return values_[0];
      case Kind::kUniform:
        return rng.uniform(values_[0], values_[1]);
      case Kind::kDiscrete: {
        const double u = rng.uniform(0.0, 1.0);
        double acc = 0.0;
        for (std::size_t k = 0; k < values_.size(); ++k) {
          acc += weights_[k];
          if (u < acc) return values_[k];
        }
        return values_.back();
      }
    }
    return values_[0];
  }

  double support_min() const { return *std::min_element(values_.begin(), values_.end()); }
  double support_max() const { return *std::max_element(values_.begin(), values_.end()); }
  Kind kind() const { return kind_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& weights() const { return weights_; }

  friend bool operator==(const ScalarDistribution&, const ScalarDistribution&) = default;

 private:
  ScalarDistribution(Kind kind, std::vector<double> values, std::vector<double> weights)
      : kind_(kind), values_(std::move(values)), weights_(std::move(weights)) {}

  Kind kind_ = Kind::kPoint;
  std::vector<double> values_;
  std::vector<double> weights_;
};

using HistoryPolicy = std::function<Action(const HistoryView&)>;

/// One client's reporting strategy over the whole run. Per-step schedules of
/// length one are treated as constant.
struct StrategyPlan {
  StrategyKind kind = StrategyKind::kTruthful;
  std::vector<double> scales{1.0};
  std::vector<double> noises{0.0};
  std::vector<double> angles{0.0};
  ScalarDistribution scale_dist = ScalarDistribution::point(1.0);
  ScalarDistribution noise_dist = ScalarDistribution::point(0.0);
  HistoryPolicy policy;

  static StrategyPlan truthful() { return {}; }

  static StrategyPlan pure(double scale, double noise) {
    return pure_schedule(std::vector<double>{scale}, std::vector<double>{noise});
  }

  static StrategyPlan pure_schedule(std::vector<double> scales, std::vector<double> noises) {
    check_scales(scales);
    check_noises(noises);
    StrategyPlan p;
    p.kind = StrategyKind::kPure;
    p.scales = std::move(scales);
    p.noises = std::move(noises);
    return p;
  }

  static StrategyPlan mixed(ScalarDistribution scale, ScalarDistribution noise) {
    const bool positive = scale.support_min() >= 1.0;
    const bool negative = scale.support_max() <= -1.0;
    if (!positive && !negative) throw ConfigError("mixed scale support must lie in [1, a_max] or [-a_max, -1]");
    if (noise.support_min() < 0.0) throw ConfigError("mixed noise support must be >= 0");
    StrategyPlan p;
    p.kind = StrategyKind::kMixed;
    p.scale_dist = std::move(scale);
    p.noise_dist = std::move(noise);
    return p;
  }

  static StrategyPlan history_dependent(HistoryPolicy policy) {
    if (!policy) throw ConfigError("history-dependent plan needs a policy");
    StrategyPlan p;
    p.kind = StrategyKind::kHistoryDependent;
    p.policy = std::move(policy);
    return p;
  }

  static StrategyPlan directional(std::vector<double> scales, std::vector<double> noises,
                                  std::vector<double> angles) {
    check_scales(scales);
    check_noises(noises);
    if (angles.empty()) throw ConfigError("angle schedule must not be empty");
    for (double phi : angles) {
      if (!(phi >= 0.0 && phi <= std::numbers::pi)) throw ConfigError("angle must lie in [0, pi]");
    }
    StrategyPlan p;
    p.kind = StrategyKind::kDirectional;
    p.scales = std::move(scales);
    p.noises = std::move(noises);
    p.angles = std::move(angles);
    return p;
  }

  static double at(const std::vector<double>& schedule, std::size_t step) {
    return schedule.size() == 1 ? schedule[0] : schedule.at(step);
  }

 private:
  static void check_scales(const std::vector<double>& scales) {
    if (scales.empty()) throw ConfigError("scale schedule must not be empty");
    for (double a : scales) {
      if (!(std::abs(a) >= 1.0) || !std::isfinite(a)) throw ConfigError("scales must satisfy |a| >= 1");
    }
  }
  static void check_noises(const std::vector<double>& noises) {
    if (noises.empty()) throw ConfigError("noise schedule must not be empty");
    for (double b : noises) {
      if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("noise magnitudes must be >= 0");
    }
  }
};

namespace detail {

// Rotates g by phi inside span{g, e_axis}, rescales to norm a||g||, and caps
// the angle at acos(1/a) so that <h, g> >= ||g||^2.
inline ModelVector rotate_towards_axis(const ModelVector& g, double scale, double phi, bool& clipped) {
  const double gnorm = g.norm();
  const double a = std::abs(scale);
  clipped = false;
  if (gnorm == 0.0) return ModelVector::Zero(g.size());
  const ModelVector u = g / gnorm;
  ModelVector w;
  bool have_plane = false;
  for (Eigen::Index axis = 0; axis < std::min<Eigen::Index>(2, g.size()); ++axis) {
    w = -u(axis) * u;
    w(axis) += 1.0;
    const double wn = w.norm();
    if (wn > 1e-8) {
      w /= wn;
      have_plane = true;
      break;
    }
  }
  if (have_plane) {
    w -= w.dot(u) * u;
    w.normalize();
  }
  const double floor_cos = 1.0 / a;
  double c = std::cos(phi);
  if (c < floor_cos) {
    clipped = true;
    c = floor_cos;
  }
  if (!have_plane) {
    // d = 1: no rotation plane exists.
    clipped = clipped || phi > 0.0;
    return a * g;
  }
  // Rounding can push <h, g> a few ulps below ||g||^2; tilt back towards g
  // until the floor holds exactly.
  const double g2 = g.squaredNorm();
  for (int tries = 0; tries < 64 && c < 1.0; ++tries) {
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    ModelVector h = (a * gnorm) * (c * u + s * w);
    if (h.dot(g) >= g2) return h;
    c = std::min(1.0, c + std::ldexp(std::numeric_limits<double>::epsilon(), tries));
  }
  return a * g;
}

}  // namespace detail

/// Builds client's message at `step` from its sampled gradient.
/// `rng` must be the client-and-step strategy stream (not the gradient stream).
inline Message make_message(const StrategyPlan& plan, const ModelVector& gradient, std::size_t step,
                            const HistoryView* history, RngStream& rng) {
  Message msg;
  auto add_noise = [&](double b) {
    msg.realized_noise_mag = b;
    if (b > 0.0) msg.payload += b * rng.isotropic(gradient.size(), 1.0);
  };
  switch (plan.kind) {
    case StrategyKind::kTruthful:
      msg.payload = gradient;
      return msg;
    case StrategyKind::kPure: {
      const double a = StrategyPlan::at(plan.scales, step);
      msg.realized_scale = a;
      msg.payload = a * gradient;
      add_noise(StrategyPlan::at(plan.noises, step));
      return msg;
    }
    case StrategyKind::kMixed: {
      const double a = plan.scale_dist.sample(rng);
      const double b = plan.noise_dist.sample(rng);
      msg.realized_scale = a;
      msg.payload = a * gradient;
      add_noise(b);
      return msg;
    }
    case StrategyKind::kHistoryDependent: {
      if (history == nullptr) throw AnalysisError("history-dependent plan called without history");
      Action act = plan.policy(*history);
      if (!(std::abs(act.scale) >= 1.0)) {
        act.scale = std::signbit(act.scale) ? -1.0 : 1.0;
        msg.action_clamped = true;
      }
      if (!(act.noise >= 0.0)) {
        act.noise = 0.0;
        msg.action_clamped = true;
      }
      msg.realized_scale = act.scale;
      msg.payload = act.scale * gradient;
      add_noise(act.noise);
      return msg;
    }
    case StrategyKind::kDirectional: {
      const double a = StrategyPlan::at(plan.scales, step);
      const double phi = StrategyPlan::at(plan.angles, step);
      msg.realized_scale = a;
      msg.payload = detail::rotate_towards_axis(gradient, a, phi, msg.angle_clipped);
      add_noise(StrategyPlan::at(plan.noises, step));
      return msg;
    }
  }
  throw AnalysisError("unknown strategy kind");
}

/// Checks E||(a_t - 1) g_t||^2 <= eps^2 and b_t <= eps + noise_offset at every
/// step, estimating the expectation by averaging over the supplied runs.
inline bool is_approximately_truthful(const StrategyPlan& plan, std::span<const RunTrace> runs,
                                      std::size_t client, double epsilon, double noise_offset = 0.0) {
  if (plan.kind == StrategyKind::kTruthful) return true;
  if (runs.empty()) throw AnalysisError("no recorded runs");
  const std::size_t horizon = runs.front().horizon();
  for (const auto& run : runs) {
    if (run.gradients.size() != run.horizon() || run.horizon() != horizon) {
      throw AnalysisError("runs are missing recorded gradient samples");
    }
  }
  for (std::size_t t = 0; t < horizon; ++t) {
    double acc = 0.0;
    for (const auto& run : runs) {
      const Message& msg = run.messages[t].at(client);
      if (msg.realized_noise_mag > epsilon + noise_offset) return false;
      const double d = msg.realized_scale - 1.0;
      acc += d * d * run.gradients[t].at(client).squaredNorm();
    }
    if (acc / static_cast<double>(runs.size()) > epsilon * epsilon) return false;
  }
  return true;
}

/// Exact version for fixed-schedule plans given E||g_t||^2 per step
/// (a single value is used for every step).
inline bool is_approximately_truthful(const StrategyPlan& plan, std::span<const double> expected_sq_norms,
                                      std::size_t horizon, double epsilon, double noise_offset = 0.0) {
  if (plan.kind == StrategyKind::kTruthful) return true;
  if (plan.kind != StrategyKind::kPure) throw AnalysisError("analytic check needs a pure plan");
  if (expected_sq_norms.empty()) throw AnalysisError("missing E||g||^2 values");
  for (std::size_t t = 0; t < horizon; ++t) {
    const double a = StrategyPlan::at(plan.scales, t);
    const double b = StrategyPlan::at(plan.noises, t);
    const double g2 = expected_sq_norms.size() == 1 ? expected_sq_norms[0] : expected_sq_norms[t];
    if (b > epsilon + noise_offset) return false;
    if ((a - 1.0) * (a - 1.0) * g2 > epsilon * epsilon) return false;
  }
  return true;
}

}  // namespace fedmech
