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

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedmech/analysis.hpp"
#include "fedmech/errors.hpp"
#include "fedmech/meanest.hpp"
#include "fedmech/objectives.hpp"
#include "fedmech/payments.hpp"
#include "fedmech/protocol.hpp"
#include "fedmech/schedule.hpp"
#include "fedmech/strategies.hpp"

namespace fedmech {

using Json = nlohmann::ordered_json;

enum class ExperimentKind { kRun, kSweep, kBounds, kMeanGame };

struct ClientSpec {
  std::string kind = "quadratic";  // quadratic | poly | toy
  double noise_sigma = 0.0;
  // quadratic
  std::vector<double> center;
  std::vector<std::vector<double>> curvature;
  double offset = 0.0;
  // poly
  std::vector<double> coeffs;
  // toy
  ToyDataSpec toy;
};

struct DistributionSpec {
  std::string kind = "point";  // point | uniform | discrete
  std::vector<double> values{1.0};
  std::vector<double> weights;
};

struct StrategySpec {
  std::string kind = "truthful";  // truthful | pure | mixed | directional
  std::vector<double> scales{1.0};
  std::vector<double> noises{0.0};
  std::vector<double> angles{0.0};
  DistributionSpec scale_dist;
  DistributionSpec noise_dist{"point", {0.0}, {}};
};

struct ScheduleSpec {
  std::string kind = "constant";  // constant | theorem_three
  double gamma = 0.1;
  // theorem_three; derived from the clients when omitted.
  double m = 0.0, H = 0.0, M = 0.0, M_V = 0.0;
};

struct PaymentSpec {
  std::string kind = "none";  // none | constant | theorem_one
  double c = 0.0;
  double epsilon = 0.1;
  // theorem_one; derived from the clients when omitted.
  double m = 0.0, H = 0.0, L = 0.0;
};

struct SweepSpec {
  std::size_t deviant = 0;
  std::vector<double> a_values{1.0, 1.5, 2.0, 2.5, 3.0};
  std::vector<double> b_values{0.0};
  // Each value runs a constant-C payment; empty uses `payment` as configured.
  std::vector<double> c_values;
};

struct BoundsSpec {
  double epsilon = 0.1;
  std::vector<std::size_t> probe_steps{0};
  std::size_t variance_replications = 50;
  std::size_t gradient_replications = 1000;
  bool best_response = true;
};

struct MeanGameConfig {
  MeanGameSpec spec;
  std::size_t client = 0;
  std::vector<double> c_grid{1.0, 1.25, 1.5, 1.75, 2.0};
  std::size_t draws = 100000;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::kRun;
  std::uint64_t seed = 0;
  std::size_t replications = 10;
  // protocol
  std::size_t n_clients = 2;
  std::size_t horizon = 100;
  std::string aggregation = "mean";
  std::size_t local_steps = 1;
  std::vector<double> theta_init;
  double divergence_factor = 1e6;
  std::optional<std::uint64_t> strategy_seed;
  std::optional<double> domain_radius;
  ScheduleSpec schedule;
  std::vector<ClientSpec> clients;
  std::vector<StrategySpec> strategies;
  PaymentSpec payment;
  RewardSpec reward;
  SweepSpec sweep;
  BoundsSpec bounds;
  MeanGameConfig meangame;
};

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::kRun:
      return "run";
    case ExperimentKind::kSweep:
      return "sweep";
    case ExperimentKind::kBounds:
      return "bounds";
    case ExperimentKind::kMeanGame:
      return "meangame";
  }
  return "run";
}

namespace detail {

// Strict view of one JSON object: every key must be consumed, otherwise
// finish() reports the first unknown one.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("expected an object", path_.empty() ? "<root>" : path_);
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json& raw(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError("missing required field", at(key));
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  T get(const std::string& key) {
    const Json& v = raw(key);
    return convert<T>(v, at(key));
  }

  template <class T>
  T get_or(const std::string& key, T fallback) {
    return has(key) ? get<T>(key) : fallback;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown field", at(it.key()));
    }
  }

  template <class T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError("expected a number", path);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("expected a boolean", path);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0)) {
        throw ConfigError("expected a non-negative integer", path);
      }
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError("expected a string", path);
    } else {
      if (!v.is_array()) throw ConfigError("expected an array", path);
      T out;
      for (std::size_t k = 0; k < v.size(); ++k) {
        out.push_back(convert<typename T::value_type>(v[k], path + "[" + std::to_string(k) + "]"));
      }
      return out;
    }
    return v.get<T>();
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::string one_of(Fields& f, const std::string& key, std::initializer_list<const char*> options,
                          std::string fallback = {}) {
  const std::string v = fallback.empty() ? f.get<std::string>(key) : f.get_or<std::string>(key, fallback);
  for (const char* o : options) {
    if (v == o) return v;
  }
  throw ConfigError("unsupported value '" + v + "'", f.at(key));
}

inline ClientSpec parse_client(const Json& j, const std::string& path) {
  Fields f(j, path);
  ClientSpec c;
  c.kind = one_of(f, "kind", {"quadratic", "poly", "toy"});
  c.noise_sigma = f.get_or<double>("noise_sigma", 0.0);
  if (c.kind == "quadratic") {
    c.center = f.get<std::vector<double>>("center");
    const std::size_t d = c.center.size();
    if (d == 0) throw ConfigError("center must not be empty", f.at("center"));
    const Json& a = f.raw("curvature");
    if (a.is_number()) {
      c.curvature.assign(d, std::vector<double>(d, 0.0));
      for (std::size_t k = 0; k < d; ++k) c.curvature[k][k] = a.get<double>();
    } else {
      c.curvature = Fields::convert<std::vector<std::vector<double>>>(a, f.at("curvature"));
      if (c.curvature.size() != d) throw ConfigError("curvature must be d x d", f.at("curvature"));
      for (const auto& row : c.curvature) {
        if (row.size() != d) throw ConfigError("curvature must be d x d", f.at("curvature"));
      }
    }
    c.offset = f.get_or<double>("offset", 0.0);
  } else if (c.kind == "poly") {
    c.coeffs = f.get<std::vector<double>>("coeffs");
  } else {
    c.toy.inputs = f.get_or<std::size_t>("inputs", 2);
    c.toy.hidden = f.get_or<std::size_t>("hidden", 4);
    c.toy.samples = f.get_or<std::size_t>("samples", 64);
    c.toy.teacher = f.get<std::vector<double>>("teacher");
    c.toy.target_offset = f.get_or<double>("target_offset", 0.0);
    c.toy.l2 = f.get_or<double>("l2", 1e-3);
    c.toy.data_seed = f.get_or<std::uint64_t>("data_seed", 0);
  }
  f.finish();
  return c;
}

inline DistributionSpec parse_distribution(const Json& j, const std::string& path) {
  Fields f(j, path);
  DistributionSpec d;
  d.kind = one_of(f, "kind", {"point", "uniform", "discrete"});
  d.values = f.get<std::vector<double>>("values");
  if (d.kind == "discrete") d.weights = f.get<std::vector<double>>("weights");
  f.finish();
  return d;
}

inline StrategySpec parse_strategy(const Json& j, const std::string& path) {
  Fields f(j, path);
  StrategySpec s;
  s.kind = one_of(f, "kind", {"truthful", "pure", "mixed", "directional"});
  if (s.kind == "pure" || s.kind == "directional") {
    s.scales = f.get<std::vector<double>>("scales");
    s.noises = f.get_or<std::vector<double>>("noises", {0.0});
  }
  if (s.kind == "directional") s.angles = f.get<std::vector<double>>("angles");
  if (s.kind == "mixed") {
    s.scale_dist = parse_distribution(f.raw("scale"), f.at("scale"));
    s.noise_dist = f.has("noise") ? parse_distribution(f.raw("noise"), f.at("noise")) : DistributionSpec{"point", {0.0}, {}};
  }
  f.finish();
  return s;
}

inline Json to_json(const DistributionSpec& d) {
  Json j;
  j["kind"] = d.kind;
  j["values"] = d.values;
  if (d.kind == "discrete") j["weights"] = d.weights;
  return j;
}

inline Json to_json(const ClientSpec& c) {
  Json j;
  j["kind"] = c.kind;
  j["noise_sigma"] = c.noise_sigma;
  if (c.kind == "quadratic") {
    j["center"] = c.center;
    j["curvature"] = c.curvature;
    j["offset"] = c.offset;
  } else if (c.kind == "poly") {
    j["coeffs"] = c.coeffs;
  } else {
    j["inputs"] = c.toy.inputs;
    j["hidden"] = c.toy.hidden;
    j["samples"] = c.toy.samples;
    j["teacher"] = c.toy.teacher;
    j["target_offset"] = c.toy.target_offset;
    j["l2"] = c.toy.l2;
    j["data_seed"] = c.toy.data_seed;
  }
  return j;
}

inline Json to_json(const StrategySpec& s) {
  Json j;
  j["kind"] = s.kind;
  if (s.kind == "pure" || s.kind == "directional") {
    j["scales"] = s.scales;
    j["noises"] = s.noises;
  }
  if (s.kind == "directional") j["angles"] = s.angles;
  if (s.kind == "mixed") {
    j["scale"] = to_json(s.scale_dist);
    j["noise"] = to_json(s.noise_dist);
  }
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Runtime objects

inline std::vector<ClientObjective> build_clients(const ExperimentConfig& cfg) {
  std::vector<ClientObjective> out;
  for (std::size_t i = 0; i < cfg.clients.size(); ++i) {
    const ClientSpec& c = cfg.clients[i];
    const std::string path = "clients[" + std::to_string(i) + "]";
    try {
      if (c.kind == "quadratic") {
        const auto d = static_cast<Eigen::Index>(c.center.size());
        Matrix a(d, d);
        for (Eigen::Index r = 0; r < d; ++r) {
          for (Eigen::Index k = 0; k < d; ++k) a(r, k) = c.curvature[r][k];
        }
        out.push_back(make_quadratic_client(Eigen::Map<const ModelVector>(c.center.data(), d), a, c.offset,
                                            c.noise_sigma));
      } else if (c.kind == "poly") {
        out.push_back(make_poly_client(c.coeffs, c.noise_sigma));
      } else {
        out.push_back(make_toy_client(c.toy, i, c.noise_sigma));
      }
    } catch (const ConfigError& e) {
      if (!e.path().empty()) throw;
      throw ConfigError(e.what(), path);
    }
  }
  std::optional<double> radius = cfg.domain_radius;
  assign_default_domains(out, radius);
  return out;
}

inline ScalarDistribution build_distribution(const DistributionSpec& d) {
  if (d.kind == "point") {
    if (d.values.size() != 1) throw ConfigError("point distribution needs one value");
    return ScalarDistribution::point(d.values[0]);
  }
  if (d.kind == "uniform") {
    if (d.values.size() != 2) throw ConfigError("uniform distribution needs [lo, hi]");
    return ScalarDistribution::uniform(d.values[0], d.values[1]);
  }
  return ScalarDistribution::discrete(d.values, d.weights);
}

inline std::vector<StrategyPlan> build_plans(const ExperimentConfig& cfg) {
  std::vector<StrategyPlan> out;
  for (std::size_t i = 0; i < cfg.strategies.size(); ++i) {
    const StrategySpec& s = cfg.strategies[i];
    try {
      if (s.kind == "truthful") {
        out.push_back(StrategyPlan::truthful());
      } else if (s.kind == "pure") {
        out.push_back(StrategyPlan::pure_schedule(s.scales, s.noises));
      } else if (s.kind == "mixed") {
        out.push_back(StrategyPlan::mixed(build_distribution(s.scale_dist), build_distribution(s.noise_dist)));
      } else {
        out.push_back(StrategyPlan::directional(s.scales, s.noises, s.angles));
      }
    } catch (const ConfigError& e) {
      throw ConfigError(e.what(), "strategies[" + std::to_string(i) + "]");
    }
  }
  return out;
}

inline LearningRateSchedule build_schedule(const ExperimentConfig& cfg) {
  if (cfg.schedule.kind == "constant") return LearningRateSchedule::constant(cfg.schedule.gamma);
  const ScheduleSpec& s = cfg.schedule;
  return LearningRateSchedule::theorem_three(s.m, s.H, s.M, s.M_V, static_cast<double>(cfg.n_clients));
}

inline ProtocolConfig build_protocol(const ExperimentConfig& cfg) {
  ProtocolConfig p;
  p.n_clients = cfg.n_clients;
  p.horizon = cfg.horizon;
  p.schedule = build_schedule(cfg);
  p.aggregation = cfg.aggregation == "mean" ? Aggregation::kMean : Aggregation::kCoordinateMedian;
  p.local_steps = cfg.local_steps;
  p.theta_init = Eigen::Map<const ModelVector>(cfg.theta_init.data(), static_cast<Eigen::Index>(cfg.theta_init.size()));
  p.seed = cfg.seed;
  p.strategy_seed = cfg.strategy_seed;
  p.divergence_factor = cfg.divergence_factor;
  return p;
}

/// Null when payments are off.
inline std::optional<PaymentSchedule> build_payments(const ExperimentConfig& cfg) {
  const PaymentSpec& p = cfg.payment;
  if (p.kind == "none") return std::nullopt;
  if (p.kind == "constant") return PaymentSchedule::constant(p.c);
  return PaymentSchedule::theorem_one(
      {build_schedule(cfg).gammas(cfg.horizon), p.m, p.H, p.L, cfg.n_clients, p.epsilon});
}

// ---------------------------------------------------------------------------
// Parse / serialize

inline ExperimentConfig parse_config(const Json& root) {
  using detail::Fields;
  Fields f(root, "");
  ExperimentConfig cfg;
  const std::string kind = detail::one_of(f, "experiment", {"run", "sweep", "bounds", "meangame"});
  cfg.kind = kind == "run"      ? ExperimentKind::kRun
             : kind == "sweep"  ? ExperimentKind::kSweep
             : kind == "bounds" ? ExperimentKind::kBounds
                                : ExperimentKind::kMeanGame;
  cfg.seed = f.get_or<std::uint64_t>("seed", 0);
  cfg.replications = f.get_or<std::size_t>("replications", 10);
  if (cfg.replications < 1) throw ConfigError("must be >= 1", "replications");

  if (cfg.kind == ExperimentKind::kMeanGame) {
    Fields g(f.raw("meangame"), "meangame");
    MeanGameConfig& mg = cfg.meangame;
    mg.spec.mus = g.get_or<std::vector<double>>("mus", {});
    mg.spec.sigma = g.get_or<double>("sigma", 1.0);
    mg.spec.sigmas = g.get_or<std::vector<double>>("sigmas", {});
    mg.spec.n_samples = g.get_or<std::size_t>("n_samples", 1);
    mg.spec.tau = g.get_or<double>("tau", 1.0);
    mg.spec.tau0 = g.get_or<double>("tau0", 1.0);
    mg.client = g.get_or<std::size_t>("client", 0);
    mg.c_grid = g.get_or<std::vector<double>>("c_grid", mg.c_grid);
    mg.draws = g.get_or<std::size_t>("draws", mg.draws);
    g.finish();
    if (mg.spec.mus.empty() && mg.spec.sigmas.empty()) {
      throw ConfigError("needs mus (frequentist game) and/or sigmas (hierarchical game)", "meangame");
    }
    if (!mg.spec.mus.empty()) detail::check_frequentist(mg.spec, mg.client);
    if (!mg.spec.sigmas.empty()) {
      detail::check_bayes(mg.spec);
      if (mg.client >= mg.spec.sigmas.size()) throw ConfigError("client index out of range", "meangame.client");
    }
    if (mg.draws < 10000) throw ConfigError("must be >= 10000", "meangame.draws");
    f.finish();
    return cfg;
  }

  {
    Fields p(f.raw("protocol"), "protocol");
    cfg.n_clients = p.get<std::size_t>("n_clients");
    cfg.horizon = p.get<std::size_t>("horizon");
    cfg.aggregation = detail::one_of(p, "aggregation", {"mean", "coordinate_median"}, "mean");
    cfg.local_steps = p.get_or<std::size_t>("local_steps", 1);
    cfg.theta_init = p.get<std::vector<double>>("theta_init");
    cfg.divergence_factor = p.get_or<double>("divergence_factor", 1e6);
    if (p.has("strategy_seed")) cfg.strategy_seed = p.get<std::uint64_t>("strategy_seed");
    if (p.has("domain_radius")) cfg.domain_radius = p.get<double>("domain_radius");
    if (p.has("schedule")) {
      Fields s(p.raw("schedule"), "protocol.schedule");
      cfg.schedule.kind = detail::one_of(s, "kind", {"constant", "theorem_three"});
      if (cfg.schedule.kind == "constant") {
        cfg.schedule.gamma = s.get<double>("gamma");
      } else {
        // Negative marks "derive from the clients" (resolved below).
        cfg.schedule.m = s.get_or<double>("m", -1.0);
        cfg.schedule.H = s.get_or<double>("H", -1.0);
        cfg.schedule.M = s.get_or<double>("M", -1.0);
        cfg.schedule.M_V = s.get_or<double>("M_V", -1.0);
      }
      s.finish();
    }
    p.finish();
    if (cfg.n_clients < 2) throw ConfigError("must be >= 2", "protocol.n_clients");
    if (cfg.horizon < 1) throw ConfigError("must be >= 1", "protocol.horizon");
    if (cfg.local_steps < 1) throw ConfigError("must be >= 1", "protocol.local_steps");
    if (cfg.theta_init.empty()) throw ConfigError("must not be empty", "protocol.theta_init");
  }

  {
    const Json& arr = f.raw("clients");
    if (!arr.is_array()) throw ConfigError("expected an array", "clients");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      cfg.clients.push_back(detail::parse_client(arr[i], "clients[" + std::to_string(i) + "]"));
    }
    if (cfg.clients.size() != cfg.n_clients) {
      throw ConfigError("expected " + std::to_string(cfg.n_clients) + " entries, got " +
                            std::to_string(cfg.clients.size()),
                        "clients");
    }
  }
  if (f.has("strategies")) {
    const Json& arr = f.raw("strategies");
    if (!arr.is_array()) throw ConfigError("expected an array", "strategies");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      cfg.strategies.push_back(detail::parse_strategy(arr[i], "strategies[" + std::to_string(i) + "]"));
    }
    if (cfg.strategies.size() != cfg.n_clients) {
      throw ConfigError("expected " + std::to_string(cfg.n_clients) + " entries, got " +
                            std::to_string(cfg.strategies.size()),
                        "strategies");
    }
  } else {
    cfg.strategies.assign(cfg.n_clients, StrategySpec{});
  }

  if (f.has("payment")) {
    Fields p(f.raw("payment"), "payment");
    cfg.payment.kind = detail::one_of(p, "kind", {"none", "constant", "theorem_one"});
    if (cfg.payment.kind == "constant") cfg.payment.c = p.get<double>("c");
    if (cfg.payment.kind == "theorem_one") {
      cfg.payment.epsilon = p.get<double>("epsilon");
      cfg.payment.m = p.get_or<double>("m", -1.0);
      cfg.payment.H = p.get_or<double>("H", -1.0);
      cfg.payment.L = p.get_or<double>("L", -1.0);
    }
    p.finish();
  }

  if (f.has("reward")) {
    Fields r(f.raw("reward"), "reward");
    const std::string k = detail::one_of(r, "kind", {"neg_loss", "logistic", "group_average", "competitive"});
    if (k == "neg_loss") cfg.reward = RewardSpec::neg_loss();
    if (k == "logistic") cfg.reward = RewardSpec::logistic();
    if (k == "group_average") {
      auto group = r.get<std::vector<std::size_t>>("group");
      for (std::size_t j : group) {
        if (j >= cfg.n_clients) throw ConfigError("group member out of range", "reward.group");
      }
      cfg.reward = RewardSpec::group_average(std::move(group));
    }
    if (k == "competitive") cfg.reward = RewardSpec::competitive(r.get<double>("alpha"), r.get<double>("beta"));
    r.finish();
  }

  const bool wants_sweep = cfg.kind == ExperimentKind::kSweep || cfg.kind == ExperimentKind::kBounds;
  if (f.has("sweep")) {
    if (!wants_sweep) throw ConfigError("not used by this experiment kind", "sweep");
    Fields s(f.raw("sweep"), "sweep");
    cfg.sweep.deviant = s.get_or<std::size_t>("deviant", 0);
    cfg.sweep.a_values = s.get_or<std::vector<double>>("a_values", cfg.sweep.a_values);
    cfg.sweep.b_values = s.get_or<std::vector<double>>("b_values", cfg.sweep.b_values);
    cfg.sweep.c_values = s.get_or<std::vector<double>>("c_values", {});
    s.finish();
  }
  if (wants_sweep) {
    if (cfg.sweep.deviant >= cfg.n_clients) throw ConfigError("deviant index out of range", "sweep.deviant");
    for (double a : cfg.sweep.a_values) {
      if (!(std::abs(a) >= 1.0)) throw ConfigError("scales must satisfy |a| >= 1", "sweep.a_values");
    }
    for (double b : cfg.sweep.b_values) {
      if (!(b >= 0.0)) throw ConfigError("noise magnitudes must be >= 0", "sweep.b_values");
    }
    for (double c : cfg.sweep.c_values) {
      if (!(c >= 0.0)) throw ConfigError("payment constants must be >= 0", "sweep.c_values");
    }
    if (std::find(cfg.sweep.a_values.begin(), cfg.sweep.a_values.end(), 1.0) == cfg.sweep.a_values.end()) {
      throw ConfigError("must contain 1.0", "sweep.a_values");
    }
    if (std::find(cfg.sweep.b_values.begin(), cfg.sweep.b_values.end(), 0.0) == cfg.sweep.b_values.end()) {
      throw ConfigError("must contain 0.0", "sweep.b_values");
    }
  }
  if (f.has("bounds")) {
    if (cfg.kind != ExperimentKind::kBounds) throw ConfigError("not used by this experiment kind", "bounds");
    Fields b(f.raw("bounds"), "bounds");
    cfg.bounds.epsilon = b.get_or<double>("epsilon", cfg.bounds.epsilon);
    cfg.bounds.probe_steps = b.get_or<std::vector<std::size_t>>("probe_steps", cfg.bounds.probe_steps);
    cfg.bounds.variance_replications = b.get_or<std::size_t>("variance_replications", 50);
    cfg.bounds.gradient_replications = b.get_or<std::size_t>("gradient_replications", 1000);
    cfg.bounds.best_response = b.get_or<bool>("best_response", true);
    b.finish();
    for (std::size_t t : cfg.bounds.probe_steps) {
      if (t >= cfg.horizon) throw ConfigError("probe step must be < horizon", "bounds.probe_steps");
    }
  }
  if (f.has("meangame")) throw ConfigError("not used by this experiment kind", "meangame");
  f.finish();

  // Semantic checks and derived constants need the runtime objects.
  const auto clients = build_clients(cfg);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    if (static_cast<std::size_t>(clients[i].dimension()) != cfg.theta_init.size()) {
      throw ConfigError("dimension differs from protocol.theta_init", "clients[" + std::to_string(i) + "]");
    }
  }
  build_plans(cfg);
  const bool need_schedule = cfg.schedule.kind == "theorem_three";
  const bool need_payment = cfg.payment.kind == "theorem_one";
  if (need_schedule || need_payment) {
    const TheoremConstants k = theorem_constants(clients);
    auto fill = [](double& v, double derived) {
      if (v < 0.0) v = derived;
    };
    if (need_schedule) {
      fill(cfg.schedule.m, k.m);
      fill(cfg.schedule.H, k.H);
      fill(cfg.schedule.M, k.sigma * k.sigma);
      fill(cfg.schedule.M_V, 0.0);
    }
    if (need_payment) {
      fill(cfg.payment.m, k.m);
      fill(cfg.payment.H, k.H);
      fill(cfg.payment.L, k.L);
    }
  }
  build_schedule(cfg);
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& text) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
  return parse_config(root);
}

/// Fully resolved document; parse_config(serialize(c)) reproduces c.
inline Json serialize(const ExperimentConfig& cfg) {
  Json j;
  j["experiment"] = to_string(cfg.kind);
  j["seed"] = cfg.seed;
  j["replications"] = cfg.replications;
  if (cfg.kind == ExperimentKind::kMeanGame) {
    const MeanGameConfig& mg = cfg.meangame;
    Json g;
    g["mus"] = mg.spec.mus;
    g["sigma"] = mg.spec.sigma;
    g["sigmas"] = mg.spec.sigmas;
    g["n_samples"] = mg.spec.n_samples;
    g["tau"] = mg.spec.tau;
    g["tau0"] = mg.spec.tau0;
    g["client"] = mg.client;
    g["c_grid"] = mg.c_grid;
    g["draws"] = mg.draws;
    j["meangame"] = g;
    return j;
  }
  Json p;
  p["n_clients"] = cfg.n_clients;
  p["horizon"] = cfg.horizon;
  p["aggregation"] = cfg.aggregation;
  p["local_steps"] = cfg.local_steps;
  p["theta_init"] = cfg.theta_init;
  p["divergence_factor"] = cfg.divergence_factor;
  if (cfg.strategy_seed) p["strategy_seed"] = *cfg.strategy_seed;
  if (cfg.domain_radius) p["domain_radius"] = *cfg.domain_radius;
  Json s;
  s["kind"] = cfg.schedule.kind;
  if (cfg.schedule.kind == "constant") {
    s["gamma"] = cfg.schedule.gamma;
  } else {
    s["m"] = cfg.schedule.m;
    s["H"] = cfg.schedule.H;
    s["M"] = cfg.schedule.M;
    s["M_V"] = cfg.schedule.M_V;
  }
  p["schedule"] = s;
  j["protocol"] = p;
  j["clients"] = Json::array();
  for (const auto& c : cfg.clients) j["clients"].push_back(detail::to_json(c));
  j["strategies"] = Json::array();
  for (const auto& st : cfg.strategies) j["strategies"].push_back(detail::to_json(st));
  Json pay;
  pay["kind"] = cfg.payment.kind;
  if (cfg.payment.kind == "constant") pay["c"] = cfg.payment.c;
  if (cfg.payment.kind == "theorem_one") {
    pay["epsilon"] = cfg.payment.epsilon;
    pay["m"] = cfg.payment.m;
    pay["H"] = cfg.payment.H;
    pay["L"] = cfg.payment.L;
  }
  j["payment"] = pay;
  Json r;
  switch (cfg.reward.kind) {
    case RewardSpec::Kind::kNegLoss:
      r["kind"] = "neg_loss";
      break;
    case RewardSpec::Kind::kLogistic:
      r["kind"] = "logistic";
      break;
    case RewardSpec::Kind::kGroupAverage:
      r["kind"] = "group_average";
      r["group"] = cfg.reward.group;
      break;
    case RewardSpec::Kind::kCompetitive:
      r["kind"] = "competitive";
      r["alpha"] = cfg.reward.alpha;
      r["beta"] = cfg.reward.beta;
      break;
  }
  j["reward"] = r;
  if (cfg.kind == ExperimentKind::kSweep || cfg.kind == ExperimentKind::kBounds) {
    Json sw;
    sw["deviant"] = cfg.sweep.deviant;
    sw["a_values"] = cfg.sweep.a_values;
    sw["b_values"] = cfg.sweep.b_values;
    sw["c_values"] = cfg.sweep.c_values;
    j["sweep"] = sw;
  }
  if (cfg.kind == ExperimentKind::kBounds) {
    Json b;
    b["epsilon"] = cfg.bounds.epsilon;
    b["probe_steps"] = cfg.bounds.probe_steps;
    b["variance_replications"] = cfg.bounds.variance_replications;
    b["gradient_replications"] = cfg.bounds.gradient_replications;
    b["best_response"] = cfg.bounds.best_response;
    j["bounds"] = b;
  }
  return j;
}

}  // namespace fedmech
