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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fedmech/analysis.hpp"
#include "fedmech/config.hpp"
#include "fedmech/csv.hpp"
#include "fedmech/errors.hpp"
#include "fedmech/meanest.hpp"
#include "fedmech/protocol.hpp"
#include "fedmech/version.hpp"

namespace fedmech {

struct OutputFile {
  std::string name;
  std::string content;
  int schema = 0;
};

struct ExperimentOutputs {
  std::vector<OutputFile> files;
  std::string manifest;
  ExitCode status = ExitCode::kOk;
  std::string message;
};

namespace detail {

inline std::vector<std::string> indexed(const std::string& prefix, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(prefix + std::to_string(k));
  return out;
}

inline std::string trace_csv(const RunTrace& trace, std::span<const ClientObjective> clients) {
  const std::size_t n = trace.n_clients();
  const std::size_t d = static_cast<std::size_t>(trace.thetas.front().size());
  std::vector<std::string> header{"step", "theta_norm"};
  for (auto& h : indexed("theta_", d)) header.push_back(h);
  for (auto& h : indexed("loss_", n)) header.push_back(h);
  for (auto& h : indexed("payment_", n)) header.push_back(h);
  header.push_back("gamma");
  header.push_back("C_t");
  CsvWriter w(header);
  for (std::size_t t = 0; t < trace.thetas.size(); ++t) {
    const ModelVector& theta = trace.thetas[t];
    w.cell(t + 1).cell(theta.norm());
    for (std::size_t k = 0; k < d; ++k) w.cell(theta(static_cast<Eigen::Index>(k)));
    for (std::size_t i = 0; i < n; ++i) w.cell(evaluate(clients[i], theta));
    const bool step_row = t < trace.horizon();
    for (std::size_t i = 0; i < n; ++i) {
      if (step_row && trace.payments) {
        w.cell((*trace.payments)[t][i]);
      } else {
        w.empty();
      }
    }
    if (step_row) {
      w.cell(trace.gammas[t]);
    } else {
      w.empty();
    }
    if (step_row && trace.payments) {
      w.cell(trace.payment_constants[t]);
    } else {
      w.empty();
    }
    w.end_row();
  }
  return w.str();
}

inline void run_kind(const ExperimentConfig& cfg, ExperimentOutputs& out) {
  const auto clients = build_clients(cfg);
  const auto plans = build_plans(cfg);
  const auto payments = build_payments(cfg);
  const RunTrace trace = run(build_protocol(cfg), clients, plans, payments ? &*payments : nullptr);
  out.files.push_back({"trace.csv", trace_csv(trace, clients), kTraceSchema});
  CsvWriter w({"client", "final_loss", "total_payment", "utility"});
  for (std::size_t i = 0; i < clients.size(); ++i) {
    w.cell(i).cell(trace.losses_final[i]);
    if (trace.payments) {
      w.cell(total_payment(trace, i));
    } else {
      w.empty();
    }
    w.cell(utility(trace, i, cfg.reward)).end_row();
  }
  out.files.push_back({"summary.csv", w.str(), kSummarySchema});
}

inline std::string payment_label(const PaymentSpec& p) {
  if (p.kind == "none") return "0";
  if (p.kind == "constant") return format_number(p.c);
  return "theorem_one";
}

inline void sweep_kind(const ExperimentConfig& cfg, unsigned jobs, ExperimentOutputs& out) {
  const auto clients = build_clients(cfg);
  const ProtocolConfig protocol = build_protocol(cfg);
  const SweepSpec& sw = cfg.sweep;
  std::vector<std::pair<std::string, std::optional<PaymentSchedule>>> levels;
  if (sw.c_values.empty()) {
    levels.emplace_back(payment_label(cfg.payment), build_payments(cfg));
  } else {
    for (double c : sw.c_values) levels.emplace_back(format_number(c), PaymentSchedule::constant(c));
  }
  CsvWriter grid_csv({"C", "a", "b", "deviant", "client", "mean_utility", "stderr", "n_replications", "diverged"});
  CsvWriter best_csv({"C", "best_a", "best_b", "best_utility", "truthful_utility", "gain", "gain_stderr",
                      "n_replications"});
  for (const auto& [label, payments] : levels) {
    auto grid = evaluate_deviation_grid(protocol, clients, payments ? &*payments : nullptr, cfg.reward, sw.deviant,
                                        sw.a_values, sw.b_values, cfg.replications, jobs);
    for (const auto& gp : grid) {
      for (std::size_t i = 0; i < clients.size(); ++i) {
        grid_csv.cell(label).cell(gp.scale).cell(gp.noise).cell(sw.deviant).cell(i);
        grid_csv.cell(gp.client_mean_utility[i]).cell(gp.client_stderr_utility[i]);
        grid_csv.cell(gp.replications).cell(gp.diverged).end_row();
      }
    }
    const BestResponseResult br = summarize_grid(std::move(grid), cfg.replications);
    best_csv.cell(label).cell(br.best_scale).cell(br.best_noise).cell(br.best_utility);
    best_csv.cell(br.truthful_utility).cell(br.gain).cell(br.gain_stderr).cell(br.replications).end_row();
  }
  out.files.push_back({"sweep.csv", grid_csv.str(), kSweepSchema});
  out.files.push_back({"best_response.csv", best_csv.str(), kBestResponseSchema});
}

inline void bounds_kind(const ExperimentConfig& cfg, unsigned jobs, ExperimentOutputs& out) {
  const auto clients = build_clients(cfg);
  const auto plans = build_plans(cfg);
  const ProtocolConfig protocol = build_protocol(cfg);
  const TheoremConstants k = theorem_constants(clients);
  const double eps = cfg.bounds.epsilon;
  const double M = k.sigma * k.sigma;
  const double M_V = 0.0;
  const auto probes = default_probe_set(protocol, clients);
  const HeterogeneityProfile het = heterogeneity(clients, probes);

  CsvWriter w({"bound", "theoretical", "empirical", "tolerance", "satisfied", "slack", "step", "client",
               "replication"});
  auto emit = [&w](const BoundReport& r) {
    w.cell(std::string(to_string(r.bound_name))).cell(r.theoretical).cell(r.empirical).cell(r.tolerance);
    w.cell(r.satisfied).cell(r.slack).cell(r.step).cell(r.client).cell(r.replication).end_row();
  };

  const std::vector<StrategyPlan> truthful(clients.size(), StrategyPlan::truthful());
  const RunTrace reference = run(protocol, clients, truthful);
  std::vector<ModelVector> probe_thetas;
  for (std::size_t t : cfg.bounds.probe_steps) probe_thetas.push_back(reference.thetas[t]);
  for (std::size_t i = 0; i < clients.size(); ++i) {
    for (BoundReport r : gradient_norm_check(clients[i], probe_thetas, cfg.bounds.gradient_replications,
                                             derive_key(cfg.seed, StreamPurpose::kProbe, i))) {
      r.step = static_cast<long>(cfg.bounds.probe_steps[static_cast<std::size_t>(r.step)]);
      r.client = static_cast<long>(i);
      emit(r);
    }
  }

  if (cfg.local_steps == 1) {
    const RunTrace played = run(protocol, clients, plans);
    for (const auto& r : aggregate_variance_check(protocol, clients, plans, played, cfg.bounds.probe_steps,
                                                  cfg.bounds.variance_replications, eps, M, M_V, het.zeta)) {
      emit(r);
    }
  }

  if (protocol.schedule.kind() == LearningRateSchedule::Kind::kTheoremThree && cfg.replications >= 2) {
    emit(convergence_check(protocol, clients, plans, cfg.replications, eps, M, M_V, het.zeta, jobs).report);
  }

  const PaymentSchedule payments =
      cfg.payment.kind == "theorem_one" ? *build_payments(cfg)
                                        : theorem_one_schedule(protocol.schedule, cfg.horizon, k, cfg.n_clients, eps);
  const double pay_eps = payments.inputs().epsilon;
  for (const auto& r : payment_check(protocol, clients, plans, payments, cfg.replications, pay_eps, k.sigma,
                                     het.zeta, het.rho, jobs)) {
    emit(r);
  }

  const double bic = bic_gap_bound(payments, payments.inputs().L, cfg.n_clients, pay_eps);
  if (cfg.bounds.best_response) {
    const BestResponseResult br =
        best_response(protocol, clients, &payments, cfg.reward, cfg.sweep.deviant, cfg.sweep.a_values,
                      cfg.sweep.b_values, cfg.replications, jobs);
    BoundReport r = make_report(BoundName::kBicGap, bic, br.gain, 3.0 * br.gain_stderr);
    r.client = static_cast<long>(cfg.sweep.deviant);
    emit(r);
  } else {
    emit(make_report(BoundName::kBicGap, bic, 0.0, 0.0));
  }
  out.files.push_back({"bounds.csv", w.str(), kBoundsSchema});
}

inline void meangame_kind(const ExperimentConfig& cfg, unsigned jobs, ExperimentOutputs& out) {
  const MeanGameConfig& mg = cfg.meangame;
  if (!mg.spec.mus.empty()) {
    CsvWriter grid({"c", "closed_form_mse", "mc_mse", "mc_stderr", "draws"});
    for (std::size_t k = 0; k < mg.c_grid.size(); ++k) {
      const double c = mg.c_grid[k];
      const McEstimate mc =
          mc_scaled_mse(mg.spec, mg.client, c, mg.draws, derive_key(cfg.seed, StreamPurpose::kMonteCarlo, 1, k), jobs);
      grid.cell(c).cell(deviation_mse(mg.spec, mg.client, c)).cell(mc.mse).cell(mc.std_error).cell(mc.draws).end_row();
    }
    out.files.push_back({"meangame_scale.csv", grid.str(), kMeanGameSchema});
    const OptimalScale opt = optimal_scale(mg.spec, mg.client);
    CsvWriter best({"client", "truthful_mse", "c_star", "mse_at_c_star", "profitable"});
    best.cell(mg.client).cell(truthful_mse(mg.spec, mg.client)).cell(opt.c_star).cell(opt.mse).cell(opt.profitable);
    best.end_row();
    out.files.push_back({"meangame_optimum.csv", best.str(), kMeanGameSchema});
  }
  if (!mg.spec.sigmas.empty()) {
    const Equilibrium eq = nash_equilibrium(mg.spec);
    const AnarchyReport poa = penalty_of_anarchy(mg.spec);
    CsvWriter w({"client", "c_eq", "eq_error", "truthful_error", "mc_eq_mse", "mc_eq_stderr", "exceeds",
                 "heterogeneity_condition"});
    for (std::size_t i = 0; i < eq.weights.size(); ++i) {
      const McEstimate mc =
          mc_mse(mg.spec, eq.weights, i, mg.draws, derive_key(cfg.seed, StreamPurpose::kMonteCarlo, 2, i), jobs);
      w.cell(i).cell(eq.weights[i]).cell(eq.errors[i]).cell(poa.truthful_errors[i]).cell(mc.mse).cell(mc.std_error);
      w.cell(static_cast<bool>(poa.exceeds[i])).cell(static_cast<bool>(poa.heterogeneity_condition[i])).end_row();
    }
    out.files.push_back({"meangame_equilibrium.csv", w.str(), kMeanGameSchema});
    CsvWriter lim({"eq_error_limit", "truthful_error_limit", "ratio"});
    lim.cell(poa.eq_error_limit).cell(poa.truthful_error_limit).cell(poa.ratio).end_row();
    out.files.push_back({"meangame_limits.csv", lim.str(), kMeanGameSchema});
  }
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int k = 15; k >= 0; --k) {
    s[static_cast<std::size_t>(k)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace detail

inline std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(serialize(cfg).dump()); }

/// Runs the experiment and renders every output in memory. Errors are caught
/// and reported through `status`; files produced before the failure are kept.
inline ExperimentOutputs run_experiment(const ExperimentConfig& cfg, unsigned jobs = 1) {
  ExperimentOutputs out;
  try {
    switch (cfg.kind) {
      case ExperimentKind::kRun:
        detail::run_kind(cfg, out);
        break;
      case ExperimentKind::kSweep:
        detail::sweep_kind(cfg, jobs, out);
        break;
      case ExperimentKind::kBounds:
        detail::bounds_kind(cfg, jobs, out);
        break;
      case ExperimentKind::kMeanGame:
        detail::meangame_kind(cfg, jobs, out);
        break;
    }
  } catch (const Error& e) {
    out.status = e.code();
    out.message = e.what();
  }
  const std::string resolved = serialize(cfg).dump(2) + "\n";
  out.files.push_back({"config.resolved.json", resolved, 0});
  std::ostringstream m;
  m << "tool fedmech " << kVersion << "\n";
  m << "experiment " << to_string(cfg.kind) << "\n";
  m << "seed " << cfg.seed << "\n";
  m << "config_hash fnv1a64:" << detail::hex64(config_hash(cfg)) << "\n";
  m << "status " << (out.status == ExitCode::kOk ? "ok" : "failed") << " " << static_cast<int>(out.status) << "\n";
  if (!out.message.empty()) m << "error " << out.message << "\n";
  for (const auto& f : out.files) {
    m << "file " << f.name;
    if (f.schema > 0) m << " schema " << f.schema;
    m << " fnv1a64:" << detail::hex64(fnv1a64(f.content)) << "\n";
  }
  out.manifest = m.str();
  return out;
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << content;
  if (!f) throw IoError("write failed for " + path.string());
}

/// Writes outputs under `dir`; failed experiments get a ".quarantine" suffix
/// on every file so they cannot be mistaken for results.
inline void write_outputs(const ExperimentOutputs& out, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::string suffix = out.status == ExitCode::kOk ? "" : ".quarantine";
  for (const auto& f : out.files) write_text(dir / (f.name + suffix), f.content);
  write_text(dir / ("manifest.txt" + suffix), out.manifest);
}

/// Splits the deviant's rows of a sweep CSV into one series per (C, b) with
/// columns a, mean, lower, upper. Returns the number of files written.
inline std::size_t emit_plotdata(const std::filesystem::path& sweep_csv, const std::filesystem::path& dir,
                                 std::ostream& log) {
  std::ifstream in(sweep_csv);
  if (!in) throw IoError("cannot read " + sweep_csv.string());
  std::string line;
  if (!std::getline(in, line)) {
    log << "warning: " << sweep_csv.string() << " is empty; no series written\n";
    return 0;
  }
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (header[k] == name) return k;
    }
    throw ConfigError("sweep CSV lacks column '" + name + "'", sweep_csv.string());
  };
  const std::size_t c_col = column("C"), a_col = column("a"), b_col = column("b"), dev_col = column("deviant"),
                    client_col = column("client"), mean_col = column("mean_utility"), se_col = column("stderr");

  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, CsvWriter> series;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = sweep_csv.string() + ":" + std::to_string(row);
    if (cells.size() != header.size()) throw ConfigError("wrong number of cells", where);
    if (cells[dev_col] != cells[client_col]) continue;
    const double mean = parse_number(cells[mean_col], where);
    const double se = parse_number(cells[se_col], where);
    parse_number(cells[a_col], where);
    const auto key = std::make_pair(cells[c_col], cells[b_col]);
    auto it = series.find(key);
    if (it == series.end()) {
      it = series.emplace(key, CsvWriter({"a", "mean", "lower", "upper"})).first;
      order.push_back(key);
    }
    it->second.cell(cells[a_col]).cell(mean).cell(mean - se).cell(mean + se).end_row();
  }
  if (order.empty()) {
    log << "warning: " << sweep_csv.string() << " has no rows; no series written\n";
    return 0;
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const auto& key : order) {
    write_text(dir / ("series_C" + key.first + "_b" + key.second + ".csv"), series.at(key).str());
  }
  return order.size();
}

}  // namespace fedmech
