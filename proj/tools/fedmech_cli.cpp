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

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fedmech/config.hpp"
#include "fedmech/errors.hpp"
#include "fedmech/harness.hpp"

namespace {

using fedmech::ExitCode;

int code(ExitCode c) { return static_cast<int>(c); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fedmech::IoError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_config(fedmech::ExperimentKind expected, const std::string& config_path, const std::string& out_dir,
               std::optional<std::uint64_t> seed, unsigned jobs) {
  fedmech::ExperimentConfig cfg = fedmech::parse_config(read_file(config_path));
  if (cfg.kind != expected) {
    throw fedmech::ConfigError(std::string("config describes a '") + fedmech::to_string(cfg.kind) +
                                   "' experiment, not '" + fedmech::to_string(expected) + "'",
                               "experiment");
  }
  if (seed) cfg.seed = *seed;
  const auto outputs = fedmech::run_experiment(cfg, jobs);
  fedmech::write_outputs(outputs, out_dir);
  if (outputs.status != ExitCode::kOk) {
    std::cerr << "error: " << outputs.message << " (outputs quarantined in " << out_dir << ")\n";
  }
  return code(outputs.status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning with payments: simulation, sweeps, bound audits and mean-estimation games"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  std::string input;

  struct Entry {
    const char* name;
    const char* help;
    fedmech::ExperimentKind kind;
  };
  const Entry entries[] = {
      {"run", "Single protocol run: trace.csv, summary.csv", fedmech::ExperimentKind::kRun},
      {"sweep", "Unilateral deviation sweep: sweep.csv, best_response.csv", fedmech::ExperimentKind::kSweep},
      {"bounds", "Empirical audit of the closed-form bounds: bounds.csv", fedmech::ExperimentKind::kBounds},
      {"meanest", "Mean-estimation game analyses", fedmech::ExperimentKind::kMeanGame},
  };
  for (const auto& e : entries) {
    auto* sub = app.add_subcommand(e.name, e.help);
    sub->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "Output directory")->capture_default_str();
    sub->add_option("--seed", seed, "Overrides the config seed");
    sub->add_option("--jobs", jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  }
  auto* plot = app.add_subcommand("plotdata", "Split a sweep.csv into per-(C, b) series files");
  plot->add_option("--input", input, "sweep.csv produced by the sweep subcommand")->required();
  plot->add_option("--out", out_dir, "Output directory")->capture_default_str();
  plot->add_option("--config", config_path, "Unused; accepted for a uniform interface");
  plot->add_option("--seed", seed, "Unused");
  plot->add_option("--jobs", jobs, "Unused");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : code(ExitCode::kConfig);
  }

  try {
    if (plot->parsed()) {
      const std::size_t files = fedmech::emit_plotdata(input, out_dir, std::cerr);
      std::cout << "wrote " << files << " series file(s) to " << out_dir << "\n";
      return 0;
    }
    for (const auto& e : entries) {
      if (app.got_subcommand(e.name)) return run_config(e.kind, config_path, out_dir, seed, jobs);
    }
  } catch (const fedmech::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return code(ExitCode::kInternal);
  }
  return code(ExitCode::kInternal);
}
