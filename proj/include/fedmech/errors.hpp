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
#include <stdexcept>
#include <string>

namespace fedmech {

// Process exit codes used by the CLI. Each error class maps to one.
enum class ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kDivergence = 3,
  kRefusedSchedule = 4,
  kStatistics = 5,
  kAnalysis = 6,
  kIo = 7,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual ExitCode code() const noexcept { return ExitCode::kInternal; }
};

// Malformed or inconsistent configuration. `path` names the offending field
// (e.g. "clients[2].curvature") when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string path = {})
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }
  ExitCode code() const noexcept override { return ExitCode::kConfig; }

 private:
  std::string path_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }
  ExitCode code() const noexcept override { return ExitCode::kDivergence; }

 private:
  std::size_t step_;
};

// A payment schedule whose theorem constants are meaningless (c_l <= 0).
class RefusedScheduleError : public Error {
 public:
  using Error::Error;
  ExitCode code() const noexcept override { return ExitCode::kRefusedSchedule; }
};

// Too few samples for a statistical check to be meaningful.
class StatisticsError : public Error {
 public:
  using Error::Error;
  ExitCode code() const noexcept override { return ExitCode::kStatistics; }
};

class AnalysisError : public Error {
 public:
  using Error::Error;
  ExitCode code() const noexcept override { return ExitCode::kAnalysis; }
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode code() const noexcept override { return ExitCode::kIo; }
};

}  // namespace fedmech
