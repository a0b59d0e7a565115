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
#include <string>
#include <vector>

#include "fedmech/errors.hpp"

namespace fedmech {

/// Step sizes gamma_t for t = 1..T.
class LearningRateSchedule {
 public:
  enum class Kind { kConstant, kTheoremThree };

  static LearningRateSchedule constant(double gamma) {
    if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0", "schedule.gamma");
    LearningRateSchedule s;
    s.kind_ = Kind::kConstant;
    s.gamma_ = gamma;
    return s;
  }

  /// eta = 4H(2 M_V + N) / (m N), gamma_t = 4 / (m (eta + t)).
  static LearningRateSchedule theorem_three(double m, double H, double M, double M_V, double n_clients) {
    if (!(m > 0.0)) throw ConfigError("m must be > 0", "schedule.m");
    if (!(H >= m)) throw ConfigError("H must be >= m", "schedule.H");
    if (!(M >= 0.0) || !(M_V >= 0.0)) throw ConfigError("M and M_V must be >= 0", "schedule");
    if (!(n_clients >= 1.0)) throw ConfigError("N must be >= 1", "schedule.N");
    LearningRateSchedule s;
    s.kind_ = Kind::kTheoremThree;
    s.m_ = m;
    s.H_ = H;
    s.M_ = M;
    s.M_V_ = M_V;
    s.N_ = n_clients;
    s.eta_ = 4.0 * H * (2.0 * M_V + n_clients) / (m * n_clients);
    return s;
  }

  // t is 1-based.
  double gamma(std::size_t t) const {
    if (kind_ == Kind::kConstant) return gamma_;
    return 4.0 / (m_ * (eta_ + static_cast<double>(t)));
  }

  std::vector<double> gammas(std::size_t horizon) const {
    std::vector<double> out(horizon);
    for (std::size_t t = 1; t <= horizon; ++t) out[t - 1] = gamma(t);
    return out;
  }

  Kind kind() const { return kind_; }
  double gamma_const() const { return gamma_; }
  double eta() const { return eta_; }
  double m() const { return m_; }
  double H() const { return H_; }
  double M() const { return M_; }
  double M_V() const { return M_V_; }
  double N() const { return N_; }

 private:
  Kind kind_ = Kind::kConstant;
  double gamma_ = 0.1;
  double m_ = 0.0, H_ = 0.0, M_ = 0.0, M_V_ = 0.0, N_ = 0.0, eta_ = 0.0;
};

}  // namespace fedmech
