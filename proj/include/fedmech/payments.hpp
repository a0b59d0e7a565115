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
#include <limits>
#include <span>
#include <vector>

#include "fedmech/errors.hpp"
#include "fedmech/numeric.hpp"
#include "fedmech/trace.hpp"

namespace fedmech {

/// Per-step payment constants C_t. The theorem-prescribed kind also carries
/// the contraction factors c_l = 2(1 - 2 gamma_l m + gamma_l^2 H^2), the
/// suffix products CalC_t = prod_{l>t} c_l and G = sum_t gamma_t sqrt(CalC_t).
/// Vectors are indexed by 0-based step.
class PaymentSchedule {
 public:
  enum class Kind { kTheoremOne, kConstantC };

  struct TheoremOneInputs {
    std::vector<double> gammas;
    double m = 0.0;
    double H = 0.0;
    double L = 0.0;
    std::size_t n_clients = 0;
    double epsilon = 0.0;
  };

  // log CalC_t is accumulated in log space once T * max|log c_l| exceeds this.
  static constexpr double kLogSpaceThreshold = 300.0;

  static PaymentSchedule constant(double c) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("payment constant C must be >= 0", "payment.C");
    PaymentSchedule s;
    s.kind_ = Kind::kConstantC;
    s.c_const_ = c;
    return s;
  }

  static PaymentSchedule theorem_one(TheoremOneInputs in) {
    if (in.gammas.empty()) throw ConfigError("theorem-one schedule needs T >= 1");
    if (!(in.epsilon > 0.0)) throw ConfigError("theorem-one schedule needs epsilon > 0", "payment.epsilon");
    if (in.n_clients < 2) throw ConfigError("theorem-one schedule needs N >= 2");
    if (!(in.L >= 0.0) || !(in.m > 0.0) || !(in.H > 0.0)) {
      throw ConfigError("theorem-one schedule needs m > 0, H > 0, L >= 0");
    }
    PaymentSchedule s;
    s.kind_ = Kind::kTheoremOne;
    const std::size_t T = in.gammas.size();
    s.contraction_.resize(T);
    double max_abs_log = 0.0;
    for (std::size_t l = 0; l < T; ++l) {
      const double g = in.gammas[l];
      const double c = 2.0 * (1.0 - 2.0 * g * in.m + g * g * in.H * in.H);
      if (!(c > 0.0)) {
        throw RefusedScheduleError("contraction factor c_" + std::to_string(l + 1) + " = " + std::to_string(c) +
                                   " is not positive");
      }
      s.contraction_[l] = c;
      max_abs_log = std::max(max_abs_log, std::abs(std::log(c)));
    }
    s.log_space_ = static_cast<double>(T) * max_abs_log > kLogSpaceThreshold;
    s.products_.assign(T, 1.0);
    s.log_products_.assign(T, 0.0);
    if (s.log_space_) {
      CompensatedSum acc;
      for (std::size_t t = T - 1; t-- > 0;) {
        acc.add(std::log(s.contraction_[t + 1]));
        s.log_products_[t] = acc.value();
        s.products_[t] = std::exp(s.log_products_[t]);
      }
    } else {
      for (std::size_t t = T - 1; t-- > 0;) {
        s.products_[t] = s.contraction_[t + 1] * s.products_[t + 1];
        s.log_products_[t] = std::log(s.products_[t]);
      }
    }
    const double scale = in.L / (static_cast<double>(in.n_clients) * in.epsilon);
    s.constants_.resize(T);
    CompensatedSum g_sum;
    double log_g = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < T; ++t) {
      const double gamma = in.gammas[t];
      const double root = s.log_space_ ? std::exp(0.5 * s.log_products_[t]) : std::sqrt(s.products_[t]);
      s.constants_[t] = std::sqrt(2.0) * root * gamma * scale;
      g_sum.add(gamma * root);
      const double term = std::log(gamma) + 0.5 * s.log_products_[t];
      log_g = std::max(log_g, term) + std::log1p(std::exp(-std::abs(log_g - term)));
    }
    s.G_ = g_sum.value();
    s.log_G_ = log_g;
    s.inputs_ = std::move(in);
    return s;
  }

  Kind kind() const { return kind_; }
  double c_const() const { return c_const_; }

  // C_t for 0-based step t.
  double coefficient(std::size_t t) const {
    return kind_ == Kind::kConstantC ? c_const_ : constants_.at(t);
  }

  std::size_t horizon() const { return constants_.size(); }
  const std::vector<double>& constants() const { return constants_; }
  const std::vector<double>& contraction() const { return contraction_; }
  const std::vector<double>& products() const { return products_; }
  const std::vector<double>& log_products() const { return log_products_; }
  double G() const { return G_; }
  double log_G() const { return log_G_; }
  bool log_space() const { return log_space_; }
  const TheoremOneInputs& inputs() const { return inputs_; }

 private:
  Kind kind_ = Kind::kConstantC;
  double c_const_ = 0.0;
  std::vector<double> constants_;
  std::vector<double> contraction_;
  std::vector<double> products_;
  std::vector<double> log_products_;
  double G_ = 0.0;
  double log_G_ = 0.0;
  bool log_space_ = false;
  TheoremOneInputs inputs_;
};

/// p_i = C [ s_i - (1/(N-1)) sum_{j != i} s_j ] with s_i = ||m_i||^2, written
/// as C (N s_i - S) / (N - 1) so that the payments sum to zero up to rounding.
inline std::vector<double> step_payments_from_norms(std::span<const double> sq_norms, double c_t) {
  const std::size_t n = sq_norms.size();
  if (n < 2) throw ConfigError("payments need N >= 2 clients");
  if (!(c_t >= 0.0)) throw ConfigError("payment constant must be >= 0");
  CompensatedSum total;
  for (double s : sq_norms) total.add(s);
  const double sum = total.value();
  const double nd = static_cast<double>(n);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = c_t * (nd * sq_norms[i] - sum) / (nd - 1.0);
  return out;
}

inline std::vector<double> step_payments(std::span<const Message> messages, double c_t) {
  std::vector<double> norms;
  norms.reserve(messages.size());
  for (const auto& m : messages) norms.push_back(m.payload.squaredNorm());
  return step_payments_from_norms(norms, c_t);
}

inline double total_payment(const RunTrace& trace, std::size_t client) {
  if (!trace.payments) throw AnalysisError("trace has no payments recorded");
  CompensatedSum sum;
  for (const auto& row : *trace.payments) sum.add(row.at(client));
  return sum.value();
}

}  // namespace fedmech
