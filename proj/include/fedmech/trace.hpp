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
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedmech/numeric.hpp"

namespace fedmech {

/// What a client sends at one step: m = a g + b xi (or h + b xi).
struct Message {
  ModelVector payload;
  double realized_scale = 1.0;
  double realized_noise_mag = 0.0;
  // The requested rotation would have broken <h, g> >= ||g||^2 and was clipped.
  bool angle_clipped = false;
  // A history-dependent policy asked for |a| < 1 or b < 0 and was clamped.
  bool action_clamped = false;
};

/// Full record of one protocol run. Steps are stored 0-based: thetas[t] is
/// theta_{t+1} in 1-based notation, messages[t][i] is client i's message at
/// that step.
struct RunTrace {
  std::vector<ModelVector> thetas;                  // T + 1 entries
  std::vector<std::vector<Message>> messages;       // T x N
  std::vector<std::vector<ModelVector>> gradients;  // T x N, before the strategy is applied
  std::optional<std::vector<std::vector<double>>> payments;  // T x N
  std::vector<double> gammas;                       // T
  std::vector<double> payment_constants;            // T, empty without payments
  std::vector<double> losses_final;                 // reward loss per client at theta_{T+1}
  std::vector<double> global_loss_curve;            // F(theta_t) for every stored theta

  std::size_t horizon() const { return messages.size(); }
  std::size_t n_clients() const { return losses_final.size(); }
};

/// Information available to a history-dependent client at step `step`
/// (0-based): models theta_1..theta_{step+1} and its own earlier gradients and
/// messages.
class HistoryView {
 public:
  HistoryView(const RunTrace& trace, std::size_t client, std::size_t step)
      : trace_(&trace), client_(client), step_(step) {}

  std::size_t step() const { return step_; }
  std::size_t client() const { return client_; }
  std::span<const ModelVector> thetas() const {
    return std::span<const ModelVector>(trace_->thetas).first(step_ + 1);
  }
  const ModelVector& current_theta() const { return trace_->thetas[step_]; }
  // Own gradient / message at an earlier step s < step().
  const ModelVector& own_gradient(std::size_t s) const {
    check_past(s);
    return trace_->gradients.at(s).at(client_);
  }
  const Message& own_message(std::size_t s) const {
    check_past(s);
    return trace_->messages.at(s).at(client_);
  }

 private:
  void check_past(std::size_t s) const {
    if (s >= step_) throw std::out_of_range("history only exposes steps before the current one");
  }

  const RunTrace* trace_;
  std::size_t client_;
  std::size_t step_;
};

}  // namespace fedmech
