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
#include <variant>
#include <vector>

#include "fedmech/errors.hpp"
#include "fedmech/numeric.hpp"
#include "fedmech/rng.hpp"

namespace fedmech {

/// F(theta) = 1/2 (theta - center)^T A (theta - center) + offset.
struct QuadraticObjective {
  ModelVector center;
  Matrix curvature;
  double offset = 0.0;
};

/// One-dimensional polynomial sum_k coeffs[k] x^k.
struct ScalarPolyObjective {
  std::vector<double> coeffs;
};

/// Small tanh network f(x) = sum_k v_k tanh(w_k . x) fitted by squared loss on
/// a fixed synthetic batch. Parameters are laid out as [W row-major | v].
/// Only used to reproduce sweep shapes; it is not convex.
struct ToyNonConvexObjective {
  std::size_t inputs = 2;
  std::size_t hidden = 4;
  double l2 = 1e-3;
  Matrix train_x;
  ModelVector train_y;
  Matrix test_x;
  ModelVector test_y;

  Eigen::Index dimension() const { return static_cast<Eigen::Index>(hidden * (inputs + 1)); }
};

using ObjectiveModel = std::variant<QuadraticObjective, ScalarPolyObjective, ToyNonConvexObjective>;

enum class NoiseKind { kGaussianIsotropic };

struct ClientObjective {
  ObjectiveModel model;
  double noise_sigma = 0.0;
  NoiseKind noise_kind = NoiseKind::kGaussianIsotropic;
  // Ball on which the Lipschitz and curvature constants are computed.
  ModelVector domain_center;
  double domain_radius = 1.0;

  Eigen::Index dimension() const;
  bool is_convex() const { return !std::holds_alternative<ToyNonConvexObjective>(model); }
};

struct ObjectiveConstants {
  double m = 0.0;
  double H = 0.0;
  double L = 0.0;
  double sigma = 0.0;
  // Set when the constants were estimated by probing rather than computed.
  bool approximate = false;
};

struct HeterogeneityProfile {
  double zeta = 0.0;
  double rho = 0.0;
};

namespace detail {

inline double poly_eval(std::span<const double> c, double x) {
  double acc = 0.0;
  for (std::size_t k = c.size(); k-- > 0;) acc = acc * x + c[k];
  return acc;
}

inline std::vector<double> poly_derivative(std::span<const double> c) {
  std::vector<double> out;
  for (std::size_t k = 1; k < c.size(); ++k) out.push_back(static_cast<double>(k) * c[k]);
  if (out.empty()) out.push_back(0.0);
  return out;
}

inline std::size_t poly_degree(std::span<const double> c) {
  std::size_t deg = 0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c[k] != 0.0) deg = k;
  }
  return deg;
}

// Candidate extremum locations of the polynomial `c` on [lo, hi]: the end
// points plus the roots of c' located by sign changes on a grid.
inline std::vector<double> poly_critical_points(std::span<const double> c, double lo, double hi) {
  std::vector<double> points{lo, hi};
  const auto dc = poly_derivative(c);
  constexpr int kCells = 2048;
  const double h = (hi - lo) / kCells;
  double a = lo;
  double fa = poly_eval(dc, a);
  for (int cell = 1; cell <= kCells; ++cell) {
    double b = cell == kCells ? hi : lo + cell * h;
    double fb = poly_eval(dc, b);
    if (fa == 0.0) {
      points.push_back(a);
    } else if (fa * fb < 0.0) {
      double l = a, r = b, fl = fa;
      for (int it = 0; it < 200 && r - l > 0.0; ++it) {
        const double mid = 0.5 * (l + r);
        if (mid == l || mid == r) break;
        const double fm = poly_eval(dc, mid);
        if ((fm < 0.0) == (fl < 0.0)) {
          l = mid;
          fl = fm;
        } else {
          r = mid;
        }
      }
      points.push_back(0.5 * (l + r));
    }
    a = b;
    fa = fb;
  }
  return points;
}

inline double poly_max_on(std::span<const double> c, double lo, double hi, bool absolute) {
  double best = -std::numeric_limits<double>::infinity();
  for (double x : poly_critical_points(c, lo, hi)) {
    const double v = poly_eval(c, x);
    best = std::max(best, absolute ? std::abs(v) : v);
  }
  return best;
}

inline double poly_min_on(std::span<const double> c, double lo, double hi) {
  double best = std::numeric_limits<double>::infinity();
  for (double x : poly_critical_points(c, lo, hi)) best = std::min(best, poly_eval(c, x));
  return best;
}

inline double poly_minimizer(std::span<const double> c) {
  const auto d1 = poly_derivative(c);
  const auto d2 = poly_derivative(d1);
  if (poly_degree(c) == 2) return -c[1] / (2.0 * c[2]);
  double x = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double curv = poly_eval(d2, x);
    if (!(curv > 0.0)) break;
    const double step = poly_eval(d1, x) / curv;
    x -= step;
    if (std::abs(step) <= 1e-15 * (1.0 + std::abs(x))) break;
  }
  return std::isfinite(x) ? x : 0.0;
}

struct ToyForward {
  double loss = 0.0;
  ModelVector grad;
};

inline ToyForward toy_loss(const ToyNonConvexObjective& toy, const ModelVector& theta,
                           const Matrix& xs, const ModelVector& ys, bool with_grad) {
  const auto h = static_cast<Eigen::Index>(toy.hidden);
  const auto p = static_cast<Eigen::Index>(toy.inputs);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
      theta.data(), h, p);
  const auto v = theta.segment(h * p, h);
  ToyForward out;
  if (with_grad) out.grad = ModelVector::Zero(theta.size());
  const auto samples = xs.rows();
  for (Eigen::Index s = 0; s < samples; ++s) {
    const Eigen::VectorXd z = w * xs.row(s).transpose();
    const Eigen::VectorXd act = z.array().tanh();
    const double r = v.dot(act) - ys(s);
    out.loss += 0.5 * r * r;
    if (with_grad) {
      for (Eigen::Index k = 0; k < h; ++k) {
        const double back = r * v(k) * (1.0 - act(k) * act(k));
        for (Eigen::Index j = 0; j < p; ++j) out.grad(k * p + j) += back * xs(s, j);
        out.grad(h * p + k) += r * act(k);
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(samples);
  out.loss = out.loss * inv + 0.5 * toy.l2 * theta.squaredNorm();
  if (with_grad) out.grad = out.grad * inv + toy.l2 * theta;
  return out;
}

inline void check_dimension(const ClientObjective& objective, const ModelVector& theta) {
  if (theta.size() != objective.dimension()) {
    throw ConfigError("dimension mismatch: objective has d=" + std::to_string(objective.dimension()) +
                      ", theta has d=" + std::to_string(theta.size()));
  }
}

// max ||A (theta - mu)|| over ||theta - c|| <= R, with A symmetric PD.
// In the eigenbasis this is max sum_k lambda_k^2 y_k^2 over ||y - delta|| <= R,
// whose maximizer is y_k = s delta_k / (s - lambda_k^2) for the unique
// s > max lambda_k^2 that puts y on the sphere (or the degenerate case where
// delta has no weight on the top eigenspace).
inline double quadratic_gradient_sup(const QuadraticObjective& q, const ModelVector& c, double radius) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(q.curvature);
  const ModelVector lambda = eig.eigenvalues();
  const ModelVector delta = eig.eigenvectors().transpose() * (c - q.center);
  const ModelVector l2 = lambda.array().square();
  const double top = l2.maxCoeff();
  const auto n = lambda.size();
  const double r2 = radius * radius;
  if (radius <= 0.0) return (lambda.array() * delta.array()).matrix().norm();

  auto excess = [&](double s) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double denom = s - l2(k);
      if (denom <= 0.0) {
        if (delta(k) != 0.0) return std::numeric_limits<double>::infinity();
        continue;
      }
      const double t = l2(k) * delta(k) / denom;
      acc += t * t;
    }
    return acc;
  };
  auto value_at = [&](double s) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double denom = s - l2(k);
      if (denom <= 0.0) continue;
      const double y = s * delta(k) / denom;
      acc += l2(k) * y * y;
    }
    return acc;
  };

  const double tiny = 1e-13 * top;
  if (excess(top + tiny) <= r2) {
    // Degenerate case: fill the remaining radius along the top eigenspace.
    const double s = top;
    double used = 0.0;
    double acc = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (l2(k) >= top - tiny) continue;
      const double y = s * delta(k) / (s - l2(k));
      used += (y - delta(k)) * (y - delta(k));
      acc += l2(k) * y * y;
    }
    acc += top * std::max(0.0, r2 - used);
    return std::sqrt(acc);
  }
  double lo = top;
  double hi = top + std::max(1.0, top);
  while (excess(hi) > r2) hi = top + 2.0 * (hi - top);
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (excess(mid) > r2) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return std::sqrt(value_at(hi));
}

}  // namespace detail

inline Eigen::Index ClientObjective::dimension() const {
  return std::visit(
      [](const auto& m) -> Eigen::Index {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, QuadraticObjective>) {
          return m.center.size();
        } else if constexpr (std::is_same_v<T, ScalarPolyObjective>) {
          return 1;
        } else {
          return m.dimension();
        }
      },
      model);
}

/// Builds a quadratic client. Rejects non-symmetric or non-PD curvature.
inline ClientObjective make_quadratic_client(ModelVector center, Matrix curvature, double offset,
                                             double noise_sigma) {
  if (curvature.rows() != center.size() || curvature.cols() != center.size()) {
    throw ConfigError("curvature must be d x d with d = dim(center)");
  }
  if ((curvature - curvature.transpose()).norm() > 1e-12 * (1.0 + curvature.norm())) {
    throw ConfigError("curvature must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(curvature);
  if (!(eig.eigenvalues().minCoeff() > 0.0)) throw ConfigError("curvature must be positive definite");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  ClientObjective out;
  out.domain_center = center;
  out.model = QuadraticObjective{std::move(center), std::move(curvature), offset};
  out.noise_sigma = noise_sigma;
  return out;
}

inline ClientObjective make_poly_client(std::vector<double> coeffs, double noise_sigma) {
  if (detail::poly_degree(coeffs) < 2) throw ConfigError("polynomial objective needs degree >= 2");
  if (!(noise_sigma >= 0.0)) throw ConfigError("noise_sigma must be >= 0");
  ClientObjective out;
  const double x0 = detail::poly_minimizer(coeffs);
  out.model = ScalarPolyObjective{std::move(coeffs)};
  out.domain_center = ModelVector::Constant(1, x0);
  out.noise_sigma = noise_sigma;
  return out;
}

struct ToyDataSpec {
  std::size_t inputs = 2;
  std::size_t hidden = 4;
  std::size_t samples = 64;
  std::vector<double> teacher;  // linear teacher weights, length = inputs
  double target_offset = 0.0;
  double l2 = 1e-3;
  std::uint64_t data_seed = 0;
};

/// Client `client_index` of the toy family. Inputs are standard normal and
/// targets come from the client's linear teacher, so different teachers give
/// heterogeneous clients.
inline ClientObjective make_toy_client(const ToyDataSpec& spec, std::size_t client_index,
                                       double noise_sigma) {
  if (spec.inputs == 0 || spec.hidden == 0 || spec.samples == 0) {
    throw ConfigError("toy objective needs inputs, hidden, samples >= 1");
  }
  if (spec.teacher.size() != spec.inputs) throw ConfigError("teacher length must equal inputs");
  ToyNonConvexObjective toy;
  toy.inputs = spec.inputs;
  toy.hidden = spec.hidden;
  toy.l2 = spec.l2;
  const auto p = static_cast<Eigen::Index>(spec.inputs);
  const auto s = static_cast<Eigen::Index>(spec.samples);
  const Eigen::Map<const ModelVector> teacher(spec.teacher.data(), p);
  auto draw = [&](std::uint64_t split, Matrix& xs, ModelVector& ys) {
    auto rng = RngStream::make(spec.data_seed, StreamPurpose::kData, client_index, split);
    xs.resize(s, p);
    ys.resize(s);
    for (Eigen::Index r = 0; r < s; ++r) {
      for (Eigen::Index j = 0; j < p; ++j) xs(r, j) = rng.normal();
      ys(r) = xs.row(r).dot(teacher) + spec.target_offset;
    }
  };
  draw(0, toy.train_x, toy.train_y);
  draw(1, toy.test_x, toy.test_y);
  ClientObjective out;
  out.domain_center = ModelVector::Zero(toy.dimension());
  out.model = std::move(toy);
  out.noise_sigma = noise_sigma;
  return out;
}

/// Minimizer of the client's own objective (for the toy family: the origin).
inline ModelVector objective_center(const ClientObjective& objective) {
  return std::visit(
      [&](const auto& m) -> ModelVector {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, QuadraticObjective>) {
          return m.center;
        } else if constexpr (std::is_same_v<T, ScalarPolyObjective>) {
          return ModelVector::Constant(1, detail::poly_minimizer(m.coeffs));
        } else {
          return ModelVector::Zero(m.dimension());
        }
      },
      objective.model);
}

inline double evaluate(const ClientObjective& objective, const ModelVector& theta) {
  detail::check_dimension(objective, theta);
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, QuadraticObjective>) {
          const ModelVector r = theta - m.center;
          return 0.5 * r.dot(m.curvature * r) + m.offset;
        } else if constexpr (std::is_same_v<T, ScalarPolyObjective>) {
          return detail::poly_eval(m.coeffs, theta(0));
        } else {
          return detail::toy_loss(m, theta, m.train_x, m.train_y, false).loss;
        }
      },
      objective.model);
}

/// Loss used for rewards: identical to evaluate() except for the toy family,
/// which is scored on its held-out batch.
inline double reward_loss(const ClientObjective& objective, const ModelVector& theta) {
  if (const auto* toy = std::get_if<ToyNonConvexObjective>(&objective.model)) {
    detail::check_dimension(objective, theta);
    return detail::toy_loss(*toy, theta, toy->test_x, toy->test_y, false).loss;
  }
  return evaluate(objective, theta);
}

inline ModelVector exact_gradient(const ClientObjective& objective, const ModelVector& theta) {
  detail::check_dimension(objective, theta);
  return std::visit(
      [&](const auto& m) -> ModelVector {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, QuadraticObjective>) {
          return m.curvature * (theta - m.center);
        } else if constexpr (std::is_same_v<T, ScalarPolyObjective>) {
          return ModelVector::Constant(1, detail::poly_eval(detail::poly_derivative(m.coeffs), theta(0)));
        } else {
          return detail::toy_loss(m, theta, m.train_x, m.train_y, true).grad;
        }
      },
      objective.model);
}

/// grad F_i(theta) plus isotropic Gaussian noise with E||e||^2 = sigma^2.
inline ModelVector sample_gradient(const ClientObjective& objective, const ModelVector& theta,
                                   RngStream& rng) {
  ModelVector g = exact_gradient(objective, theta);
  if (objective.noise_sigma > 0.0) {
    g += rng.isotropic(g.size(), objective.noise_sigma * objective.noise_sigma);
  }
  return g;
}

inline ObjectiveConstants constants(const ClientObjective& objective) {
  ObjectiveConstants out;
  out.sigma = objective.noise_sigma;
  const double radius = objective.domain_radius;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, QuadraticObjective>) {
          Eigen::SelfAdjointEigenSolver<Matrix> eig(m.curvature);
          out.m = eig.eigenvalues().minCoeff();
          out.H = eig.eigenvalues().maxCoeff();
          if (!(out.m > 0.0)) throw ConfigError("curvature is not positive definite");
          out.L = detail::quadratic_gradient_sup(m, objective.domain_center, radius);
        } else if constexpr (std::is_same_v<T, ScalarPolyObjective>) {
          const double lo = objective.domain_center(0) - radius;
          const double hi = objective.domain_center(0) + radius;
          const auto d1 = detail::poly_derivative(m.coeffs);
          const auto d2 = detail::poly_derivative(d1);
          out.m = detail::poly_min_on(d2, lo, hi);
          out.H = detail::poly_max_on(d2, lo, hi, true);
          out.L = detail::poly_max_on(d1, lo, hi, true);
          if (!(out.m > 0.0)) throw ConfigError("polynomial is not strongly convex on its domain");
          // Critical points beyond a linear F'' are located numerically.
          out.approximate = detail::poly_degree(m.coeffs) > 3;
        } else {
          auto rng = RngStream::make(0, StreamPurpose::kProbe);
          const auto d = m.dimension();
          auto point = [&] {
            ModelVector u = rng.isotropic(d, 1.0);
            const double n = u.norm();
            const double r = radius * std::pow(rng.uniform(0.0, 1.0), 1.0 / static_cast<double>(d));
            return ModelVector(objective.domain_center + (n > 0.0 ? u * (r / n) : u));
          };
          out.m = std::numeric_limits<double>::infinity();
          out.H = 0.0;
          out.L = exact_gradient(objective, objective.domain_center).norm();
          for (int k = 0; k < 256; ++k) {
            const ModelVector x = point();
            const ModelVector y = point();
            const ModelVector gx = exact_gradient(objective, x);
            const ModelVector gy = exact_gradient(objective, y);
            const double dist2 = (x - y).squaredNorm();
            if (dist2 == 0.0) continue;
            out.H = std::max(out.H, (gx - gy).norm() / std::sqrt(dist2));
            out.m = std::min(out.m, (gx - gy).dot(x - y) / dist2);
            out.L = std::max({out.L, gx.norm(), gy.norm()});
          }
          out.approximate = true;
        }
      },
      objective.model);
  return out;
}

inline double global_evaluate(std::span<const ClientObjective> clients, const ModelVector& theta) {
  CompensatedSum sum;
  for (const auto& c : clients) sum.add(evaluate(c, theta));
  return sum.value() / static_cast<double>(clients.size());
}

inline ModelVector global_gradient(std::span<const ClientObjective> clients, const ModelVector& theta) {
  ModelVector g = ModelVector::Zero(theta.size());
  for (const auto& c : clients) g += exact_gradient(c, theta);
  return g / static_cast<double>(clients.size());
}

/// Exact minimizer of F = mean F_i for quadratic and quadratic-polynomial
/// clients (solves (sum A_i) theta = sum A_i mu_i).
inline ModelVector global_minimizer(std::span<const ClientObjective> clients) {
  if (clients.empty()) throw ConfigError("empty client list");
  const auto d = clients.front().dimension();
  Matrix a = Matrix::Zero(d, d);
  ModelVector b = ModelVector::Zero(d);
  for (const auto& c : clients) {
    if (const auto* q = std::get_if<QuadraticObjective>(&c.model)) {
      a += q->curvature;
      b += q->curvature * q->center;
    } else if (const auto* p = std::get_if<ScalarPolyObjective>(&c.model);
               p != nullptr && detail::poly_degree(p->coeffs) == 2) {
      a(0, 0) += 2.0 * p->coeffs[2];
      b(0) -= p->coeffs[1];
    } else {
      throw AnalysisError("global_minimizer needs quadratic objectives");
    }
  }
  return a.ldlt().solve(b);
}

/// zeta^2 = max over probes and clients of | ||grad F_i||^2 - ||grad F||^2 |,
/// rho^2 = max pairwise |sigma_i^2 - sigma_j^2|.
inline HeterogeneityProfile heterogeneity(std::span<const ClientObjective> clients,
                                          std::span<const ModelVector> probe_thetas) {
  if (clients.empty()) throw ConfigError("heterogeneity needs at least one client");
  if (probe_thetas.empty()) throw ConfigError("heterogeneity needs at least one probe point");
  double zeta2 = 0.0;
  for (const auto& theta : probe_thetas) {
    const double global = global_gradient(clients, theta).squaredNorm();
    for (const auto& c : clients) {
      zeta2 = std::max(zeta2, std::abs(exact_gradient(c, theta).squaredNorm() - global));
    }
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : clients) {
    const double v = c.noise_sigma * c.noise_sigma;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {std::sqrt(zeta2), std::sqrt(hi - lo)};
}

/// Sets every client's domain ball to the default: centered on the average of
/// the client centers, radius 2 max_i ||mu_i - theta_ref|| + 1.
inline void assign_default_domains(std::span<ClientObjective> clients,
                                   std::optional<double> radius_override = std::nullopt) {
  if (clients.empty()) return;
  ModelVector ref = ModelVector::Zero(clients.front().dimension());
  std::vector<ModelVector> centers;
  for (const auto& c : clients) {
    centers.push_back(objective_center(c));
    ref += centers.back();
  }
  ref /= static_cast<double>(clients.size());
  double spread = 0.0;
  for (const auto& mu : centers) spread = std::max(spread, (mu - ref).norm());
  const double radius = radius_override.value_or(2.0 * spread + 1.0);
  for (auto& c : clients) {
    c.domain_center = ref;
    c.domain_radius = radius;
  }
}

}  // namespace fedmech
