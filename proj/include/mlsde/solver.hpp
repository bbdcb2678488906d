// Copyright 2026 The mlsde Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mlsde/analytic_scores.hpp"
#include "mlsde/errors.hpp"
#include "mlsde/process.hpp"
#include "mlsde/rng.hpp"
#include "mlsde/score_model.hpp"

namespace mlsde {

/// (kappa, omega, sigma) of one step of the fixed-step reverse solver
///   x_{t-h} = x_t + beta_t h ((1/2 + omega)(x_t - shift) + (1 + kappa) g_t s(x_t, t)) + sigma xi
/// where g_t = 1 (VP, MR-VP) or 1 - exp(-2 int_0^t beta) (sub-VP). VE uses
///   x_{t-h} = x_t + (1 + kappa)(sigma_t^2 - sigma_{t-h}^2) s(x_t, t) + sigma xi
/// and ignores omega.
struct SolverStepParams {
  double kappa = 0.0;
  double omega = 0.0;
  double sigma = 0.0;
};

enum class Scheme { kEm, kPf, kMl };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::kEm: return "em";
    case Scheme::kPf: return "pf";
    case Scheme::kMl: return "ml";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view name) {
  if (name == "em") return Scheme::kEm;
  if (name == "pf") return Scheme::kPf;
  if (name == "ml") return Scheme::kMl;
  throw DomainError("unknown scheme '" + std::string(name) + "'");
}

/// Data-dependent E[Tr Var(X_0 | X_t)] term of the optimal sigma.
struct ZeroVariance {};

/// Treat the data as N(data_mean, data_var I) and use the closed-form
/// posterior variance.
struct GaussianVarianceTerm {
  Vector data_mean;
  double data_var = 0.0;
};

/// Fine-step reverse solves from noised data points; see
/// variance_term_monte_carlo.
struct MonteCarloVarianceTerm {
  int n_chains = 64;
  double h_fine = 1e-3;
  int n_points = 16;
  Matrix data;
};

using VarianceTerm = std::variant<ZeroVariance, GaussianVarianceTerm, MonteCarloVarianceTerm>;

struct SolverConfig {
  int n_steps = 10;
  Scheme scheme = Scheme::kMl;
  /// ML coefficients are used only on steps with t <= tau; EM otherwise.
  double tau = 1.0;
  VarianceTerm variance_term = ZeroVariance{};
  std::uint64_t seed = 0;
};

namespace detail {

inline void require_step(double t, double h, const char* op) {
  require_unit_time(t, "t");
  if (!(h > 0.0) || !(t >= h - 1e-12)) {
    throw DomainError(std::string(op) + ": need 0 < h <= t, got t=" + std::to_string(t) +
                      " h=" + std::to_string(h));
  }
}

inline double step_start(double t, double h) { return std::max(0.0, t - h); }

}  // namespace detail

/// Likelihood-maximizing step coefficients for the step ending at t - h.
/// variance_term_value is E[Tr Var(X_0 | X_t)].
inline SolverStepParams ml_coefficients(const ProcessSpec& proc, double t, double h,
                                        double variance_term_value) {
  detail::require_step(t, h, "ml_coefficients");
  detail::require(variance_term_value >= 0.0 && std::isfinite(variance_term_value),
                  "ml_coefficients: variance term must be finite and >= 0");
  const double s = detail::step_start(t, h);
  const auto b = bridge(proc, s, t);
  const double sigma = std::sqrt(b.sigma_sq + b.nu * b.nu * variance_term_value / proc.dim());
  if (proc.kind() == ProcessKind::kVe) return {0.0, 0.0, sigma};

  const auto& sched = proc.schedule();
  const double beta_h = beta_at(sched, t) * h;
  detail::require(beta_h > 0.0, "ml_coefficients: beta_t h must be positive");
  const double g0t = gamma(sched, 0.0, t);
  const double var0t = one_minus_gamma_sq(sched, 0.0, t);
  if (proc.kind() == ProcessKind::kSubVp) {
    const double g0t_sq = g0t * g0t;
    const double kappa = b.nu * var0t / (g0t * beta_h * (1.0 + g0t_sq)) - 1.0;
    const double omega = (b.mu - 1.0) / beta_h + (1.0 + kappa) * (1.0 + g0t_sq) / var0t - 0.5;
    return {kappa, omega, sigma};
  }
  const double kappa = b.nu * var0t / (g0t * beta_h) - 1.0;
  const double omega = (b.mu - 1.0) / beta_h + (1.0 + kappa) / var0t - 0.5;
  return {kappa, omega, sigma};
}

/// Euler-Maruyama and probability-flow members of the solver family.
inline SolverStepParams preset(Scheme scheme, const ProcessSpec& proc, double t, double h) {
  detail::require_step(t, h, "preset");
  switch (scheme) {
    case Scheme::kPf:
      return {-0.5, 0.0, 0.0};
    case Scheme::kEm: {
      const auto& sched = proc.schedule();
      switch (proc.kind()) {
        case ProcessKind::kVp:
        case ProcessKind::kMrVp:
          return {0.0, 0.0, std::sqrt(beta_at(sched, t) * h)};
        case ProcessKind::kSubVp: {
          const double g = -std::expm1(-2.0 * beta_integral(sched, 0.0, t));
          return {0.0, 0.0, std::sqrt(beta_at(sched, t) * g * h)};
        }
        case ProcessKind::kVe:
          return {0.0, 0.0, std::sqrt(sigma_sq_increment(sched, detail::step_start(t, h), t))};
      }
      break;
    }
    case Scheme::kMl:
      throw DomainError("preset: ML coefficients depend on the variance term; use ml_coefficients");
  }
  throw DomainError("preset: unknown scheme");
}

namespace detail {

/// Applies one solver step to every row of x given precomputed scores and
/// noise draws.
inline Matrix apply_step(const ProcessSpec& proc, const Matrix& x, const Matrix& score, double t,
                         double h, const SolverStepParams& p, const Matrix& xi) {
  const auto& sched = proc.schedule();
  if (proc.kind() == ProcessKind::kVe) {
    const double dvar = sigma_sq_increment(sched, step_start(t, h), t);
    return x + ((1.0 + p.kappa) * dvar) * score + p.sigma * xi;
  }
  const double beta_h = beta_at(sched, t) * h;
  double score_gain = 1.0;
  if (proc.kind() == ProcessKind::kSubVp) {
    score_gain = -std::expm1(-2.0 * beta_integral(sched, 0.0, t));
  }
  const double drift_x = beta_h * (0.5 + p.omega);
  const double drift_s = beta_h * (1.0 + p.kappa) * score_gain;
  if (proc.kind() == ProcessKind::kMrVp) {
    const Eigen::RowVectorXd shift = proc.x_bar().transpose();
    return x + drift_x * (x.rowwise() - shift) + drift_s * score + p.sigma * xi;
  }
  return x + drift_x * x + drift_s * score + p.sigma * xi;
}

inline Matrix evaluate_score(const ScoreFn& model, const Matrix& x, double t, int step_index) {
  Matrix s = model(x, t);
  if (s.rows() != x.rows() || s.cols() != x.cols()) {
    throw NumericalError("score model returned shape " + std::to_string(s.rows()) + "x" +
                         std::to_string(s.cols()) + " at step " + std::to_string(step_index));
  }
  if (!s.allFinite()) {
    throw NumericalError("non-finite score at step " + std::to_string(step_index) +
                         " (t=" + std::to_string(t) + ")");
  }
  return s;
}

/// One n-dimensional standard normal per chain, from that chain's stream.
inline Matrix draw_noise(std::vector<CounterRng>& rngs, int dim) {
  Matrix xi(static_cast<Eigen::Index>(rngs.size()), dim);
  for (std::size_t i = 0; i < rngs.size(); ++i) {
    for (int j = 0; j < dim; ++j) xi(static_cast<Eigen::Index>(i), j) = standard_normal(rngs[i]);
  }
  return xi;
}

}  // namespace detail

/// Single-point step. Draws one n-dimensional xi from rng even when
/// params.sigma == 0.
inline Vector step(const ProcessSpec& proc, const ScoreFn& model, const Vector& x_t, double t,
                   double h, const SolverStepParams& params, CounterRng& rng) {
  detail::require_step(t, h, "step");
  detail::require(std::isfinite(params.kappa) && std::isfinite(params.omega) &&
                      std::isfinite(params.sigma) && params.sigma >= 0.0,
                  "step: parameters must be finite with sigma >= 0");
  detail::require(x_t.size() == proc.dim(), "step: dimension mismatch");
  const Matrix x = x_t.transpose();
  std::vector<CounterRng> rngs{rng};
  const Matrix xi = detail::draw_noise(rngs, proc.dim());
  rng = rngs[0];
  const Matrix s = detail::evaluate_score(model, x, t, 0);
  return detail::apply_step(proc, x, s, t, h, params, xi).row(0).transpose();
}

/// Per-step coefficient rule (t, h) -> params.
using StepRule = std::function<SolverStepParams(double t, double h)>;

/// Called with the current time and batch: once at t = 1 and after each step.
using StateObserver = std::function<void(double t, const Matrix& x)>;

inline Vector prior_mean(const ProcessSpec& proc) { return proc.x_bar(); }

inline double prior_sd(const ProcessSpec& proc) {
  return proc.kind() == ProcessKind::kVe ? proc.schedule().as_geometric().sigma_max : 1.0;
}

/// Runs m independent chains on the uniform grid t = 1, 1 - h, ..., h with
/// h = 1 / n_steps. Chain i draws from stream (seed, i): first its initial
/// point, then exactly one n-dimensional xi per step.
inline SampleBatch solve_reverse_with(const ProcessSpec& proc, const ScoreFn& model,
                                      const StepRule& rule, int n_steps, int m,
                                      std::uint64_t seed, const StateObserver& observer = {}) {
  detail::require(n_steps >= 1, "solve_reverse: n_steps must be >= 1");
  detail::require(m >= 1, "solve_reverse: need at least one chain");
  const int n = proc.dim();
  const double h = 1.0 / n_steps;

  std::vector<CounterRng> rngs;
  rngs.reserve(m);
  for (int i = 0; i < m; ++i) rngs.emplace_back(seed, static_cast<std::uint64_t>(i));
  const Eigen::RowVectorXd mean0 = prior_mean(proc).transpose();
  Matrix x = (prior_sd(proc) * detail::draw_noise(rngs, n)).rowwise() + mean0;
  if (observer) observer(1.0, x);

  for (int k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(n_steps - k) / n_steps;
    const SolverStepParams p = rule(t, h);
    const Matrix s = detail::evaluate_score(model, x, t, k);
    const Matrix xi = detail::draw_noise(rngs, n);
    x = detail::apply_step(proc, x, s, t, h, p, xi);
    if (!x.allFinite()) {
      throw NumericalError("non-finite state after step " + std::to_string(k) +
                           " (t=" + std::to_string(t) + ")");
    }
    if (observer) observer(static_cast<double>(n_steps - k - 1) / n_steps, x);
  }
  return {std::move(x), 0.0, {seed}};
}

/// Closed-form Tr Var(X_0 | X_t) for N(data_mean, data_var I) data; it does
/// not depend on X_t, so it equals its expectation over X_t.
inline double variance_term_gaussian(const Vector& data_mean, double data_var,
                                     const ProcessSpec& proc, double t) {
  detail::require(data_var >= 0.0 && std::isfinite(data_var),
                  "variance_term_gaussian: data_var must be >= 0");
  detail::require(data_mean.size() == proc.dim(), "variance_term_gaussian: dimension mismatch");
  detail::require_above_floor(t, "variance_term_gaussian");
  const auto c = marginal_coefficients(proc, 0.0, t);
  return proc.dim() * data_var * c.var / (c.var + data_var * c.scale * c.scale);
}

/// Estimates E[Tr Var(X_0 | X_t)] by noising n_points data rows to time t
/// and, from each, running n_chains fine-step Euler-Maruyama reverse solves
/// to t = 0; returns the mean total sample variance of the endpoints.
inline double variance_term_monte_carlo(const ProcessSpec& proc, const ScoreFn& model, double t,
                                        const MonteCarloVarianceTerm& cfg, std::uint64_t seed) {
  detail::require(cfg.n_chains >= 2, "variance_term_monte_carlo: n_chains must be >= 2");
  detail::require(cfg.n_points >= 1, "variance_term_monte_carlo: n_points must be >= 1");
  detail::require(cfg.h_fine > 0.0, "variance_term_monte_carlo: h_fine must be positive");
  detail::require(cfg.data.rows() >= 1 && cfg.data.cols() == proc.dim(),
                  "variance_term_monte_carlo: data must be a non-empty n-column batch");
  detail::require_above_floor(t, "variance_term_monte_carlo");
  const int n = proc.dim();
  const auto n_fine = static_cast<int>(std::ceil(t / cfg.h_fine - 1e-9));
  const double hf = t / n_fine;
  const auto c = marginal_coefficients(proc, 0.0, t);

  double total = 0.0;
  for (int p = 0; p < cfg.n_points; ++p) {
    const std::uint64_t point_seed = derive_seed(seed, static_cast<std::uint64_t>(p));
    CounterRng pick(point_seed, 0xffffffffULL);
    const auto row = std::min<Eigen::Index>(
        static_cast<Eigen::Index>(uniform01(pick) * static_cast<double>(cfg.data.rows())),
        cfg.data.rows() - 1);
    Vector x_t(n);
    for (int j = 0; j < n; ++j) {
      x_t(j) = c.scale * cfg.data(row, j) + c.shift_weight * proc.x_bar()(j) +
               std::sqrt(c.var) * standard_normal(pick);
    }
    std::vector<CounterRng> rngs;
    for (int i = 0; i < cfg.n_chains; ++i) rngs.emplace_back(point_seed, static_cast<std::uint64_t>(i));
    Matrix x = x_t.transpose().replicate(cfg.n_chains, 1);
    for (int k = 0; k < n_fine; ++k) {
      const double tk = static_cast<double>(n_fine - k) * hf;
      const Matrix s = detail::evaluate_score(model, x, tk, k);
      const Matrix xi = detail::draw_noise(rngs, n);
      x = detail::apply_step(proc, x, s, tk, hf, preset(Scheme::kEm, proc, tk, hf), xi);
    }
    const Eigen::RowVectorXd mean = x.colwise().mean();
    total += (x.rowwise() - mean).squaredNorm() / (cfg.n_chains - 1);
  }
  return total / cfg.n_points;
}

/// Resolves the configured variance term at time t.
inline double variance_term_value(const VarianceTerm& term, const ProcessSpec& proc,
                                  const ScoreFn& model, double t, std::uint64_t seed) {
  if (std::holds_alternative<ZeroVariance>(term)) return 0.0;
  if (const auto* g = std::get_if<GaussianVarianceTerm>(&term)) {
    return variance_term_gaussian(g->data_mean, g->data_var, proc, t);
  }
  return variance_term_monte_carlo(proc, model, t, std::get<MonteCarloVarianceTerm>(term), seed);
}

/// Coefficients actually used at (t, h) under cfg, including the tau switch.
inline StepRule make_step_rule(const ProcessSpec& proc, const ScoreFn& model,
                               const SolverConfig& cfg) {
  return [&proc, &model, &cfg](double t, double h) {
    if (cfg.scheme != Scheme::kMl) return preset(cfg.scheme, proc, t, h);
    if (t > cfg.tau) return preset(Scheme::kEm, proc, t, h);
    // Distinct stream per step for the Monte-Carlo estimator.
    const auto step_seed = derive_seed(cfg.seed ^ 0x5ca1ab1eULL,
                                       static_cast<std::uint64_t>(std::llround(t / h)));
    return ml_coefficients(proc, t, h, variance_term_value(cfg.variance_term, proc, model, t, step_seed));
  };
}

inline SampleBatch solve_reverse(const ProcessSpec& proc, const ScoreFn& model,
                                 const SolverConfig& cfg, int m,
                                 const StateObserver& observer = {}) {
  detail::require(cfg.n_steps >= 1, "solve_reverse: n_steps must be >= 1");
  detail::require(cfg.tau >= 0.0 && cfg.tau <= 1.0, "solve_reverse: tau must lie in [0, 1]");
  return solve_reverse_with(proc, model, make_step_rule(proc, model, cfg), cfg.n_steps, m,
                            cfg.seed, observer);
}

}  // namespace mlsde
