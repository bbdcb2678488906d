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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mlsde/errors.hpp"
#include "mlsde/rng.hpp"
#include "mlsde/schedule.hpp"
#include "mlsde/types.hpp"

namespace mlsde {

enum class ProcessKind { kVp, kSubVp, kVe, kMrVp };

inline std::string_view to_string(ProcessKind kind) {
  switch (kind) {
    case ProcessKind::kVp: return "vp";
    case ProcessKind::kSubVp: return "subvp";
    case ProcessKind::kVe: return "ve";
    case ProcessKind::kMrVp: return "mrvp";
  }
  return "?";
}

inline ProcessKind parse_process_kind(std::string_view name) {
  if (name == "vp") return ProcessKind::kVp;
  if (name == "subvp") return ProcessKind::kSubVp;
  if (name == "ve") return ProcessKind::kVe;
  if (name == "mrvp") return ProcessKind::kMrVp;
  throw DomainError("unknown process '" + std::string(name) + "'");
}

/// One of the four diffusion types together with its schedule and data
/// dimensionality. MR-VP additionally carries the shift vector it reverts to.
class ProcessSpec {
 public:
  static ProcessSpec vp(int dim, NoiseSchedule schedule = LinearSchedule{}) {
    return ProcessSpec(ProcessKind::kVp, schedule, Vector::Zero(dim));
  }
  static ProcessSpec sub_vp(int dim, NoiseSchedule schedule = LinearSchedule{}) {
    return ProcessSpec(ProcessKind::kSubVp, schedule, Vector::Zero(dim));
  }
  static ProcessSpec ve(int dim, NoiseSchedule schedule = GeometricSchedule{}) {
    return ProcessSpec(ProcessKind::kVe, schedule, Vector::Zero(dim));
  }
  static ProcessSpec mr_vp(Vector x_bar, NoiseSchedule schedule = LinearSchedule{}) {
    return ProcessSpec(ProcessKind::kMrVp, schedule, std::move(x_bar));
  }

  ProcessKind kind() const { return kind_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  int dim() const { return static_cast<int>(x_bar_.size()); }

  /// The MR-VP shift vector; the zero vector for every other process.
  const Vector& x_bar() const { return x_bar_; }

 private:
  ProcessSpec(ProcessKind kind, NoiseSchedule schedule, Vector x_bar)
      : kind_(kind), schedule_(schedule), x_bar_(std::move(x_bar)) {
    detail::require(x_bar_.size() >= 1, "process dimensionality must be positive");
    detail::require(x_bar_.allFinite(), "shift vector must be finite");
    if (kind_ == ProcessKind::kVe) {
      detail::require(schedule_.is_geometric(), "VE process requires a geometric schedule");
    } else {
      detail::require(schedule_.is_linear(), "VP-type process requires a linear schedule");
    }
  }

  ProcessKind kind_;
  NoiseSchedule schedule_;
  Vector x_bar_;
};

/// Law(X_t | X_s = x) = N(scale * x + shift_weight * x_bar, var * I).
struct MarginalCoefficients {
  double scale;
  double shift_weight;
  double var;
};

/// Transition coefficients for 0 <= s <= t <= 1 (s == t gives the identity).
inline MarginalCoefficients marginal_coefficients(const ProcessSpec& proc, double s, double t) {
  detail::require_ordered(s, t);
  const auto& sched = proc.schedule();
  switch (proc.kind()) {
    case ProcessKind::kVp:
      return {gamma(sched, s, t), 0.0, one_minus_gamma_sq(sched, s, t)};
    case ProcessKind::kMrVp: {
      const double g = gamma(sched, s, t);
      return {g, -std::expm1(-0.5 * beta_integral(sched, s, t)), one_minus_gamma_sq(sched, s, t)};
    }
    case ProcessKind::kSubVp: {
      // 1 + g0t^4 - gst^2 (1 + g0s^4) factors as (1 - gst^2)(1 - g0s^2 g0t^2).
      const double g0s_sq = std::exp(-beta_integral(sched, 0.0, s));
      const double g0t_sq = std::exp(-beta_integral(sched, 0.0, t));
      return {gamma(sched, s, t), 0.0,
              one_minus_gamma_sq(sched, s, t) * (1.0 - g0s_sq * g0t_sq)};
    }
    case ProcessKind::kVe:
      return {1.0, 0.0, sigma_sq_increment(sched, s, t)};
  }
  throw DomainError("unknown process kind");
}

/// Isotropic Gaussian N(mean, var * I).
struct GaussianParams {
  Vector mean;
  double var;
};

inline GaussianParams forward_marginal(const ProcessSpec& proc, const Vector& x_from, double s,
                                       double t) {
  detail::require(x_from.size() == proc.dim(), "forward_marginal: dimension mismatch");
  if (!(s < t)) {
    throw DomainError("forward_marginal requires s < t, got s=" + std::to_string(s) +
                      " t=" + std::to_string(t));
  }
  const auto c = marginal_coefficients(proc, s, t);
  return {c.scale * x_from + c.shift_weight * proc.x_bar(), c.var};
}

namespace detail {

inline void require_above_floor(double t, const char* op) {
  require_unit_time(t, "t");
  if (!(t > kTimeFloor)) {
    throw DomainError(std::string(op) + ": t=" + std::to_string(t) +
                      " is at or below the time floor " + std::to_string(kTimeFloor));
  }
}

}  // namespace detail

/// Gradient of log p_{t|0}(x_t | x_0), the denoising score matching target.
inline Vector conditional_score_target(const ProcessSpec& proc, const Vector& x_t,
                                       const Vector& x_0, double t) {
  detail::require_above_floor(t, "conditional_score_target");
  detail::require(x_t.size() == proc.dim() && x_0.size() == proc.dim(),
                  "conditional_score_target: dimension mismatch");
  const auto m = forward_marginal(proc, x_0, 0.0, t);
  return -(x_t - m.mean) / m.var;
}

/// Law(X_s | X_t, X_0) = N(mu X_t + nu X_0, sigma_sq I), shifted by x_bar for
/// MR-VP (see bridge_mean).
struct BridgeCoefficients {
  double mu;
  double nu;
  double sigma_sq;
};

/// Bridge coefficients for 0 <= s < t. Conditioning a Gaussian chain on both
/// endpoints gives mu = v_s a_ts / v_t, nu = v_ts a_s / v_t and
/// sigma_sq = v_s v_ts / v_t, where (a_s, v_s), (a_t, v_t) are the
/// 0 -> s, 0 -> t transitions and (a_ts, v_ts) the s -> t one.
inline BridgeCoefficients bridge(const ProcessSpec& proc, double s, double t) {
  detail::require_ordered(s, t);
  if (!(s < t)) throw DomainError("bridge requires s < t");
  detail::require_above_floor(t, "bridge");
  const auto from0_s = marginal_coefficients(proc, 0.0, s);
  const auto from0_t = marginal_coefficients(proc, 0.0, t);
  const auto s_to_t = marginal_coefficients(proc, s, t);
  return {from0_s.var * s_to_t.scale / from0_t.var,
          s_to_t.var * from0_s.scale / from0_t.var,
          from0_s.var * s_to_t.var / from0_t.var};
}

inline Vector bridge_mean(const ProcessSpec& proc, const BridgeCoefficients& b, const Vector& x_t,
                          const Vector& x_0) {
  const Vector& shift = proc.x_bar();
  return shift + b.mu * (x_t - shift) + b.nu * (x_0 - shift);
}

/// Realizations of X_t, one sample per row.
struct SampleBatch {
  Matrix points;
  double t = 0.0;
  std::vector<std::uint64_t> seed_lineage;

  int size() const { return static_cast<int>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

/// Draws X_t ~ Law(X_t | X_0 = row) for every row of x0. Row i uses the
/// stream (seed, i), so any row partitioning gives the same output.
inline SampleBatch sample_forward(const ProcessSpec& proc, const Matrix& x0, double t,
                                  std::uint64_t seed) {
  detail::require(x0.rows() >= 1, "sample_forward: empty batch");
  detail::require(x0.cols() == proc.dim(), "sample_forward: dimension mismatch");
  detail::require_unit_time(t, "t");
  detail::require(t > 0.0, "sample_forward requires t > 0");
  const auto c = marginal_coefficients(proc, 0.0, t);
  const double sd = std::sqrt(c.var);
  SampleBatch out{Matrix(x0.rows(), x0.cols()), t, {seed}};
  for (Eigen::Index i = 0; i < x0.rows(); ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    for (Eigen::Index j = 0; j < x0.cols(); ++j) {
      out.points(i, j) =
          c.scale * x0(i, j) + c.shift_weight * proc.x_bar()(j) + sd * standard_normal(rng);
    }
  }
  return out;
}

struct EulerOptions {
  /// false switches the diffusion term off (ODE limit).
  bool noise = true;
};

struct Trajectory {
  std::vector<double> times;
  Matrix states;  // one row per time
};

namespace detail {

/// Per-step coefficients of the forward Euler-Maruyama scheme on the uniform
/// grid t_k = k h: x <- decay_k x + (1 - decay_k) x_bar + noise_k xi.
struct EulerGrid {
  double h;
  std::vector<double> decay;
  std::vector<double> noise;
};

inline EulerGrid make_euler_grid(const ProcessSpec& proc, double h_fine, long n_steps,
                                 bool with_noise) {
  EulerGrid g{h_fine, std::vector<double>(n_steps), std::vector<double>(n_steps)};
  const auto& sched = proc.schedule();
  for (long k = 0; k < n_steps; ++k) {
    const double t = static_cast<double>(k) * h_fine;
    double drift_rate = 0.0;  // coefficient of -(x - x_bar) in the drift
    double diffusion_sq = 0.0;
    switch (proc.kind()) {
      case ProcessKind::kVp:
      case ProcessKind::kMrVp:
        drift_rate = 0.5 * beta_at(sched, t);
        diffusion_sq = beta_at(sched, t);
        break;
      case ProcessKind::kSubVp:
        drift_rate = 0.5 * beta_at(sched, t);
        diffusion_sq = beta_at(sched, t) * -std::expm1(-2.0 * beta_integral(sched, 0.0, t));
        break;
      case ProcessKind::kVe:
        diffusion_sq = sigma_sq_rate(sched, t);
        break;
    }
    g.decay[k] = 1.0 - drift_rate * h_fine;
    g.noise[k] = with_noise ? std::sqrt(diffusion_sq * h_fine) : 0.0;
  }
  return g;
}

inline long grid_index(double t, double h_fine) {
  const double k = std::round(t / h_fine);
  if (std::abs(k * h_fine - t) > 1e-9 * std::max(1.0, t)) {
    throw DomainError("time " + std::to_string(t) + " is not on the Euler grid of step " +
                      std::to_string(h_fine));
  }
  return static_cast<long>(k);
}

}  // namespace detail

/// Fine-step forward Euler-Maruyama path from x0 at t=0 to t_end. Test
/// oracle for the closed-form marginals; never used by production paths.
inline Trajectory euler_forward_oracle(const ProcessSpec& proc, const Vector& x0, double h_fine,
                                       std::uint64_t seed, double t_end = 1.0,
                                       EulerOptions opts = {}) {
  detail::require(h_fine > 0.0 && h_fine <= 1e-3, "euler_forward_oracle requires h_fine <= 1e-3");
  detail::require(x0.size() == proc.dim(), "euler_forward_oracle: dimension mismatch");
  detail::require_unit_time(t_end, "t_end");
  const long n_steps = detail::grid_index(t_end, h_fine);
  const auto grid = detail::make_euler_grid(proc, h_fine, n_steps, opts.noise);
  Trajectory traj{std::vector<double>(n_steps + 1), Matrix(n_steps + 1, proc.dim())};
  CounterRng rng(seed, 0);
  Vector x = x0;
  traj.times[0] = 0.0;
  traj.states.row(0) = x.transpose();
  for (long k = 0; k < n_steps; ++k) {
    for (int j = 0; j < proc.dim(); ++j) {
      const double xi = standard_normal(rng);
      x(j) = grid.decay[k] * x(j) + (1.0 - grid.decay[k]) * proc.x_bar()(j) + grid.noise[k] * xi;
    }
    traj.times[k + 1] = static_cast<double>(k + 1) * h_fine;
    traj.states.row(k + 1) = x.transpose();
  }
  return traj;
}

/// Many independent Euler paths from the same x0, recorded only at
/// record_times (which must lie on the grid). Path p uses stream (seed, p).
inline std::vector<Matrix> euler_forward_paths(const ProcessSpec& proc, const Vector& x0,
                                               double h_fine, std::uint64_t seed, int n_paths,
                                               std::span<const double> record_times,
                                               EulerOptions opts = {}) {
  detail::require(h_fine > 0.0 && h_fine <= 1e-3, "euler_forward_paths requires h_fine <= 1e-3");
  detail::require(n_paths >= 1, "euler_forward_paths: need at least one path");
  detail::require(x0.size() == proc.dim(), "euler_forward_paths: dimension mismatch");
  std::vector<long> record_index;
  long n_steps = 0;
  for (double t : record_times) {
    detail::require_unit_time(t, "record time");
    record_index.push_back(detail::grid_index(t, h_fine));
    n_steps = std::max(n_steps, record_index.back());
  }
  const auto grid = detail::make_euler_grid(proc, h_fine, n_steps, opts.noise);
  const int n = proc.dim();
  std::vector<Matrix> out(record_times.size(), Matrix(n_paths, n));
  Vector x(n);
  for (int p = 0; p < n_paths; ++p) {
    CounterRng rng(seed, static_cast<std::uint64_t>(p));
    x = x0;
    for (long k = 0; k <= n_steps; ++k) {
      for (std::size_t r = 0; r < record_index.size(); ++r) {
        if (record_index[r] == k) out[r].row(p) = x.transpose();
      }
      if (k == n_steps) break;
      const double decay = grid.decay[k];
      const double noise = grid.noise[k];
      for (int j = 0; j < n; ++j) {
        x(j) = decay * x(j) + (1.0 - decay) * proc.x_bar()(j) + noise * standard_normal(rng);
      }
    }
  }
  return out;
}

}  // namespace mlsde
