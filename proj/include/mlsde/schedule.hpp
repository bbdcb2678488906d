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
#include <string>
#include <variant>

#include "mlsde/errors.hpp"

namespace mlsde {

/// beta_t = beta0 + t (beta1 - beta0), used by VP, sub-VP and MR-VP.
struct LinearSchedule {
  double beta0 = 0.05;
  double beta1 = 20.0;
};

/// sigma_t = sigma_min (sigma_max / sigma_min)^t, used by VE.
struct GeometricSchedule {
  double sigma_min = 0.01;
  double sigma_max = 50.0;
};

class NoiseSchedule {
 public:
  using Kind = std::variant<LinearSchedule, GeometricSchedule>;

  NoiseSchedule() : NoiseSchedule(LinearSchedule{}) {}

  NoiseSchedule(LinearSchedule s) : kind_(s) {  // NOLINT(google-explicit-constructor)
    detail::require(std::isfinite(s.beta0) && std::isfinite(s.beta1) &&
                        s.beta0 >= 0.0 && s.beta1 >= s.beta0,
                    "linear schedule needs 0 <= beta0 <= beta1");
  }

  NoiseSchedule(GeometricSchedule s) : kind_(s) {  // NOLINT(google-explicit-constructor)
    detail::require(std::isfinite(s.sigma_min) && std::isfinite(s.sigma_max) &&
                        s.sigma_min > 0.0 && s.sigma_max > s.sigma_min,
                    "geometric schedule needs 0 < sigma_min < sigma_max");
  }

  static NoiseSchedule linear(double beta0, double beta1) {
    return NoiseSchedule(LinearSchedule{beta0, beta1});
  }
  static NoiseSchedule geometric(double sigma_min, double sigma_max) {
    return NoiseSchedule(GeometricSchedule{sigma_min, sigma_max});
  }

  bool is_linear() const { return std::holds_alternative<LinearSchedule>(kind_); }
  bool is_geometric() const { return std::holds_alternative<GeometricSchedule>(kind_); }

  const LinearSchedule& as_linear() const {
    if (!is_linear()) throw DomainError("schedule is not linear (beta) schedule");
    return std::get<LinearSchedule>(kind_);
  }
  const GeometricSchedule& as_geometric() const {
    if (!is_geometric()) throw DomainError("schedule is not geometric (sigma) schedule");
    return std::get<GeometricSchedule>(kind_);
  }

  const Kind& kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

inline void require_unit_time(double t, const char* name) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError(std::string("time ") + name + "=" + std::to_string(t) +
                      " outside [0, 1]");
  }
}

inline void require_ordered(double s, double t) {
  require_unit_time(s, "s");
  require_unit_time(t, "t");
  if (s > t) {
    throw DomainError("expected s <= t, got s=" + std::to_string(s) +
                      " t=" + std::to_string(t));
  }
}

}  // namespace detail

inline double beta_at(const NoiseSchedule& schedule, double t) {
  detail::require_unit_time(t, "t");
  const auto& lin = schedule.as_linear();
  return lin.beta0 + t * (lin.beta1 - lin.beta0);
}

/// Closed form of the integral of beta_u over [s, t].
inline double beta_integral(const NoiseSchedule& schedule, double s, double t) {
  detail::require_ordered(s, t);
  const auto& lin = schedule.as_linear();
  // (t^2 - s^2)/2 written as (t - s)(t + s)/2 keeps short intervals accurate.
  const double dt = t - s;
  return lin.beta0 * dt + (lin.beta1 - lin.beta0) * dt * (t + s) * 0.5;
}

/// Signal retention factor exp(-1/2 * integral of beta over [s, t]).
inline double gamma(const NoiseSchedule& schedule, double s, double t) {
  return std::exp(-0.5 * beta_integral(schedule, s, t));
}

/// 1 - gamma(s, t)^2, computed without cancellation for short intervals.
inline double one_minus_gamma_sq(const NoiseSchedule& schedule, double s, double t) {
  return -std::expm1(-beta_integral(schedule, s, t));
}

inline double sigma_ve(const NoiseSchedule& schedule, double t) {
  detail::require_unit_time(t, "t");
  const auto& geo = schedule.as_geometric();
  return geo.sigma_min * std::pow(geo.sigma_max / geo.sigma_min, t);
}

/// sigma_t^2 - sigma_s^2 for the geometric schedule.
inline double sigma_sq_increment(const NoiseSchedule& schedule, double s, double t) {
  detail::require_ordered(s, t);
  const auto& geo = schedule.as_geometric();
  const double log_ratio = std::log(geo.sigma_max / geo.sigma_min);
  const double sigma_s = sigma_ve(schedule, s);
  return sigma_s * sigma_s * std::expm1(2.0 * (t - s) * log_ratio);
}

/// Time derivative of sigma_t^2 (the squared VE diffusion coefficient).
inline double sigma_sq_rate(const NoiseSchedule& schedule, double t) {
  const auto& geo = schedule.as_geometric();
  const double sigma = sigma_ve(schedule, t);
  return 2.0 * std::log(geo.sigma_max / geo.sigma_min) * sigma * sigma;
}

}  // namespace mlsde
