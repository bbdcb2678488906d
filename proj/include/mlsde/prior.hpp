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
#include <numbers>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "mlsde/errors.hpp"
#include "mlsde/rng.hpp"
#include "mlsde/types.hpp"

namespace mlsde {

/// Point mass at c.
struct ConstantPrior {
  Vector c;

  explicit ConstantPrior(Vector c_) : c(std::move(c_)) {
    detail::require(c.size() >= 1 && c.allFinite(), "constant prior needs a finite vector");
  }
};

/// N(mean, var * I).
struct GaussianPrior {
  Vector mean;
  double var;

  GaussianPrior(Vector mean_, double var_) : mean(std::move(mean_)), var(var_) {
    detail::require(mean.size() >= 1 && mean.allFinite(), "gaussian prior needs a finite mean");
    detail::require(std::isfinite(var) && var > 0.0, "gaussian prior needs var > 0");
  }
};

/// Mixture of isotropic Gaussians sum_k w_k N(means[k], vars[k] * I).
struct MixturePrior {
  std::vector<double> weights;
  std::vector<Vector> means;
  std::vector<double> vars;

  MixturePrior(std::vector<double> w, std::vector<Vector> m, std::vector<double> v)
      : weights(std::move(w)), means(std::move(m)), vars(std::move(v)) {
    detail::require(!weights.empty(), "mixture needs at least one component");
    detail::require(weights.size() == means.size() && weights.size() == vars.size(),
                    "mixture weights, means and vars must have equal length");
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    detail::require(std::abs(total - 1.0) <= 1e-12, "mixture weights must sum to 1");
    for (std::size_t k = 0; k < weights.size(); ++k) {
      detail::require(weights[k] >= 0.0, "mixture weights must be non-negative");
      detail::require(means[k].size() == means[0].size() && means[k].allFinite(),
                      "mixture means must be finite and share one dimension");
      detail::require(std::isfinite(vars[k]) && vars[k] > 0.0, "mixture vars must be > 0");
    }
  }

  int components() const { return static_cast<int>(weights.size()); }
};

/// Finite sample set, one point per row. Has no closed-form posterior.
struct EmpiricalPrior {
  Matrix points;

  explicit EmpiricalPrior(Matrix p) : points(std::move(p)) {
    detail::require(points.rows() >= 1 && points.cols() >= 1 && points.allFinite(),
                    "empirical prior needs a non-empty finite sample set");
  }
};

using DataPrior = std::variant<ConstantPrior, GaussianPrior, MixturePrior, EmpiricalPrior>;

inline int prior_dim(const DataPrior& prior) {
  return std::visit(
      [](const auto& p) -> int {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ConstantPrior>) return static_cast<int>(p.c.size());
        else if constexpr (std::is_same_v<P, GaussianPrior>) return static_cast<int>(p.mean.size());
        else if constexpr (std::is_same_v<P, MixturePrior>) return static_cast<int>(p.means[0].size());
        else return static_cast<int>(p.points.cols());
      },
      prior);
}

/// Mean and isotropic variance (trace of the covariance divided by n).
struct PriorMoments {
  Vector mean;
  double var;
};

inline PriorMoments prior_moments(const DataPrior& prior) {
  return std::visit(
      [](const auto& p) -> PriorMoments {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, ConstantPrior>) {
          return {p.c, 0.0};
        } else if constexpr (std::is_same_v<P, GaussianPrior>) {
          return {p.mean, p.var};
        } else if constexpr (std::is_same_v<P, MixturePrior>) {
          const auto n = static_cast<double>(p.means[0].size());
          Vector mean = Vector::Zero(p.means[0].size());
          for (int k = 0; k < p.components(); ++k) mean += p.weights[k] * p.means[k];
          double trace = 0.0;
          for (int k = 0; k < p.components(); ++k) {
            trace += p.weights[k] * (n * p.vars[k] + (p.means[k] - mean).squaredNorm());
          }
          return {mean, trace / n};
        } else {
          const Vector mean = p.points.colwise().mean().transpose();
          if (p.points.rows() < 2) return {mean, 0.0};
          const double ss = (p.points.rowwise() - mean.transpose()).squaredNorm();
          return {mean, ss / static_cast<double>((p.points.rows() - 1) * p.points.cols())};
        }
      },
      prior);
}

/// m i.i.d. draws; draw i uses stream (seed, i).
inline Matrix sample_prior(const DataPrior& prior, int m, std::uint64_t seed) {
  detail::require(m >= 1, "sample_prior: m must be positive");
  const int n = prior_dim(prior);
  Matrix out(m, n);
  for (int i = 0; i < m; ++i) {
    CounterRng rng(seed, static_cast<std::uint64_t>(i));
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, ConstantPrior>) {
            out.row(i) = p.c.transpose();
          } else if constexpr (std::is_same_v<P, GaussianPrior>) {
            const double sd = std::sqrt(p.var);
            for (int j = 0; j < n; ++j) out(i, j) = p.mean(j) + sd * standard_normal(rng);
          } else if constexpr (std::is_same_v<P, MixturePrior>) {
            const double u = uniform01(rng);
            int k = 0;
            double acc = p.weights[0];
            while (u >= acc && k + 1 < p.components()) acc += p.weights[++k];
            const double sd = std::sqrt(p.vars[k]);
            for (int j = 0; j < n; ++j) out(i, j) = p.means[k](j) + sd * standard_normal(rng);
          } else {
            const auto idx = static_cast<Eigen::Index>(uniform01(rng) *
                                                       static_cast<double>(p.points.rows()));
            out.row(i) = p.points.row(std::min<Eigen::Index>(idx, p.points.rows() - 1));
          }
        },
        prior);
  }
  return out;
}

namespace detail {

inline double log_isotropic_normal(const Vector& x, const Vector& mean, double var) {
  const auto n = static_cast<double>(x.size());
  return -0.5 * (x - mean).squaredNorm() / var -
         0.5 * n * std::log(2.0 * std::numbers::pi * var);
}

inline double log_sum_exp(const std::vector<double>& v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

}  // namespace detail

/// Log density of the data prior; defined for Gaussian and mixture priors.
inline double log_prior_density(const DataPrior& prior, const Vector& x0) {
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    return detail::log_isotropic_normal(x0, g->mean, g->var);
  }
  if (const auto* mix = std::get_if<MixturePrior>(&prior)) {
    std::vector<double> terms;
    for (int k = 0; k < mix->components(); ++k) {
      terms.push_back(std::log(mix->weights[k]) +
                      detail::log_isotropic_normal(x0, mix->means[k], mix->vars[k]));
    }
    return detail::log_sum_exp(terms);
  }
  throw UnsupportedPrior("log_prior_density: prior has no Lebesgue density");
}

/// Built-in 2D three-component mixture used by the CLI and the desk-scale
/// solver comparison.
inline MixturePrior toy_mixture_2d() {
  return MixturePrior({0.3, 0.3, 0.4},
                      {Vector{{-1.5, -0.8}}, Vector{{1.5, -0.8}}, Vector{{0.0, 1.2}}},
                      {0.05, 0.05, 0.05});
}

/// Built-in 1D two-component mixture.
inline MixturePrior toy_mixture_1d() {
  return MixturePrior({0.4, 0.6}, {Vector{{-1.5}}, Vector{{1.0}}}, {0.2, 0.1});
}

}  // namespace mlsde
