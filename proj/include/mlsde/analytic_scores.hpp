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

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <variant>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "mlsde/errors.hpp"
#include "mlsde/prior.hpp"
#include "mlsde/process.hpp"
#include "mlsde/score_model.hpp"

namespace mlsde {

/// E[X_0 | X_t = x] and Tr(Var(X_0 | X_t = x)).
struct PosteriorStats {
  Vector mean;
  double trace_var;
};

namespace detail {

/// Work in y = x - shift_weight * x_bar, where X_t = scale X_0 + sqrt(var) xi.
inline Vector unshift(const ProcessSpec& proc, const MarginalCoefficients& c, const Vector& x) {
  return x - c.shift_weight * proc.x_bar();
}

/// Posterior of one isotropic Gaussian component:
/// mean (b^2 mu + d^2 a y) / (b^2 + d^2 a^2), variance d^2 b^2 / (b^2 + d^2 a^2).
struct ComponentPosterior {
  Vector mean;
  double var;
};

inline ComponentPosterior gaussian_posterior(const MarginalCoefficients& c, const Vector& prior_mean,
                                             double prior_var, const Vector& y) {
  const double denom = c.var + prior_var * c.scale * c.scale;
  return {(c.var * prior_mean + prior_var * c.scale * y) / denom, prior_var * c.var / denom};
}

inline void check_posterior_args(const ProcessSpec& proc, const DataPrior& prior,
                                 const Vector& x_t, double t, const char* op) {
  require_above_floor(t, op);
  require(prior_dim(prior) == proc.dim() && x_t.size() == proc.dim(),
          std::string(op) + ": dimension mismatch");
}

}  // namespace detail

inline PosteriorStats posterior_stats(const DataPrior& prior, const ProcessSpec& proc,
                                      const Vector& x_t, double t) {
  detail::check_posterior_args(proc, prior, x_t, t, "posterior_stats");
  const auto c = marginal_coefficients(proc, 0.0, t);
  const Vector y = detail::unshift(proc, c, x_t);
  const auto n = static_cast<double>(proc.dim());

  if (const auto* k = std::get_if<ConstantPrior>(&prior)) {
    return {k->c, 0.0};
  }
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    const auto post = detail::gaussian_posterior(c, g->mean, g->var, y);
    return {post.mean, n * post.var};
  }
  if (const auto* mix = std::get_if<MixturePrior>(&prior)) {
    const int K = mix->components();
    std::vector<detail::ComponentPosterior> comps;
    std::vector<double> log_resp(K);
    comps.reserve(K);
    for (int k = 0; k < K; ++k) {
      comps.push_back(detail::gaussian_posterior(c, mix->means[k], mix->vars[k], y));
      log_resp[k] = std::log(mix->weights[k]) +
                    detail::log_isotropic_normal(y, c.scale * mix->means[k],
                                                 c.var + c.scale * c.scale * mix->vars[k]);
    }
    const double log_norm = detail::log_sum_exp(log_resp);
    std::vector<double> resp(K);
    Vector mean = Vector::Zero(proc.dim());
    for (int k = 0; k < K; ++k) {
      resp[k] = std::exp(log_resp[k] - log_norm);
      mean += resp[k] * comps[k].mean;
    }
    double trace = 0.0;
    for (int k = 0; k < K; ++k) {
      trace += resp[k] * (n * comps[k].var + (comps[k].mean - mean).squaredNorm());
    }
    return {mean, trace};
  }
  throw UnsupportedPrior(
      "posterior_stats: empirical priors have no closed form; use the Monte-Carlo "
      "variance estimator instead");
}

/// Optimal score via the posterior mean: -(y - a E[X_0 | x]) / b^2 where
/// X_t = a X_0 + shift + b xi.
inline Vector optimal_score(const DataPrior& prior, const ProcessSpec& proc, const Vector& x_t,
                            double t) {
  const auto post = posterior_stats(prior, proc, x_t, t);
  const auto c = marginal_coefficients(proc, 0.0, t);
  return -(detail::unshift(proc, c, x_t) - c.scale * post.mean) / c.var;
}

/// Log density of the noisy marginal Law(X_t), by Gaussian convolution.
inline double log_marginal_density(const DataPrior& prior, const ProcessSpec& proc,
                                   const Vector& x_t, double t) {
  detail::check_posterior_args(proc, prior, x_t, t, "log_marginal_density");
  const auto c = marginal_coefficients(proc, 0.0, t);
  const Vector y = detail::unshift(proc, c, x_t);
  if (const auto* k = std::get_if<ConstantPrior>(&prior)) {
    return detail::log_isotropic_normal(y, c.scale * k->c, c.var);
  }
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    return detail::log_isotropic_normal(y, c.scale * g->mean, c.var + c.scale * c.scale * g->var);
  }
  if (const auto* mix = std::get_if<MixturePrior>(&prior)) {
    std::vector<double> terms;
    for (int k = 0; k < mix->components(); ++k) {
      terms.push_back(std::log(mix->weights[k]) +
                      detail::log_isotropic_normal(y, c.scale * mix->means[k],
                                                   c.var + c.scale * c.scale * mix->vars[k]));
    }
    return detail::log_sum_exp(terms);
  }
  throw UnsupportedPrior("log_marginal_density: empirical prior has no closed form");
}

/// Score model backed by optimal_score for a tractable prior.
inline ScoreFn analytic_score_model(DataPrior prior, ProcessSpec proc) {
  return [prior = std::move(prior), proc = std::move(proc)](const Matrix& x, double t) {
    Matrix out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      out.row(i) = optimal_score(prior, proc, x.row(i).transpose(), t).transpose();
    }
    return out;
  };
}

/// Closed interval used as an integration range.
struct Interval {
  double lo;
  double hi;
};

struct QuadratureOptions {
  double tolerance = 1e-10;           // absolute, on each normalized integral
  double relative_tolerance = 1e-12;  // per Gauss-Kronrod panel
  unsigned max_depth = 15;
};

/// Brute-force Bayes posterior by adaptive Gauss-Kronrod quadrature over X_0,
/// for 1D and 2D priors. The likelihood is normalized as a density in x_0 so
/// the integrals stay O(1) even when it is sharply peaked.
inline PosteriorStats quadrature_posterior_oracle(
    const std::function<double(const Vector&)>& prior_density, const ProcessSpec& proc,
    const Vector& x_t, double t, std::span<const Interval> bounds,
    std::span<const double> breakpoints = {}, QuadratureOptions opts = {}) {
  using boost::math::quadrature::gauss_kronrod;
  const int n = proc.dim();
  detail::require(n == 1 || n == 2, "quadrature oracle supports 1D and 2D priors only");
  detail::require(static_cast<int>(bounds.size()) == n, "quadrature oracle: one interval per dim");
  detail::require(x_t.size() == n, "quadrature oracle: dimension mismatch");
  detail::require_above_floor(t, "quadrature_posterior_oracle");

  const auto c = marginal_coefficients(proc, 0.0, t);
  const Vector y = detail::unshift(proc, c, x_t);
  // Likelihood of x_0 given y, as a density in x_0: N(x_0; y / a, b^2 / a^2).
  const Vector center = y / c.scale;
  const double lik_var = c.var / (c.scale * c.scale);
  const double lik_norm = std::pow(2.0 * std::numbers::pi * lik_var, -0.5 * n);

  auto weight = [&](const Vector& x0) {
    return lik_norm * std::exp(-0.5 * (x0 - center).squaredNorm() / lik_var) * prior_density(x0);
  };

  auto split_points = [&](int dim) {
    std::vector<double> pts{bounds[dim].lo, bounds[dim].hi};
    auto add = [&](double p) {
      if (p > bounds[dim].lo && p < bounds[dim].hi) pts.push_back(p);
    };
    add(center(dim));
    for (double b : breakpoints) add(b);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    return pts;
  };

  double worst_error = 0.0;
  auto integrate_1d = [&](const std::function<double(double)>& f, int dim) {
    const auto pts = split_points(dim);
    double total = 0.0;
    double err_total = 0.0;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      double err = 0.0;
      total += gauss_kronrod<double, 61>::integrate(f, pts[i], pts[i + 1], opts.max_depth,
                                                   opts.relative_tolerance, &err);
      err_total += err;
    }
    worst_error = std::max(worst_error, err_total);
    return total;
  };

  // Integral of g(x0) * weight(x0) over the box.
  auto integrate = [&](const std::function<double(const Vector&)>& g) {
    if (n == 1) {
      return integrate_1d(
          [&](double u) {
            const Vector x0{{u}};
            return g(x0) * weight(x0);
          },
          0);
    }
    return integrate_1d(
        [&](double u) {
          return integrate_1d(
              [&](double v) {
                const Vector x0{{u, v}};
                return g(x0) * weight(x0);
              },
              1);
        },
        0);
  };

  const double z = integrate([](const Vector&) { return 1.0; });
  if (!(z > 0.0) || !std::isfinite(z)) {
    throw QuadratureError("quadrature oracle: posterior normalizer is not positive", worst_error);
  }
  Vector mean(n);
  for (int j = 0; j < n; ++j) {
    mean(j) = integrate([j](const Vector& x0) { return x0(j); }) / z;
  }
  const double trace = integrate([&](const Vector& x0) { return (x0 - mean).squaredNorm(); }) / z;
  // Error estimates refer to unnormalized integrals; scale to the posterior.
  if (worst_error / z > opts.tolerance) {
    throw QuadratureError("quadrature oracle did not reach the requested tolerance",
                          worst_error / z);
  }
  return {mean, trace};
}

/// Integration box [mean +- 12 sd] (union over mixture components) and
/// component means as breakpoints, for Gaussian and mixture priors.
struct QuadratureDomain {
  std::vector<Interval> bounds;
  std::vector<double> breakpoints;
};

inline QuadratureDomain quadrature_domain(const DataPrior& prior) {
  std::vector<Vector> means;
  std::vector<double> sds;
  if (const auto* g = std::get_if<GaussianPrior>(&prior)) {
    means.push_back(g->mean);
    sds.push_back(std::sqrt(g->var));
  } else if (const auto* mix = std::get_if<MixturePrior>(&prior)) {
    for (int k = 0; k < mix->components(); ++k) {
      means.push_back(mix->means[k]);
      sds.push_back(std::sqrt(mix->vars[k]));
    }
  } else {
    throw UnsupportedPrior("quadrature_domain: needs a Gaussian or mixture prior");
  }
  const int n = static_cast<int>(means[0].size());
  QuadratureDomain dom;
  for (int j = 0; j < n; ++j) {
    Interval iv{means[0](j) - 12.0 * sds[0], means[0](j) + 12.0 * sds[0]};
    for (std::size_t k = 1; k < means.size(); ++k) {
      iv.lo = std::min(iv.lo, means[k](j) - 12.0 * sds[k]);
      iv.hi = std::max(iv.hi, means[k](j) + 12.0 * sds[k]);
    }
    dom.bounds.push_back(iv);
  }
  for (const auto& m : means) {
    for (int j = 0; j < n; ++j) dom.breakpoints.push_back(m(j));
  }
  return dom;
}

/// Convenience overload integrating a Gaussian or mixture prior's own density.
inline PosteriorStats quadrature_posterior_oracle(const DataPrior& prior, const ProcessSpec& proc,
                                                  const Vector& x_t, double t,
                                                  QuadratureOptions opts = {}) {
  const auto dom = quadrature_domain(prior);
  return quadrature_posterior_oracle(
      [&prior](const Vector& x0) { return std::exp(log_prior_density(prior, x0)); }, proc, x_t, t,
      dom.bounds, dom.breakpoints, opts);
}

}  // namespace mlsde
