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

#include "mlsde/errors.hpp"
#include "mlsde/process.hpp"
#include "mlsde/types.hpp"

namespace mlsde {

struct MomentSummary {
  Vector mean;
  Eigen::MatrixXd cov;
  int m = 0;
};

/// Unbiased sample mean and covariance of the rows of x.
inline MomentSummary moments(const Matrix& x) {
  detail::require(x.rows() >= 2, "moments: need at least two samples");
  MomentSummary out;
  out.m = static_cast<int>(x.rows());
  out.mean = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - out.mean.transpose();
  out.cov = (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

inline MomentSummary moments(const SampleBatch& batch) { return moments(batch.points); }

namespace detail {

/// Mean pairwise Euclidean distance over all (i, j), including i == j.
inline double mean_pairwise_distance(const Matrix& a, const Matrix& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double row_acc = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) row_acc += (a.row(i) - b.row(j)).norm();
    acc += row_acc;
  }
  return acc / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace detail

/// Energy distance 2 E|A - B| - E|A - A'| - E|B - B'| as a V-statistic, so
/// identical batches give exactly zero.
inline double energy_distance(const Matrix& a, const Matrix& b) {
  detail::require(a.rows() >= 1 && b.rows() >= 1, "energy_distance: batches must be non-empty");
  detail::require(a.cols() == b.cols(), "energy_distance: dimension mismatch");
  return 2.0 * detail::mean_pairwise_distance(a, b) - detail::mean_pairwise_distance(a, a) -
         detail::mean_pairwise_distance(b, b);
}

/// KL(p || q) for isotropic Gaussians.
inline double gaussian_kl(const GaussianParams& p, const GaussianParams& q) {
  detail::require(p.var > 0.0 && q.var > 0.0, "gaussian_kl: variances must be positive");
  detail::require(p.mean.size() == q.mean.size(), "gaussian_kl: dimension mismatch");
  const auto n = static_cast<double>(p.mean.size());
  return 0.5 * (n * p.var / q.var + (q.mean - p.mean).squaredNorm() / q.var - n +
                n * std::log(q.var / p.var));
}

}  // namespace mlsde
