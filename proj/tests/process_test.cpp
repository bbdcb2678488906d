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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "hp_oracle.hpp"
#include "mlsde/process.hpp"

namespace mlsde {
namespace {

using testing::HP;
using testing::HpGeometric;
using testing::HpLinear;
using testing::to_d;

std::vector<ProcessSpec> all_processes(int n) {
  return {ProcessSpec::vp(n), ProcessSpec::sub_vp(n), ProcessSpec::ve(n),
          ProcessSpec::mr_vp(Vector::Constant(n, 3.0))};
}

TEST(ProcessSpec, ScheduleKindIsChecked) {
  EXPECT_THROW(ProcessSpec::ve(2, NoiseSchedule{}), DomainError);
  EXPECT_THROW(ProcessSpec::vp(2, NoiseSchedule::geometric(0.01, 50)), DomainError);
  EXPECT_THROW(ProcessSpec::vp(0), DomainError);
  EXPECT_THROW(ProcessSpec::mr_vp(Vector{{1.0, std::nan("")}}), DomainError);
}

TEST(ForwardMarginal, MatchesPerProcessFormulas) {
  const HpLinear L;
  const HpGeometric G;
  const Vector x{{0.7, -1.2}};
  const Vector xbar = Vector::Constant(2, 3.0);
  for (double s : {0.0, 0.2, 0.6}) {
    for (double t : {0.25, 0.7, 1.0}) {
      if (!(s < t)) continue;
      const double gst = to_d(L.gamma(s, t));

      const auto vp = forward_marginal(ProcessSpec::vp(2), x, s, t);
      EXPECT_NEAR((vp.mean - gst * x).norm(), 0.0, 1e-14);
      EXPECT_NEAR(vp.var, to_d(1 - pow(L.gamma(s, t), 2)), 1e-14);

      const auto mr = forward_marginal(ProcessSpec::mr_vp(xbar), x, s, t);
      EXPECT_NEAR((mr.mean - (gst * x + (1 - gst) * xbar)).norm(), 0.0, 1e-13);
      EXPECT_NEAR(mr.var, vp.var, 1e-15);

      const auto sub = forward_marginal(ProcessSpec::sub_vp(2), x, s, t);
      EXPECT_NEAR((sub.mean - gst * x).norm(), 0.0, 1e-14);
      EXPECT_NEAR(sub.var, to_d(testing::subvp_var(L, s, t)), 1e-14);

      const auto ve = forward_marginal(ProcessSpec::ve(2), x, s, t);
      EXPECT_EQ(ve.mean, x);
      EXPECT_NEAR(ve.var / to_d(G.var(t) - G.var(s)), 1.0, 1e-13);
    }
  }
}

TEST(ForwardMarginal, SubVpFromZeroSimplifies) {
  const auto proc = ProcessSpec::sub_vp(1);
  for (double t : {0.01, 0.1, 0.5, 1.0}) {
    const double omg = one_minus_gamma_sq(proc.schedule(), 0.0, t);
    EXPECT_NEAR(forward_marginal(proc, Vector{{2.0}}, 0.0, t).var, omg * omg, 1e-15);
  }
}

TEST(ForwardMarginal, TerminalLaw) {
  const Vector x0{{5.0, -2.0}};
  const auto vp = forward_marginal(ProcessSpec::vp(2), x0, 0.0, 1.0);
  EXPECT_LT(vp.mean.norm(), 0.04);
  EXPECT_NEAR(vp.var, 1.0, 1e-4);
  const Vector xbar{{3.0, 1.0}};
  const auto mr = forward_marginal(ProcessSpec::mr_vp(xbar), x0, 0.0, 1.0);
  EXPECT_LT((mr.mean - xbar).norm(), 7e-3 * (x0 - xbar).norm());
  EXPECT_NEAR(mr.var, 1.0, 1e-4);
}

TEST(ForwardMarginal, RejectsNonIncreasingTimes) {
  const auto proc = ProcessSpec::vp(1);
  EXPECT_THROW(forward_marginal(proc, Vector{{0.0}}, 0.5, 0.5), DomainError);
  EXPECT_THROW(forward_marginal(proc, Vector{{0.0}}, 0.6, 0.5), DomainError);
  EXPECT_THROW(forward_marginal(proc, Vector{{0.0, 1.0}}, 0.1, 0.5), DomainError);
}

TEST(ForwardMarginal, CompositionConsistency) {
  for (const auto& proc : all_processes(1)) {
    for (double s : {0.1, 0.35, 0.8}) {
      for (double t : {0.4, 0.9, 1.0}) {
        if (!(s < t)) continue;
        const auto a = marginal_coefficients(proc, 0.0, s);
        const auto b = marginal_coefficients(proc, s, t);
        const auto c = marginal_coefficients(proc, 0.0, t);
        EXPECT_NEAR(a.scale * b.scale, c.scale, 1e-10);
        EXPECT_NEAR(b.scale * a.shift_weight + b.shift_weight, c.shift_weight, 1e-10);
        EXPECT_NEAR(b.scale * b.scale * a.var + b.var, c.var, 1e-10 * std::max(1.0, c.var));
      }
    }
  }
}

TEST(ConditionalScore, ZeroAtMean) {
  const Vector x0{{0.4, -0.3}};
  for (const auto& proc : all_processes(2)) {
    const auto m = forward_marginal(proc, x0, 0.0, 0.6);
    EXPECT_EQ(conditional_score_target(proc, m.mean, x0, 0.6), Vector::Zero(2));
  }
  const Vector xbar{{3.0, -1.0}};
  EXPECT_EQ(conditional_score_target(ProcessSpec::mr_vp(xbar), xbar, xbar, 0.5), Vector::Zero(2));
}

TEST(ConditionalScore, MatchesFiniteDifferenceOfLogDensity) {
  const Vector x0{{0.0, 0.0}};
  const Vector xt{{1.0, 0.0}};
  const auto proc = ProcessSpec::vp(2);
  const Vector s = conditional_score_target(proc, xt, x0, 1.0);
  EXPECT_NEAR(s(0), -1.0, 1e-4);
  EXPECT_NEAR(s(1), 0.0, 1e-15);

  for (const auto& p : all_processes(2)) {
    const double t = 0.37;
    const auto m = forward_marginal(p, x0, 0.0, t);
    const Vector x{{m.mean(0) + 0.8 * std::sqrt(m.var), m.mean(1) - 0.3 * std::sqrt(m.var)}};
    auto logp = [&](const Vector& y) { return -0.5 * (y - m.mean).squaredNorm() / m.var; };
    const Vector g = conditional_score_target(p, x, x0, t);
    const double eps = 1e-5 * std::sqrt(m.var);
    for (int j = 0; j < 2; ++j) {
      Vector up = x, dn = x;
      up(j) += eps;
      dn(j) -= eps;
      const double fd = (logp(up) - logp(dn)) / (2 * eps);
      EXPECT_NEAR(g(j), fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(ConditionalScore, RejectsTimeZero) {
  EXPECT_THROW(conditional_score_target(ProcessSpec::vp(1), Vector{{0.0}}, Vector{{0.0}}, 0.0),
               DomainError);
}

TEST(Bridge, MatchesPerProcessFormulas) {
  const HpLinear L;
  const HpGeometric G;
  for (double s : {0.0, 0.05, 0.4, 0.7}) {
    for (double t : {0.1, 0.5, 0.75, 1.0}) {
      if (!(s < t)) continue;
      const auto vp = bridge(ProcessSpec::vp(1), s, t);
      const auto rvp = testing::vp_bridge(L, s, t);
      EXPECT_NEAR(vp.mu, to_d(rvp.mu), 1e-12);
      EXPECT_NEAR(vp.nu, to_d(rvp.nu), 1e-12);
      EXPECT_NEAR(vp.sigma_sq, to_d(rvp.sigma_sq), 1e-12);

      const auto mr = bridge(ProcessSpec::mr_vp(Vector{{2.0}}), s, t);
      EXPECT_NEAR(mr.mu, vp.mu, 1e-13);
      EXPECT_NEAR(mr.nu, vp.nu, 1e-13);
      EXPECT_NEAR(mr.sigma_sq, vp.sigma_sq, 1e-13);

      const auto sub = bridge(ProcessSpec::sub_vp(1), s, t);
      const auto rsub = testing::subvp_bridge(L, s, t);
      EXPECT_NEAR(sub.mu, to_d(rsub.mu), 1e-12);
      EXPECT_NEAR(sub.nu, to_d(rsub.nu), 1e-12);
      EXPECT_NEAR(sub.sigma_sq, to_d(rsub.sigma_sq), 1e-12);

      const auto ve = bridge(ProcessSpec::ve(1), s, t);
      const auto rve = testing::ve_bridge(G, s, t);
      EXPECT_NEAR(ve.mu, to_d(rve.mu), 1e-12);
      EXPECT_NEAR(ve.nu, to_d(rve.nu), 1e-12);
      const double ref_sq = to_d(rve.sigma_sq);
      EXPECT_NEAR(ve.sigma_sq, ref_sq, 1e-12 * std::max(1.0, ref_sq));
    }
  }
}

TEST(Bridge, Degenerate) {
  const auto proc = ProcessSpec::vp(1);
  const auto b0 = bridge(proc, 0.0, 0.5);
  EXPECT_EQ(b0.mu, 0.0);
  EXPECT_DOUBLE_EQ(b0.nu, 1.0);
  EXPECT_EQ(b0.sigma_sq, 0.0);
  const auto bt = bridge(proc, 0.5 - 1e-9, 0.5);
  EXPECT_NEAR(bt.mu, 1.0, 1e-7);
  EXPECT_NEAR(bt.nu, 0.0, 1e-7);
  EXPECT_NEAR(bt.sigma_sq, 0.0, 1e-7);
  for (const auto& p : all_processes(1)) {
    EXPECT_LT(bridge(p, 1e-9, 0.5).sigma_sq, 1e-6);
    EXPECT_LT(bridge(p, 0.5 - 1e-9, 0.5).sigma_sq, 1e-6);
  }
  EXPECT_THROW(bridge(proc, 0.5, 0.5), DomainError);
  EXPECT_THROW(bridge(proc, 0.6, 0.5), DomainError);
}

TEST(Bridge, VpConsistencyIdentitiesOnGrid) {
  const auto proc = ProcessSpec::vp(1);
  const auto& sched = proc.schedule();
  for (int i = 0; i < 100; ++i) {
    for (int j = 0; j < 100; ++j) {
      const double s = i / 100.0;
      const double t = (j + 1) / 100.0;
      if (!(s < t)) continue;
      const auto b = bridge(proc, s, t);
      EXPECT_NEAR(b.mu * gamma(sched, 0.0, t) + b.nu, gamma(sched, 0.0, s), 1e-10);
      EXPECT_NEAR(b.mu * b.mu * one_minus_gamma_sq(sched, 0.0, t) + b.sigma_sq,
                  one_minus_gamma_sq(sched, 0.0, s), 1e-10);
    }
  }
}

TEST(Bridge, MrVpMeanIsShifted) {
  const Vector xbar{{2.0, -1.0}};
  const auto proc = ProcessSpec::mr_vp(xbar);
  const auto b = bridge(proc, 0.3, 0.6);
  const Vector xt{{0.5, 0.5}}, x0{{1.0, 4.0}};
  const Vector ref = xbar + b.mu * (xt - xbar) + b.nu * (x0 - xbar);
  EXPECT_NEAR((bridge_mean(proc, b, xt, x0) - ref).norm(), 0.0, 1e-15);
}

// X_0 ~ N(0,1), X_s from the closed-form marginal, then fine Euler from s to t;
// regress X_s on (X_t, X_0).
TEST(Bridge, MonteCarloRegression) {
  const auto proc = ProcessSpec::vp(1);
  const double s = 0.4, t = 0.5, h = 1e-4;
  const long k0 = 4000, k1 = 5000;
  const auto grid = detail::make_euler_grid(proc, h, k1, true);
  const auto c0s = marginal_coefficients(proc, 0.0, s);
  const int m = 1000000;
  Eigen::Matrix2d xtx = Eigen::Matrix2d::Zero();
  Eigen::Vector2d xty = Eigen::Vector2d::Zero();
  std::vector<double> xs(m), xt(m), x0(m);
  for (int i = 0; i < m; ++i) {
    CounterRng rng(77, static_cast<std::uint64_t>(i));
    x0[i] = standard_normal(rng);
    double x = c0s.scale * x0[i] + std::sqrt(c0s.var) * standard_normal(rng);
    xs[i] = x;
    for (long k = k0; k < k1; ++k) x = grid.decay[k] * x + grid.noise[k] * standard_normal(rng);
    xt[i] = x;
    const Eigen::Vector2d z{xt[i], x0[i]};
    xtx += z * z.transpose();
    xty += z * xs[i];
  }
  const Eigen::Vector2d coef = xtx.ldlt().solve(xty);
  double rss = 0.0;
  for (int i = 0; i < m; ++i) {
    const double r = xs[i] - coef(0) * xt[i] - coef(1) * x0[i];
    rss += r * r;
  }
  const double resid_var = rss / (m - 2);
  const Eigen::Matrix2d cov = resid_var * xtx.inverse();
  const auto b = bridge(proc, s, t);
  EXPECT_LT(std::abs(coef(0) - b.mu), 3.0 * std::sqrt(cov(0, 0))) << coef(0) << " vs " << b.mu;
  EXPECT_LT(std::abs(coef(1) - b.nu), 3.0 * std::sqrt(cov(1, 1))) << coef(1) << " vs " << b.nu;
  EXPECT_LT(std::abs(resid_var - b.sigma_sq), 3.0 * b.sigma_sq * std::sqrt(2.0 / m))
      << resid_var << " vs " << b.sigma_sq;
}

TEST(SampleForward, SmallTimeReturnsInput) {
  Matrix x0(3, 2);
  x0 << 1, 2, -3, 4, 0.5, -0.5;
  for (const auto& proc : all_processes(2)) {
    if (proc.kind() == ProcessKind::kVe) continue;
    const auto out = sample_forward(proc, x0, 1e-9, 3);
    EXPECT_LT((out.points - x0).cwiseAbs().maxCoeff(), 1e-3);
  }
  const auto ve = sample_forward(ProcessSpec::ve(2), x0, 1e-9, 3);
  EXPECT_LT((ve.points - x0).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(SampleForward, VpTerminalMoments) {
  const int m = 100000;
  const Matrix x0 = Matrix::Constant(m, 2, 2.0);
  const auto out = sample_forward(ProcessSpec::vp(2), x0, 1.0, 11);
  const Eigen::RowVectorXd mean = out.points.colwise().mean();
  const Matrix centered = out.points.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / (m - 1.0);
  const double g = gamma(NoiseSchedule{}, 0.0, 1.0);
  for (int j = 0; j < 2; ++j) {
    EXPECT_LT(std::abs(mean(j) - 2.0 * g), 3.0 / std::sqrt(m));
    EXPECT_LT(std::abs(cov(j, j) - 1.0), 3.0 * std::sqrt(2.0 / m));
  }
  EXPECT_LT(std::abs(cov(0, 1)), 3.0 / std::sqrt(m));
  EXPECT_LT(std::abs(mean(0)), 0.02);
}

TEST(SampleForward, DeterministicAndPartitionFree) {
  Matrix x0 = Matrix::Random(50, 2);
  const auto proc = ProcessSpec::sub_vp(2);
  const auto a = sample_forward(proc, x0, 0.3, 9);
  const auto b = sample_forward(proc, x0, 0.3, 9);
  EXPECT_EQ(a.points, b.points);
  const auto head = sample_forward(proc, x0.topRows(10), 0.3, 9);
  EXPECT_EQ(Matrix(a.points.topRows(10)), head.points);
  const auto other = sample_forward(proc, x0, 0.3, 10);
  EXPECT_NE(a.points, other.points);
  EXPECT_THROW(sample_forward(proc, x0, 0.0, 9), DomainError);
}

// Empirical mean and variance of X_t at two sample sizes, 16x apart.
TEST(EulerOracle, VpConvergesToMarginal) {
  const auto proc = ProcessSpec::vp(1);
  const Vector x0{{1.5}};
  const double t = 0.5;
  const std::vector<double> times{t};
  const auto ref = forward_marginal(proc, x0, 0.0, t);
  for (int m : {6250, 100000}) {
    const auto paths = euler_forward_paths(proc, x0, 1e-4, 21, m, times);
    const Matrix& x = paths[0];
    const double mean = x.col(0).mean();
    const double var = (x.col(0).array() - mean).square().sum() / (m - 1);
    const double se_mean = std::sqrt(ref.var / m);
    const double se_var = ref.var * std::sqrt(2.0 / m);
    const double bias = 1e-3;
    EXPECT_LT(std::abs(mean - ref.mean(0)), 3 * se_mean + bias * std::abs(ref.mean(0))) << m;
    EXPECT_LT(std::abs(var - ref.var), 3 * se_var + bias * ref.var) << m;
    if (m == 100000) {
      EXPECT_LT(std::abs(mean / ref.mean(0) - 1.0), 0.01);
      EXPECT_LT(std::abs(var / ref.var - 1.0), 0.01);
    }
  }
}

TEST(EulerOracle, ZeroNoiseMrVpDecaysToShift) {
  const Vector xbar{{3.0, -2.0}};
  const Vector x0{{-1.0, 4.0}};
  const auto proc = ProcessSpec::mr_vp(xbar);
  const auto traj = euler_forward_oracle(proc, x0, 1e-4, 1, 1.0, EulerOptions{false});
  double prev = (x0 - xbar).norm();
  for (Eigen::Index k = 1000; k < traj.states.rows(); k += 1000) {
    const Vector x = traj.states.row(k).transpose();
    const double tk = traj.times[k];
    const double g = gamma(proc.schedule(), 0.0, tk);
    EXPECT_LT((x - (xbar + g * (x0 - xbar))).norm(), 2e-3 * (x0 - xbar).norm()) << tk;
    EXPECT_LT((x - xbar).norm(), prev);
    prev = (x - xbar).norm();
  }
  const auto again = euler_forward_oracle(proc, x0, 1e-4, 2, 1.0, EulerOptions{false});
  EXPECT_EQ(traj.states, again.states);
}

TEST(EulerOracle, VeTerminalVariance) {
  const auto proc = ProcessSpec::ve(1);
  const std::vector<double> times{1.0};
  const int m = 100000;
  const auto x = euler_forward_paths(proc, Vector{{0.0}}, 5e-4, 4, m, times)[0];
  const double var = x.col(0).squaredNorm() / m;
  EXPECT_NEAR(var / (50.0 * 50.0 - 0.01 * 0.01), 1.0, 0.02);
}

TEST(EulerOracle, RejectsCoarseStep) {
  EXPECT_THROW(euler_forward_oracle(ProcessSpec::vp(1), Vector{{0.0}}, 1e-2, 1), DomainError);
}

}  // namespace
}  // namespace mlsde
