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
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "hp_oracle.hpp"
#include "mlsde/analytic_scores.hpp"
#include "mlsde/solver.hpp"

namespace mlsde {
namespace {

using testing::HP;
using testing::HpGeometric;
using testing::HpLinear;
using testing::to_d;

double tol(double ref, double rel) { return rel * std::max(1.0, std::abs(ref)); }

TEST(MlCoefficients, MatchHighPrecisionOracle) {
  const HpLinear L;
  const HpGeometric G;
  for (double t : {0.1, 0.37, 0.5, 1.0}) {
    for (double h : {0.1, 0.01, 0.001}) {
      if (h > t) continue;
      for (double v : {0.0, 0.7}) {
        const HP th(t), hh(h), vh(v);
        const auto vp = ml_coefficients(ProcessSpec::vp(2), t, h, v);
        const auto rvp = testing::vp_ml(L, th, hh, vh, 2);
        EXPECT_NEAR(vp.kappa, to_d(rvp.kappa), tol(to_d(rvp.kappa), 1e-9)) << t << " " << h;
        EXPECT_NEAR(vp.omega, to_d(rvp.omega), tol(to_d(rvp.omega), 1e-9)) << t << " " << h;
        EXPECT_NEAR(vp.sigma, to_d(rvp.sigma), 1e-12 * to_d(rvp.sigma) + 1e-300);

        const auto mr = ml_coefficients(ProcessSpec::mr_vp(Vector{{1.0, 2.0}}), t, h, v);
        EXPECT_NEAR(mr.kappa, vp.kappa, 1e-12);
        EXPECT_NEAR(mr.omega, vp.omega, 1e-12);
        EXPECT_NEAR(mr.sigma, vp.sigma, 1e-15);

        const auto sub = ml_coefficients(ProcessSpec::sub_vp(2), t, h, v);
        const auto rsub = testing::subvp_ml(L, th, hh, vh, 2);
        EXPECT_NEAR(sub.kappa, to_d(rsub.kappa), tol(to_d(rsub.kappa), 1e-9)) << t << " " << h;
        EXPECT_NEAR(sub.omega, to_d(rsub.omega), tol(to_d(rsub.omega), 1e-9)) << t << " " << h;
        EXPECT_NEAR(sub.sigma, to_d(rsub.sigma), 1e-12 * to_d(rsub.sigma));

        const auto ve = ml_coefficients(ProcessSpec::ve(2), t, h, v);
        const auto rve = testing::ve_ml(G, th, hh, vh, 2);
        EXPECT_EQ(ve.kappa, 0.0);
        EXPECT_EQ(ve.omega, 0.0);
        EXPECT_NEAR(ve.sigma, to_d(rve.sigma), 1e-12 * to_d(rve.sigma));
      }
    }
  }
}

TEST(MlCoefficients, FinalStepIsDeterministic) {
  for (double h : {0.1, 0.01}) {
    const auto proc = ProcessSpec::vp(1);
    const auto p = ml_coefficients(proc, h, h, 0.0);
    EXPECT_EQ(p.sigma, 0.0);
    const auto b = bridge(proc, 0.0, h);
    EXPECT_DOUBLE_EQ(b.nu, 1.0);
    EXPECT_EQ(b.mu, 0.0);
  }
}

TEST(MlCoefficients, ConstantPriorSigmaIsBridgeSigma) {
  const HpLinear L;
  for (double t : {0.2, 0.6, 1.0}) {
    const double h = 0.1;
    const double ref = to_d(sqrt(testing::vp_bridge(L, HP(t) - HP(h), HP(t)).sigma_sq));
    EXPECT_NEAR(ml_coefficients(ProcessSpec::vp(3), t, h, 0.0).sigma, ref, 1e-13);
  }
}

TEST(MlCoefficients, SmallStepAsymptotics) {
  const auto proc = ProcessSpec::vp(1);
  const auto p = ml_coefficients(proc, 0.5, 0.01, 0.0);
  const double bh = beta_at(proc.schedule(), 0.5) * 0.01;
  EXPECT_LT(std::abs(p.kappa), 0.05);
  EXPECT_LT(std::abs(p.omega), 0.05);
  EXPECT_NEAR(p.sigma / std::sqrt(bh), 1.0, 0.05);

  for (double t : {0.2, 0.5, 0.9}) {
    const double beta = beta_at(proc.schedule(), t);
    std::vector<SolverStepParams> ps;
    for (double h : {1e-2, 1e-3, 1e-4}) ps.push_back(ml_coefficients(proc, t, h, 0.0));
    for (int k = 0; k + 1 < 3; ++k) {
      const double rk = std::abs(ps[k + 1].kappa) / std::abs(ps[k].kappa);
      const double ro = std::abs(ps[k + 1].omega) / std::abs(ps[k].omega);
      EXPECT_GE(rk, 0.05) << t;
      EXPECT_LE(rk, 0.2) << t;
      EXPECT_GE(ro, 0.05) << t;
      EXPECT_LE(ro, 0.2) << t;
    }
    EXPECT_NEAR(ps[2].sigma / std::sqrt(beta * 1e-4), 1.0, 1e-2) << t;
  }
}

TEST(MlCoefficients, Errors) {
  const auto proc = ProcessSpec::vp(1);
  EXPECT_THROW(ml_coefficients(proc, 0.05, 0.1, 0.0), DomainError);
  EXPECT_THROW(ml_coefficients(proc, 0.5, 0.1, -1.0), DomainError);
  EXPECT_THROW(ml_coefficients(proc, 0.5, 0.0, 0.0), DomainError);
}

TEST(Preset, Values) {
  const auto proc = ProcessSpec::vp(2);
  const auto em = preset(Scheme::kEm, proc, 1.0, 0.1);
  EXPECT_EQ(em.kappa, 0.0);
  EXPECT_EQ(em.omega, 0.0);
  EXPECT_NEAR(em.sigma, std::sqrt(2.0), 1e-15);
  for (double t : {0.1, 0.45, 0.8}) {
    const auto pf = preset(Scheme::kPf, proc, t, 0.05);
    EXPECT_EQ(pf.kappa, -0.5);
    EXPECT_EQ(pf.omega, 0.0);
    EXPECT_EQ(pf.sigma, 0.0);
    const auto e = preset(Scheme::kEm, proc, t, 0.05);
    EXPECT_DOUBLE_EQ(e.sigma, std::sqrt(beta_at(proc.schedule(), t) * 0.05));
  }
  const auto ve = preset(Scheme::kEm, ProcessSpec::ve(1), 0.5, 0.1);
  const double s1 = sigma_ve(ProcessSpec::ve(1).schedule(), 0.5);
  const double s0 = sigma_ve(ProcessSpec::ve(1).schedule(), 0.4);
  EXPECT_NEAR(ve.sigma, std::sqrt(s1 * s1 - s0 * s0), 1e-13);
  const auto sub = preset(Scheme::kEm, ProcessSpec::sub_vp(1), 0.5, 0.1);
  const auto& sched = proc.schedule();
  EXPECT_NEAR(sub.sigma,
              std::sqrt(beta_at(sched, 0.5) * (1 - std::exp(-2 * beta_integral(sched, 0, 0.5))) * 0.1),
              1e-14);
  EXPECT_THROW(preset(Scheme::kMl, proc, 0.5, 0.1), DomainError);
}

ScoreFn zero_score() {
  return [](const Matrix& x, double) { return Matrix(Matrix::Zero(x.rows(), x.cols())); };
}

TEST(Step, ProbabilityFlowWithZeroScore) {
  const auto proc = ProcessSpec::vp(2);
  const Vector x{{1.5, -0.5}};
  CounterRng rng(1);
  const auto pf = preset(Scheme::kPf, proc, 0.6, 0.1);
  const Vector out = step(proc, zero_score(), x, 0.6, 0.1, pf, rng);
  const double bh = beta_at(proc.schedule(), 0.6) * 0.1;
  EXPECT_NEAR((out - x * (1 + 0.5 * bh)).norm(), 0.0, 1e-15);
}

TEST(Step, NoiselessIsDeterministicButConsumesNoise) {
  const auto proc = ProcessSpec::vp(2);
  const auto model = analytic_score_model(toy_mixture_2d(), proc);
  const Vector x{{0.3, 0.1}};
  const SolverStepParams p{0.1, -0.2, 0.0};
  CounterRng a(3), b(99);
  const Vector ya = step(proc, model, x, 0.4, 0.1, p, a);
  const Vector yb = step(proc, model, x, 0.4, 0.1, p, b);
  EXPECT_EQ(ya, yb);
  EXPECT_GT(a.counter(), 0u);
}

TEST(Step, NonFiniteScoreReportsStep) {
  const auto proc = ProcessSpec::vp(1);
  ScoreFn bad = [](const Matrix& x, double) {
    return Matrix(Matrix::Constant(x.rows(), x.cols(), std::numeric_limits<double>::quiet_NaN()));
  };
  CounterRng rng(1);
  EXPECT_THROW(step(proc, bad, Vector{{0.0}}, 0.5, 0.1, {}, rng), NumericalError);
  SolverConfig cfg;
  try {
    solve_reverse(proc, bad, cfg, 4);
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
  const SolverStepParams nan_params{std::nan(""), 0.0, 0.1};
  EXPECT_THROW(step(proc, zero_score(), Vector{{0.0}}, 0.5, 0.1, nan_params, rng), DomainError);
}

// Exact Law(X_{t-h} | X_t) for Gaussian data.
struct TransitionLaw {
  double mean_mu_bar;
  double mean_x;
  double var;
};

TransitionLaw true_transition(const NoiseSchedule& sched, double t, double h, double d2) {
  const double g0s = gamma(sched, 0.0, t - h), gst = gamma(sched, t - h, t), g0t = gamma(sched, 0.0, t);
  const double den = 1 - g0t * g0t + d2 * g0t * g0t;
  return {g0s * (1 - gst * gst) / den, gst * (1 - g0s * g0s + d2 * g0s * g0s) / den,
          (1 - gst * gst) * (1 - g0s * g0s + d2 * g0s * g0s) / den};
}

TEST(Step, MlTransitionLawMatchesGaussianPosterior) {
  const Vector mu{{0.8, -1.2}};
  const double d2 = 0.3;
  const auto proc = ProcessSpec::vp(2);
  const auto model = analytic_score_model(GaussianPrior(mu, d2), proc);
  const Matrix zero = Matrix::Zero(1, 2);
  for (double h : {0.5, 0.1, 0.01}) {
    for (int k = 1; k * h <= 1.0 + 1e-12; k += std::max(1, static_cast<int>(0.1 / h))) {
      const double t = k * h;
      const double v = variance_term_gaussian(mu, d2, proc, t);
      const auto p = ml_coefficients(proc, t, h, v);
      const auto law = true_transition(proc.schedule(), t, h, d2);
      for (const Vector& x : {Vector{{0.0, 0.0}}, Vector{{1.3, -0.4}}}) {
        const Matrix xm = x.transpose();
        const Matrix mean = detail::apply_step(proc, xm, model(xm, t), t, h, p, zero);
        const Vector ref = law.mean_mu_bar * mu + law.mean_x * x;
        EXPECT_NEAR((mean.row(0).transpose() - ref).norm(), 0.0, 1e-10) << t << " " << h;
      }
      EXPECT_NEAR(p.sigma * p.sigma, law.var, 1e-10) << t << " " << h;
    }
  }
}

TEST(Step, MlStepMeanMonteCarlo) {
  const Vector mu{{0.8, -1.2}};
  const double d2 = 0.3;
  const auto proc = ProcessSpec::vp(2);
  const auto model = analytic_score_model(GaussianPrior(mu, d2), proc);
  const double t = 0.4, h = 0.1;
  const auto p = ml_coefficients(proc, t, h, variance_term_gaussian(mu, d2, proc, t));
  const Vector x{{0.5, 0.2}};
  const int m = 100000;
  Vector acc = Vector::Zero(2);
  for (int i = 0; i < m; ++i) {
    CounterRng rng(2024, static_cast<std::uint64_t>(i));
    acc += step(proc, model, x, t, h, p, rng);
  }
  const Vector mean = acc / m;
  const auto law = true_transition(proc.schedule(), t, h, d2);
  const Vector ref = law.mean_mu_bar * mu + law.mean_x * x;
  for (int j = 0; j < 2; ++j) EXPECT_LT(std::abs(mean(j) - ref(j)), 3 * p.sigma / std::sqrt(m));
}

TEST(SolveReverse, ConstantPriorIsExact) {
  const Vector c{{1.25, -0.75}};
  for (const auto& proc : {ProcessSpec::vp(2), ProcessSpec::sub_vp(2), ProcessSpec::ve(2),
                           ProcessSpec::mr_vp(Vector{{2.0, 2.0}})}) {
    SolverConfig cfg;
    cfg.n_steps = 10;
    cfg.seed = 5;
    const auto out = solve_reverse(proc, analytic_score_model(ConstantPrior(c), proc), cfg, 200);
    EXPECT_LT((out.points.rowwise() - c.transpose()).cwiseAbs().maxCoeff(), 1e-6)
        << to_string(proc.kind());
  }
}

TEST(SolveReverse, GaussianPriorIsExact) {
  const Vector mu{{0.5, -1.0}};
  const double d2 = 0.25;
  const auto proc = ProcessSpec::vp(2);
  SolverConfig cfg;
  cfg.n_steps = 10;
  cfg.seed = 17;
  cfg.variance_term = GaussianVarianceTerm{mu, d2};
  const int m = 100000;
  const auto out = solve_reverse(proc, analytic_score_model(GaussianPrior(mu, d2), proc), cfg, m);
  const Eigen::RowVectorXd mean = out.points.colwise().mean();
  const Matrix centered = out.points.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / (m - 1.0);
  for (int j = 0; j < 2; ++j) {
    EXPECT_LT(std::abs(mean(j) - mu(j)), 3 * std::sqrt(d2 / m));
    EXPECT_LT(std::abs(cov(j, j) - d2), 3 * d2 * std::sqrt(2.0 / m));
  }
  EXPECT_LT(std::abs(cov(0, 1)), 3 * d2 / std::sqrt(m));
}

TEST(SolveReverse, TauZeroEqualsEm) {
  const auto proc = ProcessSpec::vp(2);
  const auto model = analytic_score_model(toy_mixture_2d(), proc);
  SolverConfig ml;
  ml.scheme = Scheme::kMl;
  ml.tau = 0.0;
  ml.seed = 8;
  SolverConfig em = ml;
  em.scheme = Scheme::kEm;
  EXPECT_EQ(solve_reverse(proc, model, ml, 64).points, solve_reverse(proc, model, em, 64).points);
}

TEST(SolveReverse, TauThresholdIsInclusive) {
  const auto proc = ProcessSpec::vp(1);
  const auto model = zero_score();
  SolverConfig cfg;
  cfg.tau = 0.5;
  const auto rule = make_step_rule(proc, model, cfg);
  const auto at = rule(0.5, 0.1);
  const auto ml = ml_coefficients(proc, 0.5, 0.1, 0.0);
  EXPECT_EQ(at.kappa, ml.kappa);
  EXPECT_EQ(at.sigma, ml.sigma);
  const auto above = rule(0.6, 0.1);
  EXPECT_EQ(above.sigma, preset(Scheme::kEm, proc, 0.6, 0.1).sigma);
  EXPECT_EQ(above.kappa, 0.0);
}

TEST(SolveReverse, PresetEquivalence) {
  const auto proc = ProcessSpec::vp(2);
  const auto model = analytic_score_model(toy_mixture_2d(), proc);
  const StepRule forced = [&](double t, double h) {
    return SolverStepParams{0.0, 0.0, std::sqrt(beta_at(proc.schedule(), t) * h)};
  };
  SolverConfig em;
  em.scheme = Scheme::kEm;
  em.seed = 31;
  const auto a = solve_reverse(proc, model, em, 100);
  const auto b = solve_reverse_with(proc, model, forced, em.n_steps, 100, em.seed);
  EXPECT_EQ(a.points, b.points);
}

TEST(SolveReverse, MrVpIsShiftedVp) {
  const Vector xbar{{2.0, -3.0}};
  const Vector mu{{0.5, 0.25}};
  const auto vp = ProcessSpec::vp(2);
  const auto mr = ProcessSpec::mr_vp(xbar);
  const auto vp_model = analytic_score_model(GaussianPrior(mu, 0.2), vp);
  const auto mr_model = analytic_score_model(GaussianPrior(mu + xbar, 0.2), mr);
  SolverConfig cfg;
  cfg.seed = 4;
  std::vector<Matrix> vp_states, mr_states;
  solve_reverse(vp, vp_model, cfg, 50, [&](double, const Matrix& x) { vp_states.push_back(x); });
  solve_reverse(mr, mr_model, cfg, 50, [&](double, const Matrix& x) { mr_states.push_back(x); });
  ASSERT_EQ(vp_states.size(), 11u);
  ASSERT_EQ(mr_states.size(), 11u);
  for (std::size_t k = 0; k < vp_states.size(); ++k) {
    const Matrix diff = mr_states[k].rowwise() - xbar.transpose();
    EXPECT_LT((diff - vp_states[k]).cwiseAbs().maxCoeff(), 1e-12) << k;
  }
}

TEST(SolveReverse, ChainsIndependentOfBatchSize) {
  const auto proc = ProcessSpec::sub_vp(2);
  const auto model = analytic_score_model(toy_mixture_2d(), proc);
  SolverConfig cfg;
  cfg.seed = 12;
  cfg.tau = 0.5;
  const auto big = solve_reverse(proc, model, cfg, 40);
  const auto small = solve_reverse(proc, model, cfg, 7);
  EXPECT_EQ(Matrix(big.points.topRows(7)), small.points);
}

TEST(SolveReverse, ConfigErrors) {
  const auto proc = ProcessSpec::vp(1);
  SolverConfig cfg;
  cfg.tau = 1.5;
  EXPECT_THROW(solve_reverse(proc, zero_score(), cfg, 4), DomainError);
  cfg.tau = 1.0;
  cfg.n_steps = 0;
  EXPECT_THROW(solve_reverse(proc, zero_score(), cfg, 4), DomainError);
  cfg.n_steps = 10;
  EXPECT_THROW(solve_reverse(proc, zero_score(), cfg, 0), DomainError);
}

TEST(VarianceTerm, GaussianClosedForm) {
  const auto proc = ProcessSpec::vp(3);
  const Vector mu = Vector::Zero(3);
  EXPECT_EQ(variance_term_gaussian(mu, 0.0, proc, 0.5), 0.0);
  EXPECT_NEAR(variance_term_gaussian(mu, 0.4, proc, 1.0), 3 * 0.4, 1e-3);
  for (double t : {0.05, 0.5, 0.9}) {
    EXPECT_NEAR(variance_term_gaussian(mu, 1.0, proc, t), 3 * one_minus_gamma_sq(proc.schedule(), 0, t),
                1e-14);
  }
  EXPECT_THROW(variance_term_gaussian(mu, -1.0, proc, 0.5), DomainError);
}

TEST(VarianceTerm, MonteCarloConstantPriorIsNearZero) {
  const Vector c{{1.0, 2.0}};
  const auto proc = ProcessSpec::vp(2);
  MonteCarloVarianceTerm cfg;
  cfg.data = c.transpose();
  cfg.n_points = 4;
  const double v = variance_term_monte_carlo(proc, analytic_score_model(ConstantPrior(c), proc), 0.5,
                                             cfg, 3);
  EXPECT_GE(v, 0.0);
  EXPECT_LT(v, 1e-3);
}

TEST(VarianceTerm, MonteCarloAgreesWithGaussian) {
  const Vector mu{{0.5, -0.5}};
  const double d2 = 0.3;
  const auto proc = ProcessSpec::vp(2);
  const GaussianPrior prior(mu, d2);
  MonteCarloVarianceTerm cfg;
  cfg.n_chains = 64;
  cfg.h_fine = 1e-3;
  cfg.n_points = 32;
  cfg.data = sample_prior(prior, 2048, 1);
  for (double t : {0.3, 0.7}) {
    const double mc = variance_term_monte_carlo(proc, analytic_score_model(prior, proc), t, cfg, 10);
    const double ref = variance_term_gaussian(mu, d2, proc, t);
    EXPECT_NEAR(mc / ref, 1.0, 0.1) << t;
  }
}

TEST(VarianceTerm, MonteCarloReproducible) {
  const auto proc = ProcessSpec::vp(2);
  const auto model = analytic_score_model(toy_mixture_2d(), proc);
  MonteCarloVarianceTerm cfg;
  cfg.n_chains = 2;
  cfg.n_points = 3;
  cfg.data = sample_prior(toy_mixture_2d(), 100, 2);
  const double a = variance_term_monte_carlo(proc, model, 0.4, cfg, 77);
  const double b = variance_term_monte_carlo(proc, model, 0.4, cfg, 77);
  EXPECT_EQ(a, b);
  cfg.n_chains = 1;
  EXPECT_THROW(variance_term_monte_carlo(proc, model, 0.4, cfg, 77), DomainError);
}

}  // namespace
}  // namespace mlsde
