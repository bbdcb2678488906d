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
#include <string>
#include <vector>

#include <json.hpp>

#include "mlsde/analytic_scores.hpp"
#include "mlsde/errors.hpp"
#include "mlsde/prior.hpp"
#include "mlsde/process.hpp"
#include "mlsde/rng.hpp"
#include "mlsde/score_model.hpp"

namespace mlsde {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Vector bias;
};

struct ToyNetConfig {
  int dim = 2;
  int time_features = 16;
  double max_frequency = 30.0;
  std::vector<int> hidden{128, 128};
};

namespace detail {

// tanh(softplus(x)) = e (e + 2) / (e (e + 2) + 2) with e = exp(x).
inline double tanh_softplus(double x) {
  if (x > 20.0) return 1.0;
  const double e = std::exp(x);
  const double q = e * (e + 2.0);
  return q / (q + 2.0);
}

inline double mish(double x) { return x * tanh_softplus(x); }

inline double mish_grad(double x) {
  if (x > 20.0) return 1.0;
  const double e = std::exp(x);
  const double q = e * (e + 2.0);
  const double th = q / (q + 2.0);
  const double sig = e / (1.0 + e);
  return th + x * (1.0 - th * th) * sig;
}

}  // namespace detail

/// Fully-connected score network on [x, sinusoidal(t)] with x tanh(softplus(x))
/// activations. The raw output is divided by the marginal standard deviation
/// of X_t, so s(x, t) = raw(x, t) / sqrt(Var(X_t | X_0)).
class ToyScoreNet {
 public:
  ToyScoreNet() = default;

  ToyScoreNet(const ToyNetConfig& cfg, std::uint64_t seed)
      : dim_(cfg.dim), time_features_(cfg.time_features), max_frequency_(cfg.max_frequency) {
    detail::require(cfg.dim >= 1, "ToyScoreNet: dim must be positive");
    detail::require(cfg.time_features >= 2 && cfg.time_features % 2 == 0,
                    "ToyScoreNet: time_features must be a positive even number");
    detail::require(cfg.max_frequency >= 1.0, "ToyScoreNet: max_frequency must be >= 1");
    std::vector<int> widths{cfg.dim + cfg.time_features};
    widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
    widths.push_back(cfg.dim);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int in = widths[l];
      const int out = widths[l + 1];
      detail::require(in >= 1 && out >= 1, "ToyScoreNet: layer widths must be positive");
      // Glorot-uniform weights, zero biases.
      const double limit = std::sqrt(6.0 / (in + out));
      CounterRng rng(seed, l);
      DenseLayer layer{Eigen::MatrixXd(out, in), Vector::Zero(out)};
      for (int r = 0; r < out; ++r) {
        for (int c = 0; c < in; ++c) layer.weight(r, c) = limit * (2.0 * uniform01(rng) - 1.0);
      }
      layers_.push_back(std::move(layer));
    }
  }

  ToyScoreNet(int dim, int time_features, double max_frequency, std::vector<DenseLayer> layers)
      : dim_(dim), time_features_(time_features), max_frequency_(max_frequency),
        layers_(std::move(layers)) {
    detail::require(time_features_ >= 2 && time_features_ % 2 == 0 && max_frequency_ >= 1.0,
                    "ToyScoreNet: invalid time embedding");
    detail::require(!layers_.empty(), "ToyScoreNet: no layers");
    detail::require(layers_.front().weight.cols() == dim_ + time_features_,
                    "ToyScoreNet: first layer input width mismatch");
    detail::require(layers_.back().weight.rows() == dim_, "ToyScoreNet: output width mismatch");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      detail::require(layers_[l].bias.size() == layers_[l].weight.rows(),
                      "ToyScoreNet: bias size mismatch");
      if (l > 0) {
        detail::require(layers_[l].weight.cols() == layers_[l - 1].weight.rows(),
                        "ToyScoreNet: layer chaining mismatch");
      }
    }
  }

  int dim() const { return dim_; }
  int time_features() const { return time_features_; }
  double max_frequency() const { return max_frequency_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::size_t num_parameters() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += l.weight.size() + l.bias.size();
    return total;
  }

  /// Flat parameter access: each layer's weights (row-major) then its bias.
  double& parameter(std::size_t index) { return locate(layers_, index); }

  /// sin(w_i t), cos(w_i t) with w_i spaced geometrically over [1, max_frequency].
  Eigen::MatrixXd time_embedding(const Vector& t) const {
    const int half = time_features_ / 2;
    Eigen::MatrixXd emb(t.size(), time_features_);
    for (int i = 0; i < half; ++i) {
      const double w = half > 1 ? std::pow(max_frequency_, static_cast<double>(i) / (half - 1)) : 1.0;
      for (Eigen::Index r = 0; r < t.size(); ++r) {
        emb(r, i) = std::sin(w * t(r));
        emb(r, half + i) = std::cos(w * t(r));
      }
    }
    return emb;
  }

  struct Activations {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> slope;   // activation derivative at each hidden layer
    Eigen::MatrixXd output;
  };

  Activations forward(const Matrix& x, const Vector& t, bool keep_slopes = true) const {
    detail::require(x.cols() == dim_ && x.rows() == t.size(), "ToyScoreNet: input shape mismatch");
    Activations act;
    Eigen::MatrixXd h(x.rows(), dim_ + time_features_);
    h.leftCols(dim_) = x;
    h.rightCols(time_features_) = time_embedding(t);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd z = h * layers_[l].weight.transpose();
      z.rowwise() += layers_[l].bias.transpose();
      if (keep_slopes) act.inputs.push_back(std::move(h));
      if (l + 1 == layers_.size()) {
        act.output = std::move(z);
        break;
      }
      h = z.unaryExpr([](double v) { return detail::mish(v); });
      if (keep_slopes) act.slope.push_back(z.unaryExpr([](double v) { return detail::mish_grad(v); }));
    }
    return act;
  }

  /// Unscaled network output, one row per input row.
  Matrix raw(const Matrix& x, const Vector& t) const { return forward(x, t, false).output; }

  static double& locate(std::vector<DenseLayer>& layers, std::size_t index) {
    for (auto& l : layers) {
      const auto nw = static_cast<std::size_t>(l.weight.size());
      if (index < nw) {
        const auto cols = static_cast<std::size_t>(l.weight.cols());
        return l.weight(static_cast<Eigen::Index>(index / cols),
                        static_cast<Eigen::Index>(index % cols));
      }
      index -= nw;
      const auto nb = static_cast<std::size_t>(l.bias.size());
      if (index < nb) return l.bias(static_cast<Eigen::Index>(index));
      index -= nb;
    }
    throw DomainError("ToyScoreNet: parameter index out of range");
  }

 private:
  int dim_ = 0;
  int time_features_ = 0;
  double max_frequency_ = 1.0;
  std::vector<DenseLayer> layers_;
};

/// Same layout as ToyScoreNet::layers().
using Gradients = std::vector<DenseLayer>;

/// Standard deviation of Law(X_t | X_0), used to scale the raw output.
inline double marginal_std(const ProcessSpec& proc, double t) {
  return std::sqrt(marginal_coefficients(proc, 0.0, t).var);
}

/// DSM weighting: 1 - exp(-int_0^t beta) for VP-type processes, the
/// marginal variance for VE.
inline double dsm_weight(const ProcessSpec& proc, double t) {
  if (proc.kind() == ProcessKind::kVe) return marginal_coefficients(proc, 0.0, t).var;
  return one_minus_gamma_sq(proc.schedule(), 0.0, t);
}

/// Net scores for a batch whose rows may carry different times.
inline Matrix net_scores(const ToyScoreNet& net, const ProcessSpec& proc, const Matrix& x,
                         const Vector& t) {
  Matrix out = net.raw(x, t);
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) /= marginal_std(proc, t(i));
  return out;
}

inline ScoreFn net_score_model(ToyScoreNet net, ProcessSpec proc) {
  return [net = std::move(net), proc = std::move(proc)](const Matrix& x, double t) {
    return net_scores(net, proc, x, Vector::Constant(x.rows(), t));
  };
}

/// One frozen draw of (t, X_t, regression target, weight) per data row.
struct DsmBatch {
  Vector t;
  Matrix x_t;
  Matrix target;
  Vector lambda;
};

inline DsmBatch draw_dsm_batch(const ProcessSpec& proc, const Matrix& x0, CounterRng& rng,
                               double t_min = 1e-4) {
  detail::require(x0.rows() >= 1, "draw_dsm_batch: batch must be non-empty");
  detail::require(x0.cols() == proc.dim(), "draw_dsm_batch: dimension mismatch");
  detail::require(t_min > kTimeFloor && t_min < 1.0, "draw_dsm_batch: t_min must lie in (1e-5, 1)");
  const auto m = x0.rows();
  DsmBatch b{Vector(m), Matrix(m, x0.cols()), Matrix(m, x0.cols()), Vector(m)};
  for (Eigen::Index i = 0; i < m; ++i) {
    const double t = t_min + (1.0 - t_min) * uniform01(rng);
    const auto c = marginal_coefficients(proc, 0.0, t);
    const double sd = std::sqrt(c.var);
    b.t(i) = t;
    b.lambda(i) = dsm_weight(proc, t);
    for (Eigen::Index j = 0; j < x0.cols(); ++j) {
      const double xi = standard_normal(rng);
      b.x_t(i, j) = c.scale * x0(i, j) + c.shift_weight * proc.x_bar()(j) + sd * xi;
      b.target(i, j) = -xi / sd;
    }
  }
  return b;
}

struct LossAndGrads {
  double loss;
  Gradients grads;
};

/// Weighted DSM loss mean_i lambda_i |s(x_i, t_i) - target_i|^2 and its
/// gradient by reverse-mode differentiation.
inline LossAndGrads dsm_loss_and_grads(const ToyScoreNet& net, const ProcessSpec& proc,
                                       const DsmBatch& batch) {
  const auto m = batch.x_t.rows();
  detail::require(m >= 1, "dsm_loss_and_grads: empty batch");
  const auto act = net.forward(batch.x_t, batch.t);
  Vector sd(m);
  for (Eigen::Index i = 0; i < m; ++i) sd(i) = marginal_std(proc, batch.t(i));

  const Eigen::MatrixXd score = act.output.array().colwise() / sd.array();
  const Eigen::MatrixXd resid = score - Eigen::MatrixXd(batch.target);
  const double loss = (resid.rowwise().squaredNorm().array() * batch.lambda.array()).sum() / m;
  if (!std::isfinite(loss)) {
    Eigen::Index worst = 0;
    resid.rowwise().squaredNorm().maxCoeff(&worst);
    throw NumericalError("non-finite DSM loss (t=" + std::to_string(batch.t(worst)) +
                         ", lambda=" + std::to_string(batch.lambda(worst)) +
                         ", |target|=" + std::to_string(batch.target.row(worst).norm()) + ")");
  }

  // d loss / d output
  Eigen::MatrixXd delta =
      resid.array().colwise() * (2.0 / m * batch.lambda.array() / sd.array());
  const auto& layers = net.layers();
  Gradients grads(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    grads[l].weight = delta.transpose() * act.inputs[l];
    grads[l].bias = delta.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd back = delta * layers[l].weight;
    delta = back.array() * act.slope[l - 1].array();
  }
  return {loss, std::move(grads)};
}

/// Draws a fresh DSM batch from rng and evaluates the loss on it.
inline LossAndGrads dsm_loss_and_grads(const ToyScoreNet& net, const ProcessSpec& proc,
                                       const Matrix& x0, CounterRng& rng, double t_min = 1e-4) {
  return dsm_loss_and_grads(net, proc, draw_dsm_batch(proc, x0, rng, t_min));
}

enum class TrainTarget {
  kDenoising,  // conditional score of X_t given X_0
  kTeacher,    // analytic optimal score of the prior (sanity baseline)
};

struct TrainConfig {
  int batch_size = 128;
  int iterations = 5000;
  double learning_rate = 1e-3;
  double t_min = 1e-4;
  std::uint64_t seed = 0;
  TrainTarget target = TrainTarget::kDenoising;
  double divergence_threshold = 1e6;
};

struct TrainResult {
  ToyScoreNet net;
  std::vector<double> loss_curve;
};

/// Plain SGD on the DSM objective. Iteration i draws data from stream
/// (seed, 2i) and the time/noise batch from (seed, 2i + 1).
inline TrainResult train(ToyScoreNet net, const DataPrior& prior, const ProcessSpec& proc,
                         const TrainConfig& cfg) {
  detail::require(cfg.batch_size >= 1 && cfg.iterations >= 0, "train: invalid batch/iterations");
  detail::require(cfg.learning_rate > 0.0, "train: learning rate must be positive");
  detail::require(prior_dim(prior) == net.dim() && net.dim() == proc.dim(),
                  "train: prior, net and process dimensions differ");
  TrainResult result{std::move(net), {}};
  result.loss_curve.reserve(cfg.iterations);
  for (int it = 0; it < cfg.iterations; ++it) {
    const auto iter = static_cast<std::uint64_t>(it);
    const Matrix x0 = sample_prior(prior, cfg.batch_size, derive_seed(cfg.seed, 2 * iter));
    CounterRng rng(cfg.seed, 2 * iter + 1);
    DsmBatch batch = draw_dsm_batch(proc, x0, rng, cfg.t_min);
    if (cfg.target == TrainTarget::kTeacher) {
      for (Eigen::Index i = 0; i < batch.x_t.rows(); ++i) {
        batch.target.row(i) =
            optimal_score(prior, proc, batch.x_t.row(i).transpose(), batch.t(i)).transpose();
      }
    }
    auto [loss, grads] = dsm_loss_and_grads(result.net, proc, batch);
    if (loss > cfg.divergence_threshold) {
      throw NumericalError("training diverged at iteration " + std::to_string(it) +
                           " (loss " + std::to_string(loss) + ")");
    }
    result.loss_curve.push_back(loss);
    auto& layers = result.net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].weight -= cfg.learning_rate * grads[l].weight;
      layers[l].bias -= cfg.learning_rate * grads[l].bias;
    }
  }
  return result;
}

/// Regular evaluation grid: points_per_dim^n points spanning [lo, hi] per
/// coordinate, repeated at every time in `times`. With marginal_units the
/// box is read in standard deviations of the noisy data marginal at each
/// time, x = E[X_t] + sd(X_t) u, so it follows the mass of p_t.
struct FieldGrid {
  Vector lo;
  Vector hi;
  int points_per_dim = 20;
  std::vector<double> times;
  bool marginal_units = false;
};

struct FieldErrorPoint {
  Vector x;
  double t;
  Vector score;
  Vector reference;
  double error;  // Euclidean norm of score - reference
};

struct FieldErrorSummary {
  std::vector<FieldErrorPoint> points;
  double mean_error = 0.0;      // mean Euclidean error
  double mean_abs_error = 0.0;  // mean absolute error per coordinate
  double max_error = 0.0;
  std::vector<double> mean_error_by_time;
};

inline std::vector<Vector> grid_points(const FieldGrid& grid) {
  const auto n = grid.lo.size();
  detail::require(n >= 1 && grid.hi.size() == n, "FieldGrid: lo/hi dimension mismatch");
  detail::require(grid.points_per_dim >= 2, "FieldGrid: need at least 2 points per dimension");
  std::size_t total = 1;
  for (Eigen::Index j = 0; j < n; ++j) total *= static_cast<std::size_t>(grid.points_per_dim);
  std::vector<Vector> pts;
  pts.reserve(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    Vector x(n);
    std::size_t rem = idx;
    for (Eigen::Index j = n; j-- > 0;) {
      const auto k = static_cast<double>(rem % grid.points_per_dim);
      rem /= grid.points_per_dim;
      x(j) = grid.lo(j) + (grid.hi(j) - grid.lo(j)) * k / (grid.points_per_dim - 1);
    }
    pts.push_back(std::move(x));
  }
  return pts;
}

/// Grid points at time t, in data coordinates.
inline Matrix grid_points_at(const FieldGrid& grid, const DataPrior& prior, const ProcessSpec& proc,
                             double t) {
  const auto pts = grid_points(grid);
  detail::require(grid.lo.size() == proc.dim(), "FieldGrid: dimension mismatch with process");
  Matrix x(static_cast<Eigen::Index>(pts.size()), proc.dim());
  for (std::size_t i = 0; i < pts.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  if (!grid.marginal_units) return x;
  const auto pm = prior_moments(prior);
  const auto c = marginal_coefficients(proc, 0.0, t);
  const Eigen::RowVectorXd center = (c.scale * pm.mean + c.shift_weight * proc.x_bar()).transpose();
  const double sd = std::sqrt(c.var + c.scale * c.scale * pm.var);
  return (sd * x).rowwise() + center;
}

/// Compares a score model with the optimal score of a tractable prior on a grid.
inline FieldErrorSummary score_field_error(const ScoreFn& model, const DataPrior& prior,
                                           const ProcessSpec& proc, const FieldGrid& grid) {
  detail::require(!grid.times.empty(), "score_field_error: grid has no times");
  FieldErrorSummary out;
  double abs_total = 0.0;
  for (double t : grid.times) {
    const Matrix x = grid_points_at(grid, prior, proc, t);
    const Matrix s = model(x, t);
    double t_total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vector xi = x.row(i).transpose();
      const Vector ref = optimal_score(prior, proc, xi, t);
      const Vector got = s.row(i).transpose();
      const double err = (got - ref).norm();
      abs_total += (got - ref).cwiseAbs().sum();
      t_total += err;
      out.max_error = std::max(out.max_error, err);
      out.points.push_back({xi, t, got, ref, err});
    }
    out.mean_error_by_time.push_back(t_total / static_cast<double>(x.rows()));
  }
  for (const auto& p : out.points) out.mean_error += p.error;
  out.mean_error /= static_cast<double>(out.points.size());
  out.mean_abs_error = abs_total / static_cast<double>(out.points.size() * proc.dim());
  return out;
}

inline nlohmann::json to_json(const ToyScoreNet& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    }
    layers.push_back({{"in", l.weight.cols()},
                      {"out", l.weight.rows()},
                      {"weight", std::move(w)},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return {{"format", "mlsde-toy-score-net"},
          {"version", 1},
          {"dim", net.dim()},
          {"time_features", net.time_features()},
          {"max_frequency", net.max_frequency()},
          {"activation", "x*tanh(softplus(x))"},
          {"output_scaling", "inverse_marginal_std"},
          {"layers", std::move(layers)}};
}

inline ToyScoreNet toy_net_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "mlsde-toy-score-net") {
    throw DomainError("model JSON: unexpected format tag");
  }
  std::vector<DenseLayer> layers;
  for (const auto& lj : j.at("layers")) {
    const int in = lj.at("in").get<int>();
    const int out = lj.at("out").get<int>();
    const auto w = lj.at("weight").get<std::vector<double>>();
    const auto b = lj.at("bias").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != in * out || static_cast<int>(b.size()) != out) {
      throw DomainError("model JSON: layer array sizes do not match in/out");
    }
    DenseLayer layer{Eigen::MatrixXd(out, in), Vector(out)};
    for (int r = 0; r < out; ++r) {
      for (int c = 0; c < in; ++c) layer.weight(r, c) = w[static_cast<std::size_t>(r * in + c)];
    }
    for (int r = 0; r < out; ++r) layer.bias(r) = b[static_cast<std::size_t>(r)];
    layers.push_back(std::move(layer));
  }
  return ToyScoreNet(j.at("dim").get<int>(), j.at("time_features").get<int>(),
                     j.at("max_frequency").get<double>(), std::move(layers));
}

}  // namespace mlsde
