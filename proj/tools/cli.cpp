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

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "mlsde/mlsde.hpp"

namespace mlsde::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> values;
  if (trim(text).empty()) return values;
  for (const auto& part : split(text, ',')) {
    try {
      values.push_back(parse_double(trim(part)));
    } catch (const DomainError&) {
      throw ConfigError("--" + key + ": cannot parse '" + part + "' as a number");
    }
    if (!std::isfinite(values.back())) throw ConfigError("--" + key + ": values must be finite");
  }
  return values;
}

Vector parse_vector(const std::string& key, const std::string& text) {
  const auto v = parse_list(key, text);
  if (v.empty()) throw ConfigError("--" + key + ": expected a comma-separated list of numbers");
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  for (double v : parse_list(key, text)) {
    if (v != std::floor(v) || v < 1 || v > 1e9) {
      throw ConfigError("--" + key + ": expected positive integers");
    }
    out.push_back(static_cast<int>(v));
  }
  if (out.empty()) throw ConfigError("--" + key + ": expected at least one value");
  return out;
}

// ---------------------------------------------------------------------------
// Shared option groups

struct ProcessOptions {
  std::string process = "vp";
  double beta0 = 0.05;
  double beta1 = 20.0;
  double sigma_min = 0.01;
  double sigma_max = 50.0;
  std::string x_bar;
};

void add_process_options(CLI::App* app, ProcessOptions& o) {
  app->add_option("--process", o.process, "Diffusion type")
      ->check(CLI::IsMember({"vp", "subvp", "ve", "mrvp"}));
  app->add_option("--beta0", o.beta0, "Linear schedule beta at t=0")->check(CLI::NonNegativeNumber);
  app->add_option("--beta1", o.beta1, "Linear schedule beta at t=1")->check(CLI::NonNegativeNumber);
  app->add_option("--sigma-min", o.sigma_min, "VE sigma at t=0")->check(CLI::PositiveNumber);
  app->add_option("--sigma-max", o.sigma_max, "VE sigma at t=1")->check(CLI::PositiveNumber);
  app->add_option("--x-bar", o.x_bar, "MR-VP shift vector, comma separated (default zeros)");
}

ProcessSpec make_process(const ProcessOptions& o, int dim) {
  const ProcessKind kind = parse_process_kind(o.process);
  if (kind != ProcessKind::kMrVp && !trim(o.x_bar).empty()) {
    throw ConfigError("--x-bar: only applies to --process mrvp");
  }
  if (kind == ProcessKind::kVe) {
    if (!(o.sigma_max > o.sigma_min)) throw ConfigError("--sigma-max: must exceed --sigma-min");
    return ProcessSpec::ve(dim, GeometricSchedule{o.sigma_min, o.sigma_max});
  }
  if (o.beta1 < o.beta0) throw ConfigError("--beta1: must be >= --beta0");
  if (!(o.beta1 > 0.0)) throw ConfigError("--beta1: must be positive");
  const LinearSchedule sched{o.beta0, o.beta1};
  switch (kind) {
    case ProcessKind::kVp: return ProcessSpec::vp(dim, sched);
    case ProcessKind::kSubVp: return ProcessSpec::sub_vp(dim, sched);
    case ProcessKind::kMrVp: {
      Vector x_bar = trim(o.x_bar).empty() ? Vector::Zero(dim) : parse_vector("x-bar", o.x_bar);
      if (x_bar.size() != dim) {
        throw ConfigError("--x-bar: expected " + std::to_string(dim) + " values, got " +
                          std::to_string(x_bar.size()));
      }
      return ProcessSpec::mr_vp(std::move(x_bar), sched);
    }
    default: break;
  }
  throw ConfigError("--process: unsupported value '" + o.process + "'");
}

struct PriorOptions {
  std::string prior = "gmm";
  std::string mean = "1,-1";
  double var = 0.25;
};

void add_prior_options(CLI::App* app, PriorOptions& o, std::vector<std::string> kinds) {
  app->add_option("--prior", o.prior, "Data prior")->check(CLI::IsMember(kinds));
  app->add_option("--prior-mean", o.mean, "Constant value or Gaussian mean, comma separated");
  app->add_option("--prior-var", o.var, "Gaussian prior variance per coordinate")
      ->check(CLI::PositiveNumber);
}

DataPrior make_prior(const PriorOptions& o, const CLI::App* app) {
  const bool mean_given = app->count("--prior-mean") > 0;
  const bool var_given = app->count("--prior-var") > 0;
  if (o.prior == "gmm" || o.prior == "gmm1d") {
    if (mean_given || var_given) {
      throw ConfigError(std::string(mean_given ? "--prior-mean" : "--prior-var") +
                        ": does not apply to --prior " + o.prior);
    }
    if (o.prior == "gmm") return toy_mixture_2d();
    return toy_mixture_1d();
  }
  Vector mean = parse_vector("prior-mean", o.mean);
  if (o.prior == "constant") {
    if (var_given) throw ConfigError("--prior-var: does not apply to --prior constant");
    return ConstantPrior(std::move(mean));
  }
  if (o.prior == "gaussian") return GaussianPrior(std::move(mean), o.var);
  throw ConfigError("--prior: unsupported value '" + o.prior + "'");
}

struct OutputOptions {
  std::string out;
  std::string manifest;
};

void add_output_options(CLI::App* app, OutputOptions& o, const std::string& what, bool required) {
  auto* opt = app->add_option("--out", o.out, what);
  if (required) opt->required();
  app->add_option("--manifest", o.manifest, "Manifest path (default: manifest.json next to --out)");
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

ToyScoreNet load_model(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(std::string("--model: ") + e.what());
  }
  try {
    return toy_net_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError("--model: malformed model file '" + path + "': " + e.what());
  } catch (const DomainError& e) {
    throw ConfigError("--model: " + std::string(e.what()));
  }
}

ScoreFn make_score(const std::string& model_path, const DataPrior& prior, const ProcessSpec& proc) {
  if (model_path.empty()) return analytic_score_model(prior, proc);
  ToyScoreNet net = load_model(model_path);
  if (net.dim() != proc.dim()) {
    throw ConfigError("--model: network dimension " + std::to_string(net.dim()) +
                      " does not match the prior dimension " + std::to_string(proc.dim()));
  }
  return net_score_model(std::move(net), proc);
}

json step_grid(int n_steps) {
  json grid = json::array();
  for (int k = 0; k < n_steps; ++k) grid.push_back(static_cast<double>(n_steps - k) / n_steps);
  return grid;
}

std::vector<std::string> dim_header(const std::string& prefix, int n) {
  std::vector<std::string> h;
  for (int j = 0; j < n; ++j) h.push_back(prefix + std::to_string(j));
  return h;
}

// ---------------------------------------------------------------------------
// Run context: collects what goes into manifest.json

struct Run {
  CLI::App* app = nullptr;
  std::string command;
  json t_grid = json::array();
  json derived = json::object();
  std::vector<std::string> outputs;
};

void write_manifest(const Run& run, const OutputOptions& o) {
  std::string path = o.manifest;
  if (path.empty()) {
    if (o.out.empty()) return;
    path = (fs::path(o.out).parent_path() / "manifest.json").string();
  }
  json config = json::object();
  json resolved = json::object();
  for (const CLI::Option* opt : run.app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config") continue;
    if (opt->count() > 0) {
      config[name] = opt->results().back();
      resolved[name] = opt->results().back();
    } else {
      resolved[name] = opt->get_default_str();
    }
  }
  const json manifest = {{"tool", "mlsde"},       {"version", kVersion},
                         {"command", run.command}, {"config", config},
                         {"resolved", resolved},   {"derived", run.derived},
                         {"t_grid", run.t_grid},   {"outputs", run.outputs}};
  ensure_parent(path);
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write manifest '" + path + "'");
  f << manifest.dump(2) << '\n';
}

/// CSV sink: the --out file when given, otherwise the command's stdout.
class Sink {
 public:
  Sink(const OutputOptions& o, std::ostream& fallback, const std::vector<std::string>& header)
      : path_(o.out), fallback_(fallback) {
    if (!path_.empty()) {
      ensure_parent(path_);
      file_.open(path_);
      if (!file_) throw std::runtime_error("cannot open '" + path_ + "' for writing");
    }
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    std::ostream& os = path_.empty() ? fallback_ : file_;
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  }
  void numbers(const std::vector<double>& v) {
    std::vector<std::string> cells;
    for (double x : v) cells.push_back(format_double(x));
    row(cells);
  }

 private:
  std::string path_;
  std::ostream& fallback_;
  std::ofstream file_;
};

// ---------------------------------------------------------------------------
// coeffs

struct CoeffsOptions {
  ProcessOptions proc;
  OutputOptions out;
  double t = 0.0;
  double h = 0.0;
  int steps = 0;
  std::string scheme = "ml";
  double variance_term_value = 0.0;
  int dim = 1;
};

void run_coeffs(const CoeffsOptions& o, Run& run, std::ostream& out) {
  const ProcessSpec proc = make_process(o.proc, o.dim);
  const Scheme scheme = parse_scheme(o.scheme);
  const bool have_t = run.app->count("--t") > 0;
  const bool have_h = run.app->count("--h") > 0;
  const bool have_steps = run.app->count("--steps") > 0;
  if (have_h && have_steps) throw ConfigError("--h: give either --h or --steps, not both");
  if (!have_t && !have_steps) throw ConfigError("--t: required unless --steps selects a whole grid");
  if (have_t && !have_h && !have_steps) throw ConfigError("--h: step size required with --t");

  std::vector<double> times;
  double h = have_h ? o.h : 1.0 / std::max(o.steps, 1);
  if (have_t) {
    if (!(o.t > 0.0 && o.t <= 1.0)) throw ConfigError("--t: must lie in (0, 1]");
    if (!(h > 0.0 && h <= o.t)) throw ConfigError("--h: need 0 < h <= t");
    times.push_back(o.t);
  } else {
    for (int k = 0; k < o.steps; ++k) times.push_back(static_cast<double>(o.steps - k) / o.steps);
  }
  auto coeff = [&](double t) {
    if (scheme == Scheme::kMl) return ml_coefficients(proc, t, h, o.variance_term_value);
    return preset(scheme, proc, t, h);
  };

  std::optional<Sink> sink;
  if (!o.out.out.empty()) sink.emplace(o.out, out, std::vector<std::string>{"t", "kappa", "omega", "sigma"});
  json rows = json::array();
  for (double t : times) {
    const auto p = coeff(t);
    rows.push_back({{"t", t}, {"kappa", p.kappa}, {"omega", p.omega}, {"sigma", p.sigma}});
    if (sink) sink->numbers({t, p.kappa, p.omega, p.sigma});
    run.t_grid.push_back(t);
  }
  run.derived["h"] = h;
  if (have_t) {
    out << json{{"kappa", rows[0]["kappa"]}, {"omega", rows[0]["omega"]}, {"sigma", rows[0]["sigma"]}}.dump()
        << '\n';
  } else {
    out << rows.dump() << '\n';
  }
  if (sink) run.outputs.push_back(o.out.out);
}

// ---------------------------------------------------------------------------
// simulate-forward

struct ForwardOptions {
  ProcessOptions proc;
  OutputOptions out;
  std::string x0;
  std::string times = "0.25,0.5,1";
  int paths = 1000;
  std::string method = "exact";
  double h_fine = 1e-3;
  std::uint64_t seed = 0;
};

void run_forward(const ForwardOptions& o, Run& run, std::ostream& out) {
  const Vector x0 = parse_vector("x0", o.x0);
  const ProcessSpec proc = make_process(o.proc, static_cast<int>(x0.size()));
  const auto times = parse_list("times", o.times);
  if (times.empty()) throw ConfigError("--times: expected at least one time");
  for (double t : times) {
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("--times: every time must lie in (0, 1]");
  }
  std::vector<Matrix> states;
  if (o.method == "exact") {
    const Matrix rows = x0.transpose().replicate(o.paths, 1);
    for (std::size_t i = 0; i < times.size(); ++i) {
      states.push_back(sample_forward(proc, rows, times[i], derive_seed(o.seed, i)).points);
    }
  } else {
    if (!(o.h_fine > 0.0 && o.h_fine <= 1e-3)) throw ConfigError("--h-fine: must lie in (0, 1e-3]");
    for (double t : times) {
      const double k = std::round(t / o.h_fine);
      if (std::abs(k * o.h_fine - t) > 1e-9) {
        throw ConfigError("--times: " + format_double(t) + " is not a multiple of --h-fine");
      }
    }
    states = euler_forward_paths(proc, x0, o.h_fine, o.seed, o.paths, times);
  }
  std::vector<std::string> header{"t"};
  for (auto& h : dim_header("dim", proc.dim())) header.push_back(h);
  Sink sink(o.out, out, header);
  for (std::size_t i = 0; i < times.size(); ++i) {
    for (Eigen::Index p = 0; p < states[i].rows(); ++p) {
      std::vector<double> row{times[i]};
      for (Eigen::Index j = 0; j < states[i].cols(); ++j) row.push_back(states[i](p, j));
      sink.numbers(row);
    }
    run.t_grid.push_back(times[i]);
  }
  if (!o.out.out.empty()) run.outputs.push_back(o.out.out);
}

// ---------------------------------------------------------------------------
// sample / compare

struct SolverOptions {
  std::string model;
  double tau = 1.0;
  std::string variance_term = "zero";
  int mc_chains = 64;
  double mc_h_fine = 1e-3;
  int mc_points = 16;
  int mc_data = 2048;
};

void add_solver_options(CLI::App* app, SolverOptions& o) {
  app->add_option("--model", o.model, "Trained toy model JSON (default: analytic score of the prior)");
  app->add_option("--tau", o.tau, "Use ML coefficients only for t <= tau")->check(CLI::Range(0.0, 1.0));
  app->add_option("--variance-term", o.variance_term, "Data term of the optimal sigma")
      ->check(CLI::IsMember({"zero", "gaussian", "mc"}));
  app->add_option("--mc-chains", o.mc_chains, "Monte-Carlo variance term: chains per point")
      ->check(CLI::Range(2, 1000000));
  app->add_option("--mc-h-fine", o.mc_h_fine, "Monte-Carlo variance term: fine step")
      ->check(CLI::Range(1e-6, 0.5));
  app->add_option("--mc-points", o.mc_points, "Monte-Carlo variance term: sampled X_t per step")
      ->check(CLI::Range(1, 1000000));
  app->add_option("--mc-data", o.mc_data, "Monte-Carlo variance term: data rows drawn from the prior")
      ->check(CLI::Range(1, 100000000));
}

VarianceTerm make_variance_term(const SolverOptions& o, const DataPrior& prior, std::uint64_t seed) {
  if (o.variance_term == "zero") return ZeroVariance{};
  if (o.variance_term == "gaussian") {
    const auto pm = prior_moments(prior);
    return GaussianVarianceTerm{pm.mean, pm.var};
  }
  MonteCarloVarianceTerm mc;
  mc.n_chains = o.mc_chains;
  mc.h_fine = o.mc_h_fine;
  mc.n_points = o.mc_points;
  mc.data = sample_prior(prior, o.mc_data, derive_seed(seed, 0xda7aULL));
  return mc;
}

struct SampleOptions {
  ProcessOptions proc;
  PriorOptions prior;
  SolverOptions solver;
  OutputOptions out;
  std::string scheme = "ml";
  int steps = 10;
  int samples = 1000;
  std::uint64_t seed = 0;
};

void run_sample(const SampleOptions& o, Run& run, std::ostream& out) {
  const DataPrior prior = make_prior(o.prior, run.app);
  const ProcessSpec proc = make_process(o.proc, prior_dim(prior));
  const ScoreFn model = make_score(o.solver.model, prior, proc);
  SolverConfig cfg;
  cfg.n_steps = o.steps;
  cfg.scheme = parse_scheme(o.scheme);
  cfg.tau = o.solver.tau;
  cfg.variance_term = make_variance_term(o.solver, prior, o.seed);
  cfg.seed = o.seed;
  const SampleBatch batch = solve_reverse(proc, model, cfg, o.samples);
  std::vector<std::string> header{"t"};
  for (auto& h : dim_header("dim", proc.dim())) header.push_back(h);
  Sink sink(o.out, out, header);
  for (Eigen::Index i = 0; i < batch.points.rows(); ++i) {
    std::vector<double> row{0.0};
    for (Eigen::Index j = 0; j < batch.points.cols(); ++j) row.push_back(batch.points(i, j));
    sink.numbers(row);
  }
  run.t_grid = step_grid(o.steps);
  if (!o.out.out.empty()) run.outputs.push_back(o.out.out);
}

struct CompareOptions {
  ProcessOptions proc;
  PriorOptions prior;
  SolverOptions solver;
  OutputOptions out;
  std::string schemes = "em,pf,ml";
  std::string steps = "10,100";
  int samples = 2000;
  int reference_samples = 2000;
  std::uint64_t seed = 0;
};

void run_compare(const CompareOptions& o, Run& run, std::ostream& out) {
  const DataPrior prior = make_prior(o.prior, run.app);
  const ProcessSpec proc = make_process(o.proc, prior_dim(prior));
  const ScoreFn model = make_score(o.solver.model, prior, proc);
  std::vector<Scheme> schemes;
  for (const auto& s : split(o.schemes, ',')) {
    try {
      schemes.push_back(parse_scheme(trim(s)));
    } catch (const DomainError&) {
      throw ConfigError("--schemes: unknown scheme '" + s + "'");
    }
  }
  const auto steps = parse_int_list("steps", o.steps);
  // Held-out reference data on its own stream; every run shares the solver seed.
  const std::uint64_t ref_seed = derive_seed(o.seed, 0x2efULL);
  const Matrix reference = sample_prior(prior, o.reference_samples, ref_seed);
  const auto ref_m = moments(reference);
  run.derived["reference_seed"] = ref_seed;

  Sink sink(o.out, out, {"scheme", "n_steps", "energy_distance", "mean_err", "cov_err", "seed"});
  for (Scheme scheme : schemes) {
    for (int n : steps) {
      SolverConfig cfg;
      cfg.n_steps = n;
      cfg.scheme = scheme;
      cfg.tau = o.solver.tau;
      cfg.variance_term = make_variance_term(o.solver, prior, o.seed);
      cfg.seed = o.seed;
      const SampleBatch batch = solve_reverse(proc, model, cfg, o.samples);
      const auto gen_m = moments(batch.points);
      sink.row({std::string(to_string(scheme)), std::to_string(n),
                format_double(energy_distance(batch.points, reference)),
                format_double((gen_m.mean - ref_m.mean).norm()),
                format_double((gen_m.cov - ref_m.cov).norm()), std::to_string(o.seed)});
    }
  }
  run.t_grid = json::object();
  for (int n : steps) run.t_grid[std::to_string(n)] = step_grid(n);
  if (!o.out.out.empty()) run.outputs.push_back(o.out.out);
}

// ---------------------------------------------------------------------------
// train-toy

struct TrainOptions {
  ProcessOptions proc;
  PriorOptions prior;
  OutputOptions out;
  std::string loss_out;
  int iterations = 5000;
  int batch = 128;
  double lr = 1e-3;
  double t_min = 1e-4;
  std::string hidden = "128,128";
  int time_features = 16;
  double max_frequency = 30.0;
  std::uint64_t seed = 0;
};

FieldGrid default_field_grid(int dim) {
  FieldGrid g{Vector::Constant(dim, -2.0), Vector::Constant(dim, 2.0), 20, {}, true};
  for (int k = 1; k <= 10; ++k) g.times.push_back(0.1 * k);
  return g;
}

void run_train(const TrainOptions& o, Run& run, std::ostream& out) {
  const DataPrior prior = make_prior(o.prior, run.app);
  const ProcessSpec proc = make_process(o.proc, prior_dim(prior));
  if (!(o.t_min > kTimeFloor && o.t_min < 1.0)) throw ConfigError("--t-min: must lie in (1e-5, 1)");
  ToyNetConfig net_cfg;
  net_cfg.dim = proc.dim();
  net_cfg.time_features = o.time_features;
  net_cfg.max_frequency = o.max_frequency;
  net_cfg.hidden = parse_int_list("hidden", o.hidden);
  if (o.time_features % 2 != 0) throw ConfigError("--time-features: must be even");
  const std::uint64_t init_seed = derive_seed(o.seed, 1);
  const std::uint64_t train_seed = derive_seed(o.seed, 2);
  TrainConfig cfg;
  cfg.batch_size = o.batch;
  cfg.iterations = o.iterations;
  cfg.learning_rate = o.lr;
  cfg.t_min = o.t_min;
  cfg.seed = train_seed;
  const TrainResult result = train(ToyScoreNet(net_cfg, init_seed), prior, proc, cfg);

  ensure_parent(o.out.out);
  {
    std::ofstream f(o.out.out);
    if (!f) throw std::runtime_error("cannot write '" + o.out.out + "'");
    f << to_json(result.net).dump() << '\n';
  }
  std::string loss_path = o.loss_out;
  if (loss_path.empty()) {
    fs::path p(o.out.out);
    loss_path = (p.parent_path() / (p.stem().string() + "_loss.csv")).string();
  }
  {
    ensure_parent(loss_path);
    CsvWriter w(loss_path, {"iteration", "loss"});
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i) {
      w.write_row({std::to_string(i), format_double(result.loss_curve[i])});
    }
  }
  const auto err = score_field_error(net_score_model(result.net, proc), prior, proc,
                                     default_field_grid(proc.dim()));
  json summary = {{"iterations", o.iterations},
                  {"final_loss", result.loss_curve.empty() ? 0.0 : result.loss_curve.back()},
                  {"score_mean_abs_error", err.mean_abs_error},
                  {"score_mean_error", err.mean_error}};
  out << summary.dump() << '\n';
  run.derived = {{"init_seed", init_seed}, {"train_seed", train_seed}, {"summary", summary}};
  run.outputs = {o.out.out, loss_path};
}

// ---------------------------------------------------------------------------
// score-check

struct ScoreCheckOptions {
  ProcessOptions proc;
  PriorOptions prior;
  OutputOptions out;
  std::string model;
  std::string times = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1";
  int grid_points = 20;
  double grid_lo = -2.0;
  double grid_hi = 2.0;
  double fd_step = 1e-5;
};

void run_score_check(const ScoreCheckOptions& o, Run& run, std::ostream& out) {
  const DataPrior prior = make_prior(o.prior, run.app);
  const int n = prior_dim(prior);
  const ProcessSpec proc = make_process(o.proc, n);
  if (!(o.grid_hi > o.grid_lo)) throw ConfigError("--grid-hi: must exceed --grid-lo");
  FieldGrid grid{Vector::Constant(n, o.grid_lo), Vector::Constant(n, o.grid_hi), o.grid_points,
                 parse_list("times", o.times), true};
  if (grid.times.empty()) throw ConfigError("--times: expected at least one time");
  for (double t : grid.times) {
    if (!(t > kTimeFloor && t <= 1.0)) throw ConfigError("--times: every time must lie in (1e-5, 1]");
  }
  std::optional<ScoreFn> net;
  if (!o.model.empty()) net = make_score(o.model, prior, proc);

  std::vector<std::string> header{"t"};
  for (auto& h : dim_header("x_dim", n)) header.push_back(h);
  for (auto& h : dim_header("score_dim", n)) header.push_back(h);
  for (auto& h : dim_header("oracle_dim", n)) header.push_back(h);
  header.push_back("abs_err");
  Sink sink(o.out, out, header);
  double total = 0.0;
  double worst = 0.0;
  long count = 0;
  for (double t : grid.times) {
    const Matrix x = grid_points_at(grid, prior, proc, t);
    const Matrix net_scores = net ? (*net)(x, t) : Matrix();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Vector xi = x.row(i).transpose();
      Vector score;
      Vector oracle(n);
      if (net) {
        score = net_scores.row(i).transpose();
        oracle = optimal_score(prior, proc, xi, t);
      } else {
        // Posterior-mean score against central differences of the log marginal.
        score = optimal_score(prior, proc, xi, t);
        for (int j = 0; j < n; ++j) {
          Vector xp = xi, xm = xi;
          xp(j) += o.fd_step;
          xm(j) -= o.fd_step;
          oracle(j) = (log_marginal_density(prior, proc, xp, t) -
                       log_marginal_density(prior, proc, xm, t)) / (2.0 * o.fd_step);
        }
      }
      const double err = (score - oracle).norm();
      total += err;
      worst = std::max(worst, err);
      ++count;
      std::vector<double> row{t};
      for (int j = 0; j < n; ++j) row.push_back(xi(j));
      for (int j = 0; j < n; ++j) row.push_back(score(j));
      for (int j = 0; j < n; ++j) row.push_back(oracle(j));
      row.push_back(err);
      sink.numbers(row);
    }
    run.t_grid.push_back(t);
  }
  if (!o.out.out.empty()) {
    run.outputs.push_back(o.out.out);
    out << json{{"mean_abs_err", total / count}, {"max_abs_err", worst}}.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// config files

std::vector<std::string> config_tokens(const std::string& path, const std::string& command) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error& e) {
    throw ConfigError(std::string("--config: ") + e.what());
  }
  std::vector<std::string> tokens;
  auto add = [&](std::string key, const std::string& value) {
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    if (key.empty()) throw ConfigError("--config: empty key in '" + path + "'");
    if (key == "config") throw ConfigError("--config: config files cannot include other config files");
    tokens.push_back("--" + key);
    tokens.push_back(value);
  };
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError("--config: malformed JSON in '" + path + "': " + e.what());
    }
    if (j.contains("command") && j["command"] != command) {
      throw ConfigError("--config: manifest '" + path + "' belongs to command '" +
                        j["command"].get<std::string>() + "', not '" + command + "'");
    }
    const json& cfg = j.contains("config") ? j["config"] : j;
    for (const auto& [key, value] : cfg.items()) {
      add(key, value.is_string() ? value.get<std::string>() : value.dump());
    }
    return tokens;
  }
  int line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--config: line " + std::to_string(line_no) + " of '" + path +
                        "' is not key=value");
    }
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    add(trim(line.substr(0, eq)), value);
  }
  return tokens;
}

/// Splices the tokens of --config FILE in front of the explicit flags so
/// that flags override file values.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty() || args[0].rfind("-", 0) == 0) return args;
  std::vector<std::string> rest;
  std::optional<std::string> path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config: missing file name");
      if (path) throw ConfigError("--config: given more than once");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      if (path) throw ConfigError("--config: given more than once");
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out{args[0]};
  if (path) {
    for (auto& tok : config_tokens(*path, args[0])) out.push_back(std::move(tok));
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Maximum-likelihood SDE solvers for diffusion models", "mlsde"};
  app.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_flag("--help", "Print this help message and exit");
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value file or manifest.json; flags override it");
  };
  Run run;
  std::function<void()> action;

  CoeffsOptions co;
  auto* coeffs = app.add_subcommand("coeffs", "Solver coefficients (kappa, omega, sigma)");
  add_process_options(coeffs, co.proc);
  coeffs->add_option("--t", co.t, "Step end time t (step goes t -> t-h)");
  coeffs->add_option("--h", co.h, "Step size");
  coeffs->add_option("--steps", co.steps, "Number of steps N (h = 1/N)")->check(CLI::Range(1, 100000000));
  coeffs->add_option("--scheme", co.scheme, "Scheme")->check(CLI::IsMember({"ml", "em", "pf"}));
  coeffs->add_option("--variance-term-value", co.variance_term_value, "E Tr Var(X_0 | X_t)")
      ->check(CLI::NonNegativeNumber);
  coeffs->add_option("--dim", co.dim, "Data dimensionality")->check(CLI::Range(1, 1000000));
  add_output_options(coeffs, co.out, "CSV output t,kappa,omega,sigma", false);
  add_config(coeffs);
  coeffs->callback([&] { action = [&] { run_coeffs(co, run, out); }; });

  ForwardOptions fo;
  auto* forward = app.add_subcommand("simulate-forward", "Sample the forward process at given times");
  add_process_options(forward, fo.proc);
  forward->add_option("--x0", fo.x0, "Initial point, comma separated")->required();
  forward->add_option("--times", fo.times, "Comma-separated times in (0, 1]");
  forward->add_option("--paths", fo.paths, "Number of paths")->check(CLI::Range(1, 100000000));
  forward->add_option("--method", fo.method, "exact marginal or fine-step Euler")
      ->check(CLI::IsMember({"exact", "euler"}));
  forward->add_option("--h-fine", fo.h_fine, "Euler step");
  forward->add_option("--seed", fo.seed, "RNG seed")->required();
  add_output_options(forward, fo.out, "CSV output t,dim0,...", false);
  add_config(forward);
  forward->callback([&] { action = [&] { run_forward(fo, run, out); }; });

  SampleOptions so;
  auto* sample = app.add_subcommand("sample", "Run the reverse solver");
  add_process_options(sample, so.proc);
  add_prior_options(sample, so.prior, {"constant", "gaussian", "gmm", "gmm1d"});
  add_solver_options(sample, so.solver);
  sample->add_option("--scheme", so.scheme, "Scheme")->check(CLI::IsMember({"ml", "em", "pf"}));
  sample->add_option("--steps", so.steps, "Number of steps N")->check(CLI::Range(1, 100000000));
  sample->add_option("--samples", so.samples, "Number of chains")->check(CLI::Range(1, 100000000));
  sample->add_option("--seed", so.seed, "RNG seed")->required();
  add_output_options(sample, so.out, "CSV output t,dim0,...", false);
  add_config(sample);
  sample->callback([&] { action = [&] { run_sample(so, run, out); }; });

  CompareOptions cmp;
  auto* compare = app.add_subcommand("compare", "Compare schemes against held-out prior samples");
  add_process_options(compare, cmp.proc);
  add_prior_options(compare, cmp.prior, {"constant", "gaussian", "gmm", "gmm1d"});
  add_solver_options(compare, cmp.solver);
  compare->add_option("--schemes", cmp.schemes, "Comma-separated schemes");
  compare->add_option("--steps", cmp.steps, "Comma-separated step counts");
  compare->add_option("--samples", cmp.samples, "Chains per run")->check(CLI::Range(2, 100000000));
  compare->add_option("--reference-samples", cmp.reference_samples, "Held-out reference size")
      ->check(CLI::Range(2, 100000000));
  compare->add_option("--seed", cmp.seed, "RNG seed shared by all runs")->required();
  add_output_options(compare, cmp.out, "CSV output", false);
  add_config(compare);
  compare->callback([&] { action = [&] { run_compare(cmp, run, out); }; });

  TrainOptions to;
  auto* train_cmd = app.add_subcommand("train-toy", "Train the toy score network by DSM");
  add_process_options(train_cmd, to.proc);
  add_prior_options(train_cmd, to.prior, {"gaussian", "gmm", "gmm1d"});
  train_cmd->add_option("--steps-iter", to.iterations, "SGD iterations")->check(CLI::Range(0, 100000000));
  train_cmd->add_option("--batch", to.batch, "Batch size")->check(CLI::Range(1, 10000000));
  train_cmd->add_option("--lr", to.lr, "Learning rate")->check(CLI::PositiveNumber);
  train_cmd->add_option("--t-min", to.t_min, "Lower end of the training time range");
  train_cmd->add_option("--hidden", to.hidden, "Comma-separated hidden widths");
  train_cmd->add_option("--time-features", to.time_features, "Sinusoidal time features")
      ->check(CLI::Range(2, 4096));
  train_cmd->add_option("--max-frequency", to.max_frequency, "Highest time-embedding frequency")
      ->check(CLI::Range(1.0, 1e6));
  train_cmd->add_option("--seed", to.seed, "RNG seed")->required();
  train_cmd->add_option("--loss-out", to.loss_out, "Loss curve CSV (default: <out stem>_loss.csv)");
  add_output_options(train_cmd, to.out, "Model JSON", true);
  add_config(train_cmd);
  train_cmd->callback([&] { action = [&] { run_train(to, run, out); }; });

  ScoreCheckOptions sc;
  auto* check = app.add_subcommand("score-check", "Score field against its oracle on a grid");
  add_process_options(check, sc.proc);
  add_prior_options(check, sc.prior, {"constant", "gaussian", "gmm", "gmm1d"});
  check->add_option("--model", sc.model, "Trained toy model JSON (default: check the analytic score)");
  check->add_option("--times", sc.times, "Comma-separated times");
  check->add_option("--grid-points", sc.grid_points, "Points per dimension")->check(CLI::Range(2, 10000));
  check->add_option("--grid-lo", sc.grid_lo, "Grid start, in marginal standard deviations");
  check->add_option("--grid-hi", sc.grid_hi, "Grid end, in marginal standard deviations");
  check->add_option("--fd-step", sc.fd_step, "Finite-difference step")->check(CLI::PositiveNumber);
  add_output_options(check, sc.out, "CSV output", false);
  add_config(check);
  check->callback([&] { action = [&] { run_score_check(sc, run, out); }; });

  try {
    std::vector<std::string> argv = expand_config(args);
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    err << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  run.app = app.get_subcommands().front();
  run.command = run.app->get_name();
  OutputOptions* outputs = nullptr;
  if (run.app == coeffs) outputs = &co.out;
  if (run.app == forward) outputs = &fo.out;
  if (run.app == sample) outputs = &so.out;
  if (run.app == compare) outputs = &cmp.out;
  if (run.app == train_cmd) outputs = &to.out;
  if (run.app == check) outputs = &sc.out;
  try {
    action();
    write_manifest(run, *outputs);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UnsupportedPrior& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace mlsde::cli
