#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gridshock/error.hpp"
#include "gridshock/graph.hpp"
#include "gridshock/ingest.hpp"
#include "gridshock/model.hpp"
#include "gridshock/rng.hpp"

namespace gridshock {

/// Architecture and starting values used by initialize().
struct ModelConfig {
  std::vector<std::size_t> hidden = {32, 16};
  Activation hidden_activation = Activation::Tanh;
  std::size_t window_slots = kDefaultWindowSlots;
  std::size_t trigger_lags = kDefaultTriggerLags;
  double epsilon = kDefaultIntensityFloor;
  double init_gamma = 0.1;
  double init_beta = 0.5;
  double init_alpha = 0.01;
  double init_omega = 0.1;
};

enum class OptimizerKind { PlainSgd, AdaptiveMoments };

inline OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "plain-sgd") return OptimizerKind::PlainSgd;
  if (name == "adaptive-moments" || name == "adam") return OptimizerKind::AdaptiveMoments;
  throw ValidationError("unknown optimizer '" + name + "' (plain-sgd|adaptive-moments)");
}

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::PlainSgd ? "plain-sgd" : "adaptive-moments";
}

/// Settings for fit(). Gradients are averaged over the cells of each
/// minibatch, so step sizes do not scale with K or the batch length.
struct FitConfig {
  OptimizerKind optimizer = OptimizerKind::AdaptiveMoments;
  double learning_rate = 0.01;
  double lr_decay = 0.0;            // lr_epoch = learning_rate / (1 + lr_decay * epoch)
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_slots = 32;     // 0 = full batch
  bool shuffle_batches = true;
  std::size_t max_epochs = 200;
  double tolerance = 1e-6;          // stop when |delta loglik| over an epoch falls below this
  std::size_t projection_every = 1; // optimizer steps between projections
  std::uint64_t seed = 0;
  bool record_timings = true;
  ModelConfig model;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(tolerance > 0.0)) throw ValidationError("tolerance must be positive");
    if (lr_decay < 0.0) throw ValidationError("learning-rate decay must be non-negative");
    if (projection_every < 1) throw ValidationError("projection cadence must be at least 1");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loglik = 0.0;
  double grad_norm = 0.0;
  std::size_t projections = 0;
  double seconds = 0.0;
};

struct FitReport {
  double final_loglik = 0.0;
  double initial_loglik = 0.0;
  std::size_t best_epoch = 0;  // 0 = initialization
  std::vector<EpochRecord> trace;
  std::size_t total_projections = 0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  bool converged = false;
};

/// Gradient of the log-likelihood, one entry per free parameter.
struct ModelGradient {
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<double> gamma;
  std::vector<double> omega;
  MlpParams mlp;

  static ModelGradient zeros_like(const ModelParams& p) {
    ModelGradient g{std::vector<double>(p.weights.alpha.size(), 0.0), std::vector<double>(p.num_units(), 0.0),
                    std::vector<double>(p.num_units(), 0.0), std::vector<double>(p.num_vars(), 0.0), p.mlp};
    g.mlp.set_zero();
    return g;
  }

  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    out.insert(out.end(), alpha.begin(), alpha.end());
    out.insert(out.end(), beta.begin(), beta.end());
    out.insert(out.end(), gamma.begin(), gamma.end());
    out.insert(out.end(), omega.begin(), omega.end());
    for (const auto& l : mlp.layers) {
      out.insert(out.end(), l.weights.begin(), l.weights.end());
      out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
  }

  void scale(double s) {
    for (auto* v : {&alpha, &beta, &gamma, &omega})
      for (auto& x : *v) x *= s;
    for (auto& l : mlp.layers) {
      for (auto& x : l.weights) x *= s;
      for (auto& x : l.bias) x *= s;
    }
  }
};

/// Pointers to every free parameter, in ModelGradient::flatten() order.
inline std::vector<double*> parameter_slots(ModelParams& p) {
  std::vector<double*> out;
  for (auto& x : p.weights.alpha) out.push_back(&x);
  for (auto& x : p.beta) out.push_back(&x);
  for (auto& x : p.gamma) out.push_back(&x);
  for (auto& x : p.decay.omega) out.push_back(&x);
  for (auto& l : p.mlp.layers) {
    for (auto& x : l.weights) out.push_back(&x);
    for (auto& x : l.bias) out.push_back(&x);
  }
  return out;
}

struct GradientResult {
  double loglik = 0.0;
  ModelGradient grad;
};

namespace detail {

inline void check_lambda(double lambda, std::size_t i, std::size_t t) {
  if (!std::isfinite(lambda) || !(lambda > 0.0)) {
    throw NumericError("non-finite or non-positive intensity " + std::to_string(lambda) + " at unit " +
                       std::to_string(i) + ", slot " + std::to_string(t));
  }
}

inline void check_dataset_against(const ModelParams& p, const Dataset& ds) {
  if (ds.num_units() != p.num_units()) throw ValidationError("dataset unit count differs from the model");
  if (ds.num_vars() != p.num_vars()) throw ValidationError("dataset weather variable count differs from the model");
}

}  // namespace detail

/// Poisson log-likelihood  sum_it ( -lambda_it + N_it log lambda_it ), without the log N! constant.
inline double log_likelihood(const Matrix<double>& counts, const Matrix<double>& lambda, std::size_t t0 = 0,
                             std::size_t t1 = static_cast<std::size_t>(-1)) {
  t1 = std::min(t1, counts.cols());
  double ll = 0.0;
  for (std::size_t i = 0; i < counts.rows(); ++i) {
    for (std::size_t t = t0; t < t1; ++t) {
      const double lam = lambda(i, t);
      detail::check_lambda(lam, i, t);
      const double n = counts(i, t);
      ll += -lam + (n > 0.0 ? n * std::log(lam) : 0.0);
    }
  }
  return ll;
}

inline double log_likelihood(const ModelParams& p, const Dataset& ds) {
  detail::check_dataset_against(p, ds);
  const auto counts = to_real(ds.outages);
  const auto field = intensity_field(p, counts, weather_features(p, ds.weather.values));
  return log_likelihood(counts, field.lambda);
}

/// Log-likelihood and its exact gradient restricted to slots [t0, t1).
/// Lagged history before t0 is read from `counts`, and `standardized` is the
/// scaled (not yet accumulated) weather.
inline GradientResult gradients(const ModelParams& p, const Matrix<double>& counts, const Tensor3<double>& standardized,
                                std::size_t t0, std::size_t t1) {
  const auto k = p.num_units();
  const auto m_count = p.num_vars();
  t1 = std::min(t1, counts.cols());
  GradientResult out{0.0, ModelGradient::zeros_like(p)};
  auto& g = out.grad;

  const auto features = accumulate_with_grad(standardized, p.decay);
  const auto ex = excitation(counts, p.beta, p.trigger_lags, true);

  // d indirect / d beta_j at (j, t): S_j - beta_j R_j
  auto beta_sens = [&](std::size_t j, std::size_t t) { return ex.sum(j, t) - p.beta[j] * ex.lag_sum(j, t); };

  MlpCache cache;
  std::vector<double> d_input(m_count);
  for (std::size_t i = 0; i < k; ++i) {
    const double gamma = p.gamma[i];
    for (std::size_t t = t0; t < t1; ++t) {
      const double mu = mlp_forward(p.mlp, features.value.cell(i, t), &cache);
      const double direct = gamma * mu;
      const double indirect = indirect_from_excitation(p, ex, i, t);
      const double lambda = direct + indirect + p.epsilon;
      detail::check_lambda(lambda, i, t);
      const double n = counts(i, t);
      out.loglik += -lambda + (n > 0.0 ? n * std::log(lambda) : 0.0);
      const double w = -1.0 + n / lambda;

      g.gamma[i] += w * mu;
      if (gamma != 0.0) {
        std::fill(d_input.begin(), d_input.end(), 0.0);
        mlp_backward(p.mlp, cache, w * gamma, g.mlp, d_input);
        for (std::size_t m = 0; m < m_count; ++m) g.omega[m] += d_input[m] * features.d_d_omega(i, t, m);
      }
      g.beta[i] += w * p.weights.self[i] * beta_sens(i, t);
      for (auto e : p.graph.incoming(i)) {
        const auto j = p.graph.edge(e).source;
        g.alpha[e] += w * p.beta[j] * ex.sum(j, t);
        if (p.weights.alpha[e] != 0.0) g.beta[j] += w * p.weights.alpha[e] * beta_sens(j, t);
      }
    }
  }
  return out;
}

inline GradientResult gradients(const ModelParams& p, const Dataset& ds) {
  detail::check_dataset_against(p, ds);
  return gradients(p, to_real(ds.outages), p.scaler.apply(ds.weather.values), 0, ds.num_slots());
}

/// Clamps alpha, beta, gamma, omega at 0, pins the diagonal to 1 and removes
/// two-unit loops. Returns the number of coordinates changed.
inline std::size_t project_inplace(ModelParams& p) {
  std::size_t changed = 0;
  auto clamp = [&](std::vector<double>& v) {
    for (auto& x : v) {
      if (!(x >= 0.0)) {
        x = 0.0;
        ++changed;
      }
    }
  };
  clamp(p.weights.alpha);
  clamp(p.beta);
  clamp(p.gamma);
  clamp(p.decay.omega);
  for (auto& s : p.weights.self) {
    if (s != 1.0) {
      s = 1.0;
      ++changed;
    }
  }
  changed += enforce_no_loops_inplace(p.graph, p.weights);
  return changed;
}

inline ModelParams project(ModelParams p) {
  project_inplace(p);
  return p;
}

/// Starting point: gamma, beta, omega and candidate-edge alpha set to the
/// configured constants (alpha then loop-projected), Glorot-uniform network
/// weights drawn from `seed`, weather scaler fitted on the dataset.
inline ModelParams initialize(const Dataset& ds, const Graph& graph, std::uint64_t seed, const ModelConfig& cfg = {}) {
  if (graph.num_nodes() != ds.num_units()) throw ValidationError("graph node count differs from dataset units");
  const auto k = ds.num_units();
  const auto m = ds.num_vars();
  ModelParams p;
  p.graph = graph;
  p.weights = EdgeWeights{std::vector<double>(graph.num_edges(), cfg.init_alpha), std::vector<double>(k, 1.0)};
  p.beta.assign(k, cfg.init_beta);
  p.gamma.assign(k, cfg.init_gamma);
  p.decay = DecayConfig{std::vector<double>(m, cfg.init_omega), std::min(cfg.window_slots, ds.num_slots())};
  Rng rng(seed);
  p.mlp = MlpParams::glorot(m, cfg.hidden, rng, cfg.hidden_activation);
  p.scaler = WeatherScaler::fit(ds.weather.values);
  p.variable_names = ds.weather.variable_names;
  p.epsilon = cfg.epsilon;
  p.trigger_lags = cfg.trigger_lags;
  project_inplace(p);
  return p;
}

namespace detail {

class Optimizer {
 public:
  Optimizer(const FitConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  // Ascent step on the parameters behind `slots`.
  void step(const std::vector<double*>& slots, const std::vector<double>& grad, double lr) {
    if (cfg_.optimizer == OptimizerKind::PlainSgd) {
      for (std::size_t n = 0; n < slots.size(); ++n) *slots[n] += lr * grad[n];
      return;
    }
    ++t_;
    const double b1 = cfg_.adam_beta1;
    const double b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t n = 0; n < slots.size(); ++n) {
      m_[n] = b1 * m_[n] + (1.0 - b1) * grad[n];
      v_[n] = b2 * v_[n] + (1.0 - b2) * grad[n] * grad[n];
      *slots[n] += lr * (m_[n] / c1) / (std::sqrt(v_[n] / c2) + cfg_.adam_epsilon);
    }
  }

 private:
  const FitConfig& cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

inline double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline std::string format_trace(const std::vector<EpochRecord>& trace) {
  std::ostringstream os;
  os << "epoch,loglik,grad_norm\n";
  for (const auto& r : trace) os << r.epoch << ',' << r.loglik << ',' << r.grad_norm << '\n';
  return os.str();
}

}  // namespace detail

struct FitResult {
  ModelParams params;
  FitReport report;
};

/// Projected minibatch gradient ascent from `init`. Batches are contiguous
/// blocks of slots; every step is followed by projection onto the constraint
/// set (at the configured cadence, and always at epoch end). Returns the
/// parameters with the best end-of-epoch log-likelihood.
inline FitResult fit_from(const Dataset& ds, ModelParams init, const FitConfig& cfg) {
  cfg.validate();
  detail::check_dataset_against(init, ds);
  using Clock = std::chrono::steady_clock;
  const auto started = Clock::now();

  const auto counts = to_real(ds.outages);
  const auto standardized = init.scaler.apply(ds.weather.values);
  const auto t_count = ds.num_slots();
  const auto k = ds.num_units();

  FitResult result{std::move(init), {}};
  result.report.seed = cfg.seed;
  ModelParams& p = result.params;

  auto full = gradients(p, counts, standardized, 0, t_count);
  result.report.initial_loglik = full.loglik;
  result.report.final_loglik = full.loglik;
  if (cfg.max_epochs == 0) return result;

  ModelParams best = p;
  double best_ll = full.loglik;
  double prev_ll = full.loglik;

  const std::size_t batch = cfg.batch_slots == 0 ? t_count : std::min(cfg.batch_slots, t_count);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < t_count; s += batch) starts.push_back(s);

  auto slots = parameter_slots(p);
  detail::Optimizer opt(cfg, slots.size());
  Rng order_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::size_t steps = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    if (cfg.shuffle_batches && starts.size() > 1) {
      for (std::size_t n = starts.size() - 1; n > 0; --n) {
        std::swap(starts[n], starts[static_cast<std::size_t>(order_rng() % (n + 1))]);
      }
    }
    const double lr = cfg.learning_rate / (1.0 + cfg.lr_decay * static_cast<double>(epoch - 1));
    std::size_t projections = 0;
    for (auto t0 : starts) {
      const auto t1 = std::min(t0 + batch, t_count);
      auto g = gradients(p, counts, standardized, t0, t1);
      if (!std::isfinite(g.loglik)) {
        throw NumericError("fit diverged in epoch " + std::to_string(epoch) + "\n" +
                           detail::format_trace(result.report.trace));
      }
      g.grad.scale(1.0 / static_cast<double>(k * (t1 - t0)));
      opt.step(slots, g.grad.flatten(), lr);
      if (++steps % cfg.projection_every == 0) projections += project_inplace(p);
    }
    projections += project_inplace(p);

    full = gradients(p, counts, standardized, 0, t_count);
    if (!std::isfinite(full.loglik)) {
      throw NumericError("fit diverged in epoch " + std::to_string(epoch) + "\n" +
                         detail::format_trace(result.report.trace));
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loglik = full.loglik;
    rec.grad_norm = detail::l2_norm(full.grad.flatten());
    rec.projections = projections;
    if (cfg.record_timings) rec.seconds = std::chrono::duration<double>(Clock::now() - epoch_start).count();
    result.report.trace.push_back(rec);
    result.report.total_projections += projections;

    if (full.loglik > best_ll) {
      best_ll = full.loglik;
      best = p;
      result.report.best_epoch = epoch;
    }
    if (std::fabs(full.loglik - prev_ll) < cfg.tolerance) {
      result.report.converged = true;
      break;
    }
    prev_ll = full.loglik;
  }

  result.params = std::move(best);
  result.report.final_loglik = best_ll;
  if (cfg.record_timings) result.report.wall_seconds = std::chrono::duration<double>(Clock::now() - started).count();
  return result;
}

inline FitResult fit(const Dataset& ds, const Graph& graph, const FitConfig& cfg) {
  if (ds.num_slots() == 0 || ds.num_units() == 0) throw ValidationError("cannot fit an empty dataset");
  return fit_from(ds, initialize(ds, graph, cfg.seed, cfg.model), cfg);
}

/// Central finite-difference audit of the analytic gradient on up to
/// `max_coords` evenly spaced coordinates. Coordinates whose analytic value is
/// below `abs_floor` are compared absolutely. Returns the worst error.
struct GradientAudit {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error_small = 0.0;
};

inline GradientAudit check_gradients(const ModelParams& params, const Dataset& ds, double h = 1e-5,
                                     std::size_t max_coords = 200, double abs_floor = 1e-8) {
  detail::check_dataset_against(params, ds);
  const auto counts = to_real(ds.outages);
  const auto standardized = params.scaler.apply(ds.weather.values);
  const auto analytic = gradients(params, counts, standardized, 0, ds.num_slots()).grad.flatten();
  ModelParams work = params;
  auto slots = parameter_slots(work);
  auto ll_at = [&]() {
    return log_likelihood(counts, intensity_field(work, counts, accumulate(standardized, work.decay)).lambda);
  };
  GradientAudit audit;
  const std::size_t n = slots.size();
  const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_coords));
  for (std::size_t c = 0; c < n; c += stride) {
    const double orig = *slots[c];
    *slots[c] = orig + h;
    const double up = ll_at();
    *slots[c] = orig - h;
    const double down = ll_at();
    *slots[c] = orig;
    const double fd = (up - down) / (2.0 * h);
    const double a = analytic[c];
    ++audit.checked;
    if (std::fabs(a) < abs_floor) {
      audit.max_abs_error_small = std::max(audit.max_abs_error_small, std::fabs(fd - a));
    } else {
      audit.max_rel_error = std::max(audit.max_rel_error, std::fabs(fd - a) / std::max(std::fabs(a), std::fabs(fd)));
    }
  }
  return audit;
}

}  // namespace gridshock
