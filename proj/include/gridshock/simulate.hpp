#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gridshock/error.hpp"
#include "gridshock/ingest.hpp"
#include "gridshock/model.hpp"
#include "gridshock/rng.hpp"
#include "gridshock/topology.hpp"

namespace gridshock {

inline constexpr double kDivergenceIntensity = 1e9;

/// Where lagged counts come from while simulating.
struct HistoryMode {
  enum class Kind {
    FromZero,       // every slot is drawn and fed back
    TeacherForced,  // slots before `until` are observed, the rest drawn and fed back
    OneStep,        // every intensity uses observed history; draws are not fed back
  };
  Kind kind = Kind::FromZero;
  std::size_t until = 0;

  static HistoryMode from_zero() { return {}; }
  static HistoryMode teacher_forced(std::size_t until) { return {Kind::TeacherForced, until}; }
  static HistoryMode one_step() { return {Kind::OneStep, 0}; }
};

struct SimOptions {
  std::size_t replications = 1000;
  std::uint64_t seed = 0;
  HistoryMode history = HistoryMode::from_zero();
  bool keep_paths = false;
  unsigned threads = 1;
};

/// Monte Carlo ensemble. Cell sums are kept as exact integers so that the
/// result does not depend on how replications are split across threads.
struct SimResult {
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  std::vector<double> totals;  // per replication, sum over every cell of the path
  Matrix<std::int64_t> cell_sum;
  Matrix<std::int64_t> cell_sum_sq;
  std::vector<Matrix<std::int64_t>> paths;  // only with keep_paths

  [[nodiscard]] double mean_total() const {
    return std::accumulate(totals.begin(), totals.end(), 0.0) / static_cast<double>(totals.size());
  }
  [[nodiscard]] double std_error_total() const {
    if (totals.size() < 2) return 0.0;
    const double mean = mean_total();
    double ss = 0.0;
    for (double x : totals) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(totals.size() - 1) / static_cast<double>(totals.size()));
  }
  /// Empirical quantile of per-replication totals (linear interpolation).
  [[nodiscard]] double quantile_total(double q) const {
    std::vector<double> sorted = totals;
    std::sort(sorted.begin(), sorted.end());
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  }
  [[nodiscard]] double cell_mean(std::size_t i, std::size_t t) const {
    return static_cast<double>(cell_sum(i, t)) / static_cast<double>(replications);
  }
  [[nodiscard]] double cell_std_error(std::size_t i, std::size_t t) const {
    const double r = static_cast<double>(replications);
    if (replications < 2) return 0.0;
    const double mean = cell_mean(i, t);
    const double var = (static_cast<double>(cell_sum_sq(i, t)) - r * mean * mean) / (r - 1.0);
    return std::sqrt(std::max(var, 0.0) / r);
  }
  [[nodiscard]] std::vector<double> unit_mean_totals() const {
    std::vector<double> out(cell_sum.rows(), 0.0);
    for (std::size_t i = 0; i < cell_sum.rows(); ++i)
      for (std::size_t t = 0; t < cell_sum.cols(); ++t) out[i] += cell_mean(i, t);
    return out;
  }
};

namespace detail {

// One replication. `direct` already includes epsilon.
inline Matrix<std::int64_t> simulate_one(const ModelParams& p, const Matrix<double>& direct_eps,
                                         const Matrix<double>* observed, const Matrix<double>* one_step_lambda,
                                         const HistoryMode& mode, Rng& rng) {
  const auto k = direct_eps.rows();
  const auto t_count = direct_eps.cols();
  Matrix<std::int64_t> path(k, t_count, 0);

  if (mode.kind == HistoryMode::Kind::OneStep) {
    for (std::size_t t = 0; t < t_count; ++t)
      for (std::size_t i = 0; i < k; ++i) path(i, t) = poisson(rng, (*one_step_lambda)(i, t));
    return path;
  }

  const auto lags = p.trigger_lags;
  std::vector<double> q(k), q_tail(k), s(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    q[j] = std::exp(-p.beta[j]);
    q_tail[j] = std::exp(-p.beta[j] * static_cast<double>(lags + 1));
  }
  Matrix<double> realized(k, t_count, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    if (t > 0) {
      for (std::size_t j = 0; j < k; ++j) {
        double next = q[j] * (s[j] + realized(j, t - 1));
        if (t >= lags + 1) next -= q_tail[j] * realized(j, t - 1 - lags);
        s[j] = next > 0.0 ? next : 0.0;
      }
    }
    const bool forced = mode.kind == HistoryMode::Kind::TeacherForced && t < mode.until;
    for (std::size_t i = 0; i < k; ++i) {
      if (forced) {
        realized(i, t) = (*observed)(i, t);
        path(i, t) = static_cast<std::int64_t>(realized(i, t));
        continue;
      }
      double lambda = direct_eps(i, t) + p.weights.self[i] * p.beta[i] * s[i];
      for (auto e : p.graph.incoming(i)) {
        const double a = p.weights.alpha[e];
        if (a != 0.0) {
          const auto j = p.graph.edge(e).source;
          lambda += a * p.beta[j] * s[j];
        }
      }
      if (!(lambda <= kDivergenceIntensity)) {
        throw NumericError("simulation diverged: intensity " + std::to_string(lambda) + " at unit " +
                           std::to_string(i) + ", slot " + std::to_string(t));
      }
      const auto n = poisson(rng, lambda);
      path(i, t) = n;
      realized(i, t) = static_cast<double>(n);
    }
  }
  return path;
}

}  // namespace detail

/// Rolls the fitted process forward over the weather's slots, R times.
/// Replication r draws from its own generator seeded with seed XOR r.
/// `observed` is required for teacher-forced and one-step modes.
inline SimResult simulate_paths(const ModelParams& p, const Tensor3<double>& weather, const SimOptions& opt,
                                const OutageSeries* observed = nullptr) {
  if (opt.replications < 1) throw ValidationError("need at least one replication");
  const auto k = p.num_units();
  const auto t_count = weather.slots();
  const bool needs_obs = opt.history.kind != HistoryMode::Kind::FromZero;
  Matrix<double> obs;
  if (needs_obs) {
    if (!observed) throw ValidationError("history mode requires observed counts");
    if (observed->counts.rows() != k || observed->counts.cols() != t_count) {
      throw ValidationError("observed counts do not match the weather grid");
    }
    obs = to_real(*observed);
  }
  if (opt.history.kind == HistoryMode::Kind::TeacherForced && opt.history.until > t_count) {
    throw ValidationError("teacher-forcing cutoff beyond the grid");
  }

  const auto features = weather_features(p, weather);
  Matrix<double> direct_eps = direct_term(p, features);
  for (auto& x : direct_eps.data()) x += p.epsilon;
  Matrix<double> one_step;
  if (opt.history.kind == HistoryMode::Kind::OneStep) one_step = intensity_field(p, obs, features).lambda;

  SimResult result;
  result.replications = opt.replications;
  result.seed = opt.seed;
  result.totals.assign(opt.replications, 0.0);
  result.cell_sum = Matrix<std::int64_t>(k, t_count, 0);
  result.cell_sum_sq = Matrix<std::int64_t>(k, t_count, 0);
  if (opt.keep_paths) result.paths.resize(opt.replications);

  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(opt.replications)));
  std::vector<Matrix<std::int64_t>> sums(threads, Matrix<std::int64_t>(k, t_count, 0));
  std::vector<Matrix<std::int64_t>> sums_sq(threads, Matrix<std::int64_t>(k, t_count, 0));
  std::vector<std::exception_ptr> errors(threads);

  auto worker = [&](unsigned w) {
    try {
      for (std::size_t r = w; r < opt.replications; r += threads) {
        Rng rng(opt.seed ^ static_cast<std::uint64_t>(r));
        auto path = detail::simulate_one(p, direct_eps, needs_obs ? &obs : nullptr, &one_step, opt.history, rng);
        std::int64_t total = 0;
        for (std::size_t n = 0; n < path.size(); ++n) {
          const auto v = path.data()[n];
          total += v;
          sums[w].data()[n] += v;
          sums_sq[w].data()[n] += v * v;
        }
        result.totals[r] = static_cast<double>(total);
        if (opt.keep_paths) result.paths[r] = std::move(path);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  for (unsigned w = 0; w < threads; ++w) {
    for (std::size_t n = 0; n < result.cell_sum.size(); ++n) {
      result.cell_sum.data()[n] += sums[w].data()[n];
      result.cell_sum_sq.data()[n] += sums_sq[w].data()[n];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Scenarios

/// A target value, or the population average when unset.
using OverrideValue = std::optional<double>;

struct EdgeReweight {
  std::string source;
  std::string target;
  OverrideValue value;
};

struct UnitOverride {
  std::string unit;
  OverrideValue value;
};

struct OmegaOverride {
  std::string variable;
  double value = 0.0;
};

/// Declarative parameter edits for what-if simulation. Averages ("mean")
/// are taken over the unmodified model: nonzero off-diagonal alpha for edges,
/// all units for gamma and beta.
struct Scenario {
  std::vector<EdgeReweight> edge_reweights;
  std::vector<UnitOverride> gamma_overrides;
  std::vector<UnitOverride> beta_overrides;
  std::vector<OmegaOverride> omega_overrides;
  // Reweight the `top_edges_per_unit` largest outgoing edges of the
  // `top_units_by_max_outages` units with the highest historical peak to the mean alpha.
  std::size_t top_units_by_max_outages = 0;
  std::size_t top_edges_per_unit = 0;
  // Move the largest-gamma units and the smallest-beta units to the average.
  std::size_t top_gamma_units = 0;
  std::size_t bottom_beta_units = 0;

  [[nodiscard]] bool empty() const {
    return edge_reweights.empty() && gamma_overrides.empty() && beta_overrides.empty() && omega_overrides.empty() &&
           (top_units_by_max_outages == 0 || top_edges_per_unit == 0) && top_gamma_units == 0 &&
           bottom_beta_units == 0;
  }
};

namespace detail {

inline std::size_t resolve_unit(const Graph& g, const std::string& name) {
  const auto& ids = g.node_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == name) return i;
  }
  if (ids.empty()) {
    try {
      std::size_t pos = 0;
      auto idx = std::stoull(name, &pos);
      if (pos == name.size() && idx < g.num_nodes()) return static_cast<std::size_t>(idx);
    } catch (const std::exception&) {
    }
  }
  throw ValidationError("scenario references unknown unit '" + name + "'");
}

inline std::size_t resolve_variable(const ModelParams& p, const std::string& name) {
  for (std::size_t m = 0; m < p.variable_names.size(); ++m) {
    if (p.variable_names[m] == name) return m;
  }
  try {
    std::size_t pos = 0;
    auto idx = std::stoull(name, &pos);
    if (pos == name.size() && idx < p.num_vars()) return static_cast<std::size_t>(idx);
  } catch (const std::exception&) {
  }
  throw ValidationError("scenario references unknown weather variable '" + name + "'");
}

inline double checked_value(double v, const char* what) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError(std::string(what) + " override must be non-negative");
  return v;
}

inline double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace detail

/// Units ordered by their historical peak count, descending (ties: lower index first).
inline std::vector<std::size_t> units_by_max_outages(const OutageSeries& history) {
  const auto k = history.counts.rows();
  std::vector<std::int64_t> peak(k, 0);
  for (std::size_t i = 0; i < k; ++i)
    for (auto n : history.counts.row(i)) peak[i] = std::max(peak[i], n);
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return peak[a] > peak[b]; });
  return order;
}

/// Applies a scenario to a copy of the parameters, then re-projects onto the constraint set.
inline ModelParams apply_scenario(const ModelParams& base, const Scenario& sc, const OutageSeries& reference_history) {
  ModelParams p = base;
  const auto& g = p.graph;
  const auto k = p.num_units();

  std::vector<double> nonzero_alpha;
  for (double a : base.weights.alpha) {
    if (a > 0.0) nonzero_alpha.push_back(a);
  }
  const double mean_alpha = detail::mean_of(nonzero_alpha);
  const double mean_gamma = detail::mean_of(base.gamma);
  const double mean_beta = detail::mean_of(base.beta);

  if (sc.top_units_by_max_outages > 0 && sc.top_edges_per_unit > 0) {
    if (reference_history.counts.rows() != k) throw ValidationError("reference history does not match the model");
    const auto order = units_by_max_outages(reference_history);
    const auto n_units = std::min(sc.top_units_by_max_outages, k);
    for (std::size_t r = 0; r < n_units; ++r) {
      const auto j = order[r];
      std::vector<std::size_t> edges;
      for (auto e : g.outgoing(j)) {
        if (base.weights.alpha[e] > 0.0) edges.push_back(e);
      }
      std::stable_sort(edges.begin(), edges.end(),
                       [&](std::size_t a, std::size_t b) { return base.weights.alpha[a] > base.weights.alpha[b]; });
      const auto n_edges = std::min(sc.top_edges_per_unit, edges.size());
      for (std::size_t x = 0; x < n_edges; ++x) p.weights.alpha[edges[x]] = mean_alpha;
    }
  }
  if (sc.top_gamma_units > 0) {
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return base.gamma[a] > base.gamma[b]; });
    for (std::size_t r = 0; r < std::min(sc.top_gamma_units, k); ++r) p.gamma[order[r]] = mean_gamma;
  }
  if (sc.bottom_beta_units > 0) {
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return base.beta[a] < base.beta[b]; });
    for (std::size_t r = 0; r < std::min(sc.bottom_beta_units, k); ++r) p.beta[order[r]] = mean_beta;
  }

  for (const auto& rw : sc.edge_reweights) {
    const auto src = detail::resolve_unit(g, rw.source);
    const auto dst = detail::resolve_unit(g, rw.target);
    const auto e = g.find(dst, src);
    if (e == kNoEdge) throw ValidationError("scenario references unknown edge " + rw.source + " -> " + rw.target);
    p.weights.alpha[e] = rw.value ? detail::checked_value(*rw.value, "alpha") : mean_alpha;
  }
  for (const auto& o : sc.gamma_overrides) {
    p.gamma[detail::resolve_unit(g, o.unit)] = o.value ? detail::checked_value(*o.value, "gamma") : mean_gamma;
  }
  for (const auto& o : sc.beta_overrides) {
    p.beta[detail::resolve_unit(g, o.unit)] = o.value ? detail::checked_value(*o.value, "beta") : mean_beta;
  }
  for (const auto& o : sc.omega_overrides) {
    p.decay.omega[detail::resolve_variable(p, o.variable)] = detail::checked_value(o.value, "omega");
  }
  enforce_no_loops_inplace(p.graph, p.weights);
  return p;
}

// ---------------------------------------------------------------------------
// Scenario file (JSON)

inline OverrideValue parse_override_value(const nlohmann::json& v) {
  if (v.is_string()) {
    if (v.get<std::string>() == "mean") return std::nullopt;
    throw ValidationError("override value must be a number or \"mean\"");
  }
  return v.get<double>();
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  try {
    Scenario sc;
    for (const auto& e : j.value("edge_reweights", nlohmann::json::array())) {
      sc.edge_reweights.push_back({e.at("source").get<std::string>(), e.at("target").get<std::string>(),
                                   parse_override_value(e.at("value"))});
    }
    for (const auto& e : j.value("gamma_overrides", nlohmann::json::array())) {
      sc.gamma_overrides.push_back({e.at("unit").get<std::string>(), parse_override_value(e.at("value"))});
    }
    for (const auto& e : j.value("beta_overrides", nlohmann::json::array())) {
      sc.beta_overrides.push_back({e.at("unit").get<std::string>(), parse_override_value(e.at("value"))});
    }
    for (const auto& e : j.value("omega_overrides", nlohmann::json::array())) {
      sc.omega_overrides.push_back({e.at("variable").get<std::string>(), e.at("value").get<double>()});
    }
    sc.top_units_by_max_outages = j.value("top_units_by_max_outages", std::size_t{0});
    sc.top_edges_per_unit = j.value("top_edges_per_unit", std::size_t{0});
    sc.top_gamma_units = j.value("top_gamma_units", std::size_t{0});
    sc.bottom_beta_units = j.value("bottom_beta_units", std::size_t{0});
    return sc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed scenario: ") + e.what());
  }
}

inline Scenario read_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario '" + path.string() + "'");
  try {
    return scenario_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Outage reduction

enum class BaselineMode { SimulatedTotal, ObservedTotal };

struct Reduction {
  double percent = 0.0;
  double std_error = 0.0;
  double baseline_total = 0.0;
  double scenario_total = 0.0;
};

namespace detail {

inline Reduction reduction_from(const SimResult& scenario, const SimResult* baseline, double observed_total) {
  Reduction red;
  red.scenario_total = scenario.mean_total();
  const double r = static_cast<double>(scenario.totals.size());
  if (baseline) {
    red.baseline_total = baseline->mean_total();
    if (!(red.baseline_total > 0.0)) throw NumericError("baseline total is zero; reduction is undefined");
    // common random numbers: standard error of the paired difference
    double mean_d = 0.0;
    for (std::size_t n = 0; n < scenario.totals.size(); ++n) mean_d += baseline->totals[n] - scenario.totals[n];
    mean_d /= r;
    double ss = 0.0;
    for (std::size_t n = 0; n < scenario.totals.size(); ++n) {
      const double d = baseline->totals[n] - scenario.totals[n] - mean_d;
      ss += d * d;
    }
    red.percent = 100.0 * mean_d / red.baseline_total;
    red.std_error = r > 1 ? 100.0 * std::sqrt(ss / (r - 1.0) / r) / red.baseline_total : 0.0;
  } else {
    red.baseline_total = observed_total;
    if (!(red.baseline_total > 0.0)) throw NumericError("observed total is zero; reduction is undefined");
    red.percent = 100.0 * (red.baseline_total - red.scenario_total) / red.baseline_total;
    red.std_error = 100.0 * scenario.std_error_total() / red.baseline_total;
  }
  return red;
}

inline double observed_total(const OutageSeries& s) {
  double total = 0.0;
  for (auto n : s.counts.data()) total += static_cast<double>(n);
  return total;
}

}  // namespace detail

/// Percentage drop in simulated outages under a scenario relative to either
/// the simulated baseline (same seed, paired) or the observed total.
inline Reduction outage_reduction(const ModelParams& base, const Scenario& sc, const Dataset& ds, const SimOptions& opt,
                                  BaselineMode mode = BaselineMode::SimulatedTotal) {
  const auto scenario_params = apply_scenario(base, sc, ds.outages);
  const auto scenario = simulate_paths(scenario_params, ds.weather.values, opt, &ds.outages);
  if (mode == BaselineMode::ObservedTotal) return detail::reduction_from(scenario, nullptr, detail::observed_total(ds.outages));
  const auto baseline = simulate_paths(base, ds.weather.values, opt, &ds.outages);
  return detail::reduction_from(scenario, &baseline, 0.0);
}

enum class SweepKind {
  EdgeCriticality,  // axis1: top units by peak outages, axis2: edges per unit
  MarginRecovery,   // axis1: largest-gamma units, axis2: smallest-beta units
};

struct SweepRow {
  std::size_t axis1 = 0;
  std::size_t axis2 = 0;
  Reduction reduction;
};

/// Evaluates the Cartesian product of two scenario axes, sharing one baseline simulation.
inline std::vector<SweepRow> sweep(const ModelParams& base, const Dataset& ds, SweepKind kind,
                                   const std::vector<std::size_t>& axis1, const std::vector<std::size_t>& axis2,
                                   const SimOptions& opt, BaselineMode mode = BaselineMode::SimulatedTotal,
                                   const Scenario& fixed = {}) {
  if (axis1.empty() || axis2.empty()) throw ValidationError("sweep axes must be non-empty");
  std::optional<SimResult> baseline;
  if (mode == BaselineMode::SimulatedTotal) baseline = simulate_paths(base, ds.weather.values, opt, &ds.outages);
  const double observed = detail::observed_total(ds.outages);
  std::vector<SweepRow> rows;
  for (auto a : axis1) {
    for (auto b : axis2) {
      Scenario sc = fixed;
      if (kind == SweepKind::EdgeCriticality) {
        sc.top_units_by_max_outages = a;
        sc.top_edges_per_unit = b;
      } else {
        sc.top_gamma_units = a;
        sc.bottom_beta_units = b;
      }
      const auto sim = simulate_paths(apply_scenario(base, sc, ds.outages), ds.weather.values, opt, &ds.outages);
      rows.push_back({a, b, detail::reduction_from(sim, baseline ? &*baseline : nullptr, observed)});
    }
  }
  return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "axis1,axis2,reduction_pct,std_err\n";
  for (const auto& r : rows) {
    out << r.axis1 << ',' << r.axis2 << ',' << csv::format_double(r.reduction.percent) << ','
        << csv::format_double(r.reduction.std_error) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace gridshock
