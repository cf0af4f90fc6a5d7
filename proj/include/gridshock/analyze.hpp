#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "gridshock/csv.hpp"
#include "gridshock/error.hpp"
#include "gridshock/ingest.hpp"
#include "gridshock/model.hpp"
#include "gridshock/timeutil.hpp"
#include "gridshock/weather_effect.hpp"

namespace gridshock {

// ---------------------------------------------------------------------------
// Direct / cascade decomposition

struct Decomposition {
  IntensityField field;
  std::vector<double> direct_total;    // per slot, summed over units
  std::vector<double> indirect_total;
  std::vector<double> observed_total;
};

inline Decomposition decompose(const ModelParams& p, const Dataset& ds) {
  Decomposition d{intensity_field(p, ds), {}, {}, {}};
  const auto k = ds.num_units();
  const auto t_count = ds.num_slots();
  d.direct_total.assign(t_count, 0.0);
  d.indirect_total.assign(t_count, 0.0);
  d.observed_total.assign(t_count, 0.0);
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < k; ++i) {
      d.direct_total[t] += d.field.direct(i, t);
      d.indirect_total[t] += d.field.indirect(i, t);
      d.observed_total[t] += static_cast<double>(ds.outages.counts(i, t));
    }
  }
  return d;
}

inline void write_decomposition_csv(const Decomposition& d, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "slot,direct_total,indirect_total,observed_total\n";
  for (std::size_t t = 0; t < d.direct_total.size(); ++t) {
    out << t << ',' << csv::format_double(d.direct_total[t]) << ',' << csv::format_double(d.indirect_total[t]) << ','
        << csv::format_double(d.observed_total[t]) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

/// Expected outages split by lineage. Because the intensity is linear in past
/// counts, the mean path obeys m = D + eps + K * m exactly. `local` follows
/// only the weather term and self-excitation; `neighbour` collects everything
/// that entered through an off-diagonal edge (and its own descendants).
/// `local` is the mean path of the model with all off-diagonal alpha set to zero.
struct LineageSplit {
  Matrix<double> local;
  Matrix<double> neighbour;

  [[nodiscard]] double local_total() const { return std::accumulate(local.data().begin(), local.data().end(), 0.0); }
  [[nodiscard]] double neighbour_total() const {
    return std::accumulate(neighbour.data().begin(), neighbour.data().end(), 0.0);
  }
  [[nodiscard]] double neighbour_share() const {
    const double total = local_total() + neighbour_total();
    return total > 0.0 ? neighbour_total() / total : 0.0;
  }
};

inline LineageSplit expected_lineage(const ModelParams& p, const Tensor3<double>& weather) {
  const auto features = weather_features(p, weather);
  const auto direct = direct_term(p, features);
  const auto k = p.num_units();
  const auto t_count = weather.slots();
  LineageSplit s{Matrix<double>(k, t_count, 0.0), Matrix<double>(k, t_count, 0.0)};
  // beta_j * sum_{lag=1..D} m_{j,t-lag} exp(-beta_j lag)
  auto trigger = [&](const Matrix<double>& m, std::size_t j, std::size_t t) {
    const double q = std::exp(-p.beta[j]);
    double qs = 1.0, acc = 0.0;
    for (std::size_t lag = 1; lag <= std::min(t, p.trigger_lags); ++lag) {
      qs *= q;
      acc += m(j, t - lag) * qs;
    }
    return p.beta[j] * acc;
  };
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < k; ++i) {
      s.local(i, t) = direct(i, t) + p.epsilon + p.weights.self[i] * trigger(s.local, i, t);
      double cross = 0.0;
      for (auto e : p.graph.incoming(i)) {
        const double a = p.weights.alpha[e];
        if (a == 0.0) continue;
        const auto j = p.graph.edge(e).source;
        cross += a * (trigger(s.local, j, t) + trigger(s.neighbour, j, t));
      }
      s.neighbour(i, t) = p.weights.self[i] * trigger(s.neighbour, i, t) + cross;
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Prediction

struct PredictionReport {
  std::size_t horizon = 0;      // 0 for in-sample (teacher-forced at every slot)
  std::size_t first_slot = 0;   // metrics use slots [first_slot, T)
  Matrix<double> predicted;     // K x T; slots before first_slot are left at zero
  Matrix<double> actual;
  double mae = 0.0;
  double rmse = 0.0;
  double persistence_mae = 0.0;  // N_{i,t-max(horizon,1)} as the forecast
  std::vector<double> unit_mae;
};

namespace detail {

inline void score(PredictionReport& r) {
  const auto k = r.actual.rows();
  const auto t_count = r.actual.cols();
  const std::size_t lag = std::max<std::size_t>(r.horizon, 1);
  r.unit_mae.assign(k, 0.0);
  double abs_sum = 0.0, sq_sum = 0.0, pers_sum = 0.0;
  std::size_t n = 0, n_pers = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double unit_sum = 0.0;
    for (std::size_t t = r.first_slot; t < t_count; ++t) {
      const double err = r.predicted(i, t) - r.actual(i, t);
      abs_sum += std::abs(err);
      sq_sum += err * err;
      unit_sum += std::abs(err);
      ++n;
      if (t >= lag) {
        pers_sum += std::abs(r.actual(i, t - lag) - r.actual(i, t));
        ++n_pers;
      }
    }
    const auto cells = t_count - r.first_slot;
    r.unit_mae[i] = cells > 0 ? unit_sum / static_cast<double>(cells) : 0.0;
  }
  r.mae = n > 0 ? abs_sum / static_cast<double>(n) : 0.0;
  r.rmse = n > 0 ? std::sqrt(sq_sum / static_cast<double>(n)) : 0.0;
  r.persistence_mae = n_pers > 0 ? pers_sum / static_cast<double>(n_pers) : 0.0;
}

}  // namespace detail

/// Predicted count = lambda with the observed history at every slot.
inline PredictionReport predict_in_sample(const ModelParams& p, const Dataset& ds) {
  PredictionReport r;
  r.actual = to_real(ds.outages);
  r.predicted = intensity_field(p, r.actual, weather_features(p, ds.weather.values)).lambda;
  detail::score(r);
  return r;
}

/// Forecasts each slot t from observations up to t - horizon; intermediate
/// slots are filled with predicted means (mean rollout). Metrics cover t >= horizon.
inline PredictionReport predict_ahead(const ModelParams& p, const Dataset& ds, std::size_t horizon = 1) {
  const auto t_count = ds.num_slots();
  if (horizon < 1) throw ValidationError("prediction horizon must be at least one slot");
  if (horizon >= t_count) {
    throw ValidationError("prediction horizon " + std::to_string(horizon) + " must be shorter than the " +
                          std::to_string(t_count) + "-slot series");
  }
  const auto k = ds.num_units();
  PredictionReport r;
  r.horizon = horizon;
  r.first_slot = horizon;
  r.actual = to_real(ds.outages);
  r.predicted = Matrix<double>(k, t_count, 0.0);
  const auto direct = direct_term(p, weather_features(p, ds.weather.values));

  // Working history: observed up to the origin, predicted means after it.
  Matrix<double> work = r.actual;
  for (std::size_t origin = 0; origin + horizon < t_count; ++origin) {
    for (std::size_t s = origin + 1; s <= origin + horizon; ++s) {
      for (std::size_t i = 0; i < k; ++i) {
        work(i, s) = direct(i, s) + indirect_at(p, work, i, s) + p.epsilon;
      }
    }
    for (std::size_t i = 0; i < k; ++i) r.predicted(i, origin + horizon) = work(i, origin + horizon);
    for (std::size_t s = origin + 1; s <= origin + horizon; ++s) {
      for (std::size_t i = 0; i < k; ++i) work(i, s) = r.actual(i, s);
    }
  }
  detail::score(r);
  return r;
}

inline void write_predictions_csv(const PredictionReport& r, const std::vector<std::string>& unit_ids,
                                  const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "unit,slot,predicted,actual\n";
  for (std::size_t i = 0; i < r.actual.rows(); ++i) {
    for (std::size_t t = r.first_slot; t < r.actual.cols(); ++t) {
      out << (i < unit_ids.size() ? unit_ids[i] : std::to_string(i)) << ',' << t << ','
          << csv::format_double(r.predicted(i, t)) << ',' << csv::format_double(r.actual(i, t)) << '\n';
    }
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline void write_prediction_metrics_csv(const PredictionReport& r, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "metric,value\n";
  out << "horizon," << r.horizon << '\n';
  out << "mae," << csv::format_double(r.mae) << '\n';
  out << "rmse," << csv::format_double(r.rmse) << '\n';
  out << "persistence_mae," << csv::format_double(r.persistence_mae) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Sigmoid fit of outage ratio against accumulated weather

/// r(v) = L / (1 + exp(-a (v - c)))
struct SigmoidFit {
  std::string variable;
  double a = 1.0;
  double c = 0.0;
  double L = 1.0;
  double rmse = 0.0;
  std::size_t n_points = 0;

  [[nodiscard]] double operator()(double v) const { return L / (1.0 + std::exp(-a * (v - c))); }
};

struct SigmoidPoint {
  double v = 0.0;
  double ratio = 0.0;
};

inline constexpr std::size_t kMinSigmoidPoints = 10;

namespace detail {

inline constexpr double kMinScale = 1e-12;
inline constexpr double kMinAsymptote = 1e-12;

inline double sigmoid_sse(std::span<const SigmoidPoint> pts, double L, double a, double c) {
  double sse = 0.0;
  for (const auto& p : pts) {
    const double r = L / (1.0 + std::exp(-a * (p.v - c))) - p.ratio;
    sse += r * r;
  }
  return sse;
}

inline std::array<double, 3> clamp_sigmoid(std::array<double, 3> x) {
  x[0] = std::clamp(x[0], kMinAsymptote, 1.0);
  x[1] = std::max(x[1], kMinScale);
  x[2] = std::max(x[2], 0.0);
  return x;
}

// Solves the 3x3 symmetric system A x = b by Gaussian elimination with partial pivoting.
inline bool solve3(std::array<std::array<double, 3>, 3> A, std::array<double, 3> b, std::array<double, 3>& x) {
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r) {
      if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
    }
    if (!(std::abs(A[piv][col]) > 0.0)) return false;
    std::swap(A[piv], A[col]);
    std::swap(b[piv], b[col]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = A[r][col] / A[col][col];
      for (int c = col; c < 3; ++c) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  for (int r = 2; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < 3; ++c) s -= A[r][c] * x[c];
    x[r] = s / A[r][r];
  }
  return std::isfinite(x[0]) && std::isfinite(x[1]) && std::isfinite(x[2]);
}

// Projected Levenberg-Marquardt from one start. Returns (L, a, c) and the SSE.
inline std::pair<std::array<double, 3>, double> levenberg_marquardt(std::span<const SigmoidPoint> pts,
                                                                      std::array<double, 3> x) {
  x = clamp_sigmoid(x);
  double sse = sigmoid_sse(pts, x[0], x[1], x[2]);
  double mu = 1e-3;
  for (int iter = 0; iter < 500; ++iter) {
    std::array<std::array<double, 3>, 3> jtj{};
    std::array<double, 3> jtr{};
    for (const auto& p : pts) {
      const double s = 1.0 / (1.0 + std::exp(-x[1] * (p.v - x[2])));
      const double r = x[0] * s - p.ratio;
      const double ds = s * (1.0 - s);
      const std::array<double, 3> j{s, x[0] * ds * (p.v - x[2]), -x[0] * ds * x[1]};
      for (int u = 0; u < 3; ++u) {
        jtr[u] += j[u] * r;
        for (int w = 0; w < 3; ++w) jtj[u][w] += j[u] * j[w];
      }
    }
    bool improved = false;
    for (int attempt = 0; attempt < 30; ++attempt) {
      auto A = jtj;
      for (int u = 0; u < 3; ++u) A[u][u] += mu * std::max(jtj[u][u], 1e-12);
      std::array<double, 3> step{};
      if (!solve3(A, {-jtr[0], -jtr[1], -jtr[2]}, step)) {
        mu *= 10.0;
        continue;
      }
      const auto cand = clamp_sigmoid({x[0] + step[0], x[1] + step[1], x[2] + step[2]});
      const double cand_sse = sigmoid_sse(pts, cand[0], cand[1], cand[2]);
      if (cand_sse < sse) {
        const double gain = sse - cand_sse;
        x = cand;
        sse = cand_sse;
        mu = std::max(mu / 3.0, 1e-15);
        improved = true;
        if (gain <= 1e-15 * std::max(sse, 1e-300) || gain < 1e-30) return {x, sse};
        break;
      }
      mu *= 4.0;
    }
    if (!improved) break;
  }
  return {x, sse};
}

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Multi-start bounded least squares on (v, ratio) points with ratio > 0.
/// Starts: threshold c at 8 quantiles of v, each with two slopes. Best SSE
/// wins; ties keep the earlier start.
inline SigmoidFit fit_sigmoid(std::span<const SigmoidPoint> points, std::string variable = {}) {
  std::vector<SigmoidPoint> pts;
  for (const auto& p : points) {
    if (p.ratio > 0.0 && std::isfinite(p.v) && std::isfinite(p.ratio)) pts.push_back(p);
  }
  if (pts.size() < kMinSigmoidPoints) {
    throw InsufficientDataError("sigmoid fit needs at least " + std::to_string(kMinSigmoidPoints) +
                                " points with positive outage ratio, found " + std::to_string(pts.size()));
  }
  std::vector<double> vs;
  vs.reserve(pts.size());
  double max_ratio = 0.0;
  for (const auto& p : pts) {
    vs.push_back(p.v);
    max_ratio = std::max(max_ratio, p.ratio);
  }
  std::sort(vs.begin(), vs.end());
  const double spread = std::max(vs.back() - vs.front(), 1e-6);
  const double L0 = std::clamp(max_ratio, detail::kMinAsymptote, 1.0);

  std::array<double, 3> best{};
  double best_sse = std::numeric_limits<double>::infinity();
  for (int q = 1; q <= 8; ++q) {
    const double c0 = std::max(detail::quantile_sorted(vs, q / 9.0), 0.0);
    for (double slope : {4.0, 16.0}) {
      auto [x, sse] = detail::levenberg_marquardt(pts, {L0, slope / spread, c0});
      if (sse < best_sse) {
        best_sse = sse;
        best = x;
      }
    }
  }
  SigmoidFit fit;
  fit.variable = std::move(variable);
  fit.L = best[0];
  fit.a = best[1];
  fit.c = best[2];
  fit.n_points = pts.size();
  fit.rmse = std::sqrt(best_sse / static_cast<double>(pts.size()));
  return fit;
}

/// Points (v_{i,t,m}, N_it / customers_i) for variable m over a unit subset
/// (empty = all units). v accumulates raw weather so thresholds stay in
/// physical units.
inline std::vector<SigmoidPoint> sigmoid_points(const Dataset& ds, std::size_t variable, const DecayConfig& cfg,
                                                const std::vector<std::size_t>& population = {}) {
  if (variable >= ds.num_vars()) throw ValidationError("weather variable index out of range");
  const auto acc = accumulate(ds.weather.values, cfg);
  std::vector<std::size_t> units = population;
  if (units.empty()) {
    units.resize(ds.num_units());
    std::iota(units.begin(), units.end(), 0);
  }
  std::vector<SigmoidPoint> pts;
  for (auto i : units) {
    if (i >= ds.num_units()) throw ValidationError("population references unit index out of range");
    const double customers = static_cast<double>(ds.units[i].total_customers);
    if (!(customers > 0.0)) throw ValidationError("unit '" + ds.units[i].unit_id + "' has no customers");
    for (std::size_t t = 0; t < ds.num_slots(); ++t) {
      pts.push_back({acc(i, t, variable), static_cast<double>(ds.outages.counts(i, t)) / customers});
    }
  }
  return pts;
}

inline SigmoidFit fit_sigmoid(const Dataset& ds, std::size_t variable, const DecayConfig& cfg,
                              const std::vector<std::size_t>& population = {}) {
  const auto pts = sigmoid_points(ds, variable, cfg, population);
  return fit_sigmoid(pts, ds.weather.variable_names.at(variable));
}

/// Disruption tolerance capacity: the sigmoid's inflection threshold.
inline double estimate_dtc(const SigmoidFit& fit) { return fit.c; }

inline void write_sigmoid_csv(const std::vector<SigmoidFit>& fits, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "variable,a,c,L,rmse,n_points\n";
  for (const auto& f : fits) {
    out << f.variable << ',' << csv::format_double(f.a) << ',' << csv::format_double(f.c) << ','
        << csv::format_double(f.L) << ',' << csv::format_double(f.rmse) << ',' << f.n_points << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Restoration episodes

inline constexpr std::size_t kDefaultZeroRunThreshold = 2;

struct Episode {
  std::size_t unit = 0;
  std::size_t start_slot = 0;
  std::size_t end_slot = 0;  // inclusive
  std::int64_t max_outage = 0;

  [[nodiscard]] std::size_t duration_slots() const { return end_slot - start_slot + 1; }
};

/// Runs of nonzero slots per unit. Zero gaps shorter than `zero_run_threshold`
/// are absorbed into the surrounding episode.
inline std::vector<Episode> restoration_durations(const OutageSeries& series,
                                                  std::size_t zero_run_threshold = kDefaultZeroRunThreshold) {
  if (zero_run_threshold < 1) throw ValidationError("zero-run threshold must be at least one slot");
  std::vector<Episode> out;
  const auto t_count = series.counts.cols();
  for (std::size_t i = 0; i < series.counts.rows(); ++i) {
    bool open = false;
    Episode ep;
    std::size_t zeros = 0;
    for (std::size_t t = 0; t < t_count; ++t) {
      const auto n = series.counts(i, t);
      if (n > 0) {
        if (!open) {
          ep = Episode{i, t, t, n};
          open = true;
        } else {
          ep.end_slot = t;
          ep.max_outage = std::max(ep.max_outage, n);
        }
        zeros = 0;
      } else if (open && ++zeros >= zero_run_threshold) {
        out.push_back(ep);
        open = false;
      }
    }
    if (open) out.push_back(ep);
  }
  return out;
}

inline std::vector<Episode> restoration_durations(const Dataset& ds,
                                                  std::size_t zero_run_threshold = kDefaultZeroRunThreshold) {
  return restoration_durations(ds.outages, zero_run_threshold);
}

/// Fraction of episodes lasting at most `max_slots`.
inline double fraction_within(const std::vector<Episode>& episodes, std::size_t max_slots) {
  if (episodes.empty()) return 0.0;
  const auto n = std::count_if(episodes.begin(), episodes.end(),
                               [&](const Episode& e) { return e.duration_slots() <= max_slots; });
  return static_cast<double>(n) / static_cast<double>(episodes.size());
}

/// Episode end is reported as the end of its last slot.
inline void write_episodes_csv(const std::vector<Episode>& episodes, const Dataset& ds,
                               const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << "unit,start,end,duration_slots,max_outage\n";
  for (const auto& e : episodes) {
    out << ds.units[e.unit].unit_id << ',' << format_timestamp(ds.grid.slot_start(e.start_slot)) << ','
        << format_timestamp(ds.grid.slot_start(e.end_slot + 1)) << ',' << e.duration_slots() << ',' << e.max_outage
        << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace gridshock
