#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gridshock/error.hpp"
#include "gridshock/ingest.hpp"
#include "gridshock/tensor.hpp"

namespace gridshock {

inline constexpr std::size_t kDefaultWindowSlots = 24;

/// Per-variable decay rates and the accumulation window length (in slots).
struct DecayConfig {
  std::vector<double> omega;
  std::size_t window_slots = kDefaultWindowSlots;

  void validate(std::size_t num_vars, std::size_t num_slots) const {
    if (omega.size() != num_vars) throw ValidationError("decay rate count does not match weather variables");
    for (double w : omega) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("decay rates must be finite and non-negative");
    }
    if (window_slots < 1) throw ValidationError("accumulation window must be at least one slot");
    if (window_slots > num_slots) throw ValidationError("accumulation window exceeds the series length");
  }

  bool operator==(const DecayConfig&) const = default;
};

/// z-score transform fitted per weather variable over every (unit, slot) cell.
struct WeatherScaler {
  std::vector<double> mean;
  std::vector<double> scale;

  static WeatherScaler identity(std::size_t num_vars) {
    return WeatherScaler{std::vector<double>(num_vars, 0.0), std::vector<double>(num_vars, 1.0)};
  }

  static WeatherScaler fit(const Tensor3<double>& x) {
    const auto m_count = x.vars();
    WeatherScaler s{std::vector<double>(m_count, 0.0), std::vector<double>(m_count, 1.0)};
    const double n = static_cast<double>(x.units() * x.slots());
    if (n == 0) return s;
    for (std::size_t m = 0; m < m_count; ++m) {
      double sum = 0.0;
      for (std::size_t i = 0; i < x.units(); ++i)
        for (std::size_t t = 0; t < x.slots(); ++t) sum += x(i, t, m);
      const double mean = sum / n;
      double ss = 0.0;
      for (std::size_t i = 0; i < x.units(); ++i)
        for (std::size_t t = 0; t < x.slots(); ++t) ss += (x(i, t, m) - mean) * (x(i, t, m) - mean);
      const double sd = std::sqrt(ss / n);
      s.mean[m] = mean;
      s.scale[m] = sd > 1e-12 ? sd : 1.0;
    }
    return s;
  }

  [[nodiscard]] Tensor3<double> apply(const Tensor3<double>& x) const {
    if (x.vars() != mean.size()) throw ValidationError("scaler dimension does not match weather tensor");
    Tensor3<double> out = x;
    for (std::size_t i = 0; i < x.units(); ++i)
      for (std::size_t t = 0; t < x.slots(); ++t)
        for (std::size_t m = 0; m < x.vars(); ++m) out(i, t, m) = (x(i, t, m) - mean[m]) / scale[m];
    return out;
  }

  bool operator==(const WeatherScaler&) const = default;
};

struct AccumulatedWeather {
  Tensor3<double> value;      // v_{i,t,m}
  Tensor3<double> d_d_omega;  // dv_{i,t,m} / d omega_m
};

namespace detail {

template <bool WithGrad>
void accumulate_impl(const Tensor3<double>& x, const DecayConfig& cfg, Tensor3<double>& v, Tensor3<double>* dv) {
  const auto k = x.units();
  const auto t_count = x.slots();
  const auto m_count = x.vars();
  if (cfg.omega.size() != m_count) throw ValidationError("decay rate count does not match weather variables");
  if (cfg.window_slots < 1) throw ValidationError("accumulation window must be at least one slot");
  const std::size_t window = cfg.window_slots;

  std::vector<double> decay(window * m_count);
  for (std::size_t m = 0; m < m_count; ++m)
    for (std::size_t lag = 0; lag < window; ++lag)
      decay[m * window + lag] = std::exp(-cfg.omega[m] * static_cast<double>(lag));

  v = Tensor3<double>(k, t_count, m_count, 0.0);
  if constexpr (WithGrad) *dv = Tensor3<double>(k, t_count, m_count, 0.0);

  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t m = 0; m < m_count; ++m) {
      for (std::size_t t = 0; t < t_count; ++t) {
        const double xt = x(i, t, m);
        if (std::isnan(xt)) {
          throw NumericError("NaN weather input at unit " + std::to_string(i) + ", slot " + std::to_string(t) +
                             ", variable " + std::to_string(m));
        }
        const std::size_t lags = std::min(window, t + 1);
        double acc = 0.0;
        double grad = 0.0;
        for (std::size_t lag = 0; lag < lags; ++lag) {
          const double term = x(i, t - lag, m) * decay[m * window + lag];
          acc += term;
          if constexpr (WithGrad) grad -= static_cast<double>(lag) * term;
        }
        v(i, t, m) = acc;
        if constexpr (WithGrad) (*dv)(i, t, m) = grad;
      }
    }
  }
}

}  // namespace detail

/// Cumulative weather effect: exponentially discounted sum of the last
/// `window_slots` values, truncated at the start of the series.
inline Tensor3<double> accumulate(const Tensor3<double>& x, const DecayConfig& cfg) {
  Tensor3<double> v;
  detail::accumulate_impl<false>(x, cfg, v, nullptr);
  return v;
}

inline Tensor3<double> accumulate(const WeatherTensor& weather, const DecayConfig& cfg) {
  return accumulate(weather.values, cfg);
}

/// accumulate() together with the sensitivity of every cell to its variable's decay rate.
inline AccumulatedWeather accumulate_with_grad(const Tensor3<double>& x, const DecayConfig& cfg) {
  AccumulatedWeather out;
  detail::accumulate_impl<true>(x, cfg, out.value, &out.d_d_omega);
  return out;
}

inline AccumulatedWeather accumulate_with_grad(const WeatherTensor& weather, const DecayConfig& cfg) {
  return accumulate_with_grad(weather.values, cfg);
}

}  // namespace gridshock
