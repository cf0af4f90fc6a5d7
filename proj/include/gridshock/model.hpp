#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridshock/error.hpp"
#include "gridshock/graph.hpp"
#include "gridshock/ingest.hpp"
#include "gridshock/mlp.hpp"
#include "gridshock/tensor.hpp"
#include "gridshock/weather_effect.hpp"

namespace gridshock {

inline constexpr const char* kModelSchema = "gridshock-model-v1";
inline constexpr std::size_t kDefaultTriggerLags = 40;
inline constexpr double kDefaultIntensityFloor = 1e-3;

/// Full parameter set of the outage intensity model.
struct ModelParams {
  Graph graph;
  EdgeWeights weights;          // alpha per candidate edge, self pinned to 1
  std::vector<double> beta;     // per-unit recovery rate
  std::vector<double> gamma;    // per-unit design-margin coefficient
  DecayConfig decay;            // omega per variable, window d
  MlpParams mlp;                // weather response
  WeatherScaler scaler;
  std::vector<std::string> variable_names;
  double epsilon = kDefaultIntensityFloor;
  std::size_t trigger_lags = kDefaultTriggerLags;

  [[nodiscard]] std::size_t num_units() const { return graph.num_nodes(); }
  [[nodiscard]] std::size_t num_vars() const { return decay.omega.size(); }

  /// Shape checks plus domain constraints: non-negativity, pinned diagonal, no two-unit loops.
  void validate() const {
    const auto k = num_units();
    const auto m = num_vars();
    if (weights.alpha.size() != graph.num_edges() || weights.self.size() != k) {
      throw ValidationError("edge weights do not match graph");
    }
    if (beta.size() != k || gamma.size() != k) throw ValidationError("per-unit parameter length differs from K");
    if (mlp.input_size() != m) throw ValidationError("network input size differs from number of weather variables");
    if (scaler.mean.size() != m || scaler.scale.size() != m) throw ValidationError("scaler dimension differs from M");
    if (!variable_names.empty() && variable_names.size() != m) throw ValidationError("variable name count differs from M");
    if (!(epsilon > 0.0)) throw ValidationError("intensity floor must be positive");
    if (decay.window_slots < 1) throw ValidationError("accumulation window must be at least one slot");
    auto nonneg = [](const std::vector<double>& v, const char* what) {
      for (double x : v) {
        if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError(std::string(what) + " must be finite and non-negative");
      }
    };
    nonneg(weights.alpha, "alpha");
    nonneg(beta, "beta");
    nonneg(gamma, "gamma");
    nonneg(decay.omega, "omega");
    for (double s : weights.self) {
      if (s != 1.0) throw ValidationError("self-influence weights must equal 1");
    }
    for (std::size_t e = 0; e < graph.num_edges(); ++e) {
      const auto r = graph.reverse(e);
      if (r != kNoEdge && weights.alpha[e] > 0.0 && weights.alpha[r] > 0.0) {
        throw ValidationError("alpha has a two-unit loop between units " + std::to_string(graph.edge(e).target) +
                              " and " + std::to_string(graph.edge(e).source));
      }
    }
  }

  bool operator==(const ModelParams&) const = default;
};

/// Intensity with its direct (weather) and indirect (triggered) parts; lambda = direct + indirect + epsilon.
struct IntensityField {
  Matrix<double> lambda;
  Matrix<double> direct;
  Matrix<double> indirect;
};

struct CellIntensity {
  double lambda = 0.0;
  double direct = 0.0;
  double indirect = 0.0;
};

inline Matrix<double> to_real(const OutageSeries& series) {
  Matrix<double> out(series.counts.rows(), series.counts.cols());
  for (std::size_t n = 0; n < out.size(); ++n) out.data()[n] = static_cast<double>(series.counts.data()[n]);
  return out;
}

inline void check_history(const ModelParams& p, const Matrix<double>& history) {
  if (history.rows() != p.num_units()) throw ValidationError("history has " + std::to_string(history.rows()) +
                                                             " units, model has " + std::to_string(p.num_units()));
}

/// Standardised, accumulated weather features for the model.
inline Tensor3<double> weather_features(const ModelParams& p, const Tensor3<double>& raw) {
  if (raw.units() != p.num_units() || raw.vars() != p.num_vars()) {
    throw ValidationError("weather tensor does not match model dimensions");
  }
  return accumulate(p.scaler.apply(raw), p.decay);
}

inline AccumulatedWeather weather_features_with_grad(const ModelParams& p, const Tensor3<double>& raw) {
  if (raw.units() != p.num_units() || raw.vars() != p.num_vars()) {
    throw ValidationError("weather tensor does not match model dimensions");
  }
  return accumulate_with_grad(p.scaler.apply(raw), p.decay);
}

/// gamma_i * mu(v_it) for every cell.
inline Matrix<double> direct_term(const ModelParams& p, const Tensor3<double>& features) {
  Matrix<double> out(features.units(), features.slots(), 0.0);
  for (std::size_t i = 0; i < features.units(); ++i) {
    if (p.gamma[i] == 0.0) continue;
    for (std::size_t t = 0; t < features.slots(); ++t) out(i, t) = p.gamma[i] * mlp_forward(p.mlp, features.cell(i, t));
  }
  return out;
}

/// Discounted past counts per unit:
///   sum(t) = sum_{s=1..D} N_{t-s} q^s,  lag_sum(t) = sum_{s=1..D} s N_{t-s} q^s,  q = exp(-beta).
/// Evaluated with the rolling recursion
///   sum(t) = q (sum(t-1) + N_{t-1}) - q^{D+1} N_{t-1-D}
///   lag_sum(t) = q (lag_sum(t-1) + sum(t-1) + N_{t-1}) - (D+1) q^{D+1} N_{t-1-D}.
struct Excitation {
  Matrix<double> sum;
  Matrix<double> lag_sum;
};

inline Excitation excitation(const Matrix<double>& history, const std::vector<double>& beta, std::size_t lags,
                             bool with_lag_sum = true) {
  const auto k = history.rows();
  const auto t_count = history.cols();
  Excitation ex{Matrix<double>(k, t_count, 0.0), with_lag_sum ? Matrix<double>(k, t_count, 0.0) : Matrix<double>()};
  const double d1 = static_cast<double>(lags + 1);
  for (std::size_t j = 0; j < k; ++j) {
    const double q = std::exp(-beta[j]);
    const double q_tail = std::exp(-beta[j] * d1);
    double s = 0.0;
    double r = 0.0;
    for (std::size_t t = 1; t < t_count; ++t) {
      const double n_prev = history(j, t - 1);
      double s_next = q * (s + n_prev);
      double r_next = q * (r + s + n_prev);
      if (t >= lags + 1) {
        const double dropped = history(j, t - 1 - lags);
        s_next -= q_tail * dropped;
        r_next -= d1 * q_tail * dropped;
      }
      // Clamp tiny negative residue from cancellation.
      s = s_next > 0.0 ? s_next : 0.0;
      r = r_next > 0.0 ? r_next : 0.0;
      ex.sum(j, t) = s;
      if (with_lag_sum) ex.lag_sum(j, t) = r;
    }
  }
  return ex;
}

/// Triggered intensity sum_{t'<t} sum_j alpha_ij N_jt' beta_j exp(-beta_j (t - t')) from an excitation table.
inline double indirect_from_excitation(const ModelParams& p, const Excitation& ex, std::size_t i, std::size_t t) {
  double acc = p.weights.self[i] * p.beta[i] * ex.sum(i, t);
  for (auto e : p.graph.incoming(i)) {
    const double a = p.weights.alpha[e];
    if (a == 0.0) continue;
    const auto j = p.graph.edge(e).source;
    acc += a * p.beta[j] * ex.sum(j, t);
  }
  return acc;
}

/// Triggered intensity for one cell by direct summation over lags.
inline double indirect_at(const ModelParams& p, const Matrix<double>& history, std::size_t i, std::size_t t) {
  const std::size_t max_lag = std::min(t, p.trigger_lags);
  auto unit_sum = [&](std::size_t j) {
    const double q = std::exp(-p.beta[j]);
    double qs = 1.0;
    double acc = 0.0;
    for (std::size_t s = 1; s <= max_lag; ++s) {
      qs *= q;
      acc += history(j, t - s) * qs;
    }
    return p.beta[j] * acc;
  };
  double acc = p.weights.self[i] * unit_sum(i);
  for (auto e : p.graph.incoming(i)) {
    const double a = p.weights.alpha[e];
    if (a != 0.0) acc += a * unit_sum(p.graph.edge(e).source);
  }
  return acc;
}

/// Intensity of a single cell given accumulated features and the count history.
inline CellIntensity intensity(const ModelParams& p, const Matrix<double>& history, const Tensor3<double>& features,
                               std::size_t i, std::size_t t) {
  check_history(p, history);
  if (i >= p.num_units() || t >= features.slots()) throw ValidationError("cell index out of range");
  CellIntensity c;
  c.direct = p.gamma[i] == 0.0 ? 0.0 : p.gamma[i] * mlp_forward(p.mlp, features.cell(i, t));
  c.indirect = indirect_at(p, history, i, t);
  c.lambda = c.direct + c.indirect + p.epsilon;
  return c;
}

/// Intensity over every (unit, slot) with observed history.
inline IntensityField intensity_field(const ModelParams& p, const Matrix<double>& history,
                                      const Tensor3<double>& features) {
  check_history(p, history);
  if (features.units() != p.num_units() || features.slots() != history.cols()) {
    throw ValidationError("feature tensor does not match history");
  }
  const auto k = history.rows();
  const auto t_count = history.cols();
  IntensityField f{Matrix<double>(k, t_count), direct_term(p, features), Matrix<double>(k, t_count)};
  const auto ex = excitation(history, p.beta, p.trigger_lags, false);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t t = 0; t < t_count; ++t) {
      f.indirect(i, t) = indirect_from_excitation(p, ex, i, t);
      f.lambda(i, t) = f.direct(i, t) + f.indirect(i, t) + p.epsilon;
    }
  }
  return f;
}

inline IntensityField intensity_field(const ModelParams& p, const Dataset& ds) {
  return intensity_field(p, to_real(ds.outages), weather_features(p, ds.weather.values));
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json model_to_json(const ModelParams& p) {
  nlohmann::json j;
  j["schema"] = kModelSchema;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : p.graph.edges()) edges.push_back({e.target, e.source});
  j["graph"] = {{"num_nodes", p.graph.num_nodes()}, {"node_ids", p.graph.node_ids()}, {"edges", edges}};
  j["alpha"] = p.weights.alpha;
  j["self"] = p.weights.self;
  j["beta"] = p.beta;
  j["gamma"] = p.gamma;
  j["omega"] = p.decay.omega;
  j["window_slots"] = p.decay.window_slots;
  j["trigger_lags"] = p.trigger_lags;
  j["epsilon"] = p.epsilon;
  j["variables"] = p.variable_names;
  j["scaler"] = {{"mean", p.scaler.mean}, {"scale", p.scaler.scale}};
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : p.mlp.layers) {
    layers.push_back({{"inputs", l.inputs},
                      {"outputs", l.outputs},
                      {"activation", activation_name(l.activation)},
                      {"weights", l.weights},
                      {"bias", l.bias}});
  }
  j["mlp"] = layers;
  return j;
}

inline ModelParams model_from_json(const nlohmann::json& j) {
  try {
    const auto schema = j.at("schema").get<std::string>();
    if (schema != kModelSchema) {
      throw IncompatibleVersionError("model file version '" + schema + "' is incompatible with supported version '" +
                                     kModelSchema + "'");
    }
    ModelParams p;
    const auto& g = j.at("graph");
    std::vector<Edge> edges;
    for (const auto& e : g.at("edges")) edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>()});
    p.graph = Graph(g.at("num_nodes").get<std::size_t>(), std::move(edges),
                    g.at("node_ids").get<std::vector<std::string>>());
    p.weights.alpha = j.at("alpha").get<std::vector<double>>();
    p.weights.self = j.at("self").get<std::vector<double>>();
    p.beta = j.at("beta").get<std::vector<double>>();
    p.gamma = j.at("gamma").get<std::vector<double>>();
    p.decay.omega = j.at("omega").get<std::vector<double>>();
    p.decay.window_slots = j.at("window_slots").get<std::size_t>();
    p.trigger_lags = j.at("trigger_lags").get<std::size_t>();
    p.epsilon = j.at("epsilon").get<double>();
    p.variable_names = j.at("variables").get<std::vector<std::string>>();
    p.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
    p.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
    for (const auto& l : j.at("mlp")) {
      MlpLayer layer;
      layer.inputs = l.at("inputs").get<std::size_t>();
      layer.outputs = l.at("outputs").get<std::size_t>();
      layer.activation = parse_activation(l.at("activation").get<std::string>());
      layer.weights = l.at("weights").get<std::vector<double>>();
      layer.bias = l.at("bias").get<std::vector<double>>();
      if (layer.weights.size() != layer.inputs * layer.outputs || layer.bias.size() != layer.outputs) {
        throw ParseError("network layer arrays do not match declared sizes");
      }
      p.mlp.layers.push_back(std::move(layer));
    }
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

inline void serialize(const ModelParams& p, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << model_to_json(p).dump() << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline ModelParams deserialize(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  return model_from_json(j);
}

}  // namespace gridshock
