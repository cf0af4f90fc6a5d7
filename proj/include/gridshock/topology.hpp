#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "gridshock/csv.hpp"
#include "gridshock/error.hpp"
#include "gridshock/graph.hpp"
#include "gridshock/ingest.hpp"
#include "gridshock/model.hpp"

namespace gridshock {

/// Triggered intensity exported along one edge over the history window.
struct EdgeAttribution {
  std::size_t edge = 0;
  std::size_t source = 0;
  std::size_t target = 0;
  double alpha = 0.0;
  double attributed = 0.0;
};

/// Per-edge summands of criticality_scores: alpha_ij * beta_j * sum_t sum_{t'<t} N_jt' exp(-beta_j (t - t')),
/// with lags capped at the model's trigger window.
inline std::vector<EdgeAttribution> edge_attributions(const EdgeWeights& weights, const OutageSeries& history,
                                                      const ModelParams& params) {
  const auto k = params.num_units();
  if (history.counts.rows() != k) throw ValidationError("history unit count differs from graph");
  if (weights.alpha.size() != params.graph.num_edges()) throw ValidationError("edge weights do not match graph");
  const auto counts = to_real(history);
  const auto ex = excitation(counts, params.beta, params.trigger_lags, false);
  std::vector<double> exported(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    double s = 0.0;
    for (std::size_t t = 0; t < counts.cols(); ++t) s += ex.sum(j, t);
    exported[j] = params.beta[j] * s;
  }
  std::vector<EdgeAttribution> out;
  out.reserve(params.graph.num_edges());
  for (std::size_t e = 0; e < params.graph.num_edges(); ++e) {
    const auto& edge = params.graph.edge(e);
    out.push_back({e, edge.source, edge.target, weights.alpha[e], weights.alpha[e] * exported[edge.source]});
  }
  return out;
}

/// Total triggered intensity each unit exports to its direct neighbours.
inline std::vector<double> criticality_scores(const EdgeWeights& weights, const OutageSeries& history,
                                              const ModelParams& params) {
  std::vector<double> scores(params.num_units(), 0.0);
  for (const auto& a : edge_attributions(weights, history, params)) scores[a.source] += a.attributed;
  return scores;
}

inline std::vector<double> criticality_scores(const ModelParams& params, const OutageSeries& history) {
  return criticality_scores(params.weights, history, params);
}

/// Writes `source,target,alpha,attributed_outages` for every edge with positive
/// alpha, largest attribution first (ties by source, then target index).
inline void export_propagation_map(const EdgeWeights& weights, const OutageSeries& history, const ModelParams& params,
                                   const std::filesystem::path& path) {
  auto rows = edge_attributions(weights, history, params);
  std::erase_if(rows, [](const EdgeAttribution& a) { return !(a.alpha > 0.0); });
  std::stable_sort(rows.begin(), rows.end(), [](const EdgeAttribution& x, const EdgeAttribution& y) {
    if (x.attributed != y.attributed) return x.attributed > y.attributed;
    if (x.source != y.source) return x.source < y.source;
    return x.target < y.target;
  });
  std::ofstream out;
  try {
    out = csv::open_output(path);
  } catch (const IoError& e) {
    throw IoError(std::string("propagation map: ") + e.what());
  }
  out << "source,target,alpha,attributed_outages\n";
  for (const auto& r : rows) {
    out << params.graph.node_label(r.source) << ',' << params.graph.node_label(r.target) << ','
        << csv::format_double(r.alpha) << ',' << csv::format_double(r.attributed) << '\n';
  }
  if (!out) throw IoError("propagation map: failed writing '" + path.string() + "'");
}

}  // namespace gridshock
