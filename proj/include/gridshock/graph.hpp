#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "gridshock/error.hpp"
#include "gridshock/ingest.hpp"

namespace gridshock {

inline constexpr std::size_t kNoEdge = static_cast<std::size_t>(-1);

/// Directed influence edge: `target` is influenced by `source`.
struct Edge {
  std::size_t target = 0;
  std::size_t source = 0;

  auto operator<=>(const Edge&) const = default;
};

/// Candidate edge set over K units. Self-influence is implicit and never listed.
class Graph {
 public:
  Graph() = default;
  Graph(std::size_t num_nodes, std::vector<Edge> edges, std::vector<std::string> node_ids = {})
      : num_nodes_(num_nodes), edges_(std::move(edges)), node_ids_(std::move(node_ids)) {
    index();
  }

  [[nodiscard]] std::size_t num_nodes() const { return num_nodes_; }
  [[nodiscard]] std::size_t num_edges() const { return edges_.size(); }
  [[nodiscard]] const std::vector<Edge>& edges() const { return edges_; }
  [[nodiscard]] const Edge& edge(std::size_t e) const { return edges_[e]; }
  [[nodiscard]] const std::vector<std::string>& node_ids() const { return node_ids_; }

  /// Index of the opposite orientation of edge e, or kNoEdge.
  [[nodiscard]] std::size_t reverse(std::size_t e) const { return reverse_[e]; }
  /// Edges whose target is i.
  [[nodiscard]] const std::vector<std::size_t>& incoming(std::size_t i) const { return incoming_[i]; }
  /// Edges whose source is j.
  [[nodiscard]] const std::vector<std::size_t>& outgoing(std::size_t j) const { return outgoing_[j]; }

  [[nodiscard]] std::size_t find(std::size_t target, std::size_t source) const {
    auto it = std::lower_bound(edges_.begin(), edges_.end(), Edge{target, source});
    if (it == edges_.end() || *it != Edge{target, source}) return kNoEdge;
    return static_cast<std::size_t>(it - edges_.begin());
  }

  [[nodiscard]] std::string node_label(std::size_t i) const {
    return i < node_ids_.size() ? node_ids_[i] : std::to_string(i);
  }

  bool operator==(const Graph& other) const {
    return num_nodes_ == other.num_nodes_ && edges_ == other.edges_ && node_ids_ == other.node_ids_;
  }

 private:
  void index() {
    if (!node_ids_.empty() && node_ids_.size() != num_nodes_) {
      throw ValidationError("graph node id list does not match node count");
    }
    std::sort(edges_.begin(), edges_.end());
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      const auto& edge = edges_[e];
      if (edge.target >= num_nodes_ || edge.source >= num_nodes_) throw ValidationError("edge endpoint out of range");
      if (edge.target == edge.source) throw ValidationError("self-edges are implicit and must not be listed");
      if (e > 0 && edges_[e - 1] == edge) throw ValidationError("duplicate edge in candidate graph");
    }
    incoming_.assign(num_nodes_, {});
    outgoing_.assign(num_nodes_, {});
    reverse_.assign(edges_.size(), kNoEdge);
    for (std::size_t e = 0; e < edges_.size(); ++e) {
      incoming_[edges_[e].target].push_back(e);
      outgoing_[edges_[e].source].push_back(e);
      reverse_[e] = find(edges_[e].source, edges_[e].target);
    }
  }

  std::size_t num_nodes_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::string> node_ids_;
  std::vector<std::size_t> reverse_;
  std::vector<std::vector<std::size_t>> incoming_;
  std::vector<std::vector<std::size_t>> outgoing_;
};

/// Learned influence weights: one alpha per candidate edge plus the diagonal,
/// which the model pins to 1.
struct EdgeWeights {
  std::vector<double> alpha;
  std::vector<double> self;

  static EdgeWeights zeros(const Graph& g) {
    return EdgeWeights{std::vector<double>(g.num_edges(), 0.0), std::vector<double>(g.num_nodes(), 1.0)};
  }

  bool operator==(const EdgeWeights&) const = default;
};

/// Great-circle distance between two centroids, in km.
inline double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kEarthRadiusKm = 6371.0088;
  constexpr double kDeg = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * kDeg;
  const double dlon = (lon2 - lon1) * kDeg;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * kDeg) * std::cos(lat2 * kDeg) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

/// Candidate topology: each unit is paired (in both orientations) with its
/// k nearest units by centroid distance, keeping pairs within max_km.
/// Distance ties are broken by lower unit index.
inline Graph build_candidate_graph(const std::vector<UnitMeta>& units, std::size_t k_neighbors, double max_km,
                                   std::vector<std::string>* warnings = nullptr) {
  const std::size_t n = units.size();
  if (n < 2) throw ValidationError("candidate graph needs at least 2 units");
  if (k_neighbors == 0 || k_neighbors >= n) {
    throw ValidationError("k_neighbors must be in [1, K-1], got " + std::to_string(k_neighbors));
  }
  if (!(max_km > 0.0)) throw ValidationError("max_km must be positive");

  std::vector<double> dist(n * n, 0.0);
  bool all_colocated = true;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double d = haversine_km(units[a].lat, units[a].lon, units[b].lat, units[b].lon);
      dist[a * n + b] = dist[b * n + a] = d;
      if (d > 0.0) all_colocated = false;
    }
  }
  if (all_colocated) throw ValidationError("degenerate geometry: all unit centroids coincide");

  std::vector<Edge> edges;
  std::vector<std::size_t> order(n);
  for (std::size_t a = 0; a < n; ++a) {
    order.clear();
    for (std::size_t b = 0; b < n; ++b) {
      if (b != a) order.push_back(b);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return dist[a * n + x] < dist[a * n + y]; });
    for (std::size_t r = 0; r < k_neighbors; ++r) {
      const auto b = order[r];
      if (dist[a * n + b] > max_km) break;
      edges.push_back({a, b});
      edges.push_back({b, a});
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  if (edges.empty() && warnings) {
    warnings->push_back("candidate graph is empty: no neighbour within " + std::to_string(max_km) + " km");
  }
  std::vector<std::string> ids;
  ids.reserve(n);
  for (const auto& u : units) ids.push_back(u.unit_id);
  return Graph(n, std::move(edges), std::move(ids));
}

/// Zeroes the smaller weight of every mutually-positive pair (ties keep the
/// edge whose source index is smaller). Returns the number of weights zeroed.
inline std::size_t enforce_no_loops_inplace(const Graph& g, EdgeWeights& w) {
  std::size_t zeroed = 0;
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    const auto r = g.reverse(e);
    if (r == kNoEdge || r < e) continue;
    double& a = w.alpha[e];
    double& b = w.alpha[r];
    if (!(a > 0.0 && b > 0.0)) continue;
    bool keep_e;
    if (a != b) {
      keep_e = a > b;
    } else {
      keep_e = g.edge(e).source < g.edge(r).source;
    }
    (keep_e ? b : a) = 0.0;
    ++zeroed;
  }
  return zeroed;
}

inline EdgeWeights enforce_no_loops(const Graph& g, EdgeWeights w) {
  enforce_no_loops_inplace(g, w);
  return w;
}

}  // namespace gridshock
