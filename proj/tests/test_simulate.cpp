#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gridshock/analyze.hpp"
#include "gridshock/simulate.hpp"
#include "support/synthetic.hpp"

using namespace gridshock;

namespace {

// K units, one weather variable, no cross edges unless added, zero network.
ModelParams bare(std::size_t k, double gamma, double beta) {
  ModelParams p;
  p.graph = Graph(k, {});
  p.weights = EdgeWeights::zeros(p.graph);
  p.beta.assign(k, beta);
  p.gamma.assign(k, gamma);
  p.decay = DecayConfig{{0.0}, 1};
  p.mlp = MlpParams::zeros(1, {2});
  p.scaler = WeatherScaler::identity(1);
  return p;
}

// Three units a, b, c on the complete graph with alpha(a<-b) = 0.6,
// alpha(c<-b) = 0.3, alpha(c<-a) = 0.2.
struct Toy {
  Dataset ds;
  ModelParams p;
};

Toy three_unit_toy() {
  Toy t;
  t.ds = synth::empty_dataset({{"a", 42.0, -71.0, 10}, {"b", 42.1, -71.0, 10}, {"c", 42.2, -71.0, 10}}, 12, 1);
  t.p = bare(3, 0.5, 1.0);
  t.p.graph = synth::complete_graph(t.ds.units);
  t.p.weights = EdgeWeights::zeros(t.p.graph);
  t.p.weights.alpha[t.p.graph.find(0, 1)] = 0.6;
  t.p.weights.alpha[t.p.graph.find(2, 1)] = 0.3;
  t.p.weights.alpha[t.p.graph.find(2, 0)] = 0.2;
  t.p.validate();
  t.ds.outages.counts(0, 3) = 4;
  t.ds.outages.counts(1, 5) = 9;  // b has the largest peak
  t.ds.outages.counts(2, 7) = 2;
  return t;
}

}  // namespace

TEST(SimulatePaths, FloorOnlyProcessMean) {
  auto p = bare(1, 0.0, 0.0);
  Tensor3<double> weather(1, 100, 1, 0.0);
  SimOptions opt;
  opt.replications = 10000;
  opt.seed = 12;
  const auto r = simulate_paths(p, weather, opt);
  EXPECT_LE(std::abs(r.mean_total() - 100 * p.epsilon), 3 * r.std_error_total());
  EXPECT_GT(r.std_error_total(), 0.0);
}

TEST(SimulatePaths, TeacherForcedSingleLag) {
  auto p = bare(1, 0.0, 1.0);
  Tensor3<double> weather(1, 2, 1, 0.0);
  OutageSeries obs{Matrix<std::int64_t>(1, 2, 0)};
  obs.counts(0, 0) = 10;
  SimOptions opt;
  opt.replications = 10000;
  opt.seed = 99;
  opt.history = HistoryMode::teacher_forced(1);
  const auto r = simulate_paths(p, weather, opt, &obs);
  EXPECT_EQ(r.cell_mean(0, 0), 10.0);
  const double expect = 10 * std::exp(-1.0) + p.epsilon;
  EXPECT_LE(std::abs(r.cell_mean(0, 1) - expect), 3 * r.cell_std_error(0, 1));
}

TEST(SimulatePaths, OneStepMeansMatchIntensity) {
  auto inst = synth::random_small(61, 3, 20, 2, {4});
  SimOptions opt;
  opt.replications = 100000;
  opt.seed = 5;
  opt.history = HistoryMode::one_step();
  const auto r = simulate_paths(inst.params, inst.ds.weather.values, opt, &inst.ds.outages);
  const auto lam = intensity_field(inst.params, inst.ds).lambda;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 20; ++t) EXPECT_LE(std::abs(r.cell_mean(i, t) - lam(i, t)), 4 * r.cell_std_error(i, t));
}

TEST(SimulatePaths, SameSeedSamePaths) {
  auto inst = synth::random_small(62, 3, 15, 2, {4});
  SimOptions opt;
  opt.replications = 20;
  opt.seed = 8;
  opt.keep_paths = true;
  const auto a = simulate_paths(inst.params, inst.ds.weather.values, opt);
  const auto b = simulate_paths(inst.params, inst.ds.weather.values, opt);
  EXPECT_EQ(a.paths, b.paths);
  EXPECT_EQ(a.totals, b.totals);
  opt.seed = 9;
  EXPECT_NE(simulate_paths(inst.params, inst.ds.weather.values, opt).paths, a.paths);
}

TEST(SimulatePaths, ThreadCountDoesNotChangeResult) {
  auto inst = synth::random_small(63, 3, 15, 2, {4});
  SimOptions opt;
  opt.replications = 37;
  opt.seed = 2;
  const auto a = simulate_paths(inst.params, inst.ds.weather.values, opt);
  opt.threads = 4;
  const auto b = simulate_paths(inst.params, inst.ds.weather.values, opt);
  EXPECT_EQ(a.totals, b.totals);
  EXPECT_EQ(a.cell_sum, b.cell_sum);
  EXPECT_EQ(a.cell_sum_sq, b.cell_sum_sq);
}

TEST(SimulatePaths, TotalsEqualPathSums) {
  auto inst = synth::random_small(64, 3, 10, 1, {3});
  SimOptions opt;
  opt.replications = 5;
  opt.keep_paths = true;
  const auto r = simulate_paths(inst.params, inst.ds.weather.values, opt);
  for (std::size_t n = 0; n < 5; ++n) {
    double s = 0;
    for (auto v : r.paths[n].data()) s += static_cast<double>(v);
    EXPECT_EQ(s, r.totals[n]);
  }
}

TEST(SimulatePaths, ExplosiveIntensityNamesTheCell) {
  auto p = bare(1, 0.0, 0.1);
  p.weights.self = {1.0};
  Tensor3<double> weather(1, 30, 1, 0.0);
  OutageSeries obs{Matrix<std::int64_t>(1, 30, 0)};
  obs.counts(0, 0) = 2'000'000'000'000;
  SimOptions opt;
  opt.replications = 1;
  opt.history = HistoryMode::teacher_forced(1);
  try {
    simulate_paths(p, weather, opt, &obs);
    FAIL() << "expected divergence";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("unit 0"), std::string::npos) << e.what();
  }
}

TEST(SimulatePaths, RejectsBadOptions) {
  auto p = bare(1, 0.0, 1.0);
  Tensor3<double> weather(1, 5, 1, 0.0);
  SimOptions opt;
  opt.replications = 0;
  EXPECT_THROW(simulate_paths(p, weather, opt), ValidationError);
  opt.replications = 1;
  opt.history = HistoryMode::teacher_forced(2);
  EXPECT_THROW(simulate_paths(p, weather, opt), ValidationError);
}

TEST(Scenario, EmptyScenarioIsIdentity) {
  auto inst = synth::random_small(71, 4, 10, 2, {4});
  EXPECT_EQ(apply_scenario(inst.params, Scenario{}, inst.ds.outages), inst.params);
}

TEST(Scenario, TopUnitTopEdgesToMean) {
  auto toy = three_unit_toy();
  const auto& g = toy.p.graph;
  Scenario sc;
  sc.top_units_by_max_outages = 1;
  sc.top_edges_per_unit = 2;
  const auto q = apply_scenario(toy.p, sc, toy.ds.outages);
  const double mean = (0.6 + 0.3 + 0.2) / 3;
  EXPECT_DOUBLE_EQ(q.weights.alpha[g.find(0, 1)], mean);
  EXPECT_DOUBLE_EQ(q.weights.alpha[g.find(2, 1)], mean);
  EXPECT_DOUBLE_EQ(q.weights.alpha[g.find(2, 0)], 0.2);
  EXPECT_EQ(toy.p.weights.alpha[g.find(0, 1)], 0.6);  // original untouched

  sc.top_edges_per_unit = 1;
  const auto q1 = apply_scenario(toy.p, sc, toy.ds.outages);
  EXPECT_DOUBLE_EQ(q1.weights.alpha[g.find(0, 1)], mean);
  EXPECT_DOUBLE_EQ(q1.weights.alpha[g.find(2, 1)], 0.3);
}

TEST(Scenario, GammaMeanFlattensAllUnits) {
  auto inst = synth::random_small(72, 4, 10, 2, {4});
  Scenario sc;
  for (const auto& u : inst.ds.units) sc.gamma_overrides.push_back({u.unit_id, std::nullopt});
  const auto q = apply_scenario(inst.params, sc, inst.ds.outages);
  const double mean = (inst.params.gamma[0] + inst.params.gamma[1] + inst.params.gamma[2] + inst.params.gamma[3]) / 4;
  for (double g : q.gamma) EXPECT_NEAR(g, mean, 1e-15);
}

TEST(Scenario, UnknownReferencesAndNegativeValuesRejected) {
  auto toy = three_unit_toy();
  Scenario sc;
  sc.gamma_overrides.push_back({"zz", 1.0});
  EXPECT_THROW(apply_scenario(toy.p, sc, toy.ds.outages), ValidationError);
  sc = {};
  sc.edge_reweights.push_back({"a", "q", 0.1});
  EXPECT_THROW(apply_scenario(toy.p, sc, toy.ds.outages), ValidationError);
  sc = {};
  sc.beta_overrides.push_back({"a", -1.0});
  EXPECT_THROW(apply_scenario(toy.p, sc, toy.ds.outages), ValidationError);
}

TEST(Scenario, ResultAlwaysSatisfiesConstraints) {
  auto toy = three_unit_toy();
  Scenario sc;
  sc.edge_reweights.push_back({"a", "b", 0.9});  // reverse of b -> a
  sc.top_gamma_units = 2;
  sc.bottom_beta_units = 1;
  const auto q = apply_scenario(toy.p, sc, toy.ds.outages);
  EXPECT_NO_THROW(q.validate());
  EXPECT_DOUBLE_EQ(q.weights.alpha[q.graph.find(1, 0)], 0.9);
  EXPECT_EQ(q.weights.alpha[q.graph.find(0, 1)], 0.0);
}

TEST(Scenario, JsonForm) {
  const auto j = nlohmann::json::parse(R"({
    "edge_reweights": [{"source": "b", "target": "a", "value": "mean"}],
    "gamma_overrides": [{"unit": "c", "value": 0.25}],
    "omega_overrides": [{"variable": "w0", "value": 2.0}],
    "top_units_by_max_outages": 3
  })");
  const auto sc = scenario_from_json(j);
  ASSERT_EQ(sc.edge_reweights.size(), 1u);
  EXPECT_FALSE(sc.edge_reweights[0].value.has_value());
  EXPECT_EQ(*sc.gamma_overrides[0].value, 0.25);
  EXPECT_EQ(sc.top_units_by_max_outages, 3u);
  auto toy = three_unit_toy();
  toy.p.variable_names = {"w0"};
  const auto q = apply_scenario(toy.p, sc, toy.ds.outages);
  EXPECT_EQ(q.decay.omega[0], 2.0);
  EXPECT_EQ(q.gamma[2], 0.25);
  EXPECT_THROW(scenario_from_json(nlohmann::json::parse(R"({"gamma_overrides": [{"unit": "c", "value": "max"}]})")),
               ValidationError);
}

TEST(Reduction, IdentityScenarioIsExactlyZero) {
  auto inst = synth::random_small(81, 3, 20, 2, {4});
  SimOptions opt;
  opt.replications = 200;
  opt.seed = 4;
  const auto r = outage_reduction(inst.params, Scenario{}, inst.ds, opt);
  EXPECT_EQ(r.percent, 0.0);
  EXPECT_EQ(r.std_error, 0.0);
}

TEST(Reduction, ZeroBaselineIsUndefined) {
  auto toy = three_unit_toy();
  for (auto& n : toy.ds.outages.counts.data()) n = 0;
  SimOptions opt;
  opt.replications = 3;
  EXPECT_THROW(outage_reduction(toy.p, Scenario{}, toy.ds, opt, BaselineMode::ObservedTotal), NumericError);
}

TEST(Reduction, LoweringAnyAlphaNeverIncreasesOutages) {
  for (std::uint64_t seed : {91u, 92u, 93u}) {
    auto inst = synth::random_small(seed, 3, 25, 1, {3});
    SimOptions opt;
    opt.replications = 400;
    opt.seed = seed;
    for (std::size_t e = 0; e < inst.params.graph.num_edges(); ++e) {
      if (inst.params.weights.alpha[e] == 0.0) continue;
      const auto& edge = inst.params.graph.edge(e);
      Scenario sc;
      sc.edge_reweights.push_back({inst.ds.units[edge.source].unit_id, inst.ds.units[edge.target].unit_id,
                                   inst.params.weights.alpha[e] / 2});
      const auto r = outage_reduction(inst.params, sc, inst.ds, opt);
      EXPECT_GE(r.percent, -3 * r.std_error) << "seed " << seed << " edge " << e;
    }
  }
}

TEST(Reduction, RemovingCrossEdgesMatchesNeighbourShare) {
  auto inst = synth::random_small(95, 4, 30, 1, {3});
  SimOptions opt;
  opt.replications = 4000;
  opt.seed = 1;
  Scenario sc;
  for (std::size_t e = 0; e < inst.params.graph.num_edges(); ++e) {
    const auto& edge = inst.params.graph.edge(e);
    if (inst.params.weights.alpha[e] > 0)
      sc.edge_reweights.push_back({inst.ds.units[edge.source].unit_id, inst.ds.units[edge.target].unit_id, 0.0});
  }
  const auto r = outage_reduction(inst.params, sc, inst.ds, opt);
  const auto split = expected_lineage(inst.params, inst.ds.weather.values);
  EXPECT_GT(split.neighbour_share(), 0.0);
  EXPECT_LE(std::abs(r.percent - 100 * split.neighbour_share()), 3 * r.std_error)
      << r.percent << " vs " << 100 * split.neighbour_share();
}

TEST(Sweep, SingleCellEqualsDirectCall) {
  auto toy = three_unit_toy();
  SimOptions opt;
  opt.replications = 300;
  opt.seed = 3;
  const auto rows = sweep(toy.p, toy.ds, SweepKind::EdgeCriticality, {1}, {2}, opt);
  ASSERT_EQ(rows.size(), 1u);
  Scenario sc;
  sc.top_units_by_max_outages = 1;
  sc.top_edges_per_unit = 2;
  const auto r = outage_reduction(toy.p, sc, toy.ds, opt);
  EXPECT_EQ(rows[0].reduction.percent, r.percent);
  EXPECT_EQ(rows[0].reduction.std_error, r.std_error);
}

TEST(Sweep, IdentityPointIsZero) {
  auto toy = three_unit_toy();
  SimOptions opt;
  opt.replications = 100;
  const auto rows = sweep(toy.p, toy.ds, SweepKind::MarginRecovery, {0, 1}, {0, 1}, opt);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].axis1, 0u);
  EXPECT_EQ(rows[0].axis2, 0u);
  EXPECT_EQ(rows[0].reduction.percent, 0.0);
}

TEST(Sweep, ChainReductionGrowsWithEdgeCount) {
  // Unit 0 exports to units 1..4 with decreasing weights far above the mean target.
  auto ds = synth::empty_dataset({{"h", 42.0, -71.0, 10}, {"p", 42.1, -71.0, 10}, {"q", 42.2, -71.0, 10},
                                  {"r", 42.3, -71.0, 10}, {"s", 42.4, -71.0, 10}, {"x", 42.5, -71.0, 10}},
                                 40, 1);
  auto p = bare(6, 0.0, 1.0);
  p.graph = Graph(6, {{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 2}});
  p.weights = EdgeWeights::zeros(p.graph);
  p.weights.alpha = {0.9, 0.85, 0.8, 0.75, 0.05};  // nonzero mean 0.67
  p.gamma[0] = 3.0;
  ds.outages.counts(0, 5) = 20;
  SimOptions opt;
  opt.replications = 2000;
  opt.seed = 6;
  const auto rows = sweep(p, ds, SweepKind::EdgeCriticality, {1}, {1, 2, 3, 4}, opt);
  for (std::size_t n = 1; n < rows.size(); ++n) EXPECT_GE(rows[n].reduction.percent, rows[n - 1].reduction.percent);
  EXPECT_GT(rows.back().reduction.percent, 0.0);
}

TEST(Sweep, CsvLayout) {
  auto toy = three_unit_toy();
  SimOptions opt;
  opt.replications = 10;
  const auto rows = sweep(toy.p, toy.ds, SweepKind::EdgeCriticality, {1, 2}, {1}, opt);
  const auto path = std::filesystem::temp_directory_path() / "gridshock_sweep_test.csv";
  write_sweep_csv(rows, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "axis1,axis2,reduction_pct,std_err");
  int lines = 0;
  for (std::string l; std::getline(in, l);) ++lines;
  EXPECT_EQ(lines, 2);
}
