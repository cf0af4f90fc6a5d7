#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "gridshock/gridshock.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace gridshock;

namespace {

json defaults() {
  return json{
      {"paths",
       {{"units", ""}, {"outages", ""}, {"weather", ""}, {"dataset", ""}, {"model", ""}, {"scenario", ""},
        {"output_dir", "out"}}},
      {"grid", {{"start", ""}, {"end", ""}, {"slot_seconds", kDefaultSlotSeconds}, {"aggregation", "mean"}}},
      {"weather_variables", json::array()},
      {"graph", {{"k_neighbors", 8}, {"max_km", 100.0}}},
      {"decay", {{"window_slots", kDefaultWindowSlots}}},
      {"fit",
       {{"optimizer", "adaptive-moments"},
        {"learning_rate", 0.01},
        {"lr_decay", 0.0},
        {"batch_slots", 32},
        {"max_epochs", 200},
        {"tolerance", 1e-6},
        {"projection_every", 1},
        {"seed", 0},
        {"hidden", {32, 16}},
        {"record_timings", false}}},
      {"simulate", {{"replications", 1000}, {"seed", 0}, {"history", "from_zero"}, {"teacher_forced_until", 0}}},
      {"predict", {{"horizon", 1}}},
      {"enhance", {{"kind", "edges"}, {"axis1", {0, 1, 2}}, {"axis2", {0, 1, 2}}, {"baseline", "simulated"}}},
      {"analyze", {{"zero_run_threshold", kDefaultZeroRunThreshold}, {"within_slots", 2}, {"omega", 0.0}}},
      {"threads", 0},
  };
}

// Rejects keys that the defaults do not know about, so typos fail loudly.
void check_keys(const json& given, const json& known, const std::string& where) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    if (!known.contains(it.key())) throw ValidationError("unknown config key '" + where + it.key() + "'");
    if (it.value().is_object() && known.at(it.key()).is_object()) {
      check_keys(it.value(), known.at(it.key()), where + it.key() + ".");
    }
  }
}

json load_config(const std::string& path) {
  json cfg = defaults();
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  json file;
  try {
    file = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
  if (!file.is_object()) throw ValidationError("config '" + path + "' must be a JSON object");
  check_keys(file, cfg, "");
  // paths in a config file are relative to the file
  if (file.contains("paths")) {
    const auto base = fs::path(path).parent_path();
    for (auto& [key, value] : file["paths"].items()) {
      if (!value.is_string()) throw ValidationError("config key 'paths." + key + "' must be a string");
      const fs::path p = value.get<std::string>();
      if (!p.empty() && p.is_relative()) value = (base / p).lexically_normal().string();
    }
  }
  cfg.merge_patch(file);
  return cfg;
}

template <typename T>
T get(const json& cfg, const char* section, const char* key) {
  try {
    return cfg.at(section).at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config key '") + section + "." + key + "' has the wrong type");
  }
}

std::string path_of(const json& cfg, const char* key) { return get<std::string>(cfg, "paths", key); }

std::string required_path(const json& cfg, const char* key) {
  auto p = path_of(cfg, key);
  if (p.empty()) throw ValidationError(std::string("missing required path 'paths.") + key + "'");
  return p;
}

fs::path output_dir(const json& cfg) { return fs::path(path_of(cfg, "output_dir")); }

void prepare_output(const json& cfg) {
  const auto dir = output_dir(cfg);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  auto out = csv::open_output(dir / "effective_config.json");
  out << cfg.dump(2) << '\n';
  if (!out) throw IoError("failed writing effective config");
}

unsigned thread_count(const json& cfg) {
  const auto n = cfg.at("threads").get<int>();
  if (n < 0) throw ValidationError("threads must be non-negative");
  if (n > 0) return static_cast<unsigned>(n);
  return std::max(1u, std::thread::hardware_concurrency());
}

Dataset load_dataset(const json& cfg) {
  const auto path = required_path(cfg, "dataset");
  auto ds = read_dataset(path);
  ds.validate();
  return ds;
}

ModelParams load_model(const json& cfg, const Dataset& ds) {
  auto p = deserialize(required_path(cfg, "model"));
  if (p.num_units() != ds.num_units()) {
    throw ValidationError("model has " + std::to_string(p.num_units()) + " units, dataset has " +
                          std::to_string(ds.num_units()));
  }
  if (p.num_vars() != ds.num_vars()) {
    throw ValidationError("model has " + std::to_string(p.num_vars()) + " weather variables, dataset has " +
                          std::to_string(ds.num_vars()));
  }
  for (std::size_t i = 0; i < ds.num_units(); ++i) {
    if (p.graph.node_label(i) != ds.units[i].unit_id) {
      throw ValidationError("model unit '" + p.graph.node_label(i) + "' does not match dataset unit '" +
                            ds.units[i].unit_id + "' at index " + std::to_string(i));
    }
  }
  return p;
}

Graph candidate_graph(const json& cfg, const Dataset& ds) {
  auto k = get<std::size_t>(cfg, "graph", "k_neighbors");
  const auto max_km = get<double>(cfg, "graph", "max_km");
  if (ds.num_units() >= 2 && k >= ds.num_units()) {
    std::cerr << "warning: k_neighbors " << k << " reduced to " << ds.num_units() - 1 << " (K=" << ds.num_units()
              << ")\n";
    k = ds.num_units() - 1;
  }
  std::vector<std::string> warnings;
  auto g = build_candidate_graph(ds.units, k, max_km, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
  return g;
}

FitConfig fit_config(const json& cfg) {
  FitConfig fc;
  fc.optimizer = parse_optimizer(get<std::string>(cfg, "fit", "optimizer"));
  fc.learning_rate = get<double>(cfg, "fit", "learning_rate");
  fc.lr_decay = get<double>(cfg, "fit", "lr_decay");
  fc.batch_slots = get<std::size_t>(cfg, "fit", "batch_slots");
  fc.max_epochs = get<std::size_t>(cfg, "fit", "max_epochs");
  fc.tolerance = get<double>(cfg, "fit", "tolerance");
  fc.projection_every = get<std::size_t>(cfg, "fit", "projection_every");
  fc.seed = get<std::uint64_t>(cfg, "fit", "seed");
  fc.record_timings = get<bool>(cfg, "fit", "record_timings");
  fc.model.hidden = get<std::vector<std::size_t>>(cfg, "fit", "hidden");
  fc.model.window_slots = get<std::size_t>(cfg, "decay", "window_slots");
  fc.validate();
  if (fc.model.window_slots < 1) throw ValidationError("decay.window_slots must be at least 1");
  return fc;
}

SimOptions sim_options(const json& cfg) {
  SimOptions opt;
  opt.replications = get<std::size_t>(cfg, "simulate", "replications");
  opt.seed = get<std::uint64_t>(cfg, "simulate", "seed");
  opt.threads = thread_count(cfg);
  const auto history = get<std::string>(cfg, "simulate", "history");
  if (history == "from_zero") {
    opt.history = HistoryMode::from_zero();
  } else if (history == "teacher_forced") {
    opt.history = HistoryMode::teacher_forced(get<std::size_t>(cfg, "simulate", "teacher_forced_until"));
  } else if (history == "one_step") {
    opt.history = HistoryMode::one_step();
  } else {
    throw ValidationError("unknown simulate.history '" + history + "' (from_zero|teacher_forced|one_step)");
  }
  if (opt.replications < 1) throw ValidationError("simulate.replications must be at least 1");
  return opt;
}

// ---------------------------------------------------------------------------
// ingest

struct RawInputs {
  std::vector<UnitMeta> units;
  std::vector<OutageSample> outages;
  WeatherRows weather;
};

RawInputs load_raw(const json& cfg) {
  RawInputs raw;
  raw.units = load_units(required_path(cfg, "units"));
  raw.outages = load_outage_rows(required_path(cfg, "outages"));
  const auto required = cfg.at("weather_variables").get<std::vector<std::string>>();
  raw.weather = load_weather_rows(required_path(cfg, "weather"), required);
  if (!required.empty()) {
    // keep only the requested variables, in the requested order
    std::vector<std::size_t> pick;
    for (const auto& name : required) {
      const auto it = std::find(raw.weather.variable_names.begin(), raw.weather.variable_names.end(), name);
      pick.push_back(static_cast<std::size_t>(it - raw.weather.variable_names.begin()));
    }
    for (auto& s : raw.weather.samples) {
      std::vector<double> v;
      for (auto c : pick) v.push_back(s.values[c]);
      s.values = std::move(v);
    }
    raw.weather.variable_names = required;
  }
  return raw;
}

TimeGrid ingest_grid(const json& cfg, const RawInputs& raw) {
  const auto slot_seconds = get<std::int64_t>(cfg, "grid", "slot_seconds");
  const auto start_text = get<std::string>(cfg, "grid", "start");
  const auto end_text = get<std::string>(cfg, "grid", "end");
  std::optional<Timestamp> lo, hi;
  auto see = [&](Timestamp ts) {
    if (!lo || ts < *lo) lo = ts;
    if (!hi || ts > *hi) hi = ts;
  };
  for (const auto& r : raw.outages) see(r.timestamp);
  for (const auto& r : raw.weather.samples) see(r.timestamp);
  if (!lo && (start_text.empty() || end_text.empty())) throw ValidationError("no input rows to derive the time grid from");
  const Timestamp start = start_text.empty() ? *lo : parse_timestamp(start_text);
  const Timestamp end = end_text.empty() ? *hi + std::chrono::seconds(kRawPeriodSeconds) : parse_timestamp(end_text);
  auto grid = TimeGrid::spanning(start, end, slot_seconds);
  grid.validate();
  return grid;
}

int cmd_ingest(const json& cfg, bool validate_only) {
  const auto raw = load_raw(cfg);
  const auto grid = ingest_grid(cfg, raw);
  const auto method = parse_aggregation_method(get<std::string>(cfg, "grid", "aggregation"));
  if (validate_only) {
    std::cout << "validation ok\n";
    return 0;
  }
  prepare_output(cfg);
  GapReport gaps;
  Dataset ds;
  ds.units = raw.units;
  ds.grid = grid;
  ds.outages = aggregate_outages(raw.outages, raw.units, grid, method, &gaps);
  ds.weather = aggregate_weather(raw.weather.samples, raw.weather.variable_names, raw.units, grid, &gaps);
  ds.validate();

  auto ds_path = path_of(cfg, "dataset");
  if (ds_path.empty()) ds_path = (output_dir(cfg) / "dataset.json").string();
  write_dataset(ds, ds_path);

  auto out = csv::open_output(output_dir(cfg) / "gap_report.csv");
  out << "kind,unit,slot\n";
  for (auto [i, t] : gaps.outage_gaps) out << "outage," << ds.units[i].unit_id << ',' << t << '\n';
  for (auto [i, t] : gaps.weather_gaps) out << "weather," << ds.units[i].unit_id << ',' << t << '\n';
  if (!out) throw IoError("failed writing gap report");

  std::cout << "K=" << ds.num_units() << " T=" << ds.num_slots() << " M=" << ds.num_vars() << '\n';
  std::cout << "outage_gaps=" << gaps.outage_gaps.size() << " weather_gaps=" << gaps.weather_gaps.size()
            << " skipped_outage_rows=" << gaps.skipped_outage_rows
            << " skipped_weather_rows=" << gaps.skipped_weather_rows << '\n';
  std::cout << "dataset=" << ds_path << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// fit

std::size_t constraint_violations(const ModelParams& p) {
  std::size_t n = 0;
  for (auto* v : {&p.weights.alpha, &p.beta, &p.gamma, &p.decay.omega})
    for (double x : *v) n += !(x >= 0.0);
  for (double s : p.weights.self) n += s != 1.0;
  for (std::size_t e = 0; e < p.graph.num_edges(); ++e) {
    const auto r = p.graph.reverse(e);
    if (r != kNoEdge && r > e && p.weights.alpha[e] > 0.0 && p.weights.alpha[r] > 0.0) ++n;
  }
  return n;
}

int cmd_fit(const json& cfg, bool validate_only, bool check_grads) {
  const auto ds = load_dataset(cfg);
  const auto fc = fit_config(cfg);
  const auto graph = candidate_graph(cfg, ds);
  if (validate_only) {
    std::cout << "validation ok\n";
    return 0;
  }
  prepare_output(cfg);
  const auto dir = output_dir(cfg);
  FitResult result;
  try {
    result = fit(ds, graph, fc);
  } catch (const NumericError& e) {
    const auto trace_path = dir / "fit_failure.txt";
    auto out = csv::open_output(trace_path);
    out << e.what() << '\n';
    throw NumericError(std::string("fit diverged; trace written to ") + trace_path.string());
  }
  auto model_path = path_of(cfg, "model");
  if (model_path.empty()) model_path = (dir / "model.json").string();
  serialize(result.params, model_path);

  auto out = csv::open_output(dir / "fit_report.csv");
  out << "epoch,loglik,grad_norm,projections,seconds\n";
  for (const auto& r : result.report.trace) {
    out << r.epoch << ',' << csv::format_double(r.loglik) << ',' << csv::format_double(r.grad_norm) << ','
        << r.projections << ',' << csv::format_double(r.seconds) << '\n';
  }
  if (!out) throw IoError("failed writing fit report");

  std::cout << "final_loglik=" << csv::format_double(result.report.final_loglik)
            << " epochs=" << result.report.trace.size() << " best_epoch=" << result.report.best_epoch
            << " converged=" << (result.report.converged ? 1 : 0) << '\n';
  std::cout << "constraint_violations=" << constraint_violations(result.params) << '\n';
  if (check_grads) {
    const auto audit = check_gradients(result.params, ds);
    std::cout << "gradient_check coordinates=" << audit.checked
              << " max_rel_error=" << csv::format_double(audit.max_rel_error)
              << " max_abs_error_small=" << csv::format_double(audit.max_abs_error_small) << '\n';
  }
  std::cout << "model=" << model_path << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// predict / simulate

int cmd_predict(const json& cfg, bool validate_only) {
  const auto ds = load_dataset(cfg);
  const auto p = load_model(cfg, ds);
  const auto horizon = get<std::size_t>(cfg, "predict", "horizon");
  if (horizon >= ds.num_slots()) {
    throw ValidationError("prediction horizon " + std::to_string(horizon) + " must be shorter than the " +
                          std::to_string(ds.num_slots()) + "-slot series");
  }
  if (validate_only) {
    std::cout << "validation ok\n";
    return 0;
  }
  prepare_output(cfg);
  const auto r = horizon == 0 ? predict_in_sample(p, ds) : predict_ahead(p, ds, horizon);
  std::vector<std::string> ids;
  for (const auto& u : ds.units) ids.push_back(u.unit_id);
  write_predictions_csv(r, ids, output_dir(cfg) / "predictions.csv");
  write_prediction_metrics_csv(r, output_dir(cfg) / "prediction_metrics.csv");
  std::cout << "horizon=" << r.horizon << " mae=" << csv::format_double(r.mae) << " rmse=" << csv::format_double(r.rmse)
            << " persistence_mae=" << csv::format_double(r.persistence_mae) << '\n';
  return 0;
}

int cmd_simulate(const json& cfg, bool validate_only) {
  const auto ds = load_dataset(cfg);
  const auto p = load_model(cfg, ds);
  const auto opt = sim_options(cfg);
  if (validate_only) {
    std::cout << "validation ok\n";
    return 0;
  }
  prepare_output(cfg);
  const auto r = simulate_paths(p, ds.weather.values, opt, &ds.outages);
  const auto dir = output_dir(cfg);
  auto sum = csv::open_output(dir / "simulation_summary.csv");
  sum << "metric,value\n";
  sum << "replications," << r.replications << '\n';
  sum << "seed," << r.seed << '\n';
  sum << "mean_total," << csv::format_double(r.mean_total()) << '\n';
  sum << "std_error," << csv::format_double(r.std_error_total()) << '\n';
  sum << "q05_total," << csv::format_double(r.quantile_total(0.05)) << '\n';
  sum << "q50_total," << csv::format_double(r.quantile_total(0.5)) << '\n';
  sum << "q95_total," << csv::format_double(r.quantile_total(0.95)) << '\n';
  if (!sum) throw IoError("failed writing simulation summary");
  auto cells = csv::open_output(dir / "simulation_cells.csv");
  cells << "unit,slot,mean,std_err\n";
  for (std::size_t i = 0; i < ds.num_units(); ++i) {
    for (std::size_t t = 0; t < ds.num_slots(); ++t) {
      cells << ds.units[i].unit_id << ',' << t << ',' << csv::format_double(r.cell_mean(i, t)) << ','
            << csv::format_double(r.cell_std_error(i, t)) << '\n';
    }
  }
  if (!cells) throw IoError("failed writing simulation cells");
  std::cout << "replications=" << r.replications << " mean_total=" << csv::format_double(r.mean_total())
            << " std_error=" << csv::format_double(r.std_error_total()) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// enhance

int cmd_enhance(const json& cfg, bool validate_only) {
  const auto ds = load_dataset(cfg);
  const auto p = load_model(cfg, ds);
  const auto opt = sim_options(cfg);
  Scenario fixed;
  const auto scenario_path = path_of(cfg, "scenario");
  if (!scenario_path.empty()) {
    fixed = read_scenario(scenario_path);
    apply_scenario(p, fixed, ds.outages);  // resolves references
  }
  const auto kind_name = get<std::string>(cfg, "enhance", "kind");
  SweepKind kind;
  if (kind_name == "edges") {
    kind = SweepKind::EdgeCriticality;
  } else if (kind_name == "margin") {
    kind = SweepKind::MarginRecovery;
  } else {
    throw ValidationError("unknown enhance.kind '" + kind_name + "' (edges|margin)");
  }
  const auto baseline_name = get<std::string>(cfg, "enhance", "baseline");
  BaselineMode mode;
  if (baseline_name == "simulated") {
    mode = BaselineMode::SimulatedTotal;
  } else if (baseline_name == "observed") {
    mode = BaselineMode::ObservedTotal;
  } else {
    throw ValidationError("unknown enhance.baseline '" + baseline_name + "' (simulated|observed)");
  }
  const auto axis1 = get<std::vector<std::size_t>>(cfg, "enhance", "axis1");
  const auto axis2 = get<std::vector<std::size_t>>(cfg, "enhance", "axis2");
  if (axis1.empty() || axis2.empty()) throw ValidationError("enhance axes must be non-empty");
  if (validate_only) {
    std::cout << "validation ok\n";
    return 0;
  }
  prepare_output(cfg);
  const auto rows = sweep(p, ds, kind, axis1, axis2, opt, mode, fixed);
  write_sweep_csv(rows, output_dir(cfg) / "sweep.csv");
  for (const auto& r : rows) {
    std::cout << r.axis1 << 'x' << r.axis2 << ": " << csv::format_double(r.reduction.percent) << "% +/- "
              << csv::format_double(r.reduction.std_error) << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

int cmd_analyze(const json& cfg, bool validate_only) {
  const auto ds = load_dataset(cfg);
  std::optional<ModelParams> p;
  if (!path_of(cfg, "model").empty()) p = load_model(cfg, ds);
  const auto threshold = get<std::size_t>(cfg, "analyze", "zero_run_threshold");
  const auto within = get<std::size_t>(cfg, "analyze", "within_slots");
  const auto omega = get<double>(cfg, "analyze", "omega");
  DecayConfig decay = p ? p->decay
                        : DecayConfig{std::vector<double>(ds.num_vars(), omega),
                                      std::min(get<std::size_t>(cfg, "decay", "window_slots"), ds.num_slots())};
  decay.validate(ds.num_vars(), ds.num_slots());
  if (validate_only) {
    std::cout << "validation ok\n";
    return 0;
  }
  prepare_output(cfg);
  const auto dir = output_dir(cfg);

  const auto episodes = restoration_durations(ds, threshold);
  write_episodes_csv(episodes, ds, dir / "episodes.csv");
  auto summary = csv::open_output(dir / "episode_summary.csv");
  summary << "metric,value\n";
  summary << "episodes," << episodes.size() << '\n';
  summary << "within_slots," << within << '\n';
  summary << "fraction_within," << csv::format_double(fraction_within(episodes, within)) << '\n';
  if (!summary) throw IoError("failed writing episode summary");
  std::cout << "episodes=" << episodes.size() << " fraction_within_" << within
            << "_slots=" << csv::format_double(fraction_within(episodes, within)) << '\n';

  if (p) {
    const auto d = decompose(*p, ds);
    write_decomposition_csv(d, dir / "decomposition.csv");
    double direct = 0, indirect = 0;
    for (double x : d.direct_total) direct += x;
    for (double x : d.indirect_total) indirect += x;
    std::cout << "direct_total=" << csv::format_double(direct) << " indirect_total=" << csv::format_double(indirect)
              << '\n';
  }

  std::vector<SigmoidFit> fits;
  for (std::size_t m = 0; m < ds.num_vars(); ++m) {
    try {
      fits.push_back(fit_sigmoid(ds, m, decay));
    } catch (const InsufficientDataError& e) {
      throw InsufficientDataError("sigmoid fit for '" + ds.weather.variable_names[m] + "': " + e.what());
    }
  }
  write_sigmoid_csv(fits, dir / "sigmoid.csv");
  for (const auto& f : fits) std::cout << "dtc[" << f.variable << "]=" << csv::format_double(estimate_dtc(f)) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// export-map

int cmd_export_map(const json& cfg, bool validate_only) {
  const auto ds = load_dataset(cfg);
  const auto p = load_model(cfg, ds);
  if (validate_only) {
    std::cout << "validation ok\n";
    return 0;
  }
  prepare_output(cfg);
  const auto dir = output_dir(cfg);
  export_propagation_map(p.weights, ds.outages, p, dir / "propagation_map.csv");
  const auto scores = criticality_scores(p, ds.outages);
  auto out = csv::open_output(dir / "criticality.csv");
  out << "unit,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) out << ds.units[i].unit_id << ',' << csv::format_double(scores[i]) << '\n';
  if (!out) throw IoError("failed writing criticality scores");
  const auto top = std::max_element(scores.begin(), scores.end()) - scores.begin();
  std::cout << "most_critical=" << ds.units[static_cast<std::size_t>(top)].unit_id << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

// Flag values that override the config when given.
struct Overrides {
  std::string config;
  bool validate_only = false;
  bool check_gradients = false;
  std::optional<std::string> out, units, outages, weather, dataset, model, scenario;
  std::optional<std::string> start, end, aggregation, optimizer, history, kind, baseline;
  std::optional<std::int64_t> slot_seconds;
  std::optional<std::size_t> max_epochs, k_neighbors, window_slots, horizon, replications, until, zero_run_threshold;
  std::optional<double> learning_rate, max_km;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::size_t> axis1, axis2;
};

void apply(json& cfg, const Overrides& o, const std::string& command) {
  auto set = [&](const auto& opt, const char* section, const char* key) {
    if (opt) cfg[section][key] = *opt;
  };
  set(o.out, "paths", "output_dir");
  set(o.units, "paths", "units");
  set(o.outages, "paths", "outages");
  set(o.weather, "paths", "weather");
  set(o.dataset, "paths", "dataset");
  set(o.model, "paths", "model");
  set(o.scenario, "paths", "scenario");
  set(o.start, "grid", "start");
  set(o.end, "grid", "end");
  set(o.slot_seconds, "grid", "slot_seconds");
  set(o.aggregation, "grid", "aggregation");
  set(o.k_neighbors, "graph", "k_neighbors");
  set(o.max_km, "graph", "max_km");
  set(o.window_slots, "decay", "window_slots");
  set(o.optimizer, "fit", "optimizer");
  set(o.learning_rate, "fit", "learning_rate");
  set(o.max_epochs, "fit", "max_epochs");
  set(o.horizon, "predict", "horizon");
  set(o.replications, "simulate", "replications");
  set(o.history, "simulate", "history");
  set(o.until, "simulate", "teacher_forced_until");
  set(o.kind, "enhance", "kind");
  set(o.baseline, "enhance", "baseline");
  set(o.zero_run_threshold, "analyze", "zero_run_threshold");
  if (!o.axis1.empty()) cfg["enhance"]["axis1"] = o.axis1;
  if (!o.axis2.empty()) cfg["enhance"]["axis2"] = o.axis2;
  if (o.threads) cfg["threads"] = *o.threads;
  if (o.seed) cfg[command == "fit" ? "fit" : "simulate"]["seed"] = *o.seed;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return 4;
  if (dynamic_cast<const NumericError*>(&e)) return 3;
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const SchemaError*>(&e) ||
      dynamic_cast<const ParseError*>(&e) || dynamic_cast<const IncompatibleVersionError*>(&e)) {
    return 2;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gridshock: weather-driven outage cascade modeling"};
  app.require_subcommand(1);
  Overrides o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "JSON config file");
    sub->add_option("-o,--out", o.out, "Output directory");
    sub->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
    sub->add_flag("--validate-only", o.validate_only, "Validate config and inputs, then exit");
  };
  auto with_data = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--dataset", o.dataset, "Dataset file");
  };
  auto with_model = [&](CLI::App* sub) {
    with_data(sub);
    sub->add_option("--model", o.model, "Model file");
  };

  auto* ingest = app.add_subcommand("ingest", "Aggregate raw CSVs into a dataset file");
  common(ingest);
  ingest->add_option("--units", o.units);
  ingest->add_option("--outages", o.outages);
  ingest->add_option("--weather", o.weather);
  ingest->add_option("--dataset", o.dataset, "Dataset file to write");
  ingest->add_option("--start", o.start, "Grid start (ISO 8601 UTC)");
  ingest->add_option("--end", o.end, "Grid end (ISO 8601 UTC, exclusive)");
  ingest->add_option("--slot-seconds", o.slot_seconds);
  ingest->add_option("--aggregation", o.aggregation, "mean|max|last");

  auto* fit_cmd = app.add_subcommand("fit", "Fit model parameters");
  with_data(fit_cmd);
  fit_cmd->add_option("--model", o.model, "Model file to write");
  fit_cmd->add_option("--seed", o.seed);
  fit_cmd->add_option("--max-epochs", o.max_epochs);
  fit_cmd->add_option("--learning-rate", o.learning_rate);
  fit_cmd->add_option("--optimizer", o.optimizer, "plain-sgd|adaptive-moments");
  fit_cmd->add_option("--k-neighbors", o.k_neighbors);
  fit_cmd->add_option("--max-km", o.max_km);
  fit_cmd->add_option("--window-slots", o.window_slots);
  fit_cmd->add_flag("--check-gradients", o.check_gradients, "Finite-difference audit of the fitted gradients");

  auto* predict = app.add_subcommand("predict", "In-sample or ahead prediction");
  with_model(predict);
  predict->add_option("--horizon", o.horizon, "Slots ahead (0 = in-sample)");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo outage paths");
  with_model(simulate);
  simulate->add_option("--seed", o.seed);
  simulate->add_option("--replications", o.replications);
  simulate->add_option("--history", o.history, "from_zero|teacher_forced|one_step");
  simulate->add_option("--teacher-forced-until", o.until);

  auto* enhance = app.add_subcommand("enhance", "Scenario sweep of outage reductions");
  with_model(enhance);
  enhance->add_option("--scenario", o.scenario, "Scenario applied to every grid cell");
  enhance->add_option("--seed", o.seed);
  enhance->add_option("--replications", o.replications);
  enhance->add_option("--kind", o.kind, "edges|margin");
  enhance->add_option("--baseline", o.baseline, "simulated|observed");
  enhance->add_option("--axis1", o.axis1)->delimiter(',');
  enhance->add_option("--axis2", o.axis2)->delimiter(',');

  auto* analyze = app.add_subcommand("analyze", "Decomposition, sigmoid thresholds, restoration episodes");
  with_data(analyze);
  analyze->add_option("--model", o.model, "Model file (enables decomposition)");
  analyze->add_option("--zero-run-threshold", o.zero_run_threshold);

  auto* export_map = app.add_subcommand("export-map", "Propagation map and criticality scores");
  with_model(export_map);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto* sub = app.get_subcommands().front();
  const auto command = sub->get_name();
  try {
    json cfg = load_config(o.config);
    apply(cfg, o, command);
    if (command == "ingest") return cmd_ingest(cfg, o.validate_only);
    if (command == "fit") return cmd_fit(cfg, o.validate_only, o.check_gradients);
    if (command == "predict") return cmd_predict(cfg, o.validate_only);
    if (command == "simulate") return cmd_simulate(cfg, o.validate_only);
    if (command == "enhance") return cmd_enhance(cfg, o.validate_only);
    if (command == "analyze") return cmd_analyze(cfg, o.validate_only);
    if (command == "export-map") return cmd_export_map(cfg, o.validate_only);
  } catch (const InsufficientDataError& e) {
    std::cerr << "error: insufficient data: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 1;
}
