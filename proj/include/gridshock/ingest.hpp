#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "gridshock/csv.hpp"
#include "gridshock/error.hpp"
#include "gridshock/tensor.hpp"
#include "gridshock/timeutil.hpp"

namespace gridshock {

inline constexpr const char* kDatasetSchema = "gridshock-ds-v1";
inline constexpr std::int64_t kRawPeriodSeconds = 900;
inline constexpr std::int64_t kDefaultSlotSeconds = 10800;

struct UnitMeta {
  std::string unit_id;
  double lat = 0.0;
  double lon = 0.0;
  std::int64_t total_customers = 0;

  bool operator==(const UnitMeta&) const = default;
};

/// Uniform slotting of time: slot t covers [start + t*slot_seconds, start + (t+1)*slot_seconds).
struct TimeGrid {
  Timestamp start{};
  std::int64_t slot_seconds = kDefaultSlotSeconds;
  std::size_t num_slots = 0;

  [[nodiscard]] Timestamp slot_start(std::size_t t) const {
    return start + std::chrono::seconds(slot_seconds * static_cast<std::int64_t>(t));
  }
  [[nodiscard]] Timestamp end() const { return slot_start(num_slots); }

  /// Slot containing ts, or nullopt outside the grid. Boundary instants belong to the later slot.
  [[nodiscard]] std::optional<std::size_t> slot_of(Timestamp ts) const {
    auto offset = (ts - start).count();
    if (offset < 0) return std::nullopt;
    auto slot = static_cast<std::size_t>(offset / slot_seconds);
    if (slot >= num_slots) return std::nullopt;
    return slot;
  }

  void validate(std::int64_t raw_period_seconds = kRawPeriodSeconds) const {
    if (slot_seconds <= 0) throw ValidationError("slot_seconds must be positive");
    if (raw_period_seconds > 0 && slot_seconds % raw_period_seconds != 0) {
      throw ValidationError("slot_seconds " + std::to_string(slot_seconds) +
                            " is not a multiple of the raw sampling period " +
                            std::to_string(raw_period_seconds));
    }
    if (num_slots < 2) throw ValidationError("time grid needs at least 2 slots");
  }

  /// Grid spanning [start, end) at the given resolution; end is rounded up to a whole slot.
  static TimeGrid spanning(Timestamp start, Timestamp end, std::int64_t slot_seconds = kDefaultSlotSeconds) {
    if (end <= start) throw ValidationError("grid end must be after grid start");
    auto span = (end - start).count();
    TimeGrid grid{start, slot_seconds, static_cast<std::size_t>((span + slot_seconds - 1) / slot_seconds)};
    return grid;
  }

  bool operator==(const TimeGrid&) const = default;
};

struct OutageSeries {
  Matrix<std::int64_t> counts;  // K x T

  bool operator==(const OutageSeries&) const = default;
};

struct WeatherTensor {
  Tensor3<double> values;  // K x T x M
  std::vector<std::string> variable_names;

  bool operator==(const WeatherTensor&) const = default;
};

struct Dataset {
  std::vector<UnitMeta> units;
  TimeGrid grid;
  OutageSeries outages;
  WeatherTensor weather;

  [[nodiscard]] std::size_t num_units() const { return units.size(); }
  [[nodiscard]] std::size_t num_slots() const { return grid.num_slots; }
  [[nodiscard]] std::size_t num_vars() const { return weather.variable_names.size(); }

  /// Checks that K, T, M agree across members and the value invariants hold.
  void validate() const {
    const auto k = units.size();
    const auto t = grid.num_slots;
    const auto m = weather.variable_names.size();
    if (outages.counts.rows() != k || outages.counts.cols() != t) {
      throw ValidationError("outage matrix shape does not match units x slots");
    }
    if (weather.values.units() != k || weather.values.slots() != t || weather.values.vars() != m) {
      throw ValidationError("weather tensor shape does not match units x slots x variables");
    }
    if (m == 0) throw ValidationError("dataset needs at least one weather variable");
    for (auto n : outages.counts.data()) {
      if (n < 0) throw ValidationError("negative outage count");
    }
    for (auto x : weather.values.data()) {
      if (!std::isfinite(x)) throw ValidationError("non-finite weather value");
    }
  }

  bool operator==(const Dataset&) const = default;
};

enum class AggregationMethod { Mean, Max, Last };

inline AggregationMethod parse_aggregation_method(std::string_view name) {
  if (name == "mean") return AggregationMethod::Mean;
  if (name == "max") return AggregationMethod::Max;
  if (name == "last") return AggregationMethod::Last;
  throw ValidationError("unknown aggregation method '" + std::string(name) + "' (mean|max|last)");
}

struct OutageSample {
  std::string unit_id;
  Timestamp timestamp{};
  double customers_out = 0.0;
};

struct WeatherSample {
  std::string unit_id;
  Timestamp timestamp{};
  std::vector<double> values;
};

struct WeatherRows {
  std::vector<std::string> variable_names;
  std::vector<WeatherSample> samples;
};

/// (unit, slot) cells that received no raw samples, plus out-of-grid rows that were dropped.
struct GapReport {
  std::vector<std::pair<std::size_t, std::size_t>> outage_gaps;
  std::vector<std::pair<std::size_t, std::size_t>> weather_gaps;
  std::size_t skipped_outage_rows = 0;
  std::size_t skipped_weather_rows = 0;
};

// ---------------------------------------------------------------------------
// Validation helpers

inline void validate_units(const std::vector<UnitMeta>& units) {
  std::unordered_set<std::string> seen;
  for (const auto& u : units) {
    if (u.unit_id.empty()) throw ValidationError("empty unit_id");
    if (!seen.insert(u.unit_id).second) throw ValidationError("duplicate unit_id '" + u.unit_id + "'");
    if (u.total_customers <= 0) {
      throw ValidationError("unit '" + u.unit_id + "' has non-positive total_customers");
    }
    if (!(u.lat >= -90.0 && u.lat <= 90.0) || !(u.lon >= -180.0 && u.lon <= 180.0)) {
      throw ValidationError("unit '" + u.unit_id + "' has out-of-range coordinates");
    }
  }
}

inline std::unordered_map<std::string, std::size_t> unit_index(const std::vector<UnitMeta>& units) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < units.size(); ++i) index.emplace(units[i].unit_id, i);
  return index;
}

// ---------------------------------------------------------------------------
// CSV loaders

inline std::vector<UnitMeta> parse_units(const csv::Table& table) {
  const auto c_id = table.column("unit_id");
  const auto c_lat = table.column("lat");
  const auto c_lon = table.column("lon");
  const auto c_cust = table.column("total_customers");
  std::vector<UnitMeta> units;
  units.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = table.source + ":" + std::to_string(table.line_numbers[r]);
    units.push_back(UnitMeta{row[c_id], csv::parse_double(row[c_lat], where),
                             csv::parse_double(row[c_lon], where), csv::parse_int(row[c_cust], where)});
  }
  validate_units(units);
  return units;
}

inline std::vector<UnitMeta> load_units(const std::filesystem::path& path) {
  return parse_units(csv::read_file(path));
}

inline std::vector<OutageSample> parse_outage_rows(const csv::Table& table) {
  const auto c_id = table.column("unit_id");
  const auto c_ts = table.column("timestamp_iso8601");
  const auto c_out = table.column("customers_out");
  std::vector<OutageSample> rows;
  rows.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = table.source + ":" + std::to_string(table.line_numbers[r]);
    double out = csv::parse_double(row[c_out], where);
    if (!(out >= 0.0)) throw ValidationError(where + ": negative customers_out");
    Timestamp ts;
    try {
      ts = parse_timestamp(row[c_ts]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    rows.push_back(OutageSample{row[c_id], ts, out});
  }
  return rows;
}

inline std::vector<OutageSample> load_outage_rows(const std::filesystem::path& path) {
  return parse_outage_rows(csv::read_file(path));
}

/// Weather table: `unit_id,timestamp_iso8601,<var1>,...,<varM>`.
/// `required` lists variables that must be present (empty: accept all).
inline WeatherRows parse_weather_rows(const csv::Table& table, const std::vector<std::string>& required = {}) {
  const auto c_id = table.column("unit_id");
  const auto c_ts = table.column("timestamp_iso8601");
  for (const auto& name : required) (void)table.column(name);

  WeatherRows out;
  std::vector<std::size_t> cols;
  std::unordered_set<std::string> seen;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (c == c_id || c == c_ts) continue;
    if (!required.empty() && std::find(required.begin(), required.end(), table.header[c]) == required.end()) {
      continue;
    }
    if (!seen.insert(table.header[c]).second) {
      throw SchemaError(table.source + ": duplicate weather column '" + table.header[c] + "'");
    }
    out.variable_names.push_back(table.header[c]);
    cols.push_back(c);
  }
  if (cols.empty()) throw SchemaError(table.source + ": no weather variable columns");

  out.samples.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const auto where = table.source + ": row " + std::to_string(table.line_numbers[r]);
    WeatherSample s;
    s.unit_id = row[c_id];
    try {
      s.timestamp = parse_timestamp(row[c_ts]);
    } catch (const ParseError& e) {
      throw ParseError(where + ": " + e.what());
    }
    s.values.reserve(cols.size());
    for (auto c : cols) {
      double v = csv::parse_double(row[c], where + " column " + table.header[c]);
      if (!std::isfinite(v)) throw ParseError(where + ": non-finite value in column " + table.header[c]);
      s.values.push_back(v);
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

inline WeatherRows load_weather_rows(const std::filesystem::path& path,
                                     const std::vector<std::string>& required = {}) {
  return parse_weather_rows(csv::read_file(path), required);
}

// ---------------------------------------------------------------------------
// Aggregation

/// Buckets raw outage samples into grid slots. Cells without samples are 0
/// and listed in the gap report. Values are rounded half-up to integers.
inline OutageSeries aggregate_outages(std::span<const OutageSample> rows, const std::vector<UnitMeta>& units,
                                      const TimeGrid& grid, AggregationMethod method = AggregationMethod::Mean,
                                      GapReport* report = nullptr) {
  const auto index = unit_index(units);
  const std::size_t k = units.size();
  const std::size_t t_count = grid.num_slots;

  Matrix<double> acc(k, t_count, 0.0);
  Matrix<std::int64_t> n(k, t_count, 0);
  Matrix<Timestamp> last_ts(k, t_count, Timestamp::min());
  std::size_t skipped = 0;

  for (const auto& row : rows) {
    auto it = index.find(row.unit_id);
    if (it == index.end()) throw ValidationError("outage row references unknown unit_id '" + row.unit_id + "'");
    auto slot = grid.slot_of(row.timestamp);
    if (!slot) {
      ++skipped;
      continue;
    }
    const auto i = it->second;
    const auto t = *slot;
    switch (method) {
      case AggregationMethod::Mean:
        acc(i, t) += row.customers_out;
        break;
      case AggregationMethod::Max:
        acc(i, t) = n(i, t) == 0 ? row.customers_out : std::max(acc(i, t), row.customers_out);
        break;
      case AggregationMethod::Last:
        // ties on timestamp: later input row wins
        if (row.timestamp >= last_ts(i, t)) {
          acc(i, t) = row.customers_out;
          last_ts(i, t) = row.timestamp;
        }
        break;
    }
    ++n(i, t);
  }

  OutageSeries out{Matrix<std::int64_t>(k, t_count, 0)};
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t t = 0; t < t_count; ++t) {
      if (n(i, t) == 0) {
        if (report) report->outage_gaps.emplace_back(i, t);
        continue;
      }
      double value = method == AggregationMethod::Mean ? acc(i, t) / static_cast<double>(n(i, t)) : acc(i, t);
      out.counts(i, t) = static_cast<std::int64_t>(std::floor(value + 0.5));
    }
  }
  if (report) report->skipped_outage_rows += skipped;
  return out;
}

/// Per-cell arithmetic mean of raw weather samples. Empty cells carry the
/// previous slot's value forward; leading empty cells take the first observed
/// slot's value. All filled cells are listed in the gap report.
inline WeatherTensor aggregate_weather(std::span<const WeatherSample> rows, const std::vector<std::string>& variable_names,
                                       const std::vector<UnitMeta>& units, const TimeGrid& grid,
                                       GapReport* report = nullptr) {
  const auto index = unit_index(units);
  const std::size_t k = units.size();
  const std::size_t t_count = grid.num_slots;
  const std::size_t m_count = variable_names.size();

  Tensor3<double> sum(k, t_count, m_count, 0.0);
  Matrix<std::int64_t> n(k, t_count, 0);
  std::size_t skipped = 0;

  for (const auto& row : rows) {
    auto it = index.find(row.unit_id);
    if (it == index.end()) throw ValidationError("weather row references unknown unit_id '" + row.unit_id + "'");
    if (row.values.size() != m_count) throw SchemaError("weather row has wrong number of variables");
    auto slot = grid.slot_of(row.timestamp);
    if (!slot) {
      ++skipped;
      continue;
    }
    auto cell = sum.cell(it->second, *slot);
    for (std::size_t m = 0; m < m_count; ++m) cell[m] += row.values[m];
    ++n(it->second, *slot);
  }

  WeatherTensor out{Tensor3<double>(k, t_count, m_count, 0.0), variable_names};
  for (std::size_t i = 0; i < k; ++i) {
    std::optional<std::size_t> first_observed;
    for (std::size_t t = 0; t < t_count; ++t) {
      if (n(i, t) == 0) continue;
      if (!first_observed) first_observed = t;
      auto src = sum.cell(i, t);
      auto dst = out.values.cell(i, t);
      for (std::size_t m = 0; m < m_count; ++m) dst[m] = src[m] / static_cast<double>(n(i, t));
    }
    if (!first_observed) {
      throw ValidationError("unit '" + units[i].unit_id + "' has no weather samples inside the grid");
    }
    for (std::size_t t = 0; t < t_count; ++t) {
      if (n(i, t) != 0) continue;
      const std::size_t from = t < *first_observed ? *first_observed : t - 1;
      auto src = out.values.cell(i, from);
      auto dst = out.values.cell(i, t);
      std::copy(src.begin(), src.end(), dst.begin());
      if (report) report->weather_gaps.emplace_back(i, t);
    }
  }
  if (report) report->skipped_weather_rows += skipped;
  return out;
}

// ---------------------------------------------------------------------------
// Slicing

/// Dataset restricted to slots [first, first + count).
inline Dataset slice_slots(const Dataset& ds, std::size_t first, std::size_t count) {
  if (first + count > ds.num_slots()) throw ValidationError("slot range exceeds dataset span");
  Dataset out;
  out.units = ds.units;
  out.grid = TimeGrid{ds.grid.slot_start(first), ds.grid.slot_seconds, count};
  out.outages.counts = Matrix<std::int64_t>(ds.num_units(), count, 0);
  out.weather.variable_names = ds.weather.variable_names;
  out.weather.values = Tensor3<double>(ds.num_units(), count, ds.num_vars(), 0.0);
  for (std::size_t i = 0; i < ds.num_units(); ++i) {
    for (std::size_t t = 0; t < count; ++t) {
      out.outages.counts(i, t) = ds.outages.counts(i, first + t);
      auto src = ds.weather.values.cell(i, first + t);
      std::copy(src.begin(), src.end(), out.weather.values.cell(i, t).begin());
    }
  }
  return out;
}

struct EventSplit {
  Dataset event;
  Dataset baseline;
};

/// Splits the grid into the event window [event_start, event_end) and the
/// remaining slots. The window must touch one end of the grid so that both
/// parts stay contiguous; window edges are snapped to slot boundaries
/// (start floored, end rounded up).
inline EventSplit split_event_window(const Dataset& ds, Timestamp event_start, Timestamp event_end) {
  if (event_end <= event_start) throw ValidationError("empty event window");
  if (event_start < ds.grid.start || event_end > ds.grid.end()) {
    throw ValidationError("event window lies outside the dataset grid");
  }
  const auto slot_len = ds.grid.slot_seconds;
  const auto first = static_cast<std::size_t>((event_start - ds.grid.start).count() / slot_len);
  const auto last = static_cast<std::size_t>(((event_end - ds.grid.start).count() + slot_len - 1) / slot_len);
  const std::size_t total = ds.num_slots();
  if (first == last) throw ValidationError("empty event window");
  if (first == 0 && last == total) throw ValidationError("event window covers the whole grid; baseline would be empty");
  if (first != 0 && last != total) {
    throw ValidationError("event window must start at the grid start or end at the grid end");
  }
  EventSplit split;
  split.event = slice_slots(ds, first, last - first);
  split.baseline = first == 0 ? slice_slots(ds, last, total - last) : slice_slots(ds, 0, first);
  return split;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json dataset_to_json(const Dataset& ds) {
  nlohmann::json j;
  j["schema"] = kDatasetSchema;
  auto& units = j["units"] = nlohmann::json::array();
  for (const auto& u : ds.units) {
    units.push_back({{"unit_id", u.unit_id}, {"lat", u.lat}, {"lon", u.lon}, {"total_customers", u.total_customers}});
  }
  j["grid"] = {{"start", format_timestamp(ds.grid.start)},
               {"slot_seconds", ds.grid.slot_seconds},
               {"num_slots", ds.grid.num_slots}};
  j["variables"] = ds.weather.variable_names;
  j["outages"] = ds.outages.counts.data();
  j["weather"] = ds.weather.values.data();
  return j;
}

inline Dataset dataset_from_json(const nlohmann::json& j) {
  try {
    const auto schema = j.at("schema").get<std::string>();
    if (schema != kDatasetSchema) {
      throw IncompatibleVersionError("dataset schema '" + schema + "' is incompatible with '" + kDatasetSchema + "'");
    }
    Dataset ds;
    for (const auto& u : j.at("units")) {
      ds.units.push_back(UnitMeta{u.at("unit_id").get<std::string>(), u.at("lat").get<double>(),
                                  u.at("lon").get<double>(), u.at("total_customers").get<std::int64_t>()});
    }
    const auto& g = j.at("grid");
    ds.grid.start = parse_timestamp(g.at("start").get<std::string>());
    ds.grid.slot_seconds = g.at("slot_seconds").get<std::int64_t>();
    ds.grid.num_slots = g.at("num_slots").get<std::size_t>();
    ds.weather.variable_names = j.at("variables").get<std::vector<std::string>>();
    const auto k = ds.units.size();
    const auto t = ds.grid.num_slots;
    const auto m = ds.weather.variable_names.size();
    ds.outages.counts = Matrix<std::int64_t>(k, t);
    ds.weather.values = Tensor3<double>(k, t, m);
    auto counts = j.at("outages").get<std::vector<std::int64_t>>();
    auto weather = j.at("weather").get<std::vector<double>>();
    if (counts.size() != k * t || weather.size() != k * t * m) {
      throw ParseError("dataset arrays do not match declared dimensions");
    }
    ds.outages.counts.data() = std::move(counts);
    ds.weather.values.data() = std::move(weather);
    validate_units(ds.units);
    ds.validate();
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed dataset file: ") + e.what());
  }
}

inline void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  auto out = csv::open_output(path);
  out << dataset_to_json(ds).dump() << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
  return dataset_from_json(j);
}

}  // namespace gridshock
