#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <sstream>

#include "gridshock/ingest.hpp"

using namespace gridshock;

namespace {

const std::filesystem::path kFixtures = GRIDSHOCK_FIXTURES;

csv::Table table_from(const std::string& text, const std::string& name = "inline.csv") {
  std::istringstream in(text);
  return csv::parse(in, name);
}

std::vector<UnitMeta> one_unit() { return {{"a", 42.0, -71.0, 100}}; }

TimeGrid grid_at(const char* start, std::size_t slots, std::int64_t slot_seconds = kDefaultSlotSeconds) {
  return TimeGrid{parse_timestamp(start), slot_seconds, slots};
}

OutageSample sample(const char* unit, const char* ts, double v) { return {unit, parse_timestamp(ts), v}; }

}  // namespace

TEST(Timestamps, ParsesCommonIsoForms) {
  const auto a = parse_timestamp("2021-03-01T03:15:00Z");
  EXPECT_EQ(a, parse_timestamp("2021-03-01 03:15"));
  EXPECT_EQ(a, parse_timestamp("2021-03-01T03:15:00+00:00"));
  EXPECT_EQ(format_timestamp(a), "2021-03-01T03:15:00Z");
  EXPECT_THROW(parse_timestamp("2021-13-01T00:00:00Z"), ParseError);
  EXPECT_THROW(parse_timestamp("yesterday"), ParseError);
}

TEST(LoadUnits, KeepsFileOrder) {
  const auto units = load_units(kFixtures / "units.csv");
  ASSERT_EQ(units.size(), 3u);
  EXPECT_EQ(units[0].unit_id, "north");
  EXPECT_EQ(units[1].unit_id, "center");
  EXPECT_EQ(units[2].unit_id, "south");
  EXPECT_EQ(units[2].total_customers, 15000);
}

TEST(LoadUnits, DuplicateIdNamesTheId) {
  try {
    load_units(kFixtures / "units_duplicate.csv");
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("boston"), std::string::npos);
  }
}

TEST(LoadUnits, MissingColumnIsSchemaError) {
  EXPECT_THROW(parse_units(table_from("unit_id,lat,lon\na,1,2\n")), SchemaError);
}

TEST(LoadUnits, NonPositiveCustomersRejected) {
  EXPECT_THROW(parse_units(table_from("unit_id,lat,lon,total_customers\na,1,2,0\n")), ValidationError);
}

TEST(LoadUnits, MassachusettsShapedTownList) {
  const auto units = load_units(kFixtures / "units_ma.csv");
  EXPECT_EQ(units.size(), 351u);
  const auto total = std::accumulate(units.begin(), units.end(), std::int64_t{0},
                                     [](std::int64_t s, const UnitMeta& u) { return s + u.total_customers; });
  EXPECT_EQ(total, 2755111);
}

TEST(AggregateOutages, MeanOfTwoSamples) {
  const std::vector<OutageSample> rows{sample("a", "2021-03-01T00:00:00Z", 4), sample("a", "2021-03-01T01:00:00Z", 8)};
  const auto s = aggregate_outages(rows, one_unit(), grid_at("2021-03-01T00:00:00Z", 2));
  EXPECT_EQ(s.counts(0, 0), 6);
}

TEST(AggregateOutages, MaxOfThreeSamples) {
  const std::vector<OutageSample> rows{sample("a", "2021-03-01T00:00:00Z", 4), sample("a", "2021-03-01T00:15:00Z", 8),
                                       sample("a", "2021-03-01T00:30:00Z", 3)};
  const auto s = aggregate_outages(rows, one_unit(), grid_at("2021-03-01T00:00:00Z", 2), AggregationMethod::Max);
  EXPECT_EQ(s.counts(0, 0), 8);
}

TEST(AggregateOutages, LastTakesLatestSample) {
  const std::vector<OutageSample> rows{sample("a", "2021-03-01T00:30:00Z", 3), sample("a", "2021-03-01T00:00:00Z", 4)};
  const auto s = aggregate_outages(rows, one_unit(), grid_at("2021-03-01T00:00:00Z", 2), AggregationMethod::Last);
  EXPECT_EQ(s.counts(0, 0), 3);
}

TEST(AggregateOutages, AlternatingQuarterHoursAverageToFive) {
  std::vector<OutageSample> rows;
  const auto start = parse_timestamp("2021-03-01T00:00:00Z");
  for (int q = 0; q < 12; ++q) rows.push_back({"a", start + std::chrono::minutes(15 * q), q % 2 == 0 ? 0.0 : 10.0});
  const auto s = aggregate_outages(rows, one_unit(), TimeGrid{start, kDefaultSlotSeconds, 2});
  EXPECT_EQ(s.counts(0, 0), 5);
}

TEST(AggregateOutages, RoundsHalfUp) {
  const std::vector<OutageSample> rows{sample("a", "2021-03-01T00:00:00Z", 2), sample("a", "2021-03-01T00:15:00Z", 3)};
  const auto s = aggregate_outages(rows, one_unit(), grid_at("2021-03-01T00:00:00Z", 2));
  EXPECT_EQ(s.counts(0, 0), 3);
}

TEST(AggregateOutages, UnknownUnitIsValidationError) {
  const std::vector<OutageSample> rows{sample("zzz", "2021-03-01T00:00:00Z", 1)};
  EXPECT_THROW(aggregate_outages(rows, one_unit(), grid_at("2021-03-01T00:00:00Z", 2)), ValidationError);
}

TEST(AggregateOutages, OutOfGridRowsSkippedAndCounted) {
  const std::vector<OutageSample> rows{sample("a", "2021-02-28T23:45:00Z", 9), sample("a", "2021-03-01T06:00:00Z", 9),
                                       sample("a", "2021-03-01T00:00:00Z", 1)};
  GapReport gaps;
  const auto s = aggregate_outages(rows, one_unit(), grid_at("2021-03-01T00:00:00Z", 2), AggregationMethod::Mean, &gaps);
  EXPECT_EQ(gaps.skipped_outage_rows, 2u);
  EXPECT_EQ(s.counts(0, 0), 1);
  EXPECT_EQ(s.counts(0, 1), 0);
  ASSERT_EQ(gaps.outage_gaps.size(), 1u);
  EXPECT_EQ(gaps.outage_gaps[0], std::make_pair(std::size_t{0}, std::size_t{1}));
}

TEST(AggregateOutages, BoundarySampleGoesToLaterSlot) {
  const std::vector<OutageSample> rows{sample("a", "2021-03-01T03:00:00Z", 7)};
  const auto s = aggregate_outages(rows, one_unit(), grid_at("2021-03-01T00:00:00Z", 2));
  EXPECT_EQ(s.counts(0, 0), 0);
  EXPECT_EQ(s.counts(0, 1), 7);
}

TEST(AggregateOutages, RawResolutionIsIdentity) {
  std::vector<OutageSample> rows;
  const auto start = parse_timestamp("2021-03-01T00:00:00Z");
  std::vector<std::int64_t> values{3, 0, 7, 12, 1, 0, 4, 9};
  for (std::size_t q = 0; q < values.size(); ++q) {
    rows.push_back({"a", start + std::chrono::minutes(15 * static_cast<int>(q)), static_cast<double>(values[q])});
  }
  const auto s = aggregate_outages(rows, one_unit(), TimeGrid{start, kRawPeriodSeconds, values.size()});
  for (std::size_t q = 0; q < values.size(); ++q) EXPECT_EQ(s.counts(0, q), values[q]);
}

TEST(AggregateOutages, MeanTotalsMatchRawSumOverSamplesPerSlot) {
  std::vector<OutageSample> rows;
  const auto start = parse_timestamp("2021-03-01T00:00:00Z");
  double raw_total = 0.0;
  for (int q = 0; q < 48; ++q) {
    const double v = 12.0 * ((q * 7) % 5);  // multiples of 12 keep every slot mean integral
    raw_total += v;
    rows.push_back({"a", start + std::chrono::minutes(15 * q), v});
  }
  const auto s = aggregate_outages(rows, one_unit(), TimeGrid{start, kDefaultSlotSeconds, 4});
  const auto total = std::accumulate(s.counts.data().begin(), s.counts.data().end(), std::int64_t{0});
  EXPECT_DOUBLE_EQ(static_cast<double>(total), raw_total / 12.0);
}

TEST(AggregateWeather, MeanOfSamples) {
  const std::vector<WeatherSample> rows{{"a", parse_timestamp("2021-03-01T00:00:00Z"), {10.0}},
                                        {"a", parse_timestamp("2021-03-01T01:00:00Z"), {14.0}}};
  const auto w = aggregate_weather(rows, {"WIND"}, one_unit(), grid_at("2021-03-01T00:00:00Z", 2));
  EXPECT_DOUBLE_EQ(w.values(0, 0, 0), 12.0);
}

TEST(AggregateWeather, EmptySlotCarriesForwardAndIsFlagged) {
  const std::vector<WeatherSample> rows{{"a", parse_timestamp("2021-03-01T00:00:00Z"), {7.0}}};
  GapReport gaps;
  const auto w = aggregate_weather(rows, {"WIND"}, one_unit(), grid_at("2021-03-01T00:00:00Z", 3), &gaps);
  EXPECT_DOUBLE_EQ(w.values(0, 1, 0), 7.0);
  EXPECT_DOUBLE_EQ(w.values(0, 2, 0), 7.0);
  EXPECT_EQ(gaps.weather_gaps.size(), 2u);
}

TEST(AggregateWeather, LeadingGapTakesFirstObservation) {
  const std::vector<WeatherSample> rows{{"a", parse_timestamp("2021-03-01T03:00:00Z"), {5.0}}};
  const auto w = aggregate_weather(rows, {"WIND"}, one_unit(), grid_at("2021-03-01T00:00:00Z", 2));
  EXPECT_DOUBLE_EQ(w.values(0, 0, 0), 5.0);
}

TEST(AggregateWeather, HandWrittenThreeUnitFixture) {
  const std::string text =
      "unit_id,timestamp_iso8601,WIND,REFC\n"
      "a,2021-03-01T00:00:00Z,1,10\n"
      "a,2021-03-01T02:00:00Z,3,20\n"
      "a,2021-03-01T03:00:00Z,5,30\n"
      "b,2021-03-01T00:30:00Z,2,0\n"
      "b,2021-03-01T04:00:00Z,4,8\n"
      "b,2021-03-01T05:45:00Z,8,4\n"
      "c,2021-03-01T01:00:00Z,6,1\n"
      "c,2021-03-01T01:15:00Z,7,2\n"
      "c,2021-03-01T01:30:00Z,8,6\n"
      "c,2021-03-01T03:30:00Z,0,0\n";
  const auto rows = parse_weather_rows(table_from(text));
  const std::vector<UnitMeta> units{{"a", 1, 1, 1}, {"b", 1, 2, 1}, {"c", 2, 1, 1}};
  const auto w = aggregate_weather(rows.samples, rows.variable_names, units, grid_at("2021-03-01T00:00:00Z", 2));
  const double expect[3][2][2] = {{{2, 15}, {5, 30}}, {{2, 0}, {6, 6}}, {{7, 3}, {0, 0}}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t m = 0; m < 2; ++m) EXPECT_DOUBLE_EQ(w.values(i, t, m), expect[i][t][m]) << i << t << m;
}

TEST(AggregateWeather, NonNumericValueNamesTheRow) {
  const std::string text =
      "unit_id,timestamp_iso8601,WIND\n"
      "a,2021-03-01T00:00:00Z,1\n"
      "a,2021-03-01T01:00:00Z,gusty\n";
  try {
    parse_weather_rows(table_from(text));
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
}

TEST(AggregateWeather, MissingRequiredColumnIsSchemaError) {
  try {
    load_weather_rows(kFixtures / "weather_missing_column.csv", {"WIND", "REFC"});
    FAIL() << "expected a schema error";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("REFC"), std::string::npos);
  }
}

TEST(TimeGridCheck, SlotMustBeMultipleOfRawPeriod) {
  EXPECT_THROW(grid_at("2021-03-01T00:00:00Z", 4, 1000).validate(), ValidationError);
  EXPECT_NO_THROW(grid_at("2021-03-01T00:00:00Z", 4).validate());
  EXPECT_THROW(grid_at("2021-03-01T00:00:00Z", 1).validate(), ValidationError);
}

namespace {

Dataset blank_dataset(const char* start, std::size_t slots) {
  Dataset ds;
  ds.units = one_unit();
  ds.grid = grid_at(start, slots);
  ds.outages.counts = Matrix<std::int64_t>(1, slots, 0);
  ds.weather.values = Tensor3<double>(1, slots, 1, 0.0);
  ds.weather.variable_names = {"WIND"};
  for (std::size_t t = 0; t < slots; ++t) ds.outages.counts(0, t) = static_cast<std::int64_t>(t);
  return ds;
}

}  // namespace

TEST(SplitEventWindow, SixteenDayGridSplitAtDayFifteen) {
  const auto ds = blank_dataset("2021-03-01T00:00:00Z", 16 * 8);
  const auto split =
      split_event_window(ds, parse_timestamp("2021-03-01T00:00:00Z"), parse_timestamp("2021-03-16T00:00:00Z"));
  EXPECT_EQ(split.event.num_slots(), 15u * 8u);
  EXPECT_EQ(split.baseline.num_slots(), 8u);
  EXPECT_EQ(split.baseline.outages.counts(0, 0), 120);
  EXPECT_EQ(split.event.units, split.baseline.units);
}

TEST(SplitEventWindow, FullSpanRejected) {
  const auto ds = blank_dataset("2021-03-01T00:00:00Z", 16);
  EXPECT_THROW(split_event_window(ds, ds.grid.start, ds.grid.end()), ValidationError);
  EXPECT_THROW(split_event_window(ds, ds.grid.start, ds.grid.start), ValidationError);
}

TEST(SplitEventWindow, MarchEventVersusRestOfMonth) {
  // 1-15 March: 15 days x 8 three-hour slots; 16-31 March: 16 days x 8.
  const auto ds = blank_dataset("2018-03-01T00:00:00Z", 31 * 8);
  const auto split =
      split_event_window(ds, parse_timestamp("2018-03-01T00:00:00Z"), parse_timestamp("2018-03-16T00:00:00Z"));
  EXPECT_EQ(split.event.num_slots(), 120u);
  EXPECT_EQ(split.baseline.num_slots(), 128u);
  EXPECT_EQ(split.baseline.grid.start, parse_timestamp("2018-03-16T00:00:00Z"));
}

TEST(DatasetFile, RoundTripsBitIdentically) {
  const auto units = load_units(kFixtures / "units.csv");
  const auto outages = load_outage_rows(kFixtures / "outages.csv");
  const auto weather = load_weather_rows(kFixtures / "weather.csv");
  Dataset ds;
  ds.units = units;
  ds.grid = grid_at("2021-03-01T00:00:00Z", 16);
  ds.outages = aggregate_outages(outages, units, ds.grid);
  ds.weather = aggregate_weather(weather.samples, weather.variable_names, units, ds.grid);
  ds.validate();

  const auto dir = std::filesystem::temp_directory_path() / "gridshock_ingest_test";
  std::filesystem::create_directories(dir);
  write_dataset(ds, dir / "a.json");
  const auto back = read_dataset(dir / "a.json");
  EXPECT_EQ(back, ds);
  write_dataset(back, dir / "b.json");
  std::ifstream fa(dir / "a.json"), fb(dir / "b.json");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  EXPECT_EQ(sa.str(), sb.str());
}

TEST(DatasetFile, WrongSchemaVersionRejected) {
  auto j = dataset_to_json(blank_dataset("2021-03-01T00:00:00Z", 4));
  j["schema"] = "gridshock-ds-v999";
  EXPECT_THROW(dataset_from_json(j), IncompatibleVersionError);
}

TEST(DatasetFile, TruncatedFileIsParseError) {
  const auto dir = std::filesystem::temp_directory_path() / "gridshock_ingest_test";
  std::filesystem::create_directories(dir);
  const auto text = dataset_to_json(blank_dataset("2021-03-01T00:00:00Z", 4)).dump();
  {
    std::ofstream out(dir / "truncated.json");
    out << text.substr(0, text.size() / 2);
  }
  EXPECT_THROW(read_dataset(dir / "truncated.json"), ParseError);
}
