#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "omniair/data.hpp"
#include "omniair/encoder.hpp"
#include "omniair/oracle.hpp"

using namespace omniair;
namespace fs = std::filesystem;

namespace {

const char* kHeader =
    "station_id,lat,lon,elevation,climate_avg_wind,climate_avg_wind_dir,terrain_tpi,terrain_roughness,"
    "distance_to_coast_km,grade\n";

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "omniair_unit";
  fs::create_directories(dir);
  return dir / name;
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = scratch(name);
  std::ofstream(p) << text;
  return p;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const LoadError& e) {
    return e.what();
  }
  return "";
}

SeriesFrame constant_frame(std::size_t steps, std::size_t stations, double v) {
  std::vector<std::int64_t> days(steps);
  for (std::size_t t = 0; t < steps; ++t) days[t] = 19000 + static_cast<std::int64_t>(t);
  SeriesFrame f = SeriesFrame::empty(days, stations);
  std::fill(f.values.begin(), f.values.end(), v);
  std::fill(f.valid.begin(), f.valid.end(), 1);
  return f;
}

}  // namespace

TEST_CASE("station files") {
  CHECK(load_stations(write_file("s0.csv", kHeader)).empty());
  const auto one = load_stations(write_file("s1.csv", std::string(kHeader) + "A,10.5,-20,100,3,90,5,2,40,2\n"));
  REQUIRE(one.size() == 1);
  CHECK(one[0].id == "A");
  CHECK(one[0].point.lat == 10.5);
  CHECK(one[0].point.lon == -20.0);
  CHECK(one[0].geo_feats == std::array<double, 6>{100, 3, 90, 5, 2, 40});
  CHECK(one[0].grade == 2);

  const auto bad_lat = write_file("s2.csv", std::string(kHeader) + "A,10,0,1,1,1,1,1,1,0\nB,91,0,1,1,1,1,1,1,0\n");
  CHECK(error_of([&] { load_stations(bad_lat); }).find("line 3") != std::string::npos);
  const auto dup = write_file("s3.csv", std::string(kHeader) + "A,10,0,1,1,1,1,1,1,0\nA,11,0,1,1,1,1,1,1,0\n");
  CHECK(error_of([&] { load_stations(dup); }).find("duplicate") != std::string::npos);
  const auto nocol = write_file("s4.csv", "station_id,lat,lon\nA,1,2\n");
  CHECK(error_of([&] { load_stations(nocol); }).find("missing column") != std::string::npos);
  const auto unknown = write_file("s5.csv", std::string(kHeader) + "A,10,0,1,1,1,1,1,1,\nB,10,1,1,1,1,1,1,1,-1\n");
  CHECK_THROWS_AS(load_stations(unknown), LoadError);
  const auto u = load_stations(unknown, true);
  CHECK(u[0].grade == -1);
  CHECK(u[1].grade == -1);
  write_stations(scratch("s6.csv"), u);
  CHECK(load_stations(scratch("s6.csv"), true)[1].grade == -1);
}

TEST_CASE("series files") {
  const auto st = load_stations(write_file("st.csv", std::string(kHeader) + "A,10,0,1,1,1,1,1,1,0\n"));
  const auto f = load_series(write_file("f1.csv",
                                        "timestamp,station_id,pm25,pm10,o3,no2,so2,co\n"
                                        "2021-03-01,A,5,,,,,\n2021-03-02,A,6,,,,,\n2021-03-03,A,7,,,,,\n"),
                             st);
  CHECK(f.steps() == 3);
  CHECK(f.stations == 1);
  CHECK(f.channels == 6);
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(f.is_valid(t, 0, 0));
    for (std::size_t c = 1; c < 6; ++c) CHECK_FALSE(f.is_valid(t, 0, c));
  }
  CHECK(format_date(f.days[0]) == "2021-03-01");

  const auto gap = load_series(write_file("f2.csv",
                                          "timestamp,station_id,pm25,pm10,o3,no2,so2,co\n"
                                          "2021-03-01,A,5,1,1,1,1,1\n2021-03-03,A,7,1,1,1,1,1\n"),
                               st);
  CHECK(gap.steps() == 3);
  for (std::size_t c = 0; c < 6; ++c) CHECK_FALSE(gap.is_valid(1, 0, c));

  const auto unknown = write_file("f3.csv", "timestamp,station_id,pm25,pm10,o3,no2,so2,co\n2021-03-01,Z,5,,,,,\n");
  CHECK(error_of([&] { load_series(unknown, st); }).find("unknown station") != std::string::npos);
  const auto dup = write_file("f4.csv",
                              "timestamp,station_id,pm25,pm10,o3,no2,so2,co\n2021-03-01,A,5,,,,,\n2021-03-01,A,6,,,,,\n");
  CHECK(error_of([&] { load_series(dup, st); }).find("duplicate") != std::string::npos);
}

TEST_CASE("series round trip and binary cache") {
  RDScenario sc;
  sc.stations = 6;
  sc.steps = 30;
  sc.missing_rate = 0.2;
  const RDResult r = simulate_rd(sc);
  write_stations(scratch("rt_st.csv"), r.stations);
  write_series(scratch("rt_series.csv"), r.frame, r.stations);
  const auto st = load_stations(scratch("rt_st.csv"));
  const SeriesFrame back = load_series(scratch("rt_series.csv"), st);
  CHECK(back.days == r.frame.days);
  CHECK(back.valid == r.frame.valid);
  CHECK(back.values == r.frame.values);
  write_series_cache(scratch("cache"), r.frame);
  const SeriesFrame cached = read_series_cache(scratch("cache"));
  CHECK(cached.values == r.frame.values);
  CHECK(cached.valid == r.frame.valid);
  CHECK(cached.days == r.frame.days);
}

TEST_CASE("chronological split") {
  auto sizes = [](std::size_t n) {
    const Splits s = chrono_split(constant_frame(n, 1, 1.0));
    return std::array<std::size_t, 3>{s.train.steps(), s.val.steps(), s.test.steps()};
  };
  CHECK(sizes(100) == std::array<std::size_t, 3>{60, 20, 20});
  CHECK(sizes(101) == std::array<std::size_t, 3>{60, 20, 21});
  CHECK_THROWS_AS(chrono_split(constant_frame(10, 1, 1.0), {0.6, 0.2, 0.2}, 44), std::invalid_argument);
  CHECK_THROWS_AS(chrono_split(constant_frame(10, 1, 1.0), {0.6, 0.3, 0.2}), std::invalid_argument);
  const Splits s = chrono_split(constant_frame(100, 1, 1.0));
  CHECK(s.val.days.front() == s.train.days.back() + 1);
  CHECK(s.test.days.front() == s.val.days.back() + 1);
}

TEST_CASE("sliding windows") {
  const SeriesFrame f = constant_frame(60, 3, 7.0);
  const NormStats stats = NormStats::fit(f);
  const WindowSet ws(f, 30, 14, stats);
  CHECK(ws.count() == 17);
  const auto batches = ws.batches(32);
  REQUIRE(batches.size() == 1);
  for (double v : batches[0].inputs.data) CHECK(v == 0.0);
  CHECK(stats.std_of(0, 0) == kStdFloor);

  SeriesFrame holes = f;
  for (std::size_t t = 0; t < 60; ++t)
    for (std::size_t c = 0; c < 6; ++c) {
      holes.valid[holes.offset(t, 1, c)] = 0;
      holes.values[holes.offset(t, 0, c)] = 7.0 + static_cast<double>(t % 5);
    }
  const WindowBatch b = WindowSet(holes, 30, 14, NormStats::fit(holes)).batches(4)[0];
  for (std::size_t i = 0; i < b.inputs.size(); ++i) {
    const std::size_t n = (i / 6) % 3;
    if (n == 1) {
      CHECK(b.inputs[i] == 0.0);
      CHECK(b.input_valid[i] == 0.0);
    }
  }
  for (std::size_t i = 0; i < b.target_valid.size(); ++i)
    if ((i / 6) % 3 == 1) CHECK(b.target_valid[i] == 0.0);
  CHECK_THROWS_AS(WindowSet(constant_frame(40, 1, 1.0), 30, 14, stats), std::invalid_argument);
}

TEST_CASE("statistics never read validation or test values") {
  RDScenario sc;
  sc.stations = 8;
  sc.steps = 120;
  const RDResult r = simulate_rd(sc);
  auto fitted = [&](const SeriesFrame& frame) {
    const Splits s = chrono_split(frame, {0.6, 0.2, 0.2}, 20);
    return std::pair{NormStats::fit(s.train), neighbor_contexts(r.stations, s.train, 3)};
  };
  SeriesFrame poisoned = r.frame;
  for (std::size_t t = 72; t < poisoned.steps(); ++t)
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t c = 0; c < 6; ++c) poisoned.values[poisoned.offset(t, n, c)] = 1e6;
  const auto [a_stats, a_ctx] = fitted(r.frame);
  const auto [b_stats, b_ctx] = fitted(poisoned);
  CHECK(a_stats.mean == b_stats.mean);
  CHECK(a_stats.std == b_stats.std);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(a_ctx[i].mu == b_ctx[i].mu);
    CHECK(a_ctx[i].sigma == b_ctx[i].sigma);
    CHECK(a_ctx[i].delta_self == b_ctx[i].delta_self);
  }
}

TEST_CASE("dates") {
  CHECK(parse_date("1970-01-01") == 0);
  CHECK(parse_date("2020-01-01") == 18262);
  CHECK(format_date(18262) == "2020-01-01");
  CHECK_THROWS(parse_date("2020-13-01"));
}
