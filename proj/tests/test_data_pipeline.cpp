#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <vector>

#include "vslfog/data_pipeline.hpp"
#include "vslfog/fixture.hpp"

using namespace vslfog;
using Catch::Approx;

namespace {

data::RawDetectorRecord lane(std::string station, std::int64_t t, double flow, double occ, double speed,
                             bool hov = false) {
  return {std::move(station), t, "1", flow, occ, speed, hov};
}

}  // namespace

TEST_CASE("occupancy to density", "[data_pipeline]") {
  CHECK(data::occupancy_to_density(0.0, 0.004) == 0.0);
  CHECK(data::occupancy_to_density(0.1, 0.004) == Approx(25.0));
  CHECK(data::occupancy_to_density(0.2, 0.004) == Approx(2.0 * data::occupancy_to_density(0.1, 0.004)));
  CHECK_THROWS_AS(data::occupancy_to_density(1.5, 0.004), ParseError);
  CHECK_THROWS_AS(data::occupancy_to_density(0.1, 0.0), UsageError);
}

TEST_CASE("lane aggregation", "[data_pipeline]") {
  const double h = 30.0 / 3600.0;
  std::vector<data::RawDetectorRecord> one{lane("A", 0, 10, 0.1, 60)};
  auto s = data::aggregate_lanes(one, h, 0.004);
  CHECK(s.flow == Approx(1200.0));
  CHECK(s.density == Approx(25.0));
  CHECK(s.speed == 60.0);

  std::vector<data::RawDetectorRecord> twins{lane("A", 0, 10, 0.1, 60), lane("A", 0, 10, 0.1, 60)};
  s = data::aggregate_lanes(twins, h, 0.004);
  CHECK(s.flow == Approx(2400.0));
  CHECK(s.density == Approx(50.0));
  CHECK(s.speed == Approx(60.0));

  std::vector<data::RawDetectorRecord> mixed{lane("A", 0, 10, 0.1, 60), lane("A", 0, 5, 0.1, 30),
                                             lane("A", 0, 50, 0.3, 75, true)};
  s = data::aggregate_lanes(mixed, h, 0.004);
  CHECK(s.flow == Approx(1800.0));
  CHECK(s.speed == Approx(50.0));
}

TEST_CASE("section series keeps short gaps and drops long ones", "[data_pipeline]") {
  std::vector<data::RawDetectorRecord> recs;
  for (std::int64_t k = 0; k < 20; ++k) {
    recs.push_back(lane("A", 30 * k, 10, 0.05, 60));
    const bool gap = (k >= 3 && k <= 5) || (k >= 10 && k <= 15);
    if (!gap) recs.push_back(lane("B", 30 * k, 12, 0.06, 55));
  }
  const auto s = data::build_section_series(recs, 30);
  CHECK(s.stations == std::vector<std::string>{"A", "B"});
  // steps 3..5 imputed; in 10..15 the fifth and sixth missing steps are dropped
  CHECK(s.dropped == std::vector<std::int64_t>{14 * 30, 15 * 30});
  CHECK(s.steps() == 18);
  CHECK(s.flow[4][1] == Approx(12.0 * 120.0));
  double total = 0.0;
  for (const auto& r : recs)
    if (r.time_s == 0) total += r.flow * 120.0;
  CHECK(s.flow[0][0] + s.flow[0][1] == Approx(total));
}

TEST_CASE("visibility matching", "[data_pipeline]") {
  const std::int64_t t5 = parse_utc("2019-12-10T05:00:00Z");
  const std::vector<data::WeatherRecord> w{{t5, 3.0}, {t5 + 3600, 5.0}};
  const std::vector<std::int64_t> times{t5 + 1200, t5 + 1800, t5 + 2400};
  CHECK(data::match_visibility(times, w) == std::vector<double>{3.0, 3.0, 5.0});
  const std::vector<data::WeatherRecord> single{{t5, 0.4}};
  CHECK(data::match_visibility(times, single) == std::vector<double>{0.4, 0.4, 0.4});
  const std::vector<std::int64_t> far{t5 + 3 * 3600};
  CHECK_THROWS_AS(data::match_visibility(far, single), HorizonError);
}

TEST_CASE("window features", "[data_pipeline]") {
  data::StationSeries flat{std::vector<double>(12, 1200.0), std::vector<double>(12, 60.0)};
  auto f = data::extract_features(flat, flat, 0.5, false, 10, 10);
  CHECK(f.aqu == Approx(100.0));
  CHECK(f.aqd == Approx(100.0));
  CHECK(f.dqu == 0.0);
  CHECK(f.dqd == 0.0);
  CHECK(f.dvu == 0.0);
  CHECK(f.dvd == 0.0);
  CHECK(f.dv == 0.0);
  CHECK(f.visibility == 0.5);

  data::StationSeries alt = flat;
  for (std::size_t k = 0; k < alt.speed.size(); ++k) alt.speed[k] = k % 2 ? 70.0 : 50.0;
  f = data::extract_features(alt, flat, 1.0, true, 10, 10);
  // ten values alternating 50/70: mean 60, squared deviations all 100, sd = sqrt(1000 / 9)
  CHECK(f.dvu == Approx(std::sqrt(1000.0 / 9.0)));
  CHECK(f.dvu == Approx(10.54).margin(0.005));
  CHECK(f.ds_flag == 1.0);
  f = data::extract_features(alt, alt, 1.0, true, 10, 10);
  CHECK(f.dv == 0.0);
  CHECK_THROWS_AS(data::extract_features(flat, flat, 1.0, false, 5, 10), UsageError);
}

TEST_CASE("features are causal on a simulated run", "[data_pipeline]") {
  const auto m = fixture::model();
  const auto in = fixture::boundary();
  const auto vis = fixture::visibility();
  const auto init = fixture::initial_density();
  const auto full = mctm::simulate(m, in, init);
  const auto part = mctm::simulate(m, in, init, 200);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto a = data::extract_features(m, in, full, vis, i, 200, 10);
    const auto b = data::extract_features(m, in, part, vis, i, 200, 10);
    CHECK(a.values() == b.values());
  }
}

TEST_CASE("constant simulated state has no variation", "[data_pipeline]") {
  const auto m = fixture::model();
  auto in = mctm::BoundaryInput::zeros(1500, 4);
  for (std::size_t k = 0; k < in.steps(); ++k) {
    in.q_up[k] = 3000.0;
    in.rho_up[k] = 3000.0 / m.cells[0].free_flow_speed;
  }
  std::vector<double> steady;
  for (const auto& c : m.cells) steady.push_back(3000.0 / c.free_flow_speed);
  const auto t = mctm::simulate(m, in, steady);
  const std::vector<double> vis(in.steps(), 10.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto f = data::extract_features(m, in, t, vis, i, 100, 10);
    CHECK(f.dqu == Approx(0.0).margin(1e-9));
    CHECK(f.dqd == Approx(0.0).margin(1e-9));
    CHECK(f.dvu == Approx(0.0).margin(1e-9));
    CHECK(f.dvd == Approx(0.0).margin(1e-9));
    CHECK(f.aqu == Approx(250.0));
  }
}

TEST_CASE("section series csv round trip", "[data_pipeline]") {
  data::SectionSeries s;
  s.stations = {"401", "402"};
  for (int k = 0; k < 5; ++k) {
    s.time_s.push_back(parse_utc("2019-12-10T05:00:00Z") + 30 * k);
    s.flow.push_back({1234.5678 + k, 1e-3 * k});
    s.density.push_back({33.3333333 + k, 12.0});
    s.speed.push_back({61.0 / 3.0, 70.0});
    s.visibility.push_back(0.1 * k);
  }
  std::stringstream ss;
  data::write_section_series(ss, s);
  const auto back = data::read_section_series(csv::parse(ss, "series.csv"));
  CHECK(back.stations == s.stations);
  CHECK(back.time_s == s.time_s);
  for (int k = 0; k < 5; ++k)
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(back.flow[k][j] - s.flow[k][j]) <= 1e-9);
      CHECK(std::abs(back.density[k][j] - s.density[k][j]) <= 1e-9);
      CHECK(std::abs(back.speed[k][j] - s.speed[k][j]) <= 1e-9);
    }
  CHECK(back.visibility == s.visibility);
}

TEST_CASE("detector csv parsing", "[data_pipeline]") {
  std::stringstream ok(
      "station,timestamp,lane,flow,occupancy,speed,hov\n"
      "A,2019-12-10T05:00:00Z,1,10,0.05,60,0\n"
      "A,2019-12-10T05:00:00Z,2,9,0.04,62,1\n");
  const auto r = data::read_detector_records(csv::parse(ok, "d.csv"));
  REQUIRE(r.size() == 2);
  CHECK(r[1].hov);
  std::stringstream bad(
      "station,timestamp,lane,flow,occupancy,speed,hov\n"
      "A,2019-12-10T05:00:00Z,1,10,0.05\n");
  try {
    data::read_detector_records(csv::parse(bad, "d.csv"));
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("d.csv:2") != std::string::npos);
  }
}
