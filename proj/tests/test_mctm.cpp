#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "vslfog/fixture.hpp"
#include "vslfog/mctm.hpp"
#include "vslfog/mctm_io.hpp"

using namespace vslfog;
using Catch::Approx;

namespace {

mctm::CellParams cell1() { return fixture::reference_cells()[0]; }

// Root of V*rho = w_c*(rho_j - rho) by bisection, independent of the closed form.
double bisect_rho(double v, double w, double rho_j) {
  double lo = 0.0, hi = rho_j;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (v * mid < w * (rho_j - mid)) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

mctm::SegmentModel single_cell() {
  mctm::SegmentModel m;
  m.dt_hours = 1.0 / 120.0;
  m.cells = {cell1()};
  m.cells[0].max_flow = 10000.0;
  m.ramps = {{false, false}};
  return m;
}

}  // namespace

TEST_CASE("max flow under a limit", "[mctm_sim]") {
  const auto c = cell1();
  auto pass = mctm::max_flow_under_limit(c, 80.0);
  CHECK(pass.flow == 10717.09);
  CHECK(pass.density == 144.34);
  pass = mctm::max_flow_under_limit(c, c.free_flow_speed);
  CHECK(pass.flow == c.max_flow);
  CHECK(pass.density == c.critical_density);

  const double rho = bisect_rho(60.0, 13.55, 935.08);
  const auto r = mctm::max_flow_under_limit(c, 60.0);
  CHECK(r.density == Approx(rho).epsilon(1e-12));
  CHECK(r.flow == Approx(60.0 * rho).epsilon(1e-12));
  CHECK(r.density == Approx(172.27).margin(0.01));
  CHECK(r.flow == Approx(10336.1).margin(0.05));
  CHECK_THROWS_AS(mctm::max_flow_under_limit(c, 0.0), UsageError);
}

TEST_CASE("sending and receiving", "[mctm_sim]") {
  const auto c = cell1();
  CHECK(mctm::sending(c, 0.0, 0.0, 60.0) == 0.0);
  CHECK(mctm::sending(c, 50.0, 0.0, 60.0) == Approx(3000.0));
  CHECK(mctm::sending(c, 50.0, 5000.0, 60.0) == 0.0);
  CHECK(mctm::receiving(c, c.jam_density, 0.0, 80.0) == 0.0);
  CHECK(mctm::receiving(c, 800.0, 0.0, 80.0) == Approx(13.55 * 135.08).epsilon(1e-12));
  CHECK(mctm::receiving(c, 800.0, 0.0, 80.0) == Approx(1830.3).margin(0.05));
  CHECK(mctm::receiving(c, 800.0, 1e5, 80.0) == 0.0);
  CHECK(mctm::interface_flow(3000.0, 1830.334) == 1830.334);
  CHECK(mctm::interface_flow(0.0, 500.0) == 0.0);
  CHECK(mctm::interface_flow(7.0, 7.0) == 7.0);
}

TEST_CASE("cell speed", "[mctm_sim]") {
  const auto c = cell1();
  CHECK(mctm::cell_speed(c, 100.0, 60.0) == 60.0);
  CHECK(mctm::cell_speed(c, 800.0, 60.0) == Approx(13.55 * 135.08 / 800.0));
  CHECK(mctm::cell_speed(c, 800.0, 30.0) == Approx(2.288).margin(1e-3));
  CHECK(mctm::cell_speed(c, 100.0, 90.0) == c.free_flow_speed);
}

TEST_CASE("boundary conditions", "[mctm_sim]") {
  auto m = fixture::model();
  mctm::BoundaryAt b;
  b.q_up = 4000.0;
  b.rho_up = 50.0;
  CHECK(mctm::boundary_flows(m, 1e9, 3000.0, b).entering == 4000.0);
  b.rho_up = 500.0;
  CHECK(mctm::boundary_flows(m, 2500.0, 3000.0, b).entering == 2500.0);
  b.rho_down = 10.0;
  b.q_down = 100.0;
  CHECK(mctm::boundary_flows(m, 1.0, 3000.0, b).leaving == 3000.0);
  b.rho_down = 400.0;
  b.q_down = 2000.0;
  CHECK(mctm::boundary_flows(m, 1.0, 3000.0, b).leaving == 2000.0);
}

TEST_CASE("density update", "[mctm_sim]") {
  // 50 + (1 / (120 * 0.8)) * (6000 - 4800) = 62.5
  auto m = single_cell();
  m.cells[0].length = 0.8;
  m.cells[0].free_flow_speed = 96.0;  // sends exactly 96 * 50 = 4800
  m.cells[0].critical_density = 10000.0 / 96.0;
  REQUIRE(mctm::violations(m.cells[0], m.dt_hours).empty());
  mctm::SimState s{0, {50.0}, {m.cells[0].free_flow_speed}};
  const std::vector<double> zero{0.0};
  mctm::BoundaryAt b{6000.0, 50.0, 5000.0, 600.0, zero, zero};
  const auto out = mctm::step(m, s, b);
  CHECK(out.flows[0] == 6000.0);
  CHECK(out.flows[1] == 4800.0);
  CHECK(out.next.density[0] == Approx(62.5).epsilon(1e-14));
  CHECK(out.clamp_events == 0);

  mctm::BoundaryAt still{0.0, 0.0, 0.0, 0.0, zero, zero};
  mctm::SimState empty{0, {0.0}, {m.cells[0].free_flow_speed}};
  CHECK(mctm::step(m, empty, still).next.density[0] == 0.0);
}

TEST_CASE("simulate edge cases", "[mctm_sim]") {
  const auto m = fixture::model();
  const auto in = mctm::BoundaryInput::zeros(50, 4);
  const std::vector<double> zero(4, 0.0);
  const auto t = mctm::simulate(m, in, zero);
  for (std::size_t k = 0; k <= t.horizon(); ++k)
    for (double d : t.densities_at(k)) CHECK(d == 0.0);
  CHECK_THROWS_AS(mctm::simulate(m, in, zero, 51), HorizonError);
  const std::vector<double> three(3, 0.0);
  CHECK_THROWS_AS(mctm::simulate(m, in, three), UsageError);
}

TEST_CASE("steady state under constant demand", "[mctm_sim]") {
  const auto m = fixture::model();
  auto in = mctm::BoundaryInput::zeros(2000, 4);
  for (std::size_t k = 0; k < in.steps(); ++k) {
    in.q_up[k] = 4000.0;
    in.rho_up[k] = 4000.0 / m.cells[0].free_flow_speed;
  }
  const std::vector<double> zero(4, 0.0);
  const auto t = mctm::simulate(m, in, zero);
  const std::size_t last = t.horizon() - 1;
  CHECK(std::abs(t.flow(last, 0) - t.flow(last, 4)) < 1e-6);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(t.density(last, i) == Approx(4000.0 / m.cells[i].free_flow_speed).epsilon(1e-9));
}

TEST_CASE("limit at free-flow speed is inactive", "[mctm_sim]") {
  const auto m = fixture::model();
  const auto in = fixture::boundary();
  const auto init = fixture::initial_density();
  const auto plain = mctm::simulate(m, in, init);
  const auto pinned = mctm::simulate(m, in, init, 0, [&](mctm::SimState& s, const mctm::SimTrajectory&) {
    s.limit = m.free_flow_speeds();
  });
  bool same = true;
  for (std::size_t k = 0; k < plain.horizon(); ++k)
    for (std::size_t i = 0; i < 4; ++i)
      same = same && plain.density(k, i) == pinned.density(k, i) && plain.flow(k, i) == pinned.flow(k, i) &&
             plain.speed(k, i) == pinned.speed(k, i);
  CHECK(same);
}

TEST_CASE("closed segment conserves vehicles", "[mctm_sim]") {
  auto m = fixture::model();
  m.ramps.assign(4, {false, false});
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int run = 0; run < 20; ++run) {
    auto in = mctm::BoundaryInput::zeros(1000, 4);
    for (std::size_t k = 0; k < in.steps(); ++k) {
      in.q_up[k] = 9000.0 * u(rng);
      in.rho_up[k] = 400.0 * u(rng);
      in.q_down[k] = 9000.0 * u(rng);
      in.rho_down[k] = 900.0 * u(rng);
    }
    std::vector<double> init(4);
    for (std::size_t i = 0; i < 4; ++i) init[i] = m.cells[i].jam_density * u(rng);
    const auto t = mctm::simulate(m, in, init);
    const auto b = mctm::vehicle_balance(m, in, t);
    CHECK(b.skipped_steps == 0);
    CHECK(b.relative_residual() < 1e-9);
    for (std::size_t k = 0; k <= t.horizon(); ++k)
      for (std::size_t i = 0; i < 4; ++i) {
        REQUIRE(t.density(k, i) >= 0.0);
        REQUIRE(t.density(k, i) <= m.cells[i].jam_density);
      }
  }
}

TEST_CASE("feasibility checks", "[mctm_sim]") {
  const auto raw = fixture::reference_cells();
  const auto m = fixture::model();
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(mctm::violations(m.cells[i], m.dt_hours).empty());
    CHECK(m.cells[i].max_flow <= raw[i].max_flow);
    CHECK(m.cells[i].max_flow > raw[i].max_flow * (1.0 - 5e-4));
  }
  auto bad = m.cells[0];
  bad.length = 0.1;
  CHECK_FALSE(mctm::violations(bad, m.dt_hours).empty());
  bad = m.cells[0];
  bad.critical_density = bad.jam_density;
  CHECK_FALSE(mctm::violations(bad, m.dt_hours).empty());
}

TEST_CASE("model json and boundary csv round trip", "[mctm_sim]") {
  const auto m = fixture::model();
  const auto back = mctm::model_from_json(mctm::to_json(m));
  REQUIRE(back.size() == 4);
  CHECK(back.cells[2].free_flow_speed == m.cells[2].free_flow_speed);
  CHECK(back.ramps[0].off);
  CHECK_FALSE(back.ramps[3].on);
  CHECK(back.cells[0].diverge);

  const auto in = fixture::boundary();
  std::stringstream ss;
  mctm::write_boundary(ss, in, 4);
  const auto t = csv::parse(ss, "boundary.csv");
  const auto rb = mctm::boundary_from_csv(t, 4);
  REQUIRE(rb.steps() == in.steps());
  for (std::size_t k = 0; k < in.steps(); k += 37) {
    CHECK(std::abs(rb.q_up[k] - in.q_up[k]) <= 1e-9 * in.q_up[k]);
    CHECK(rb.time_s[k] == in.time_s[k]);
    CHECK(std::abs(rb.on_ramp[k][1] - in.on_ramp[k][1]) <= 1e-9 * in.on_ramp[k][1]);
  }
}
