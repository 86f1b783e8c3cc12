#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "vslfog/fixture.hpp"
#include "vslfog/ga.hpp"
#include "vslfog/strategy_opt.hpp"

using namespace vslfog;
using Catch::Approx;

namespace {

risk::RiskFeatures random_features(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return risk::RiskFeatures::from_values(
      {10 * u(rng), u(rng) < 0.5 ? 0.0 : 1.0, 150 * u(rng), 150 * u(rng), 20 * u(rng), 10 * u(rng),
       20 * u(rng), 10 * u(rng), 20 * u(rng) - 10});
}

mctm::SimTrajectory one_cell_run(double q, double v, std::size_t steps) {
  mctm::SimTrajectory t(1);
  const std::vector<double> d{q / v}, f{q, q}, s{v}, lim{v};
  for (std::size_t k = 0; k < steps; ++k) t.push_step(d, f, s, lim, 0);
  t.push_final(d);
  return t;
}

opt::OptimConfig small_ga(std::uint64_t seed) {
  opt::OptimConfig c;
  c.ga.population = 8;
  c.ga.generations = 4;
  c.ga.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("cumulative risk over a feature grid", "[strategy_opt]") {
  const auto c = risk::RiskCoefficients::fog_model();
  std::vector<std::vector<risk::RiskFeatures>> g{{risk::RiskFeatures{}}};
  CHECK(opt::total_risk(g, c, risk::RiskMode::linear) == Approx(0.493));

  std::mt19937_64 rng(4);
  std::vector<std::vector<risk::RiskFeatures>> grid(3, std::vector<risk::RiskFeatures>(4));
  for (auto& row : grid)
    for (auto& f : row) f = random_features(rng);
  double brute = 0.0;
  for (const auto& row : grid)
    for (const auto& f : row) {
      const auto x = f.values();
      double eta = 0.493;
      const double w[9] = {-0.202, -1.077, 0.000, 0.002, 0.173, -0.202, -0.009, -0.561, 0.013};
      for (int j = 0; j < 9; ++j) eta += w[j] * x[j];
      brute += eta;
    }
  CHECK(opt::total_risk(grid, c, risk::RiskMode::linear) == Approx(brute).epsilon(1e-12));
  auto twice = grid;
  twice.insert(twice.end(), grid.begin(), grid.end());
  CHECK(opt::total_risk(twice, c, risk::RiskMode::linear) ==
        Approx(2.0 * opt::total_risk(grid, c, risk::RiskMode::linear)).epsilon(1e-14));
}

TEST_CASE("total travel time", "[strategy_opt]") {
  mctm::SegmentModel m;
  m.cells = {fixture::reference_cells()[0]};
  m.ramps = {{false, false}};
  CHECK(opt::total_travel_time(m, one_cell_run(1200.0, 60.0, 1)) == Approx(16.0));
  CHECK(opt::total_travel_time(m, one_cell_run(0.0, 60.0, 5)) == 0.0);
  const double full = opt::total_travel_time(m, one_cell_run(1200.0, 60.0, 7));
  CHECK(opt::total_travel_time(m, one_cell_run(1200.0, 30.0, 7)) == Approx(2.0 * full));
}

TEST_CASE("fitness arithmetic", "[strategy_opt]") {
  CHECK(opt::fitness_from_rates(-0.1685, 0.0048) == Approx(35.10).margin(0.01));
  CHECK(opt::fitness_from_rates(-0.2544, 0.0289) == Approx(8.80).margin(0.01));
  CHECK(opt::fitness_from_rates(0.0, 0.0) == 0.0);
  CHECK(opt::fitness_from_rates(-0.1, -0.2) == Approx(0.1 / 1e-6));
  const auto c = opt::make_components(90.0, 100.0, 101.0, 100.0);
  CHECK(c.d_risk == Approx(-0.1));
  CHECK(c.d_ttt == Approx(0.01));
  CHECK(c.fitness == Approx(10.0));
}

TEST_CASE("benefit-cost ratio", "[strategy_opt]") {
  CHECK(opt::benefit_cost(35.1, 4) == Approx(8.775));
  CHECK(opt::benefit_cost(3.5, 1) == 3.5);
  CHECK(opt::benefit_cost(0.0, 3) == 0.0);
  CHECK_THROWS_AS(opt::benefit_cost(1.0, 0), UsageError);
}

TEST_CASE("never-triggering control changes nothing", "[strategy_opt]") {
  const opt::Evaluator ev(fixture::scenario());
  const auto c = ev.evaluate(vsl::ControlFactors::never_trigger());
  CHECK(c.d_risk == 0.0);
  CHECK(c.d_ttt == 0.0);
  CHECK(c.fitness == 0.0);
  const auto run = opt::run_controlled(ev.scenario(), vsl::ControlFactors::never_trigger());
  for (const auto& row : run.trace) CHECK(row.posted == 65.0);
}

TEST_CASE("controlled runs are deterministic and respect the layout", "[strategy_opt]") {
  auto sc = fixture::scenario({}, fixture::layouts()[1]);
  const auto a = opt::run_controlled(sc, fixture::fog_factors());
  const auto b = opt::run_controlled(sc, fixture::fog_factors());
  bool same = true;
  for (std::size_t k = 0; k < a.trajectory.horizon(); ++k)
    for (std::size_t i = 0; i < 4; ++i) same = same && a.trajectory.density(k, i) == b.trajectory.density(k, i);
  CHECK(same);
  for (std::size_t k = 0; k < a.trajectory.horizon(); ++k) {
    // cell 2 follows the sign in cell 1, cell 4 the sign in cell 3
    REQUIRE(a.trajectory.limit(k, 1) == (a.trajectory.limit(k, 0) < 65.0 ? a.trajectory.limit(k, 0)
                                                                          : sc.model.cells[1].free_flow_speed));
    REQUIRE(a.trajectory.limit(k, 3) == (a.trajectory.limit(k, 2) < 65.0 ? a.trajectory.limit(k, 2)
                                                                          : sc.model.cells[3].free_flow_speed));
  }
  sc.horizon = 5;
  CHECK_THROWS_AS(opt::Evaluator(sc), HorizonError);
}

TEST_CASE("ga finds a quadratic optimum", "[ga]") {
  const std::vector<double> star{1.234, -2.5, 3.3};
  const ga::Objective f = [&](const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t d = 0; d < x.size(); ++d) s -= (x[d] - star[d]) * (x[d] - star[d]);
    return s;
  };
  const ga::Box box{{-5, -5, -5}, {5, 5, 5}};
  ga::GAConfig cfg;
  cfg.generations = 200;
  const auto r = ga::maximize(f, box, cfg);
  for (std::size_t d = 0; d < 3; ++d) CHECK(std::abs(r.best[d] - star[d]) < 1e-3);
  for (std::size_t g = 1; g < r.history.size(); ++g) CHECK(r.history[g].best >= r.history[g - 1].best);
  CHECK(ga::maximize(f, box, cfg).best == r.best);
}

TEST_CASE("ga elitism with a degenerate population", "[ga]") {
  const ga::Objective f = [](const std::vector<double>& x) { return -std::abs(x[0] - 0.3); };
  const ga::Box box{{0.0}, {0.0}};
  ga::GAConfig cfg;
  cfg.mutation_prob = 0.0;
  const auto r = ga::maximize(f, box, cfg);
  for (std::size_t g = 1; g < r.history.size(); ++g) CHECK(r.history[g].best == r.history[0].best);
  CHECK_THROWS_AS(ga::maximize(f, box, [] {
                    ga::GAConfig c;
                    c.population = 7;
                    return c;
                  }()),
                  UsageError);
}

TEST_CASE("factor snapping", "[strategy_opt]") {
  const vsl::FactorBounds b;
  const auto x = opt::snap_factors({100.0, 4.6, 20.4}, b, 30.0);
  CHECK(x == std::vector<double>{90.0, 5.0, 20.0});
  CHECK(opt::snap_factors({10.0, 0.2, 0.0}, b, 30.0) == std::vector<double>{30.0, 1.0, 1.0});
  CHECK(opt::snap_factors({299.0, 30.0, 30.0}, b, 30.0) == std::vector<double>{300.0, 20.0, 20.0});
}

TEST_CASE("placement comparison", "[strategy_opt]") {
  const auto sc = fixture::scenario();
  const auto all = fixture::layouts();
  const std::vector<vsl::SignLayout> twins{all[3], all[3]};
  const auto r = opt::compare_placements(sc, twins, small_ga(1));
  REQUIRE(r.size() == 2);
  CHECK(r[0].index == 0);
  CHECK(r[0].result.components.fitness == r[1].result.components.fitness);

  const std::vector<vsl::SignLayout> pair{all[0], all[3]};
  for (std::uint64_t seed : {1u, 2u}) {
    const auto a = opt::compare_placements(sc, pair, small_ga(seed));
    const auto b = opt::compare_placements(sc, pair, small_ga(seed));
    REQUIRE(a.size() == 2);
    CHECK(a[0].index == b[0].index);
    CHECK(a[0].benefit_cost == b[0].benefit_cost);
    CHECK(a[0].benefit_cost >= a[1].benefit_cost);
    CHECK(a[1].result.best == b[1].result.best);
  }
  const std::vector<vsl::SignLayout> single{all[0]};
  CHECK_THROWS_AS(opt::compare_placements(sc, single, small_ga(1)), UsageError);
}
