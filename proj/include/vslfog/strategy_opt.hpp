#pragma once

// Safety/mobility evaluation of VSL control factors through paired
// controlled/uncontrolled simulations, the GA search over factors, and
// sign-placement comparison by benefit-cost ratio.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vslfog/csv.hpp"
#include "vslfog/data_pipeline.hpp"
#include "vslfog/error.hpp"
#include "vslfog/ga.hpp"
#include "vslfog/mctm.hpp"
#include "vslfog/risk_model.hpp"
#include "vslfog/vsl_control.hpp"

namespace vslfog::opt {

inline constexpr double kFitnessEpsilon = 1e-6;

struct Scenario {
  mctm::SegmentModel model;
  mctm::BoundaryInput input;
  std::vector<double> initial_density;
  std::vector<double> visibility;  // miles, one per input step
  vsl::SignLayout layout;
  risk::RiskCoefficients coefficients = risk::RiskCoefficients::fog_model();
  risk::RiskMode mode = risk::RiskMode::linear;
  vsl::TriggerMode trigger = vsl::TriggerMode::per_sign;
  std::size_t horizon = 0;  // steps; 0 = whole input
  std::size_t window = 10;  // feature window, steps

  std::size_t steps() const { return horizon == 0 ? input.steps() : horizon; }
  double dt_seconds() const { return model.dt_hours * 3600.0; }

  void validate() const {
    model.validate();
    input.validate(model.size());
    layout.validate(model.size());
    if (horizon > input.steps())
      throw HorizonError("evaluation horizon exceeds the boundary input");
    if (visibility.size() < steps()) throw HorizonError("visibility series shorter than the horizon");
    if (initial_density.size() != model.size())
      throw UsageError("initial density count does not match the segment");
    if (window < 2) throw UsageError("feature window needs at least 2 steps");
    if (window >= steps()) throw HorizonError("horizon shorter than the feature window");
  }
};

// ---------------------------------------------------------------------------
// Metrics

/// Risk of every cell at step k; -inf before a full feature window exists.
inline std::vector<double> cell_risks(const Scenario& sc, const mctm::SimTrajectory& t,
                                      std::size_t k) {
  std::vector<double> r(sc.model.size(), -std::numeric_limits<double>::infinity());
  if (k < sc.window) return r;
  for (std::size_t i = 0; i < r.size(); ++i)
    r[i] = risk::risk(
        data::extract_features(sc.model, sc.input, t, sc.visibility, i, k, sc.window),
        sc.coefficients, sc.mode);
  return r;
}

/// Cumulative risk per cell over steps window .. h-1 (earlier steps have no
/// full feature window and are skipped in every run alike).
inline std::vector<double> risk_by_cell(const Scenario& sc, const mctm::SimTrajectory& t) {
  std::vector<double> sum(sc.model.size(), 0.0);
  for (std::size_t k = sc.window; k < t.horizon(); ++k) {
    const auto r = cell_risks(sc, t, k);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += r[i];
  }
  return sum;
}

inline double total_risk(const Scenario& sc, const mctm::SimTrajectory& t) {
  double s = 0.0;
  for (double v : risk_by_cell(sc, t)) s += v;
  return s;
}

/// Sum of risk over a precomputed [step][cell] feature grid.
inline double total_risk(const std::vector<std::vector<risk::RiskFeatures>>& grid,
                         const risk::RiskCoefficients& c, risk::RiskMode mode) {
  double s = 0.0;
  for (const auto& row : grid)
    for (const auto& f : row) s += risk::risk(f, c, mode);
  return s;
}

/// Sum over steps and cells of l_i q_i(k) / v_i(k), with q_i the flow
/// entering cell i. No time-step factor is applied.
inline std::vector<double> travel_time_by_cell(const mctm::SegmentModel& m,
                                               const mctm::SimTrajectory& t) {
  std::vector<double> out(m.size(), 0.0);
  for (std::size_t k = 0; k < t.horizon(); ++k)
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double q = t.flow(k, i), v = t.speed(k, i);
      if (q == 0.0) continue;
      if (!(v > 0.0))
        throw InfeasibleError("flow " + std::to_string(q) + " enters stopped cell " +
                              std::to_string(i + 1) + " at step " + std::to_string(k));
      out[i] += m.cells[i].length * q / v;
    }
  return out;
}

inline double total_travel_time(const mctm::SegmentModel& m, const mctm::SimTrajectory& t) {
  double s = 0.0;
  for (double v : travel_time_by_cell(m, t)) s += v;
  return s;
}

struct FitnessComponents {
  double r_vsl = 0.0, r_non = 0.0;
  double ttt_vsl = 0.0, ttt_non = 0.0;
  double d_risk = 0.0;  // relative change of cumulative risk
  double d_ttt = 0.0;   // relative change of total travel time
  double fitness = 0.0;

  bool operator==(const FitnessComponents&) const = default;
};

/// Fitness from the two relative changes. Non-positive travel-time changes
/// use a small positive denominator.
inline double fitness_from_rates(double d_risk, double d_ttt) {
  const double f = -d_risk / std::max(d_ttt, kFitnessEpsilon);
  return f == 0.0 ? 0.0 : f;  // no negative zero
}

inline FitnessComponents make_components(double r_vsl, double r_non, double ttt_vsl,
                                         double ttt_non) {
  if (r_non == 0.0) throw InfeasibleError("uncontrolled cumulative risk is zero");
  if (ttt_non == 0.0) throw InfeasibleError("uncontrolled total travel time is zero");
  FitnessComponents c{r_vsl, r_non, ttt_vsl, ttt_non};
  c.d_risk = (r_vsl - r_non) / r_non;
  c.d_ttt = (ttt_vsl - ttt_non) / ttt_non;
  c.fitness = fitness_from_rates(c.d_risk, c.d_ttt);
  return c;
}

// ---------------------------------------------------------------------------
// Runs

inline mctm::SimTrajectory run_uncontrolled(const Scenario& sc) {
  return mctm::simulate(sc.model, sc.input, sc.initial_density, sc.steps());
}

struct ControlledRun {
  mctm::SimTrajectory trajectory;
  std::vector<vsl::TraceRow> trace;
};

/// Simulation with the controller in the loop: on each cycle boundary it
/// reads the risks computed from the run so far and re-posts limits.
inline ControlledRun run_controlled(const Scenario& sc, const vsl::ControlFactors& f) {
  vsl::Controller ctl(sc.layout, f, sc.dt_seconds(), sc.trigger);
  const auto vf = sc.model.free_flow_speeds();
  auto hook = [&](mctm::SimState& s, const mctm::SimTrajectory& so_far) {
    if (!ctl.on_cycle(s.k)) return;
    const auto& st = ctl.tick(s.k, cell_risks(sc, so_far, s.k));
    s.limit = vsl::map_limits_to_cells(sc.layout, st.posted, vf);
  };
  ControlledRun out;
  out.trajectory = mctm::simulate(sc.model, sc.input, sc.initial_density, sc.steps(), hook);
  out.trace = ctl.trace();
  return out;
}

/// Scores factor sets against one scenario. The uncontrolled companion run is
/// computed once and shared by every evaluation.
class Evaluator {
public:
  explicit Evaluator(Scenario sc) : sc_(std::move(sc)) {
    sc_.validate();
    baseline_ = run_uncontrolled(sc_);
    r_non_ = total_risk(sc_, baseline_);
    ttt_non_ = total_travel_time(sc_.model, baseline_);
    if (r_non_ == 0.0) throw InfeasibleError("uncontrolled cumulative risk is zero");
    if (ttt_non_ == 0.0) throw InfeasibleError("uncontrolled total travel time is zero");
  }

  const Scenario& scenario() const { return sc_; }
  const mctm::SimTrajectory& baseline() const { return baseline_; }

  FitnessComponents evaluate(const vsl::ControlFactors& f) const {
    f.validate();
    const auto run = run_controlled(sc_, f);
    return make_components(total_risk(sc_, run.trajectory), r_non_,
                           total_travel_time(sc_.model, run.trajectory), ttt_non_);
  }

private:
  Scenario sc_;
  mctm::SimTrajectory baseline_;
  double r_non_ = 0.0, ttt_non_ = 0.0;
};

inline FitnessComponents fitness(const Scenario& sc, const vsl::ControlFactors& f) {
  return Evaluator(sc).evaluate(f);
}

// ---------------------------------------------------------------------------
// Factor search

struct OptimConfig {
  ga::GAConfig ga;
  vsl::FactorBounds bounds;
  double threshold = 0.2;  // fixed; not part of the decision vector
};

struct OptimResult {
  vsl::ControlFactors best;
  FitnessComponents components;
  std::vector<ga::GenerationStats> history;
  std::size_t evaluations = 0;
};

/// Decision vector (cycle, step, clamp) onto the grid the controller accepts:
/// cycle to a multiple of the simulation step, speeds to whole mph.
inline std::vector<double> snap_factors(std::vector<double> x, const vsl::FactorBounds& b,
                                        double dt_s) {
  const double lo = std::ceil(b.cycle_min_s / dt_s - 1e-9) * dt_s;
  const double hi = std::floor(b.cycle_max_s / dt_s + 1e-9) * dt_s;
  x[0] = std::clamp(std::round(x[0] / dt_s) * dt_s, lo, hi);
  x[1] = std::clamp(std::round(x[1]), b.step_min_mph, b.step_max_mph);
  x[2] = std::clamp(std::round(x[2]), b.clamp_min_mph, b.clamp_max_mph);
  return x;
}

inline vsl::ControlFactors factors_from(const std::vector<double>& x, double threshold) {
  vsl::ControlFactors f;
  f.threshold = threshold;
  f.cycle_s = x[0];
  f.step_mph = x[1];
  f.clamp_mph = x[2];
  return f;
}

inline ga::Box factor_box(const vsl::FactorBounds& b) {
  return {{b.cycle_min_s, b.step_min_mph, b.clamp_min_mph},
          {b.cycle_max_s, b.step_max_mph, b.clamp_max_mph}};
}

inline OptimResult ga_optimize(const Evaluator& ev, const OptimConfig& cfg) {
  const double dt_s = ev.scenario().dt_seconds();
  std::map<std::vector<double>, FitnessComponents> seen;
  auto objective = [&](const std::vector<double>& x) {
    auto comp = ev.evaluate(factors_from(x, cfg.threshold));
    seen.emplace(x, comp);
    return comp.fitness;
  };
  auto snap = [&](std::vector<double> x) { return snap_factors(std::move(x), cfg.bounds, dt_s); };
  const auto r = ga::maximize(objective, factor_box(cfg.bounds), cfg.ga, snap);
  OptimResult out;
  out.best = factors_from(r.best, cfg.threshold);
  out.components = seen.at(r.best);
  out.history = r.history;
  out.evaluations = r.evaluations;
  return out;
}

inline OptimResult ga_optimize(const Scenario& sc, const OptimConfig& cfg) {
  return ga_optimize(Evaluator(sc), cfg);
}

/// Best of `samples` uniformly drawn, snapped factor vectors.
inline OptimResult random_search(const Evaluator& ev, const OptimConfig& cfg, std::size_t samples) {
  const double dt_s = ev.scenario().dt_seconds();
  const auto box = factor_box(cfg.bounds);
  std::mt19937_64 rng(cfg.ga.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  OptimResult out;
  bool first = true;
  for (std::size_t s = 0; s < samples; ++s) {
    std::vector<double> x(3);
    for (std::size_t d = 0; d < 3; ++d) x[d] = box.lower[d] + unit(rng) * (box.upper[d] - box.lower[d]);
    x = snap_factors(std::move(x), cfg.bounds, dt_s);
    const auto f = factors_from(x, cfg.threshold);
    const auto c = ev.evaluate(f);
    if (first || c.fitness > out.components.fitness) {
      out.best = f;
      out.components = c;
      first = false;
    }
  }
  out.evaluations = samples;
  return out;
}

inline double benefit_cost(double fitness_value, std::size_t sign_count) {
  if (sign_count == 0) throw UsageError("benefit-cost ratio needs at least one sign");
  return fitness_value / static_cast<double>(sign_count);
}

struct PlacementResult {
  std::size_t index = 0;  // position in the input list
  vsl::SignLayout layout;
  OptimResult result;
  double benefit_cost = 0.0;
};

/// Optimises every layout and ranks them by benefit-cost ratio, then raw
/// fitness, then fewer signs, then input order.
inline std::vector<PlacementResult> compare_placements(const Scenario& base,
                                                       std::span<const vsl::SignLayout> layouts,
                                                       const OptimConfig& cfg) {
  if (layouts.size() < 2) throw UsageError("placement comparison needs at least two layouts");
  std::vector<PlacementResult> out;
  for (std::size_t i = 0; i < layouts.size(); ++i) {
    Scenario sc = base;
    sc.layout = layouts[i];
    auto r = ga_optimize(sc, cfg);
    const double bc = benefit_cost(r.components.fitness, layouts[i].signs());
    out.push_back({i, layouts[i], std::move(r), bc});
  }
  std::stable_sort(out.begin(), out.end(), [](const PlacementResult& a, const PlacementResult& b) {
    if (a.benefit_cost != b.benefit_cost) return a.benefit_cost > b.benefit_cost;
    if (a.result.components.fitness != b.result.components.fitness)
      return a.result.components.fitness > b.result.components.fitness;
    if (a.layout.signs() != b.layout.signs()) return a.layout.signs() < b.layout.signs();
    return a.index < b.index;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Serialisation

inline nlohmann::json to_json(const FitnessComponents& c) {
  return {{"R_VSL", c.r_vsl},     {"R_Non", c.r_non},   {"TTT_VSL", c.ttt_vsl},
          {"TTT_Non", c.ttt_non}, {"delta_R", c.d_risk}, {"delta_T", c.d_ttt},
          {"fitness", c.fitness}};
}

inline nlohmann::json to_json(const ga::GAConfig& g) {
  return {{"dimension", 3},
          {"population", g.population},
          {"generations", g.generations},
          {"crossover_prob", g.crossover_prob},
          {"mutation_prob", g.mutation_prob},
          {"precision", g.precision},
          {"tournament", g.tournament},
          {"seed", g.seed}};
}

inline ga::GAConfig ga_config_from_json(const nlohmann::json& j, ga::GAConfig g = {}) {
  g.population = j.value("population", g.population);
  g.generations = j.value("generations", g.generations);
  g.crossover_prob = j.value("crossover_prob", g.crossover_prob);
  g.mutation_prob = j.value("mutation_prob", g.mutation_prob);
  g.precision = j.value("precision", g.precision);
  g.tournament = j.value("tournament", g.tournament);
  g.seed = j.value("seed", g.seed);
  if (j.value("dimension", 3) != 3) throw ParseError("GA dimension is fixed at 3");
  return g;
}

inline nlohmann::json to_json(const OptimResult& r) {
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& h : r.history)
    hist.push_back({{"generation", h.generation}, {"best", h.best}, {"mean", h.mean}});
  return {{"best_factors", vsl::to_json(r.best)},
          {"components", to_json(r.components)},
          {"evaluations", r.evaluations},
          {"history", hist}};
}

/// generation,best,mean
inline void write_history(std::ostream& os, std::span<const ga::GenerationStats> h) {
  os << "generation,best,mean\n";
  for (const auto& g : h) os << g.generation << ',' << csv::fmt(g.best) << ',' << csv::fmt(g.mean) << '\n';
}

}  // namespace vslfog::opt
