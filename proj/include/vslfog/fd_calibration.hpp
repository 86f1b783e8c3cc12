#pragma once

// Two-step calibration of the trapezoidal fundamental diagram of each cell:
// a least-squares fit on detector (density, flow) points, then a constrained
// derivative-free refinement that matches simulated to measured densities.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vslfog/cobyla.hpp"
#include "vslfog/data_pipeline.hpp"
#include "vslfog/error.hpp"
#include "vslfog/mctm.hpp"
#include "vslfog/mctm_io.hpp"

namespace vslfog::calib {

inline constexpr std::size_t kMinObservations = 50;
inline constexpr double kCongestedSpeedFraction = 0.8;  // of the 85th-percentile speed
// A neighbour below this fraction of its 85th-percentile speed is past
// critical density, so its measured flow is what it can take in.
inline constexpr double kBoundarySpeedFraction = 0.95;
inline constexpr double kDefaultWaveSpeed = 12.0;       // mph, when no congestion was observed
inline constexpr double kMapeFloor = 1.0;               // veh/mile

struct CellObservations {
  std::vector<double> flow, density, speed;

  std::size_t size() const { return flow.size(); }
};

/// Measured traffic state per step for every cell (one detector per cell).
struct DetectorSeries {
  std::vector<std::int64_t> time_s;
  std::vector<std::vector<double>> flow, density, speed;  // [step][cell]

  std::size_t steps() const { return density.size(); }
  std::size_t cells() const { return density.empty() ? 0 : density.front().size(); }

  void validate() const {
    if (flow.size() != steps() || speed.size() != steps())
      throw ParseError("detector series fields differ in length");
    if (!time_s.empty() && time_s.size() != steps()) throw ParseError("detector timestamps misaligned");
    for (std::size_t k = 0; k < steps(); ++k) {
      if (flow[k].size() != cells() || density[k].size() != cells() || speed[k].size() != cells())
        throw ParseError("detector step " + std::to_string(k) + " does not cover every cell");
      for (std::size_t i = 0; i < cells(); ++i)
        if (flow[k][i] < 0.0 || density[k][i] < 0.0 || speed[k][i] < 0.0)
          throw ParseError("negative detector value at step " + std::to_string(k));
    }
  }

  CellObservations observations(std::size_t cell) const {
    CellObservations o;
    for (std::size_t k = 0; k < steps(); ++k) {
      o.flow.push_back(flow[k][cell]);
      o.density.push_back(density[k][cell]);
      o.speed.push_back(speed[k][cell]);
    }
    return o;
  }

  std::vector<double> densities(std::size_t cell) const { return observations(cell).density; }

  /// `cell_stations[i]` names the detector station standing for cell i.
  static DetectorSeries from_section(const data::SectionSeries& s,
                                     const std::vector<std::string>& cell_stations) {
    std::vector<std::size_t> idx;
    for (const auto& id : cell_stations) idx.push_back(s.station_index(id));
    DetectorSeries d;
    d.time_s = s.time_s;
    for (std::size_t k = 0; k < s.steps(); ++k) {
      std::vector<double> q, r, v;
      for (std::size_t st : idx) {
        q.push_back(s.flow[k][st]);
        r.push_back(s.density[k][st]);
        v.push_back(s.speed[k][st]);
      }
      d.flow.push_back(std::move(q));
      d.density.push_back(std::move(r));
      d.speed.push_back(std::move(v));
    }
    d.validate();
    return d;
  }
};

/// Nearest-rank percentile, p in (0, 1].
inline double percentile(std::vector<double> v, double p) {
  if (v.empty()) throw UsageError("percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

// ---------------------------------------------------------------------------
// Step 1: least squares

struct InitialFit {
  mctm::CellParams params;
  bool wave_speed_defaulted = false;
  std::size_t free_points = 0;
  std::size_t congested_points = 0;
};

/// Pushes parameters onto the feasible set: rho_c = Q_M / v_f, and Q_M drops
/// to the triangular peak when the two branches meet below it.
inline mctm::CellParams project_feasible(mctm::CellParams c) {
  const double peak = c.free_flow_speed * c.wave_speed * c.jam_density / (c.free_flow_speed + c.wave_speed);
  c.max_flow = std::min(c.max_flow, peak);
  c.critical_density = c.max_flow / c.free_flow_speed;
  return c;
}

inline InitialFit lsm_initial_fit(const CellObservations& obs, double length, double dt_hours,
                                  bool diverge = false) {
  const std::size_t n = obs.size();
  if (obs.density.size() != n || obs.speed.size() != n) throw UsageError("observation fields differ in length");
  if (n < kMinObservations)
    throw InfeasibleError("need at least " + std::to_string(kMinObservations) + " observations, got " +
                          std::to_string(n));

  const double q_max = percentile(obs.flow, 0.99);
  const double v_cut = kCongestedSpeedFraction * percentile(obs.speed, 0.85);
  std::vector<char> free(n), cong(n);
  for (std::size_t k = 0; k < n; ++k) {
    cong[k] = obs.speed[k] < v_cut;
    free[k] = !cong[k];
  }

  InitialFit fit;
  double vf = 0.0, wc = 0.0, rj = 0.0;
  for (int iter = 0; iter < 100; ++iter) {
    double sqr = 0.0, srr = 0.0;
    std::size_t nf = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (free[k]) {
        sqr += obs.flow[k] * obs.density[k];
        srr += obs.density[k] * obs.density[k];
        ++nf;
      }
    if (!(srr > 0.0)) throw InfeasibleError("no free-flow observations to fit v_f");
    vf = sqr / srr;

    // q = a + b rho on congested points
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    std::size_t nc = 0;
    for (std::size_t k = 0; k < n; ++k)
      if (cong[k]) {
        sx += obs.density[k];
        sy += obs.flow[k];
        sxx += obs.density[k] * obs.density[k];
        sxy += obs.density[k] * obs.flow[k];
        ++nc;
      }
    const double det = static_cast<double>(nc) * sxx - sx * sx;
    fit.wave_speed_defaulted = true;
    if (nc >= 2 && det > 1e-12 * static_cast<double>(nc) * sxx) {
      const double b = (static_cast<double>(nc) * sxy - sx * sy) / det;
      const double a = (sy - b * sx) / static_cast<double>(nc);
      if (b < 0.0 && a > 0.0) {
        wc = -b;
        rj = a / wc;
        fit.wave_speed_defaulted = false;
      }
    }
    if (fit.wave_speed_defaulted) {
      wc = kDefaultWaveSpeed;
      rj = q_max / vf + q_max / wc;
    }
    fit.free_points = nf;
    fit.congested_points = fit.wave_speed_defaulted ? 0 : nc;
    if (fit.wave_speed_defaulted) break;

    // Reclassify against the fitted branches; the capacity plateau between
    // them belongs to neither.
    const double r1 = q_max / vf, r2 = rj - q_max / wc;
    const double lo = std::min(r1, r2), hi = std::max(r1, r2);
    bool changed = false;
    for (std::size_t k = 0; k < n; ++k) {
      const char f = obs.density[k] <= lo, c = obs.density[k] >= hi;
      changed = changed || f != free[k] || c != cong[k];
      free[k] = f;
      cong[k] = c;
    }
    if (!changed) break;
  }

  mctm::CellParams p;
  p.length = length;
  p.free_flow_speed = vf;
  p.wave_speed = wc;
  p.jam_density = rj;
  p.max_flow = q_max;
  p.diverge = diverge;
  fit.params = project_feasible(p);
  const auto bad = mctm::violations(fit.params, dt_hours);
  if (!bad.empty()) throw InfeasibleError("least-squares fit is infeasible: " + bad.front());
  return fit;
}

// ---------------------------------------------------------------------------
// Goodness of fit

struct FitMetrics {
  double mape = 0.0;  // percent, over steps with measured density >= 1 veh/mile
  double mae = 0.0;   // veh/mile
  std::size_t mape_points = 0;
};

inline FitMetrics evaluate_fit(std::span<const double> simulated, std::span<const double> measured) {
  if (simulated.empty() || measured.empty()) throw UsageError("empty series");
  if (simulated.size() != measured.size()) throw UsageError("series differ in length");
  FitMetrics m;
  double ape = 0.0, ae = 0.0;
  for (std::size_t k = 0; k < measured.size(); ++k) {
    const double e = std::abs(simulated[k] - measured[k]);
    ae += e;
    if (measured[k] >= kMapeFloor) {
      ape += e / measured[k];
      ++m.mape_points;
    }
  }
  m.mae = ae / static_cast<double>(measured.size());
  m.mape = m.mape_points ? 100.0 * ape / static_cast<double>(m.mape_points) : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Step 2: constrained refinement

struct RefineConfig {
  dfo::Options optimizer{};
};

struct RefineOutcome {
  mctm::CellParams params;
  double objective_initial = 0.0;
  double objective_final = 0.0;
  std::size_t evaluations = 0;
};

/// Shared inputs of the refinement: measured boundaries and ramps, and the
/// detector series whose densities are matched.
struct MeasuredRun {
  const mctm::BoundaryInput* input = nullptr;
  const DetectorSeries* detectors = nullptr;

  std::size_t horizon() const { return std::min(input->steps(), detectors->steps()); }
};

/// Simulated minus measured density over all cells (step-major) for the
/// whole section started from the measured step-0 densities.
inline std::vector<double> density_errors(const mctm::SegmentModel& m, const MeasuredRun& run) {
  const std::size_t h = run.horizon();
  const auto traj = mctm::simulate(m, *run.input, run.detectors->density.front(), h);
  std::vector<double> e;
  e.reserve(h * m.size());
  for (std::size_t k = 0; k < h; ++k)
    for (std::size_t i = 0; i < m.size(); ++i) e.push_back(traj.density(k, i) - run.detectors->density[k][i]);
  return e;
}

inline double mean_square(const std::vector<double>& e) {
  double s = 0.0;
  for (double v : e) s += v * v;
  return e.empty() ? 0.0 : s / static_cast<double>(e.size());
}

/// Mean squared density error of the whole section, all cells and steps.
inline double density_mse(const mctm::SegmentModel& m, const MeasuredRun& run) {
  return mean_square(density_errors(m, run));
}

/// One cell simulated on its own. Interior edges are driven by the measured
/// neighbours: upstream, a neighbour in free flow sends its measured flow
/// less its off-ramp and a congested one sends without bound; downstream, a
/// congested neighbour takes its measured flow less its on-ramp and a free
/// one takes everything. Section edges keep the measured boundary input.
struct CellRun {
  mctm::SegmentModel model;  // one cell
  mctm::BoundaryInput input;
  std::vector<double> measured;

  CellRun(const mctm::SegmentModel& m, std::size_t cell, const MeasuredRun& run) {
    const auto& in = *run.input;
    const auto& d = *run.detectors;
    const std::size_t h = run.horizon();
    model.dt_hours = m.dt_hours;
    model.cells = {m.cells[cell]};
    model.ramps = {m.ramps[cell]};
    input = mctm::BoundaryInput::zeros(h, 1);
    auto cut = [&](std::size_t j) { return kBoundarySpeedFraction * percentile(d.observations(j).speed, 0.85); };
    const double up_cut = cell > 0 ? cut(cell - 1) : 0.0;
    const double down_cut = cell + 1 < m.size() ? cut(cell + 1) : 0.0;
    constexpr double kCongested = std::numeric_limits<double>::max();
    for (std::size_t k = 0; k < h; ++k) {
      if (cell == 0) {
        input.q_up[k] = in.q_up[k];
        input.rho_up[k] = in.rho_up[k];
      } else {
        input.q_up[k] = std::max(0.0, d.flow[k][cell - 1] - in.off_ramp[k][cell - 1]);
        input.rho_up[k] = d.speed[k][cell - 1] < up_cut ? kCongested : 0.0;
      }
      if (cell + 1 == m.size()) {
        input.q_down[k] = in.q_down[k];
        input.rho_down[k] = in.rho_down[k];
      } else {
        input.q_down[k] = std::max(0.0, d.flow[k][cell + 1] - in.on_ramp[k][cell + 1]);
        input.rho_down[k] = d.speed[k][cell + 1] < down_cut ? kCongested : 0.0;
      }
      input.on_ramp[k] = {in.on_ramp[k][cell]};
      input.off_ramp[k] = {in.off_ramp[k][cell]};
      measured.push_back(d.density[k][cell]);
    }
  }

  /// Simulated minus measured density of the cell under parameters `c`.
  std::vector<double> errors(const mctm::CellParams& c) const {
    auto m = model;
    m.cells.front() = c;
    const double start = measured.front();
    const auto traj = mctm::simulate(m, input, std::span<const double>(&start, 1));
    std::vector<double> e(measured.size());
    for (std::size_t k = 0; k < e.size(); ++k) e[k] = traj.density(k, 0) - measured[k];
    return e;
  }
};

namespace detail {

inline mctm::CellParams with_vector(mctm::CellParams c, const std::vector<double>& x) {
  c.free_flow_speed = x[0];
  c.wave_speed = x[1];
  c.max_flow = x[2];
  c.critical_density = x[3];
  c.jam_density = x[4];
  return c;
}

// Feasibility as scale-free inequalities, each >= 0 when satisfied.
inline std::vector<double> constraints(const mctm::CellParams& c, const std::vector<double>& x0,
                                       double dt_hours) {
  const double s = 1.0 + mctm::kFeasibilitySlack;
  return {c.free_flow_speed / x0[0],
          c.wave_speed / x0[1],
          c.max_flow / x0[2],
          c.critical_density / x0[3],
          (c.jam_density - c.critical_density) / x0[4],
          (c.free_flow_speed * c.critical_density * s - c.max_flow) / x0[2],
          (c.wave_speed * (c.jam_density - c.critical_density) * s - c.max_flow) / x0[2],
          (c.length - c.free_flow_speed * dt_hours) / c.length,
          (c.length - c.wave_speed * dt_hours) / c.length};
}

}  // namespace detail

/// Refines cell `cell` of `model` against its own measured density, the
/// other cells entering only through their measurements.
inline RefineOutcome refine_constrained(const mctm::SegmentModel& model, std::size_t cell,
                                        const MeasuredRun& run, const RefineConfig& cfg = {}) {
  if (cell >= model.size()) throw UsageError("cell index out of range");
  const auto& init = model.cells[cell];
  if (const auto bad = mctm::violations(init, model.dt_hours); !bad.empty())
    throw InfeasibleError("initial parameters of cell " + std::to_string(cell + 1) +
                          " are infeasible: " + bad.front());
  const std::vector<double> x0{init.free_flow_speed, init.wave_speed, init.max_flow,
                               init.critical_density, init.jam_density};
  const CellRun cr(model, cell, run);

  RefineOutcome out;
  out.params = init;
  out.objective_initial = out.objective_final = mean_square(cr.errors(init));
  if (!(out.objective_initial > 0.0)) {
    out.evaluations = 1;
    return out;
  }

  // Residuals scaled so their sum of squares is MSE / initial MSE.
  const double weight = 1.0 / std::sqrt(static_cast<double>(cr.measured.size()) * out.objective_initial);
  const dfo::Problem problem = [&](const std::vector<double>& x) {
    dfo::Evaluation e;
    const auto c = detail::with_vector(init, x);
    e.c = detail::constraints(c, x0, model.dt_hours);
    // Far outside the feasible set the diagram is meaningless; keep the
    // objective finite so the linear models stay usable.
    e.f = 1e6;
    if (*std::min_element(x.begin(), x.end()) <= 0.0 || c.jam_density < cr.measured.front()) return e;
    e.r = cr.errors(c);
    e.f = 0.0;
    for (auto& v : e.r) {
      v *= weight;
      e.f += v * v;
    }
    return e;
  };
  const auto res = dfo::minimize(problem, x0, cfg.optimizer);
  out.evaluations = res.evaluations;
  const auto best = detail::with_vector(init, res.x);
  if (mctm::violations(best, model.dt_hours).empty()) {
    out.params = best;
    out.objective_final = res.at_x.f * out.objective_initial;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Both steps

struct CellReport {
  mctm::CellParams initial;  // least-squares (or supplied) starting point
  bool wave_speed_defaulted = false;
  FitMetrics metrics;
  std::size_t evaluations = 0;
};

struct CalibrationResult {
  mctm::SegmentModel model;
  std::vector<CellReport> cells;
  std::size_t evaluations = 0;
};

/// Refines each cell in turn, upstream to downstream (one sweep), then
/// scores the final model against the measured densities.
inline CalibrationResult refine_all(mctm::SegmentModel model, const MeasuredRun& run,
                                    const RefineConfig& cfg = {}) {
  model.validate();
  CalibrationResult r;
  r.cells.resize(model.size());
  for (std::size_t i = 0; i < model.size(); ++i) {
    r.cells[i].initial = model.cells[i];
    const auto o = refine_constrained(model, i, run, cfg);
    model.cells[i] = o.params;
    r.cells[i].evaluations = o.evaluations;
    r.evaluations += o.evaluations;
  }
  const std::size_t h = run.horizon();
  const auto traj = mctm::simulate(model, *run.input, run.detectors->density.front(), h);
  for (std::size_t i = 0; i < model.size(); ++i) {
    std::vector<double> sim, meas;
    for (std::size_t k = 0; k < h; ++k) {
      sim.push_back(traj.density(k, i));
      meas.push_back(run.detectors->density[k][i]);
    }
    r.cells[i].metrics = evaluate_fit(sim, meas);
  }
  r.model = std::move(model);
  return r;
}

/// `geometry` supplies lengths, ramps, diverge flags and the time step; its
/// diagram parameters are replaced by the least-squares fit before refining.
inline CalibrationResult calibrate(const mctm::SegmentModel& geometry, const mctm::BoundaryInput& input,
                                   const DetectorSeries& detectors, const RefineConfig& cfg = {}) {
  detectors.validate();
  if (detectors.cells() != geometry.size())
    throw UsageError("detector series covers " + std::to_string(detectors.cells()) + " cells, model has " +
                     std::to_string(geometry.size()));
  input.validate(geometry.size());
  auto model = geometry;
  std::vector<bool> defaulted;
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto fit = lsm_initial_fit(detectors.observations(i), model.cells[i].length, model.dt_hours,
                                     model.cells[i].diverge);
    model.cells[i] = fit.params;
    defaulted.push_back(fit.wave_speed_defaulted);
  }
  auto r = refine_all(std::move(model), MeasuredRun{&input, &detectors}, cfg);
  for (std::size_t i = 0; i < r.cells.size(); ++i) r.cells[i].wave_speed_defaulted = defaulted[i];
  return r;
}

inline nlohmann::json to_json(const CalibrationResult& r) {
  auto j = mctm::to_json(r.model);
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.cells[i];
    cells.push_back({{"cell", i + 1},
                     {"mape_percent", c.metrics.mape},
                     {"mae", c.metrics.mae},
                     {"evaluations", c.evaluations},
                     {"wave_speed_defaulted", c.wave_speed_defaulted},
                     {"initial", mctm::to_json(c.initial, r.model.ramps[i])}});
  }
  j["metrics"] = {{"cells", cells}, {"evaluations", r.evaluations}};
  return j;
}

}  // namespace vslfog::calib
