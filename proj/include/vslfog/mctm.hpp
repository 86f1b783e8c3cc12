#pragma once

// Density-based cell transmission model with per-cell variable speed limits.
//
// Units throughout: time in hours, length in miles, speed mph, density
// veh/mile (section total across lanes), flow veh/h.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vslfog/error.hpp"

namespace vslfog::mctm {

struct CellParams {
  double length = 0.0;            // miles
  double free_flow_speed = 0.0;   // mph
  double wave_speed = 0.0;        // mph
  double max_flow = 0.0;          // veh/h
  double critical_density = 0.0;  // veh/mile
  double jam_density = 0.0;       // veh/mile
  bool diverge = false;           // DS covariate of the risk model

  bool operator==(const CellParams&) const = default;
};

inline constexpr double kFeasibilitySlack = 1e-6;

/// Every violated feasibility condition, as readable text. Empty means valid.
inline std::vector<std::string> violations(const CellParams& c, double dt_hours) {
  std::vector<std::string> out;
  if (!(c.length > 0.0)) out.push_back("length must be positive");
  if (!(c.free_flow_speed > 0.0)) out.push_back("free-flow speed must be positive");
  if (!(c.wave_speed > 0.0)) out.push_back("wave speed must be positive");
  if (!(c.max_flow > 0.0)) out.push_back("max flow must be positive");
  if (!(c.critical_density > 0.0 && c.critical_density < c.jam_density))
    out.push_back("need 0 < critical density < jam density");
  if (c.length < c.free_flow_speed * dt_hours)
    out.push_back("cell shorter than one free-flow step (l < v_f * dT)");
  if (c.length < c.wave_speed * dt_hours)
    out.push_back("cell shorter than one congestion-wave step (l < w_c * dT)");
  if (c.max_flow > c.free_flow_speed * c.critical_density * (1.0 + kFeasibilitySlack))
    out.push_back("max flow exceeds v_f * rho_c");
  if (c.max_flow > c.wave_speed * (c.jam_density - c.critical_density) * (1.0 + kFeasibilitySlack))
    out.push_back("max flow exceeds w_c * (rho_j - rho_c)");
  return out;
}

struct RampFlags {
  bool on = false;
  bool off = false;

  bool operator==(const RampFlags&) const = default;
};

struct SegmentModel {
  std::vector<CellParams> cells;
  std::vector<RampFlags> ramps;  // one per cell
  double dt_hours = 30.0 / 3600.0;

  std::size_t size() const { return cells.size(); }

  void validate() const {
    if (cells.empty()) throw InfeasibleError("segment needs at least one cell");
    if (ramps.size() != cells.size()) throw ParseError("ramp flags must be given for every cell");
    if (!(dt_hours > 0.0)) throw InfeasibleError("time step must be positive");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto v = violations(cells[i], dt_hours);
      if (!v.empty()) throw InfeasibleError("cell " + std::to_string(i + 1) + ": " + v.front());
    }
  }

  std::vector<double> free_flow_speeds() const {
    std::vector<double> v;
    v.reserve(cells.size());
    for (const auto& c : cells) v.push_back(c.free_flow_speed);
    return v;
  }
};

/// Measured boundary conditions and ramp flows, one row per step.
struct BoundaryInput {
  std::vector<double> q_up, rho_up, q_down, rho_down;
  std::vector<std::vector<double>> on_ramp, off_ramp;  // [step][cell]
  std::vector<std::int64_t> time_s;                    // optional UTC epoch seconds per step

  std::size_t steps() const { return q_up.size(); }

  void validate(std::size_t cells) const {
    const auto n = steps();
    if (rho_up.size() != n || q_down.size() != n || rho_down.size() != n ||
        on_ramp.size() != n || off_ramp.size() != n || (!time_s.empty() && time_s.size() != n))
      throw HorizonError("boundary series have unequal lengths");
    for (std::size_t k = 0; k < n; ++k) {
      if (on_ramp[k].size() != cells || off_ramp[k].size() != cells)
        throw ParseError("ramp row " + std::to_string(k) + " does not cover every cell");
      if (q_up[k] < 0 || rho_up[k] < 0 || q_down[k] < 0 || rho_down[k] < 0)
        throw ParseError("negative boundary value at step " + std::to_string(k));
      for (std::size_t i = 0; i < cells; ++i)
        if (on_ramp[k][i] < 0 || off_ramp[k][i] < 0)
          throw ParseError("negative ramp flow at step " + std::to_string(k));
    }
  }

  /// Zero-demand input of the given shape.
  static BoundaryInput zeros(std::size_t steps, std::size_t cells) {
    BoundaryInput b;
    b.q_up.assign(steps, 0.0);
    b.rho_up.assign(steps, 0.0);
    b.q_down.assign(steps, 0.0);
    b.rho_down.assign(steps, 0.0);
    b.on_ramp.assign(steps, std::vector<double>(cells, 0.0));
    b.off_ramp.assign(steps, std::vector<double>(cells, 0.0));
    return b;
  }
};

struct SimState {
  std::size_t k = 0;
  std::vector<double> density;  // veh/mile per cell
  std::vector<double> limit;    // effective speed limit per cell, mph
};

/// Time-indexed record of a run. Row k holds the state at the start of step
/// k and the flows realised during it; density has one extra final row.
class SimTrajectory {
public:
  SimTrajectory() = default;
  explicit SimTrajectory(std::size_t cells) : n_(cells) {}

  std::size_t cells() const { return n_; }
  std::size_t horizon() const { return clamps_.size(); }

  double density(std::size_t k, std::size_t i) const { return density_[k * n_ + i]; }
  double flow(std::size_t k, std::size_t iface) const { return flow_[k * (n_ + 1) + iface]; }
  double speed(std::size_t k, std::size_t i) const { return speed_[k * n_ + i]; }
  double limit(std::size_t k, std::size_t i) const { return limit_[k * n_ + i]; }
  std::size_t clamp_events(std::size_t k) const { return clamps_[k]; }

  std::span<const double> densities_at(std::size_t k) const {
    return {density_.data() + k * n_, n_};
  }
  std::span<const double> flows_at(std::size_t k) const {
    return {flow_.data() + k * (n_ + 1), n_ + 1};
  }

  std::size_t total_clamp_events() const {
    std::size_t s = 0;
    for (auto c : clamps_) s += c;
    return s;
  }

  void reserve(std::size_t h) {
    density_.reserve((h + 1) * n_);
    flow_.reserve(h * (n_ + 1));
    speed_.reserve(h * n_);
    limit_.reserve(h * n_);
    clamps_.reserve(h);
  }

  void push_step(std::span<const double> density, std::span<const double> flow,
                 std::span<const double> speed, std::span<const double> limit, std::size_t clamps) {
    density_.insert(density_.end(), density.begin(), density.end());
    flow_.insert(flow_.end(), flow.begin(), flow.end());
    speed_.insert(speed_.end(), speed.begin(), speed.end());
    limit_.insert(limit_.end(), limit.begin(), limit.end());
    clamps_.push_back(clamps);
  }

  void push_final(std::span<const double> density) {
    density_.insert(density_.end(), density.begin(), density.end());
  }

  bool operator==(const SimTrajectory&) const = default;

private:
  std::size_t n_ = 0;
  std::vector<double> density_, flow_, speed_, limit_;
  std::vector<std::size_t> clamps_;
};

// ---------------------------------------------------------------------------
// Cell physics

struct FlowDensity {
  double flow;     // veh/h
  double density;  // veh/mile
};

/// Capacity and its density under a posted limit: the limit line meets the
/// congestion branch. Limits at or above v_f leave the diagram untouched.
inline FlowDensity max_flow_under_limit(const CellParams& c, double v_sl) {
  if (!(v_sl > 0.0)) throw UsageError("speed limit must be positive");
  if (v_sl >= c.free_flow_speed) return {c.max_flow, c.critical_density};
  const double rho = c.wave_speed * c.jam_density / (v_sl + c.wave_speed);
  return {std::min(v_sl * rho, c.max_flow), rho};
}

inline double sending(const CellParams& c, double rho, double off_ramp, double v_sl) {
  const double v = std::min(v_sl, c.free_flow_speed);
  const double cap = max_flow_under_limit(c, v).flow;
  return std::max(0.0, std::min(v * rho - off_ramp, cap - off_ramp));
}

inline double receiving(const CellParams& c, double rho, double on_ramp, double v_sl) {
  const double cap = max_flow_under_limit(c, std::min(v_sl, c.free_flow_speed)).flow;
  return std::max(0.0, std::min(cap - on_ramp, c.wave_speed * (c.jam_density - rho) - on_ramp));
}

inline double interface_flow(double upstream_sending, double downstream_receiving) {
  return std::min(upstream_sending, downstream_receiving);
}

inline double cell_speed(const CellParams& c, double rho, double v_sl_prev) {
  const double v = std::min(v_sl_prev, c.free_flow_speed);
  const double rho_vsl = max_flow_under_limit(c, v).density;
  if (rho <= rho_vsl) return v;
  return c.wave_speed * (c.jam_density - rho) / rho;
}

// ---------------------------------------------------------------------------
// Boundaries

/// A boundary capacity that is either a measured flow or unbounded. It only
/// ever enters a min with a finite flow.
using FlowBound = std::optional<double>;

inline double min_with(const FlowBound& bound, double finite) {
  return bound ? std::min(*bound, finite) : finite;
}

struct BoundaryAt {
  double q_up = 0.0, rho_up = 0.0, q_down = 0.0, rho_down = 0.0;
  std::span<const double> on_ramp, off_ramp;
};

inline BoundaryAt boundary_at(const BoundaryInput& in, std::size_t k) {
  return {in.q_up[k], in.rho_up[k], in.q_down[k], in.rho_down[k], in.on_ramp[k], in.off_ramp[k]};
}

inline FlowBound upstream_bound(const SegmentModel& m, const BoundaryAt& b) {
  if (b.rho_up <= m.cells.front().critical_density) return b.q_up;
  return std::nullopt;
}

inline FlowBound downstream_bound(const SegmentModel& m, const BoundaryAt& b) {
  if (b.rho_down <= m.cells.back().critical_density) return std::nullopt;
  return b.q_down;
}

struct BoundaryFlows {
  double entering;  // q_1
  double leaving;   // q_{n+1}
};

/// Segment entry and exit flows given the first cell's receiving and the last
/// cell's sending capacity.
inline BoundaryFlows boundary_flows(const SegmentModel& m, double receiving_first,
                                    double sending_last, const BoundaryAt& b) {
  return {min_with(upstream_bound(m, b), receiving_first),
          min_with(downstream_bound(m, b), sending_last)};
}

// ---------------------------------------------------------------------------
// Time stepping

struct StepOutcome {
  SimState next;
  std::vector<double> flows;  // n + 1 interface flows
  std::size_t clamp_events = 0;
};

/// One explicit update. All flows come from step-k densities before any
/// density changes; results are clamped to [0, rho_j] and clamps are counted.
inline StepOutcome step(const SegmentModel& m, const SimState& s, const BoundaryAt& b) {
  const std::size_t n = m.size();
  std::vector<double> send(n), recv(n);
  for (std::size_t i = 0; i < n; ++i) {
    send[i] = sending(m.cells[i], s.density[i], b.off_ramp[i], s.limit[i]);
    recv[i] = receiving(m.cells[i], s.density[i], b.on_ramp[i], s.limit[i]);
  }
  StepOutcome out;
  out.flows.resize(n + 1);
  const auto edges = boundary_flows(m, recv.front(), send.back(), b);
  out.flows[0] = edges.entering;
  for (std::size_t i = 1; i < n; ++i) out.flows[i] = interface_flow(send[i - 1], recv[i]);
  out.flows[n] = edges.leaving;

  out.next.k = s.k + 1;
  out.next.limit = s.limit;
  out.next.density.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& c = m.cells[i];
    double rho = s.density[i] + (m.dt_hours / c.length) *
                                    (out.flows[i] - out.flows[i + 1] + b.on_ramp[i] - b.off_ramp[i]);
    if (rho < 0.0 || rho > c.jam_density) {
      rho = std::clamp(rho, 0.0, c.jam_density);
      ++out.clamp_events;
    }
    out.next.density[i] = rho;
  }
  return out;
}

/// Called once per step before flows are computed; may rewrite state.limit.
/// The trajectory holds every completed step so far.
using ControlHook = std::function<void(SimState&, const SimTrajectory&)>;

/// Runs `horizon` steps (0 = the whole input). Without a hook every cell runs
/// at its free-flow speed, i.e. uncontrolled.
inline SimTrajectory simulate(const SegmentModel& m, const BoundaryInput& in,
                              std::span<const double> initial_density, std::size_t horizon = 0,
                              const ControlHook& hook = {}) {
  const std::size_t n = m.size();
  if (initial_density.size() != n)
    throw UsageError("initial density count does not match the segment");
  for (std::size_t i = 0; i < n; ++i)
    if (initial_density[i] < 0.0 || initial_density[i] > m.cells[i].jam_density)
      throw InfeasibleError("initial density of cell " + std::to_string(i + 1) + " out of range");
  if (horizon == 0) horizon = in.steps();
  if (horizon > in.steps())
    throw HorizonError("horizon of " + std::to_string(horizon) + " steps exceeds the " +
                       std::to_string(in.steps()) + " input rows");
  for (std::size_t k = 0; k < horizon; ++k)
    if (in.on_ramp[k].size() != n || in.off_ramp[k].size() != n)
      throw ParseError("ramp row " + std::to_string(k) + " does not cover every cell");

  SimState s{0, {initial_density.begin(), initial_density.end()}, m.free_flow_speeds()};
  SimTrajectory traj(n);
  traj.reserve(horizon);
  std::vector<double> prev_limit = s.limit;
  std::vector<double> speed(n);
  for (std::size_t k = 0; k < horizon; ++k) {
    if (hook) {
      hook(s, traj);
      if (s.limit.size() != n) throw UsageError("control hook changed the limit count");
      for (double v : s.limit)
        if (!(v > 0.0)) throw UsageError("control hook produced a non-positive limit");
    }
    if (k == 0) prev_limit = s.limit;
    for (std::size_t i = 0; i < n; ++i) speed[i] = cell_speed(m.cells[i], s.density[i], prev_limit[i]);
    auto out = step(m, s, boundary_at(in, k));
    traj.push_step(s.density, out.flows, speed, s.limit, out.clamp_events);
    prev_limit = s.limit;
    s = std::move(out.next);
  }
  traj.push_final(s.density);
  return traj;
}

/// Densities after `steps` uncontrolled steps from an empty segment with the
/// step-0 boundary and ramp flows held fixed. A settled starting state when
/// no measured one is at hand.
inline std::vector<double> warm_start(const SegmentModel& m, const BoundaryInput& in, std::size_t steps = 120) {
  if (in.steps() == 0) throw HorizonError("boundary input has no rows");
  auto held = BoundaryInput::zeros(steps, m.size());
  for (std::size_t k = 0; k < steps; ++k) {
    held.q_up[k] = in.q_up[0];
    held.rho_up[k] = in.rho_up[0];
    held.q_down[k] = in.q_down[0];
    held.rho_down[k] = in.rho_down[0];
    held.on_ramp[k] = in.on_ramp[0];
    held.off_ramp[k] = in.off_ramp[0];
  }
  const std::vector<double> empty(m.size(), 0.0);
  const auto t = simulate(m, held, empty);
  const auto last = t.densities_at(t.horizon());
  return {last.begin(), last.end()};
}

/// Vehicles on the segment at the start of step k (k == horizon: final).
inline double vehicles(const SegmentModel& m, const SimTrajectory& t, std::size_t k) {
  double v = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) v += m.cells[i].length * t.density(k, i);
  return v;
}

struct Balance {
  double initial = 0.0, inflow = 0.0, outflow = 0.0, final = 0.0;
  double residual = 0.0;        // summed over unclamped steps
  std::size_t skipped_steps = 0;  // steps where the density clamp fired

  double relative_residual() const {
    const double scale = std::max(initial + inflow, 1.0);
    return std::abs(residual) / scale;
  }
};

/// Vehicle book-keeping: on every step without a clamp event the change in
/// vehicles on the segment must equal boundary plus ramp net inflow.
inline Balance vehicle_balance(const SegmentModel& m, const BoundaryInput& in,
                               const SimTrajectory& t) {
  Balance b;
  b.initial = vehicles(m, t, 0);
  b.final = vehicles(m, t, t.horizon());
  const std::size_t n = m.size();
  for (std::size_t k = 0; k < t.horizon(); ++k) {
    double ramp_in = 0.0, ramp_out = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ramp_in += in.on_ramp[k][i];
      ramp_out += in.off_ramp[k][i];
    }
    const double in_k = m.dt_hours * (t.flow(k, 0) + ramp_in);
    const double out_k = m.dt_hours * (t.flow(k, n) + ramp_out);
    b.inflow += in_k;
    b.outflow += out_k;
    if (t.clamp_events(k) > 0) {
      ++b.skipped_steps;
      continue;
    }
    b.residual += vehicles(m, t, k) + in_k - out_k - vehicles(m, t, k + 1);
  }
  return b;
}

}  // namespace vslfog::mctm
