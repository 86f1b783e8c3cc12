#pragma once

// Four-factor variable speed limit controller: threshold-triggered stepwise
// reductions per sign, a cap on the difference between adjacent signs, updates
// gated to a fixed control cycle, and stepwise recovery to the default limit.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vslfog/csv.hpp"
#include "vslfog/error.hpp"

namespace vslfog::vsl {

/// Search box for the optimised factors.
struct FactorBounds {
  double cycle_min_s = 30.0, cycle_max_s = 300.0;
  double step_min_mph = 1.0, step_max_mph = 20.0;
  double clamp_min_mph = 1.0, clamp_max_mph = 20.0;
};

struct ControlFactors {
  double threshold = 0.2;  // start threshold on the risk value
  double cycle_s = 120.0;  // control cycle T
  double step_mph = 5.0;   // speed change step
  double clamp_mph = 15.0;  // max difference between adjacent signs

  void validate(const FactorBounds& b = {}) const {
    if (std::isnan(threshold)) throw UsageError("start threshold must be a number");
    if (cycle_s < b.cycle_min_s || cycle_s > b.cycle_max_s)
      throw UsageError("control cycle outside [30 s, 300 s]");
    if (step_mph < b.step_min_mph || step_mph > b.step_max_mph)
      throw UsageError("speed change step outside [1, 20] mph");
    if (clamp_mph < b.clamp_min_mph || clamp_mph > b.clamp_max_mph)
      throw UsageError("adjacent-sign difference outside [1, 20] mph");
  }

  /// Factors whose threshold can never be reached.
  static ControlFactors never_trigger() {
    ControlFactors f;
    f.threshold = std::numeric_limits<double>::infinity();
    return f;
  }

  bool operator==(const ControlFactors&) const = default;
};

struct SignLayout {
  std::vector<std::size_t> sign_cells;  // 0-based, strictly increasing
  double default_limit = 65.0;
  double floor_limit = 20.0;
  double quantum = 5.0;  // posted limits are multiples of this

  std::size_t signs() const { return sign_cells.size(); }

  void validate(std::size_t cells) const {
    if (sign_cells.empty()) throw UsageError("layout needs at least one sign");
    for (std::size_t s = 0; s < sign_cells.size(); ++s) {
      if (sign_cells[s] >= cells)
        throw UsageError("sign in cell " + std::to_string(sign_cells[s] + 1) +
                         " beyond the segment");
      if (s > 0 && sign_cells[s] <= sign_cells[s - 1])
        throw UsageError("sign cells must be strictly increasing");
    }
    if (!(floor_limit > 0.0 && floor_limit < default_limit))
      throw UsageError("need 0 < floor < default limit");
    if (!(quantum > 0.0)) throw UsageError("rounding quantum must be positive");
    auto multiple = [&](double v) {
      const double r = v / quantum;
      return std::abs(r - std::round(r)) < 1e-9;
    };
    if (!multiple(floor_limit) || !multiple(default_limit))
      throw UsageError("floor and default limits must be multiples of the rounding quantum");
  }

  bool operator==(const SignLayout&) const = default;
};

enum class TriggerMode { per_sign, global_max };

struct ControllerState {
  std::vector<double> internal;  // full-precision limits per sign
  std::vector<double> posted;    // displayed limits per sign
  std::size_t last_update_step = 0;
  bool active = false;

  static ControllerState initial(const SignLayout& layout) {
    ControllerState s;
    s.internal.assign(layout.signs(), layout.default_limit);
    s.posted = s.internal;
    return s;
  }

  bool operator==(const ControllerState&) const = default;
};

/// One step of the per-sign rule: reduce by the step while at or above the
/// threshold, otherwise recover toward the default by the same step.
inline std::vector<double> compute_targets(std::span<const double> risks,
                                           std::span<const double> current,
                                           const ControlFactors& f, const SignLayout& layout) {
  if (risks.size() != current.size()) throw UsageError("need one risk value per sign");
  std::vector<double> target(current.size());
  for (std::size_t s = 0; s < current.size(); ++s) {
    if (risks[s] >= f.threshold)
      target[s] = std::max(layout.floor_limit, current[s] - f.step_mph);
    else if (current[s] < layout.default_limit)
      target[s] = std::min(layout.default_limit, current[s] + f.step_mph);
    else
      target[s] = current[s];
  }
  return target;
}

/// Largest limits not above the targets whose neighbours differ by at most
/// `clamp`. A forward and a backward sweep reach the fixpoint.
inline std::vector<double> smooth_adjacent(std::span<const double> targets, double clamp) {
  std::vector<double> v(targets.begin(), targets.end());
  for (std::size_t i = 1; i < v.size(); ++i) v[i] = std::min(v[i], v[i - 1] + clamp);
  for (std::size_t i = v.size(); i-- > 1;) v[i - 1] = std::min(v[i - 1], v[i] + clamp);
  return v;
}

inline double round_down(double v, double quantum) {
  return std::floor(v / quantum + 1e-9) * quantum;
}

/// Displayed limits: rounded down to the quantum, re-smoothed until both
/// hold. Only ever lowers values, and never below the floor.
inline std::vector<double> display_limits(std::span<const double> internal, double clamp,
                                          const SignLayout& layout) {
  std::vector<double> v(internal.begin(), internal.end());
  while (true) {
    for (auto& x : v) x = std::max(layout.floor_limit, round_down(x, layout.quantum));
    auto s = smooth_adjacent(v, clamp);
    if (s == v) return v;
    v = std::move(s);
  }
}

/// Number of simulation steps in one control cycle; the cycle must be a whole
/// number of steps.
inline std::size_t cycle_steps(double cycle_s, double dt_s) {
  const double r = cycle_s / dt_s;
  const double n = std::round(r);
  if (n < 1.0 || std::abs(r - n) > 1e-9)
    throw UsageError("control cycle " + std::to_string(cycle_s) +
                     " s is not a multiple of the simulation step");
  return static_cast<std::size_t>(n);
}

/// Risk seen by each sign: its own cell's, or the segment maximum.
inline std::vector<double> sign_risks(std::span<const double> cell_risks, const SignLayout& layout,
                                      TriggerMode mode) {
  std::vector<double> out;
  out.reserve(layout.signs());
  const double worst =
      cell_risks.empty() ? -std::numeric_limits<double>::infinity()
                         : *std::max_element(cell_risks.begin(), cell_risks.end());
  for (auto c : layout.sign_cells) out.push_back(mode == TriggerMode::global_max ? worst : cell_risks[c]);
  return out;
}

/// Identity off the cycle grid; on it, targets then smoothing then rounding.
inline ControllerState controller_tick(const ControllerState& state, std::span<const double> risks,
                                       const ControlFactors& f, const SignLayout& layout,
                                       std::size_t step, std::size_t steps_per_cycle) {
  if (steps_per_cycle == 0 || step % steps_per_cycle != 0) return state;
  ControllerState next;
  next.internal = smooth_adjacent(compute_targets(risks, state.internal, f, layout), f.clamp_mph);
  next.posted = display_limits(next.internal, f.clamp_mph, layout);
  next.last_update_step = step;
  next.active = std::any_of(next.posted.begin(), next.posted.end(),
                            [&](double v) { return v < layout.default_limit; });
  return next;
}

/// Per-cell effective limits: each cell follows the nearest sign at or
/// upstream of it. Cells upstream of every sign, and cells whose sign shows
/// the default limit, run at their free-flow speed.
inline std::vector<double> map_limits_to_cells(const SignLayout& layout,
                                               std::span<const double> posted,
                                               std::span<const double> free_flow_speeds) {
  if (posted.size() != layout.signs()) throw UsageError("need one posted limit per sign");
  std::vector<double> out(free_flow_speeds.begin(), free_flow_speeds.end());
  std::size_t s = 0;
  bool have = false;
  for (std::size_t i = 0; i < out.size(); ++i) {
    while (s < layout.signs() && layout.sign_cells[s] <= i) {
      have = true;
      ++s;
    }
    if (!have) continue;
    const double v = posted[s - 1];
    if (v < layout.default_limit) out[i] = v;
  }
  return out;
}

struct TraceRow {
  std::size_t step = 0;
  std::size_t sign_cell = 0;
  double risk = 0.0;
  double target = 0.0;
  double posted = 0.0;
};

/// Controller bound to a layout and factor set, with an audit trace of every
/// cycle.
class Controller {
public:
  Controller(SignLayout layout, ControlFactors factors, double dt_s,
             TriggerMode mode = TriggerMode::per_sign)
      : layout_(std::move(layout)),
        factors_(factors),
        mode_(mode),
        steps_per_cycle_(cycle_steps(factors.cycle_s, dt_s)),
        state_(ControllerState::initial(layout_)) {}

  const ControllerState& state() const { return state_; }
  const SignLayout& layout() const { return layout_; }
  const ControlFactors& factors() const { return factors_; }
  std::size_t steps_per_cycle() const { return steps_per_cycle_; }
  const std::vector<TraceRow>& trace() const { return trace_; }

  bool on_cycle(std::size_t step) const { return step % steps_per_cycle_ == 0; }

  /// Advances the controller at `step` given the risk of every cell.
  const ControllerState& tick(std::size_t step, std::span<const double> cell_risks) {
    if (!on_cycle(step)) return state_;
    const auto risks = sign_risks(cell_risks, layout_, mode_);
    const auto targets = compute_targets(risks, state_.internal, factors_, layout_);
    state_ = controller_tick(state_, risks, factors_, layout_, step, steps_per_cycle_);
    for (std::size_t s = 0; s < layout_.signs(); ++s)
      trace_.push_back({step, layout_.sign_cells[s], risks[s], targets[s], state_.posted[s]});
    return state_;
  }

private:
  SignLayout layout_;
  ControlFactors factors_;
  TriggerMode mode_;
  std::size_t steps_per_cycle_;
  ControllerState state_;
  std::vector<TraceRow> trace_;
};

/// step,sign_cell,risk,target,posted (cells 1-based)
inline void write_trace(std::ostream& os, std::span<const TraceRow> rows) {
  os << "step,sign_cell,risk,target,posted\n";
  for (const auto& r : rows)
    os << r.step << ',' << r.sign_cell + 1 << ',' << csv::fmt(r.risk) << ',' << csv::fmt(r.target)
       << ',' << csv::fmt(r.posted) << '\n';
}

// Layout documents use 1-based cell numbers:
// {"signs": [1, 3], "default_limit": 65, "floor": 20, "quantum": 5}
inline SignLayout layout_from_json(const nlohmann::json& j) {
  if (!j.contains("signs") || !j["signs"].is_array()) throw ParseError("layout needs a 'signs' array");
  SignLayout l;
  for (const auto& c : j["signs"]) {
    const auto cell = c.get<long long>();
    if (cell < 1) throw ParseError("sign cells are numbered from 1");
    l.sign_cells.push_back(static_cast<std::size_t>(cell - 1));
  }
  l.default_limit = j.value("default_limit", l.default_limit);
  l.floor_limit = j.value("floor", l.floor_limit);
  l.quantum = j.value("quantum", l.quantum);
  return l;
}

inline nlohmann::json to_json(const SignLayout& l) {
  nlohmann::json signs = nlohmann::json::array();
  for (auto c : l.sign_cells) signs.push_back(c + 1);
  return {{"signs", signs},
          {"default_limit", l.default_limit},
          {"floor", l.floor_limit},
          {"quantum", l.quantum}};
}

inline nlohmann::json to_json(const ControlFactors& f) {
  nlohmann::json j{{"cycle_s", f.cycle_s}, {"step_mph", f.step_mph}, {"clamp_mph", f.clamp_mph}};
  if (std::isfinite(f.threshold)) j["threshold"] = f.threshold;
  else j["threshold"] = nullptr;  // never triggers
  return j;
}

inline ControlFactors factors_from_json(const nlohmann::json& j) {
  ControlFactors f;
  if (j.contains("threshold"))
    f.threshold = j["threshold"].is_null() ? std::numeric_limits<double>::infinity()
                                           : j["threshold"].get<double>();
  f.cycle_s = j.value("cycle_s", f.cycle_s);
  f.step_mph = j.value("step_mph", f.step_mph);
  f.clamp_mph = j.value("clamp_mph", f.clamp_mph);
  return f;
}

}  // namespace vslfog::vsl
