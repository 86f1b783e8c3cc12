#pragma once

// Bundled test scenario: a four-cell, 3.2-mile freeway section (0.8-mile
// cells, diverge / merge / merge / basic), the calibrated diagram of each
// cell, and a synthetic 05:00-12:00 morning with a fog episode. Everything is
// deterministic; demand ripple comes from fixed sinusoids, not an RNG.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "vslfog/data_pipeline.hpp"
#include "vslfog/fd_calibration.hpp"
#include "vslfog/mctm.hpp"
#include "vslfog/strategy_opt.hpp"
#include "vslfog/time.hpp"
#include "vslfog/vsl_control.hpp"

namespace vslfog::fixture {

inline constexpr std::size_t kCells = 4;
inline constexpr double kCellLength = 0.8;  // miles
inline constexpr double kDtSeconds = 30.0;
inline constexpr std::size_t kSteps = 840;  // 7 h of 30-s steps

struct DiagramRow {
  double v_f, w_c, q_m, rho_c, rho_j;
};

/// Reference calibrated diagram per cell (Q_M in veh/h).
inline constexpr std::array<DiagramRow, kCells> kReferenceDiagrams{{
    {74.25, 13.55, 10717.09, 144.34, 935.08},
    {74.34, 18.13, 12478.87, 167.86, 856.19},
    {85.96, 14.59, 11295.81, 131.41, 905.48},
    {66.39, 11.06, 9142.086, 137.70, 964.57},
}};

inline constexpr std::array<bool, kCells> kDiverge{true, false, false, false};
inline constexpr std::array<mctm::RampFlags, kCells> kRamps{{{true, true}, {true, false}, {true, false}, {false, false}}};

/// The reference values verbatim. They miss the trapezoid inequalities by
/// up to 0.04% from rounding; see `model()`.
inline std::vector<mctm::CellParams> reference_cells() {
  std::vector<mctm::CellParams> out;
  for (std::size_t i = 0; i < kCells; ++i) {
    const auto& r = kReferenceDiagrams[i];
    out.push_back({kCellLength, r.v_f, r.w_c, r.q_m, r.rho_c, r.rho_j, kDiverge[i]});
  }
  return out;
}

/// Segment model: reference values with Q_M lowered to min(Q_M, v_f rho_c,
/// w_c (rho_j - rho_c)) so every cell is strictly feasible.
inline mctm::SegmentModel model() {
  mctm::SegmentModel m;
  m.dt_hours = kDtSeconds / 3600.0;
  for (auto c : reference_cells()) {
    c.max_flow = std::min({c.max_flow, c.free_flow_speed * c.critical_density,
                           c.wave_speed * (c.jam_density - c.critical_density)});
    m.cells.push_back(c);
  }
  m.ramps.assign(kRamps.begin(), kRamps.end());
  return m;
}

inline std::int64_t start_time() { return parse_utc("2019-12-10T05:00:00Z"); }

/// Knobs of the synthetic morning.
struct Profile {
  double base_demand = 3200.0;  // mainline veh/h at 05:00
  double peak_demand = 7600.0;  // mainline veh/h at the peak
  double peak_hour = 7.75;      // clock hours
  double peak_width = 1.1;      // hours (Gaussian sigma)
  double ripple = 0.03;         // relative demand ripple amplitude
  std::array<double, kCells> on_ramp_share{0.08, 0.10, 0.07, 0.0};
  std::array<double, kCells> off_ramp_share{0.12, 0.0, 0.0, 0.0};
  // Hourly visibility in miles, 05:00 through 12:00.
  std::array<double, 8> visibility{0.25, 0.2, 0.3, 0.6, 2.0, 5.0, 8.0, 10.0};
  // Optional downstream bottleneck (for calibration data): exit capacity in
  // veh/h between the given clock hours. Zero disables it.
  double bottleneck_flow = 0.0;
  double bottleneck_from = 7.0;
  double bottleneck_to = 8.5;
};

inline double clock_hour(std::size_t k) { return 5.0 + static_cast<double>(k) * kDtSeconds / 3600.0; }

inline double mainline_demand(const Profile& p, std::size_t k) {
  const double h = clock_hour(k);
  const double z = (h - p.peak_hour) / p.peak_width;
  const double bump = std::exp(-0.5 * z * z);
  const double t = static_cast<double>(k);
  const double wobble = std::sin(2.0 * std::numbers::pi * t / 23.0) +
                        0.6 * std::sin(2.0 * std::numbers::pi * t / 61.0 + 1.3) +
                        0.4 * std::sin(2.0 * std::numbers::pi * t / 7.0 + 0.4);
  return (p.base_demand + (p.peak_demand - p.base_demand) * bump) * (1.0 + p.ripple * wobble / 2.0);
}

inline mctm::BoundaryInput boundary(const Profile& p = {}) {
  const auto m = model();
  auto in = mctm::BoundaryInput::zeros(kSteps, kCells);
  const double vf1 = m.cells.front().free_flow_speed;
  const auto& last = m.cells.back();
  for (std::size_t k = 0; k < kSteps; ++k) {
    const double q = mainline_demand(p, k);
    in.q_up[k] = q;
    in.rho_up[k] = q / vf1;
    const double h = clock_hour(k);
    if (p.bottleneck_flow > 0.0 && h >= p.bottleneck_from && h < p.bottleneck_to) {
      in.q_down[k] = p.bottleneck_flow;
      in.rho_down[k] = last.jam_density - p.bottleneck_flow / last.wave_speed;
    }
    for (std::size_t i = 0; i < kCells; ++i) {
      in.on_ramp[k][i] = p.on_ramp_share[i] * q;
      in.off_ramp[k][i] = p.off_ramp_share[i] * q;
    }
    in.time_s.push_back(start_time() + static_cast<std::int64_t>(k) * static_cast<std::int64_t>(kDtSeconds));
  }
  return in;
}

inline std::vector<data::WeatherRecord> weather(const Profile& p = {}) {
  std::vector<data::WeatherRecord> w;
  for (std::size_t h = 0; h < p.visibility.size(); ++h)
    w.push_back({start_time() + static_cast<std::int64_t>(h) * 3600, p.visibility[h]});
  return w;
}

inline std::vector<double> visibility(const Profile& p = {}) {
  const auto in = boundary(p);
  return data::match_visibility(in.time_s, weather(p));
}

/// Uncontrolled densities after a one-hour warm-up at the 05:00 demand, so
/// the run starts from a settled state.
inline std::vector<double> initial_density(const Profile& p = {}) { return mctm::warm_start(model(), boundary(p)); }

/// The four sign placements compared on this section (0-based cells).
inline std::vector<vsl::SignLayout> layouts() {
  std::vector<vsl::SignLayout> out;
  for (const auto& cells : std::vector<std::vector<std::size_t>>{{0, 1, 2, 3}, {0, 2}, {0, 3}, {0}}) {
    vsl::SignLayout l;
    l.sign_cells = cells;
    out.push_back(l);
  }
  return out;
}

inline opt::Scenario scenario(const Profile& p = {}, const vsl::SignLayout& layout = layouts().front()) {
  opt::Scenario sc;
  sc.model = model();
  sc.input = boundary(p);
  sc.initial_density = initial_density(p);
  sc.visibility = visibility(p);
  sc.layout = layout;
  return sc;
}

/// Fog-day control factors: 120-s cycle, 5-mph step, 15-mph adjacent clamp.
inline vsl::ControlFactors fog_factors() {
  vsl::ControlFactors f;
  f.threshold = 0.2;
  f.cycle_s = 120.0;
  f.step_mph = 5.0;
  f.clamp_mph = 15.0;
  return f;
}

// ---------------------------------------------------------------------------
// Synthetic detectors

/// Equilibrium flow of the diagram at a density.
inline double diagram_flow(const mctm::CellParams& c, double rho) {
  return std::max(0.0, std::min({c.free_flow_speed * rho, c.max_flow, c.wave_speed * (c.jam_density - rho)}));
}

/// Detector readings of an uncontrolled run: the simulated density of each
/// cell, with flow and speed read off that cell's diagram.
inline calib::DetectorSeries synthetic_detectors(const mctm::SegmentModel& m, const mctm::BoundaryInput& in,
                                                 std::span<const double> initial) {
  const auto t = mctm::simulate(m, in, initial);
  calib::DetectorSeries d;
  d.time_s = in.time_s;
  for (std::size_t k = 0; k < t.horizon(); ++k) {
    std::vector<double> q, r, v;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double rho = t.density(k, i);
      const double flow = diagram_flow(m.cells[i], rho);
      q.push_back(flow);
      r.push_back(rho);
      v.push_back(rho > 0.0 ? flow / rho : m.cells[i].free_flow_speed);
    }
    d.flow.push_back(std::move(q));
    d.density.push_back(std::move(r));
    d.speed.push_back(std::move(v));
  }
  return d;
}

/// The same readings as raw lane records: station "S<cell>", `lanes` equal
/// general-purpose lanes, vehicle counts per 30-s interval and occupancy
/// through the default g-factor.
inline std::vector<data::RawDetectorRecord> detector_records(const calib::DetectorSeries& d, std::size_t lanes = 4) {
  const double interval_h = kDtSeconds / 3600.0;
  const double share = 1.0 / static_cast<double>(lanes);
  std::vector<data::RawDetectorRecord> out;
  for (std::size_t k = 0; k < d.steps(); ++k)
    for (std::size_t i = 0; i < d.cells(); ++i)
      for (std::size_t l = 1; l <= lanes; ++l) {
        data::RawDetectorRecord r;
        r.station = "S" + std::to_string(i + 1);
        r.time_s = d.time_s[k];
        r.lane = std::to_string(l);
        r.flow = d.flow[k][i] * interval_h * share;
        r.occupancy = d.density[k][i] * share * data::kDefaultGFactorMiles;
        r.speed = d.speed[k][i];
        out.push_back(std::move(r));
      }
  return out;
}

/// Calibration morning: the fog-day demand plus a downstream bottleneck so
/// the detectors see both regimes.
inline Profile calibration_profile() {
  Profile p;
  p.bottleneck_flow = 5200.0;
  return p;
}

}  // namespace vslfog::fixture
