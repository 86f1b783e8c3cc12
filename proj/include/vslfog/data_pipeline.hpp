#pragma once

// Loop-detector and weather ingestion, and the rolling-window features the
// crash-risk model consumes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "vslfog/csv.hpp"
#include "vslfog/error.hpp"
#include "vslfog/mctm.hpp"
#include "vslfog/risk_model.hpp"
#include "vslfog/time.hpp"

namespace vslfog::data {

/// Default effective vehicle length: 20 ft.
inline constexpr double kDefaultGFactorMiles = 20.0 / 5280.0;

/// Longest run of missing samples filled by carrying the last one forward.
inline constexpr std::size_t kMaxImputedSteps = 4;

/// Weather records further than this from a step do not cover it.
inline constexpr std::int64_t kMaxWeatherGapSeconds = 2 * 3600;

struct RawDetectorRecord {
  std::string station;
  std::int64_t time_s = 0;
  std::string lane;
  double flow = 0.0;       // vehicles in the sampling interval
  double occupancy = 0.0;  // fraction in [0, 1]
  double speed = 0.0;      // mph
  bool hov = false;
};

struct WeatherRecord {
  std::int64_t time_s = 0;
  double visibility = 0.0;  // miles
};

/// Section-level series on a regular grid, [step][station].
struct SectionSeries {
  std::vector<std::string> stations;
  std::vector<std::int64_t> time_s;
  std::vector<std::vector<double>> flow;     // veh/h
  std::vector<std::vector<double>> density;  // veh/mile
  std::vector<std::vector<double>> speed;    // mph
  std::vector<double> visibility;            // miles; empty until joined
  std::vector<std::int64_t> dropped;         // grid times removed for lack of data

  std::size_t steps() const { return time_s.size(); }

  std::size_t station_index(const std::string& id) const {
    const auto it = std::find(stations.begin(), stations.end(), id);
    if (it == stations.end()) throw ParseError("unknown station '" + id + "'");
    return static_cast<std::size_t>(it - stations.begin());
  }

  std::vector<double> column(const std::vector<std::vector<double>>& field, std::size_t st) const {
    std::vector<double> out;
    out.reserve(field.size());
    for (const auto& row : field) out.push_back(row[st]);
    return out;
  }
};

inline double occupancy_to_density(double occupancy, double g_miles) {
  if (!(g_miles > 0.0)) throw UsageError("g-factor must be positive");
  if (occupancy < 0.0 || occupancy > 1.0) throw ParseError("occupancy outside [0, 1]");
  return occupancy / g_miles;
}

struct SectionSample {
  double flow = 0.0;     // veh/h
  double density = 0.0;  // veh/mile
  double speed = 0.0;    // mph
};

/// Sums non-HOV lanes of one station and interval; speed is flow-weighted
/// (plain mean when no vehicles passed).
inline SectionSample aggregate_lanes(std::span<const RawDetectorRecord> lanes,
                                     double interval_hours, double g_miles = kDefaultGFactorMiles) {
  SectionSample s;
  double weighted = 0.0, plain = 0.0;
  std::size_t used = 0;
  for (const auto& r : lanes) {
    if (r.hov) continue;
    if (r.flow < 0.0 || r.speed < 0.0) throw ParseError("negative flow or speed in lane record");
    const double q = r.flow / interval_hours;
    s.flow += q;
    s.density += occupancy_to_density(r.occupancy, g_miles);
    weighted += q * r.speed;
    plain += r.speed;
    ++used;
  }
  if (used == 0) throw ParseError("no general-purpose lane at this station and time");
  s.speed = s.flow > 0.0 ? weighted / s.flow : plain / static_cast<double>(used);
  return s;
}

/// Aggregates raw lane records onto a regular grid of `interval_s` seconds.
/// Short gaps are filled by carrying the previous sample forward; a step with
/// a longer gap at any station is dropped and listed in `dropped`.
inline SectionSeries build_section_series(std::span<const RawDetectorRecord> records,
                                          std::int64_t interval_s,
                                          double g_miles = kDefaultGFactorMiles) {
  if (records.empty()) throw ParseError("no detector records");
  if (interval_s <= 0) throw UsageError("sampling interval must be positive");
  std::map<std::string, std::map<std::int64_t, std::vector<RawDetectorRecord>>> grouped;
  std::int64_t t0 = records.front().time_s, t1 = t0;
  for (const auto& r : records) {
    grouped[r.station][r.time_s].push_back(r);
    t0 = std::min(t0, r.time_s);
    t1 = std::max(t1, r.time_s);
  }
  const double interval_h = static_cast<double>(interval_s) / 3600.0;

  SectionSeries out;
  for (const auto& [id, _] : grouped) out.stations.push_back(id);
  const std::size_t ns = out.stations.size();

  std::vector<SectionSample> last(ns);
  std::vector<std::size_t> missing_run(ns, kMaxImputedSteps + 1);
  for (std::int64_t t = t0; t <= t1; t += interval_s) {
    std::vector<SectionSample> row(ns);
    bool keep = true;
    for (std::size_t s = 0; s < ns; ++s) {
      const auto& by_time = grouped[out.stations[s]];
      const auto it = by_time.find(t);
      bool have = false;
      if (it != by_time.end()) {
        bool any_gp = false;
        for (const auto& r : it->second) any_gp = any_gp || !r.hov;
        if (any_gp) {
          row[s] = aggregate_lanes(it->second, interval_h, g_miles);
          last[s] = row[s];
          missing_run[s] = 0;
          have = true;
        }
      }
      if (!have) {
        ++missing_run[s];
        if (missing_run[s] > kMaxImputedSteps) keep = false;
        else row[s] = last[s];
      }
    }
    if (!keep) {
      out.dropped.push_back(t);
      continue;
    }
    out.time_s.push_back(t);
    std::vector<double> q(ns), k(ns), v(ns);
    for (std::size_t s = 0; s < ns; ++s) {
      q[s] = row[s].flow;
      k[s] = row[s].density;
      v[s] = row[s].speed;
    }
    out.flow.push_back(std::move(q));
    out.density.push_back(std::move(k));
    out.speed.push_back(std::move(v));
  }
  return out;
}

/// Visibility at each time from the nearest weather record (ties go to the
/// earlier record).
inline std::vector<double> match_visibility(std::span<const std::int64_t> times,
                                            std::span<const WeatherRecord> weather) {
  if (weather.empty()) throw ParseError("no weather records");
  std::vector<WeatherRecord> w(weather.begin(), weather.end());
  std::stable_sort(w.begin(), w.end(),
                   [](const auto& a, const auto& b) { return a.time_s < b.time_s; });
  for (const auto& r : w)
    if (r.visibility < 0.0) throw ParseError("negative visibility");
  std::vector<double> out;
  out.reserve(times.size());
  for (auto t : times) {
    auto hi = std::lower_bound(w.begin(), w.end(), t,
                               [](const WeatherRecord& r, std::int64_t x) { return r.time_s < x; });
    const WeatherRecord* best = nullptr;
    if (hi == w.end()) best = &w.back();
    else if (hi == w.begin()) best = &*hi;
    else {
      const auto lo = std::prev(hi);
      best = (t - lo->time_s) <= (hi->time_s - t) ? &*lo : &*hi;
    }
    if (std::llabs(best->time_s - t) > kMaxWeatherGapSeconds)
      throw HorizonError("no weather record within 2 h of " + format_utc(t));
    out.push_back(best->visibility);
  }
  return out;
}

inline SectionSeries join_visibility(SectionSeries series, std::span<const WeatherRecord> weather) {
  series.visibility = match_visibility(series.time_s, weather);
  return series;
}

// ---------------------------------------------------------------------------
// Features

/// Flow (veh/h) and speed (mph) observed at one detector station over time.
struct StationSeries {
  std::vector<double> flow;
  std::vector<double> speed;
};

struct FeatureWindowConfig {
  std::size_t window = 10;  // steps; 10 x 30 s = 5 min
};

/// veh/h expressed as vehicles per 5 minutes.
inline double per_five_minutes(double flow_veh_h) { return flow_veh_h / 12.0; }

namespace detail {

struct Moments {
  double mean = 0.0;
  double sd = 0.0;  // sample (n - 1)
};

template <typename F>
Moments window_moments(std::size_t first, std::size_t count, F&& value) {
  double sum = 0.0;
  for (std::size_t t = first; t < first + count; ++t) sum += value(t);
  const double mean = sum / static_cast<double>(count);
  double ss = 0.0;
  for (std::size_t t = first; t < first + count; ++t) {
    const double d = value(t) - mean;
    ss += d * d;
  }
  return {mean, std::sqrt(ss / static_cast<double>(count - 1))};
}

}  // namespace detail

/// Features at step k from the `window` steps before it (k - window .. k - 1)
/// and the visibility at k. Causal: nothing after step k is read. The four
/// accessors map a step index to upstream/downstream flow (veh/h) and speed.
template <typename UpQ, typename UpV, typename DownQ, typename DownV>
risk::RiskFeatures window_features(UpQ&& up_flow, UpV&& up_speed, DownQ&& down_flow,
                                   DownV&& down_speed, double visibility_at_k, bool diverge,
                                   std::size_t k, std::size_t window) {
  if (window < 2) throw UsageError("feature window needs at least 2 steps");
  if (k < window)
    throw UsageError("step " + std::to_string(k) + " precedes a full feature window of " +
                     std::to_string(window));
  const std::size_t first = k - window;
  const auto qu = detail::window_moments(
      first, window, [&](std::size_t t) { return per_five_minutes(up_flow(t)); });
  const auto qd = detail::window_moments(
      first, window, [&](std::size_t t) { return per_five_minutes(down_flow(t)); });
  const auto vu = detail::window_moments(first, window, up_speed);
  const auto vd = detail::window_moments(first, window, down_speed);
  risk::RiskFeatures f;
  f.visibility = visibility_at_k;
  f.ds_flag = diverge ? 1.0 : 0.0;
  f.aqu = qu.mean;
  f.aqd = qd.mean;
  f.dqu = qu.sd;
  f.dvu = vu.sd;
  f.dqd = qd.sd;
  f.dvd = vd.sd;
  f.dv = vu.mean - vd.mean;
  return f;
}

inline risk::RiskFeatures extract_features(const StationSeries& up, const StationSeries& down,
                                           double visibility_at_k, bool diverge, std::size_t k,
                                           std::size_t window) {
  if (up.flow.size() < k || down.flow.size() < k || up.speed.size() < k || down.speed.size() < k)
    throw HorizonError("station series shorter than the feature window");
  return window_features([&](std::size_t t) { return up.flow[t]; },
                         [&](std::size_t t) { return up.speed[t]; },
                         [&](std::size_t t) { return down.flow[t]; },
                         [&](std::size_t t) { return down.speed[t]; }, visibility_at_k, diverge, k,
                         window);
}

/// Speed seen by a detector at the upstream segment boundary: measured flow
/// over measured density, or the first cell's free-flow speed when empty.
inline double boundary_speed(const mctm::SegmentModel& m, double q_up, double rho_up) {
  return rho_up > 0.0 ? q_up / rho_up : m.cells.front().free_flow_speed;
}

// Virtual detector stations of a simulated run. Station j sits on interface j
// (between cells j-1 and j): it sees the interface flow and the speed of the
// cell just upstream of it, or the boundary measurement for j = 0. Cell i's
// upstream station is i and its downstream station is i + 1.

inline double station_flow(const mctm::SimTrajectory& t, std::size_t station, std::size_t k) {
  return t.flow(k, station);
}

inline double station_speed(const mctm::SegmentModel& m, const mctm::BoundaryInput& in,
                            const mctm::SimTrajectory& t, std::size_t station, std::size_t k) {
  return station == 0 ? boundary_speed(m, in.q_up[k], in.rho_up[k]) : t.speed(k, station - 1);
}

/// Station series of a simulated run over its first `upto` steps.
inline std::vector<StationSeries> trajectory_stations(const mctm::SegmentModel& m,
                                                      const mctm::BoundaryInput& in,
                                                      const mctm::SimTrajectory& t,
                                                      std::size_t upto) {
  upto = std::min(upto, t.horizon());
  std::vector<StationSeries> st(m.size() + 1);
  for (std::size_t j = 0; j < st.size(); ++j)
    for (std::size_t k = 0; k < upto; ++k) {
      st[j].flow.push_back(station_flow(t, j, k));
      st[j].speed.push_back(station_speed(m, in, t, j, k));
    }
  return st;
}

/// Features of cell i at step k of a (possibly still running) simulation;
/// the trajectory must hold at least k completed steps.
inline risk::RiskFeatures extract_features(const mctm::SegmentModel& m,
                                           const mctm::BoundaryInput& in,
                                           const mctm::SimTrajectory& t,
                                           std::span<const double> visibility, std::size_t cell,
                                           std::size_t k, std::size_t window) {
  if (k > t.horizon()) throw HorizonError("step beyond the trajectory");
  if (visibility.size() <= k) throw HorizonError("visibility series shorter than the horizon");
  if (cell >= m.size()) throw UsageError("cell index out of range");
  return window_features([&](std::size_t s) { return station_flow(t, cell, s); },
                         [&](std::size_t s) { return station_speed(m, in, t, cell, s); },
                         [&](std::size_t s) { return station_flow(t, cell + 1, s); },
                         [&](std::size_t s) { return station_speed(m, in, t, cell + 1, s); },
                         visibility[k], m.cells[cell].diverge, k, window);
}

/// Features of a measured section: the cell is bracketed by two stations.
inline risk::RiskFeatures extract_features(const SectionSeries& s, std::size_t up_station,
                                           std::size_t down_station, bool diverge, std::size_t k,
                                           std::size_t window) {
  if (s.visibility.size() != s.steps()) throw UsageError("series has no joined visibility");
  if (k >= s.steps()) throw HorizonError("step beyond the series");
  const StationSeries up{s.column(s.flow, up_station), s.column(s.speed, up_station)};
  const StationSeries down{s.column(s.flow, down_station), s.column(s.speed, down_station)};
  return extract_features(up, down, s.visibility[k], diverge, k, window);
}

// ---------------------------------------------------------------------------
// CSV

/// Detector schema: station,timestamp,lane,flow,occupancy,speed,hov
inline std::vector<RawDetectorRecord> read_detector_records(const csv::Table& t) {
  const auto c_station = t.column("station"), c_time = t.column("timestamp"),
             c_lane = t.column("lane"), c_flow = t.column("flow"), c_occ = t.column("occupancy"),
             c_speed = t.column("speed"), c_hov = t.column("hov");
  std::vector<RawDetectorRecord> out;
  out.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    RawDetectorRecord rec;
    rec.station = t.text(r, c_station);
    try {
      rec.time_s = parse_utc(t.text(r, c_time));
    } catch (const ParseError& e) {
      throw ParseError(t.where(r) + ": " + e.what());
    }
    rec.lane = t.text(r, c_lane);
    rec.flow = t.number(r, c_flow);
    rec.occupancy = t.number(r, c_occ);
    rec.speed = t.number(r, c_speed);
    const auto& h = t.text(r, c_hov);
    if (h == "1" || h == "true") rec.hov = true;
    else if (h == "0" || h == "false") rec.hov = false;
    else throw ParseError(t.where(r) + ": hov flag must be 0/1");
    if (rec.occupancy < 0.0 || rec.occupancy > 1.0 || rec.flow < 0.0 || rec.speed < 0.0)
      throw ParseError(t.where(r) + ": value out of range");
    out.push_back(std::move(rec));
  }
  return out;
}

inline void write_detector_records(std::ostream& os, std::span<const RawDetectorRecord> records) {
  os << "station,timestamp,lane,flow,occupancy,speed,hov\n";
  for (const auto& r : records)
    os << r.station << ',' << format_utc(r.time_s) << ',' << r.lane << ',' << csv::fmt(r.flow) << ','
       << csv::fmt(r.occupancy) << ',' << csv::fmt(r.speed) << ',' << (r.hov ? 1 : 0) << '\n';
}

/// Weather schema: timestamp,visibility_miles
inline std::vector<WeatherRecord> read_weather(const csv::Table& t) {
  const auto c_time = t.column("timestamp"), c_vis = t.column("visibility_miles");
  std::vector<WeatherRecord> out;
  for (const auto& r : t.rows) {
    WeatherRecord w;
    try {
      w.time_s = parse_utc(t.text(r, c_time));
    } catch (const ParseError& e) {
      throw ParseError(t.where(r) + ": " + e.what());
    }
    w.visibility = t.number(r, c_vis);
    if (w.visibility < 0.0) throw ParseError(t.where(r) + ": negative visibility");
    out.push_back(w);
  }
  if (out.empty()) throw ParseError(t.source + ": no weather records");
  return out;
}

inline void write_weather(std::ostream& os, std::span<const WeatherRecord> weather) {
  os << "timestamp,visibility_miles\n";
  for (const auto& w : weather) os << format_utc(w.time_s) << ',' << csv::fmt(w.visibility) << '\n';
}

/// Long format: timestamp,station,flow,density,speed,visibility
inline void write_section_series(std::ostream& os, const SectionSeries& s) {
  os << "timestamp,station,flow,density,speed,visibility\n";
  for (std::size_t k = 0; k < s.steps(); ++k)
    for (std::size_t j = 0; j < s.stations.size(); ++j)
      os << format_utc(s.time_s[k]) << ',' << s.stations[j] << ',' << csv::fmt(s.flow[k][j]) << ','
         << csv::fmt(s.density[k][j]) << ',' << csv::fmt(s.speed[k][j]) << ','
         << (s.visibility.empty() ? std::string("") : csv::fmt(s.visibility[k])) << '\n';
}

/// Reads the long format back. `density` may be replaced by `occupancy`, which
/// is converted with the g-factor. Visibility is optional.
inline SectionSeries read_section_series(const csv::Table& t,
                                         double g_miles = kDefaultGFactorMiles) {
  const auto c_time = t.column("timestamp"), c_station = t.column("station"),
             c_flow = t.column("flow"), c_speed = t.column("speed");
  const bool occ = !t.has("density") && t.has("occupancy");
  const auto c_density = t.column(occ ? "occupancy" : "density");
  const bool has_vis = t.has("visibility");

  struct Sample {
    double q, k, v;
    std::optional<double> vis;
  };
  SectionSeries s;
  std::map<std::int64_t, std::map<std::string, Sample>> by_time;
  for (const auto& r : t.rows) {
    std::int64_t ts = 0;
    try {
      ts = parse_utc(t.text(r, c_time));
    } catch (const ParseError& e) {
      throw ParseError(t.where(r) + ": " + e.what());
    }
    const auto& id = t.text(r, c_station);
    if (std::find(s.stations.begin(), s.stations.end(), id) == s.stations.end())
      s.stations.push_back(id);
    double k = t.number(r, c_density);
    if (occ) k = occupancy_to_density(k, g_miles);
    Sample smp{t.number(r, c_flow), k, t.number(r, c_speed), std::nullopt};
    if (has_vis && !t.text(r, t.column("visibility")).empty())
      smp.vis = t.number(r, t.column("visibility"));
    if (smp.q < 0 || smp.k < 0 || smp.v < 0) throw ParseError(t.where(r) + ": negative value");
    by_time[ts][id] = smp;
  }
  const std::size_t ns = s.stations.size();
  bool all_vis = has_vis;
  for (const auto& [ts, row] : by_time) {
    s.time_s.push_back(ts);
    std::vector<double> q(ns), k(ns), v(ns);
    std::optional<double> vis;
    for (std::size_t j = 0; j < ns; ++j) {
      const auto it = row.find(s.stations[j]);
      if (it == row.end())
        throw ParseError(t.source + ": station '" + s.stations[j] + "' has no row at " +
                         format_utc(ts));
      q[j] = it->second.q;
      k[j] = it->second.k;
      v[j] = it->second.v;
      if (it->second.vis) vis = it->second.vis;
    }
    s.flow.push_back(std::move(q));
    s.density.push_back(std::move(k));
    s.speed.push_back(std::move(v));
    if (vis) s.visibility.push_back(*vis);
    else all_vis = false;
  }
  if (!all_vis) s.visibility.clear();
  return s;
}

}  // namespace vslfog::data
