#pragma once

// File formats of the simulator.
//
// Model JSON:
//   {"dt_hours": 0.008333, "cells": [{"length": 0.8, "free_flow_speed": 74.25,
//    "wave_speed": 13.55, "max_flow": 10717.09, "critical_density": 144.34,
//    "jam_density": 935.08, "diverge": true, "on_ramp": true, "off_ramp": true}]}
//
// Boundary CSV, one row per step (cells numbered from 1):
//   step,timestamp,q_up,rho_up,q_down,rho_down,on_ramp_1..n,off_ramp_1..n
//   (timestamp is optional)
//
// Trajectory CSV, long format: step,cell,density,flow,speed,limit

#include <cstddef>
#include <fstream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "vslfog/csv.hpp"
#include "vslfog/error.hpp"
#include "vslfog/mctm.hpp"
#include "vslfog/time.hpp"

namespace vslfog::mctm {

inline nlohmann::json to_json(const CellParams& c, const RampFlags& r) {
  return {{"length", c.length},
          {"free_flow_speed", c.free_flow_speed},
          {"wave_speed", c.wave_speed},
          {"max_flow", c.max_flow},
          {"critical_density", c.critical_density},
          {"jam_density", c.jam_density},
          {"diverge", c.diverge},
          {"on_ramp", r.on},
          {"off_ramp", r.off}};
}

inline nlohmann::json to_json(const SegmentModel& m) {
  nlohmann::json cells = nlohmann::json::array();
  for (std::size_t i = 0; i < m.size(); ++i) cells.push_back(to_json(m.cells[i], m.ramps[i]));
  return {{"dt_hours", m.dt_hours}, {"cells", cells}};
}

inline SegmentModel model_from_json(const nlohmann::json& j) {
  try {
    SegmentModel m;
    m.dt_hours = j.at("dt_hours").get<double>();
    for (const auto& c : j.at("cells")) {
      CellParams p;
      p.length = c.at("length").get<double>();
      p.free_flow_speed = c.at("free_flow_speed").get<double>();
      p.wave_speed = c.at("wave_speed").get<double>();
      p.max_flow = c.at("max_flow").get<double>();
      p.critical_density = c.at("critical_density").get<double>();
      p.jam_density = c.at("jam_density").get<double>();
      p.diverge = c.value("diverge", false);
      m.cells.push_back(p);
      m.ramps.push_back({c.value("on_ramp", false), c.value("off_ramp", false)});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model document: ") + e.what());
  }
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline BoundaryInput boundary_from_csv(const csv::Table& t, std::size_t cells) {
  BoundaryInput b;
  const auto cq = t.column("q_up"), cr = t.column("rho_up"), dq = t.column("q_down"),
             dr = t.column("rho_down");
  const bool timed = t.has("timestamp");
  std::vector<std::size_t> on, off;
  for (std::size_t i = 1; i <= cells; ++i) {
    on.push_back(t.column("on_ramp_" + std::to_string(i)));
    off.push_back(t.column("off_ramp_" + std::to_string(i)));
  }
  for (const auto& r : t.rows) {
    b.q_up.push_back(t.number(r, cq));
    b.rho_up.push_back(t.number(r, cr));
    b.q_down.push_back(t.number(r, dq));
    b.rho_down.push_back(t.number(r, dr));
    std::vector<double> ron, roff;
    for (std::size_t i = 0; i < cells; ++i) {
      ron.push_back(t.number(r, on[i]));
      roff.push_back(t.number(r, off[i]));
      if (ron.back() < 0 || roff.back() < 0) throw ParseError(t.where(r) + ": negative ramp flow");
    }
    if (b.q_up.back() < 0 || b.rho_up.back() < 0 || b.q_down.back() < 0 || b.rho_down.back() < 0)
      throw ParseError(t.where(r) + ": negative boundary value");
    b.on_ramp.push_back(std::move(ron));
    b.off_ramp.push_back(std::move(roff));
    if (timed) {
      try {
        b.time_s.push_back(parse_utc(t.text(r, t.column("timestamp"))));
      } catch (const ParseError& e) {
        throw ParseError(t.where(r) + ": " + e.what());
      }
    }
  }
  if (b.steps() == 0) throw ParseError(t.source + ": no boundary rows");
  return b;
}

inline void write_boundary(std::ostream& os, const BoundaryInput& b, std::size_t cells) {
  const bool timed = !b.time_s.empty();
  os << "step" << (timed ? ",timestamp" : "") << ",q_up,rho_up,q_down,rho_down";
  for (std::size_t i = 1; i <= cells; ++i) os << ",on_ramp_" << i;
  for (std::size_t i = 1; i <= cells; ++i) os << ",off_ramp_" << i;
  os << '\n';
  for (std::size_t k = 0; k < b.steps(); ++k) {
    os << k;
    if (timed) os << ',' << format_utc(b.time_s[k]);
    os << ',' << csv::fmt(b.q_up[k]) << ',' << csv::fmt(b.rho_up[k]) << ',' << csv::fmt(b.q_down[k])
       << ',' << csv::fmt(b.rho_down[k]);
    for (double v : b.on_ramp[k]) os << ',' << csv::fmt(v);
    for (double v : b.off_ramp[k]) os << ',' << csv::fmt(v);
    os << '\n';
  }
}

/// Flow is the flow entering the cell during the step.
inline void write_trajectory(std::ostream& os, const SimTrajectory& t) {
  os << "step,cell,density,flow,speed,limit\n";
  for (std::size_t k = 0; k < t.horizon(); ++k)
    for (std::size_t i = 0; i < t.cells(); ++i)
      os << k << ',' << i + 1 << ',' << csv::fmt(t.density(k, i)) << ',' << csv::fmt(t.flow(k, i))
         << ',' << csv::fmt(t.speed(k, i)) << ',' << csv::fmt(t.limit(k, i)) << '\n';
}

}  // namespace vslfog::mctm
