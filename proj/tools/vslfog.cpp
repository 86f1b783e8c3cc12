// vslfog: calibrate | simulate | optimize | placements
//
// Every flag can also come from a JSON run file given with --config; keys are
// the long flag names with '-' replaced by '_'. Flags win over the file, and
// relative paths in the file are taken from the file's directory.
//
// Exit codes: 0 ok, 2 parse, 3 infeasible, 4 horizon, 5 usage.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vslfog/csv.hpp"
#include "vslfog/data_pipeline.hpp"
#include "vslfog/error.hpp"
#include "vslfog/fd_calibration.hpp"
#include "vslfog/mctm.hpp"
#include "vslfog/mctm_io.hpp"
#include "vslfog/risk_model.hpp"
#include "vslfog/strategy_opt.hpp"
#include "vslfog/vsl_control.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vslfog;

namespace {

const std::vector<std::string> kPathKeys{"model",   "boundary", "weather",   "layout",  "layouts",
                                         "coefficients", "factors", "initial", "detectors", "out"};

// Merged run settings: config file first, then flags on top.
struct RunSpec {
  json v = json::object();

  bool has(const std::string& k) const { return v.contains(k) && !v[k].is_null(); }

  std::string path(const std::string& k) const {
    if (!has(k)) throw UsageError("missing --" + k);
    return v[k].get<std::string>();
  }

  template <class T>
  T get(const std::string& k, T fallback) const {
    if (!has(k)) return fallback;
    try {
      return v[k].get<T>();
    } catch (const json::exception&) {
      throw ParseError("run setting '" + k + "' has the wrong type");
    }
  }
};

RunSpec load_config(const std::string& file) {
  RunSpec s;
  if (file.empty()) return s;
  s.v = mctm::read_json_file(file);
  if (!s.v.is_object()) throw ParseError(file + ": run file must be a JSON object");
  const auto base = fs::path(file).parent_path();
  for (const auto& k : kPathKeys)
    if (s.has(k) && s.v[k].is_string()) {
      const fs::path p = s.v[k].get<std::string>();
      if (p.is_relative()) s.v[k] = (base / p).lexically_normal().string();
    }
  return s;
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream out(dir / name);
  if (!out) throw UsageError("cannot write " + (dir / name).string());
  return out;
}

void write_json(const fs::path& dir, const std::string& name, const json& j) {
  open_out(dir, name) << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Flags

struct Flags {
  std::string config;
  json set = json::object();                  // flags given on the command line
  std::vector<std::function<void()>> collect;  // run after parsing
};

template <class T>
void flag(CLI::App* app, Flags& f, const std::string& name, const std::string& help) {
  const std::string key = [&] {
    std::string k = name;
    std::replace(k.begin(), k.end(), '-', '_');
    return k;
  }();
  auto holder = std::make_shared<T>();
  auto* opt = app->add_option("--" + name, *holder, help);
  f.collect.push_back([&f, key, holder, opt] {
    if (opt->count() > 0) f.set[key] = *holder;
  });
}

void switch_flag(CLI::App* app, Flags& f, const std::string& name, const std::string& help) {
  std::string key = name;
  std::replace(key.begin(), key.end(), '-', '_');
  app->add_flag_callback("--" + name, [&f, key] { f.set[key] = true; }, help);
}

void common_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON run file");
  flag<std::string>(app, f, "model", "segment model JSON");
  flag<std::string>(app, f, "boundary", "boundary input CSV");
  flag<std::string>(app, f, "out", "output directory (default: out)");
  flag<std::size_t>(app, f, "horizon", "steps to simulate (default: whole input)");
}

void scenario_flags(CLI::App* app, Flags& f) {
  flag<std::string>(app, f, "weather", "weather CSV (timestamp,visibility_miles)");
  flag<std::string>(app, f, "coefficients", "risk coefficients JSON (default: fog model)");
  flag<std::string>(app, f, "initial", "initial densities JSON array (default: warm start)");
  flag<std::string>(app, f, "risk-mode", "linear | logistic");
  flag<std::string>(app, f, "trigger", "per-sign | global-max");
  flag<std::size_t>(app, f, "window", "feature window in steps");
}

void ga_flags(CLI::App* app, Flags& f) {
  flag<std::uint64_t>(app, f, "seed", "random seed (required)");
  flag<std::size_t>(app, f, "population", "GA population");
  flag<std::size_t>(app, f, "generations", "GA generations");
  flag<double>(app, f, "crossover", "crossover probability");
  flag<double>(app, f, "mutation", "mutation probability");
  flag<double>(app, f, "precision", "gene resolution");
  flag<double>(app, f, "threshold", "start threshold (fixed during search)");
}

// ---------------------------------------------------------------------------
// Inputs

mctm::SegmentModel load_model(const RunSpec& s) {
  const auto path = s.path("model");
  try {
    return mctm::model_from_json(mctm::read_json_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

mctm::BoundaryInput load_boundary(const RunSpec& s, std::size_t cells) {
  return mctm::boundary_from_csv(csv::read_file(s.path("boundary")), cells);
}

template <class F>
auto parse_json_doc(const std::string& path, F&& f) {
  const auto j = mctm::read_json_file(path);
  try {
    return f(j);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

opt::Scenario load_scenario(const RunSpec& s) {
  opt::Scenario sc;
  sc.model = load_model(s);
  sc.input = load_boundary(s, sc.model.size());
  const auto weather = data::read_weather(csv::read_file(s.path("weather")));
  if (sc.input.time_s.empty()) throw ParseError(s.path("boundary") + ": timestamps needed to match weather");
  sc.visibility = data::match_visibility(sc.input.time_s, weather);
  if (s.has("coefficients"))
    sc.coefficients = parse_json_doc(s.path("coefficients"), [](const json& j) { return risk::coefficients_from_json(j); });
  sc.mode = risk::parse_risk_mode(s.get<std::string>("risk_mode", "linear"));
  const auto trig = s.get<std::string>("trigger", "per-sign");
  if (trig == "per-sign") sc.trigger = vsl::TriggerMode::per_sign;
  else if (trig == "global-max") sc.trigger = vsl::TriggerMode::global_max;
  else throw UsageError("unknown trigger mode '" + trig + "'");
  sc.horizon = s.get<std::size_t>("horizon", 0);
  sc.window = s.get<std::size_t>("window", sc.window);
  if (s.has("initial"))
    sc.initial_density = parse_json_doc(s.path("initial"), [](const json& j) { return j.get<std::vector<double>>(); });
  else
    sc.initial_density = mctm::warm_start(sc.model, sc.input);
  if (s.has("layout"))
    sc.layout = parse_json_doc(s.path("layout"), [](const json& j) { return vsl::layout_from_json(j); });
  else
    for (std::size_t i = 0; i < sc.model.size(); ++i) sc.layout.sign_cells.push_back(i);
  return sc;
}

std::uint64_t require_seed(const RunSpec& s) {
  if (!s.has("seed")) throw UsageError("--seed is required for stochastic stages");
  return s.get<std::uint64_t>("seed", 0);
}

opt::OptimConfig optim_config(const RunSpec& s) {
  opt::OptimConfig c;
  c.ga.seed = require_seed(s);
  c.ga.population = s.get("population", c.ga.population);
  c.ga.generations = s.get("generations", c.ga.generations);
  c.ga.crossover_prob = s.get("crossover", c.ga.crossover_prob);
  c.ga.mutation_prob = s.get("mutation", c.ga.mutation_prob);
  c.ga.precision = s.get("precision", c.ga.precision);
  c.threshold = s.get("threshold", c.threshold);
  c.ga.validate();
  return c;
}

fs::path out_dir(const RunSpec& s) { return s.has("out") ? fs::path(s.path("out")) : fs::path("out"); }

double percent_change(double with, double without) {
  if (with == without) return 0.0;
  return 100.0 * (with - without) / without;
}

// ---------------------------------------------------------------------------
// Commands

std::optional<vsl::ControlFactors> control_factors(const RunSpec& s) {
  std::optional<vsl::ControlFactors> f;
  if (s.has("factors"))
    f = parse_json_doc(s.path("factors"), [](const json& j) { return vsl::factors_from_json(j); });
  auto touch = [&]() -> vsl::ControlFactors& {
    if (!f) f = vsl::ControlFactors{};
    return *f;
  };
  if (s.has("threshold")) touch().threshold = s.get("threshold", 0.0);
  if (s.has("cycle")) touch().cycle_s = s.get("cycle", 0.0);
  if (s.has("step")) touch().step_mph = s.get("step", 0.0);
  if (s.has("clamp")) touch().clamp_mph = s.get("clamp", 0.0);
  if (s.get("never_trigger", false)) touch().threshold = std::numeric_limits<double>::infinity();
  return f;
}

// Total risk over all cells per step, for plotting.
std::vector<double> risk_per_step(const opt::Scenario& sc, const mctm::SimTrajectory& t) {
  std::vector<double> out;
  for (std::size_t k = sc.window; k < t.horizon(); ++k) {
    double sum = 0.0;
    for (double r : opt::cell_risks(sc, t, k)) sum += r;
    out.push_back(sum);
  }
  return out;
}

int cmd_simulate(const RunSpec& s) {
  const auto sc = load_scenario(s);
  sc.validate();
  const auto factors = control_factors(s);
  const bool paired = s.get("paired", false);
  const auto dir = out_dir(s);

  mctm::SimTrajectory traj;
  std::vector<vsl::TraceRow> trace;
  if (factors) {
    auto run = opt::run_controlled(sc, *factors);
    traj = std::move(run.trajectory);
    trace = std::move(run.trace);
  } else {
    traj = opt::run_uncontrolled(sc);
  }
  {
    auto os = open_out(dir, "trajectory.csv");
    mctm::write_trajectory(os, traj);
  }
  if (factors) {
    auto os = open_out(dir, "trace.csv");
    vsl::write_trace(os, trace);
  }

  const auto risk_cells = opt::risk_by_cell(sc, traj);
  const auto ttt_cells = opt::travel_time_by_cell(sc.model, traj);
  json m{{"controlled", factors.has_value()},
         {"steps", traj.horizon()},
         {"R", opt::total_risk(sc, traj)},
         {"TTT", opt::total_travel_time(sc.model, traj)},
         {"layout", vsl::to_json(sc.layout)}};
  if (factors) m["factors"] = vsl::to_json(*factors);
  json cells = json::array();
  for (std::size_t i = 0; i < sc.model.size(); ++i)
    cells.push_back({{"cell", i + 1}, {"R", risk_cells[i]}, {"TTT", ttt_cells[i]}});
  m["cells"] = cells;

  auto plot = open_out(dir, "plot.csv");
  plot << "series,step,value\n";
  for (std::size_t i = 0; i < sc.model.size(); ++i)
    for (std::size_t k = 0; k < traj.horizon(); ++k)
      plot << "density_" << i + 1 << ',' << k << ',' << csv::fmt(traj.density(k, i)) << '\n';
  for (std::size_t i = 0; i < sc.model.size(); ++i)
    for (std::size_t k = 0; k < traj.horizon(); ++k)
      plot << "limit_" << i + 1 << ',' << k << ',' << csv::fmt(traj.limit(k, i)) << '\n';
  const auto risk_steps = risk_per_step(sc, traj);
  const std::string risk_name = paired ? "risk_vsl" : "risk";
  for (std::size_t j = 0; j < risk_steps.size(); ++j)
    plot << risk_name << ',' << j + sc.window << ',' << csv::fmt(risk_steps[j]) << '\n';

  if (paired) {
    const auto base = opt::run_uncontrolled(sc);
    const auto risk_non = opt::risk_by_cell(sc, base);
    const auto ttt_non = opt::travel_time_by_cell(sc.model, base);
    const auto comp = opt::make_components(m["R"].get<double>(), opt::total_risk(sc, base), m["TTT"].get<double>(),
                                           opt::total_travel_time(sc.model, base));
    json pc = json::array();
    for (std::size_t i = 0; i < sc.model.size(); ++i)
      pc.push_back({{"cell", i + 1},
                    {"R_Non", risk_non[i]},
                    {"TTT_Non", ttt_non[i]},
                    {"delta_R_percent", percent_change(risk_cells[i], risk_non[i])},
                    {"delta_T_percent", percent_change(ttt_cells[i], ttt_non[i])}});
    m["paired"] = {{"components", opt::to_json(comp)},
                   {"delta_R_percent", percent_change(comp.r_vsl, comp.r_non)},
                   {"delta_T_percent", percent_change(comp.ttt_vsl, comp.ttt_non)},
                   {"cells", pc}};
    const auto base_steps = risk_per_step(sc, base);
    for (std::size_t j = 0; j < base_steps.size(); ++j)
      plot << "risk_non," << j + sc.window << ',' << csv::fmt(base_steps[j]) << '\n';
  }
  write_json(dir, "metrics.json", m);
  std::cout << "R = " << csv::fmt(m["R"].get<double>()) << ", TTT = " << csv::fmt(m["TTT"].get<double>()) << '\n';
  if (paired)
    std::cout << "delta R = " << m["paired"]["delta_R_percent"].get<double>() << " %, delta TTT = "
              << m["paired"]["delta_T_percent"].get<double>() << " %\n";
  return 0;
}

json bounds_json(const vsl::FactorBounds& b) {
  return {{"cycle_s", {b.cycle_min_s, b.cycle_max_s}},
          {"step_mph", {b.step_min_mph, b.step_max_mph}},
          {"clamp_mph", {b.clamp_min_mph, b.clamp_max_mph}}};
}

int cmd_optimize(const RunSpec& s) {
  const auto cfg = optim_config(s);
  const auto sc = load_scenario(s);
  sc.validate();
  const auto r = opt::ga_optimize(sc, cfg);
  const auto dir = out_dir(s);
  write_json(dir, "optim.json",
             {{"ga", opt::to_json(cfg.ga)},
              {"bounds", bounds_json(cfg.bounds)},
              {"threshold", cfg.threshold},
              {"layout", vsl::to_json(sc.layout)},
              {"result", opt::to_json(r)}});
  auto os = open_out(dir, "history.csv");
  opt::write_history(os, r.history);
  std::cout << "best fitness " << csv::fmt(r.components.fitness) << " at T=" << r.best.cycle_s
            << " s, dv=" << r.best.step_mph << " mph, dVm=" << r.best.clamp_mph << " mph\n";
  return 0;
}

int cmd_placements(const RunSpec& s) {
  const auto cfg = optim_config(s);
  auto sc = load_scenario(s);
  const auto layouts = parse_json_doc(s.path("layouts"), [](const json& j) {
    if (!j.is_array()) throw ParseError("layouts file must hold a JSON array");
    std::vector<vsl::SignLayout> out;
    for (const auto& l : j) out.push_back(vsl::layout_from_json(l));
    return out;
  });
  if (layouts.size() < 2) throw UsageError("placement comparison needs at least two layouts");
  sc.layout = layouts.front();
  sc.validate();
  const auto ranked = opt::compare_placements(sc, layouts, cfg);
  json list = json::array();
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& p = ranked[r];
    list.push_back({{"rank", r + 1},
                    {"input_index", p.index + 1},
                    {"layout", vsl::to_json(p.layout)},
                    {"signs", p.layout.signs()},
                    {"benefit_cost", p.benefit_cost},
                    {"result", opt::to_json(p.result)}});
  }
  const auto dir = out_dir(s);
  write_json(dir, "placements.json",
             {{"ga", opt::to_json(cfg.ga)},
              {"threshold", cfg.threshold},
              {"placements", list},
              {"recommended", {{"input_index", ranked.front().index + 1},
                               {"layout", vsl::to_json(ranked.front().layout)}}}});
  std::cout << "rank  layout         signs  fitness        benefit/cost\n";
  for (const auto& p : ranked) {
    std::ostringstream cells;
    for (std::size_t i = 0; i < p.layout.sign_cells.size(); ++i)
      cells << (i ? "," : "") << p.layout.sign_cells[i] + 1;
    std::cout << std::left << std::setw(6) << (&p - ranked.data()) + 1 << std::setw(15) << cells.str()
              << std::setw(7) << p.layout.signs() << std::setw(15) << csv::fmt(p.result.components.fitness)
              << csv::fmt(p.benefit_cost) << '\n';
  }
  return 0;
}

// Boundary rows at the detector grid times (rows dropped by the gap rule
// disappear from both).
mctm::BoundaryInput align_boundary(const mctm::BoundaryInput& in, const std::vector<std::int64_t>& times) {
  if (in.time_s.empty()) {
    if (in.steps() != times.size())
      throw HorizonError("boundary has " + std::to_string(in.steps()) + " rows, detectors " +
                         std::to_string(times.size()) + " steps");
    return in;
  }
  auto out = mctm::BoundaryInput::zeros(times.size(), in.on_ramp.empty() ? 0 : in.on_ramp.front().size());
  out.time_s = times;
  std::size_t j = 0;
  for (std::size_t k = 0; k < times.size(); ++k) {
    while (j < in.time_s.size() && in.time_s[j] < times[k]) ++j;
    if (j == in.time_s.size() || in.time_s[j] != times[k])
      throw HorizonError("boundary has no row at " + format_utc(times[k]));
    out.q_up[k] = in.q_up[j];
    out.rho_up[k] = in.rho_up[j];
    out.q_down[k] = in.q_down[j];
    out.rho_down[k] = in.rho_down[j];
    out.on_ramp[k] = in.on_ramp[j];
    out.off_ramp[k] = in.off_ramp[j];
  }
  return out;
}

int cmd_calibrate(const RunSpec& s) {
  const auto geometry = load_model(s);
  const auto in = load_boundary(s, geometry.size());
  const auto records = data::read_detector_records(csv::read_file(s.path("detectors")));
  const auto interval = static_cast<std::int64_t>(std::llround(geometry.dt_hours * 3600.0));
  const auto series = data::build_section_series(records, interval, s.get("g_factor", data::kDefaultGFactorMiles));
  std::vector<std::string> stations = s.get("stations", std::vector<std::string>{});
  if (stations.empty()) stations = series.stations;
  if (stations.size() != geometry.size())
    throw UsageError("need one station per cell: " + std::to_string(stations.size()) + " stations for " +
                     std::to_string(geometry.size()) + " cells");
  auto det = calib::DetectorSeries::from_section(series, stations);
  auto aligned = align_boundary(in, det.time_s);
  if (s.has("horizon")) {
    const auto h = s.get<std::size_t>("horizon", 0);
    if (h > det.steps()) throw HorizonError("horizon exceeds the detector series");
    det.time_s.resize(h);
    det.flow.resize(h);
    det.density.resize(h);
    det.speed.resize(h);
    aligned = align_boundary(aligned, det.time_s);
  }
  const auto r = calib::calibrate(geometry, aligned, det);
  const auto dir = out_dir(s);
  write_json(dir, "model.json", mctm::to_json(r.model));
  write_json(dir, "metrics.json", calib::to_json(r)["metrics"]);
  std::cout << "cell  v_f      w_c      Q_M        rho_c    rho_j    MAPE%    MAE\n" << std::fixed;
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const auto& c = r.model.cells[i];
    const auto& m = r.cells[i].metrics;
    std::cout << std::left << std::setprecision(2) << std::setw(6) << i + 1 << std::setw(9) << c.free_flow_speed
              << std::setw(9) << c.wave_speed << std::setw(11) << c.max_flow << std::setw(9)
              << c.critical_density << std::setw(9) << c.jam_density << std::setw(9) << m.mape
              << std::setprecision(3) << m.mae << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fog-aware variable speed limit toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto* cal = app.add_subcommand("calibrate", "fit each cell's diagram to detector data");
  common_flags(cal, f);
  flag<std::string>(cal, f, "detectors", "raw detector CSV");
  flag<std::vector<std::string>>(cal, f, "stations", "station id per cell, upstream first");
  flag<double>(cal, f, "g-factor", "effective vehicle length in miles");

  auto* sim = app.add_subcommand("simulate", "run the segment with or without control");
  common_flags(sim, f);
  scenario_flags(sim, f);
  flag<std::string>(sim, f, "layout", "sign layout JSON");
  flag<std::string>(sim, f, "factors", "control factors JSON");
  flag<double>(sim, f, "threshold", "start threshold");
  flag<double>(sim, f, "cycle", "control cycle in seconds");
  flag<double>(sim, f, "step", "speed change step in mph");
  flag<double>(sim, f, "clamp", "max adjacent difference in mph");
  switch_flag(sim, f, "never-trigger", "controller that never reduces a limit");
  switch_flag(sim, f, "paired", "also run uncontrolled and report changes");

  auto* optc = app.add_subcommand("optimize", "search control factors with the GA");
  common_flags(optc, f);
  scenario_flags(optc, f);
  flag<std::string>(optc, f, "layout", "sign layout JSON");
  ga_flags(optc, f);

  auto* pl = app.add_subcommand("placements", "optimise and rank several sign layouts");
  common_flags(pl, f);
  scenario_flags(pl, f);
  flag<std::string>(pl, f, "layouts", "JSON array of sign layouts");
  ga_flags(pl, f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    for (const auto& c : f.collect) c();
    RunSpec s = load_config(f.config);
    for (const auto& [k, v] : f.set.items()) s.v[k] = v;
    if (cal->parsed()) return cmd_calibrate(s);
    if (sim->parsed()) return cmd_simulate(s);
    if (optc->parsed()) return cmd_optimize(s);
    return cmd_placements(s);
  } catch (const Error& e) {
    std::cerr << "vslfog: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "vslfog: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::usage);
  }
}
