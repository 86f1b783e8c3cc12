// Writes the bundled fog-day scenario and the synthetic calibration morning
// as plain files the vslfog tool can read.
//
//   vslfog_fixture [out_dir]        (default: fixtures)

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <nlohmann/json.hpp>

#include "vslfog/data_pipeline.hpp"
#include "vslfog/fixture.hpp"
#include "vslfog/mctm_io.hpp"
#include "vslfog/risk_model.hpp"
#include "vslfog/vsl_control.hpp"

namespace fs = std::filesystem;
using namespace vslfog;

namespace {

std::ofstream open(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

void write_json(const fs::path& p, const nlohmann::json& j) { open(p) << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  try {
    const fs::path dir = argc > 1 ? argv[1] : "fixtures";
    fs::create_directories(dir);

    const auto m = fixture::model();
    write_json(dir / "model.json", mctm::to_json(m));
    {
      auto os = open(dir / "boundary.csv");
      mctm::write_boundary(os, fixture::boundary(), m.size());
    }
    {
      auto os = open(dir / "weather.csv");
      data::write_weather(os, fixture::weather());
    }
    const auto layouts = fixture::layouts();
    write_json(dir / "layout.json", vsl::to_json(layouts.front()));
    nlohmann::json all = nlohmann::json::array();
    for (const auto& l : layouts) all.push_back(vsl::to_json(l));
    write_json(dir / "layouts.json", all);
    write_json(dir / "factors.json", vsl::to_json(fixture::fog_factors()));
    write_json(dir / "factors_never.json", vsl::to_json(vsl::ControlFactors::never_trigger()));
    write_json(dir / "coefficients.json", risk::to_json(risk::RiskCoefficients::fog_model()));

    const auto p = fixture::calibration_profile();
    const auto in = fixture::boundary(p);
    {
      auto os = open(dir / "calibration_boundary.csv");
      mctm::write_boundary(os, in, m.size());
    }
    const auto det = fixture::synthetic_detectors(m, in, mctm::warm_start(m, in));
    {
      auto os = open(dir / "detectors.csv");
      data::write_detector_records(os, fixture::detector_records(det));
    }

    write_json(dir / "run.json", {{"model", "model.json"},
                                  {"boundary", "boundary.csv"},
                                  {"weather", "weather.csv"},
                                  {"layout", "layout.json"},
                                  {"layouts", "layouts.json"},
                                  {"coefficients", "coefficients.json"},
                                  {"factors", "factors.json"},
                                  {"seed", 2021}});
    write_json(dir / "calibrate.json", {{"model", "model.json"},
                                        {"boundary", "calibration_boundary.csv"},
                                        {"detectors", "detectors.csv"},
                                        {"stations", {"S1", "S2", "S3", "S4"}}});
    std::cout << "fixture written to " << dir.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "vslfog_fixture: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
