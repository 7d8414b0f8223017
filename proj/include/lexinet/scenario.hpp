#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lexinet/dynamics.hpp"
#include "lexinet/network.hpp"

namespace lexinet {

// Piecewise-constant rate over [from_min, to_min), veh/hour.
struct Piece {
  double from_min = 0.0;
  double to_min = 0.0;
  double veh_per_hour = 0.0;
};

struct Profile {
  LinkId link = 0;
  std::vector<Piece> pieces;

  // Rate at a wall-clock minute; the last piece extends past the end.
  double at(double minute) const;
};

// Replaces a nominal turning ratio over [from_min, to_min).
struct TurningOverride {
  LinkId from = 0;
  LinkId to = 0;
  double ratio = 0.0;
  double from_min = 0.0;
  double to_min = 1e300;
};

struct ScenarioParams {
  double alpha = 0.25;
  double beta = 0.01;
  double theta = 5000.0;
  double gamma_default = 0.5;
  double rho_lp = 1.0;
  double rho_qp = 0.1;
  double tol = 1e-5;  // stage tolerance is tol / rho
  int s_max = 5000;
};

struct Scenario {
  Network net;
  std::map<JunctionId, int> assignment;
  Partition partition;
  std::size_t horizon = 4;
  std::vector<Profile> demands;
  std::vector<Profile> e_in;
  std::vector<Profile> e_out;
  std::vector<TurningOverride> turning;
  double noise = 0.1;
  std::uint64_t seed = 42;
  ScenarioParams params;
  std::map<JunctionId, std::vector<double>> fixed_time_plan;  // seconds per phase, signal order
  double duration_min = 0.0;

  std::size_t steps() const;
  // Nominal exogenous data for the interval starting at control step `step`.
  ExogenousStep exogenous_at(std::size_t step) const;
  ExogenousForecast forecast(std::size_t step, std::size_t horizon) const;
  ExogenousForecast forecast(std::size_t step) const { return forecast(step, horizon); }
  // Greens per network phase: the plan if given, equal splits otherwise.
  std::vector<double> fixed_time_greens() const;
};

Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);

}  // namespace lexinet
