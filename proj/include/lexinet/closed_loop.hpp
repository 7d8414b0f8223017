#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "lexinet/admm.hpp"
#include "lexinet/dynamics.hpp"
#include "lexinet/scenario.hpp"

namespace lexinet {

enum class StrategyKind { kFixed, kWeighted, kLexicographic };

struct Strategy {
  StrategyKind kind = StrategyKind::kLexicographic;
  double theta = 5000.0;  // weighted only

  static Strategy fixed() { return {StrategyKind::kFixed, 0.0}; }
  static Strategy weighted(double theta) { return {StrategyKind::kWeighted, theta}; }
  static Strategy lexicographic() { return {StrategyKind::kLexicographic, 0.0}; }
};

// Accepts "fixed", "weighted", "lexi"/"lexicographic"; "strategy2" and
// anything else throw kUnsupported.
Strategy parse_strategy(const std::string& name, double theta);
std::string to_string(const Strategy& strategy);

struct StepRecord {
  std::size_t t = 0;
  TrafficState state;  // measured at the start of the step
  TrafficState next;   // plant state after the step
  ControlInput applied;
  double phi1 = 0.0;  // sum of queues after the step
  double phi2 = 0.0;  // sum of n(t) - f_d(t)
  double phi3 = 0.0;  // sum of n(t+1)^2 / nbar
  double served = 0.0;      // cumulative destination outflow
  double step_served = 0.0;
  double demand = 0.0;  // realized demand, e_in, e_out totals of the step
  double e_in = 0.0;
  double e_out = 0.0;
  int iters_pc = 0;   // first stage (lexicographic only)
  int iters_tsc = 0;  // second stage, or the single weighted problem
  double residual = 0.0;
  bool converged = true;
  bool fallback = false;  // previous controls re-applied
  bool clamped = false;
  std::string note;
};

struct OccupancySample {
  double t10 = 0.0;  // seconds from the start
  int count_gt_06 = 0;
  int count_gt_08 = 0;
};

struct RunLog {
  Strategy strategy;
  double cycle = 0.0;
  std::vector<StepRecord> steps;
  std::vector<OccupancySample> occupancy;
  std::map<std::size_t, ConvergenceReport> convergence;  // requested steps only
};

struct RunOptions {
  std::set<std::size_t> trace_steps;  // steps whose convergence trace is kept
  int workers = 1;
  bool warm_start = true;
};

RunLog run_closed_loop(const Scenario& scenario, const Strategy& strategy, const RunOptions& options = {});

// Links with n / nbar above `threshold`.
int occupancy_count(const Network& net, const TrafficState& state, double threshold);

// Writes steps.csv, occupancy.csv and convergence_<t>.csv into `outdir`.
void emit_metrics(const RunLog& log, const std::string& outdir);

}  // namespace lexinet
