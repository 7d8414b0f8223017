#include "lexinet/closed_loop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>

#include "lexinet/error.hpp"
#include "lexinet/problem.hpp"
#include "lexinet/reference.hpp"

namespace lexinet {

Strategy parse_strategy(const std::string& name, double theta) {
  if (name == "fixed") return Strategy::fixed();
  if (name == "weighted") return Strategy::weighted(theta);
  if (name == "lexi" || name == "lexicographic") return Strategy::lexicographic();
  if (name == "strategy2" || name == "max-pressure") {
    throw Error(ErrorCode::kUnsupported, "strategy '" + name + "' is unsupported - see docs");
  }
  throw Error(ErrorCode::kUnsupported, "unknown strategy '" + name + "'");
}

std::string to_string(const Strategy& strategy) {
  switch (strategy.kind) {
    case StrategyKind::kFixed: return "fixed";
    case StrategyKind::kWeighted: {
      std::ostringstream os;
      os << "weighted(" << strategy.theta << ")";
      return os.str();
    }
    case StrategyKind::kLexicographic: return "lexi";
  }
  return "?";
}

int occupancy_count(const Network& net, const TrafficState& state, double threshold) {
  int count = 0;
  for (std::size_t z = 0; z < net.num_links(); ++z) {
    if (state.n[z] / net.link(z).capacity > threshold) ++count;
  }
  return count;
}

namespace {

ControlInput fixed_time_control(const Scenario& sc, const TrafficState& state, const ExogenousStep& ex) {
  const Network& net = sc.net;
  ControlInput c = ControlInput::zero(net);
  c.g = sc.fixed_time_greens();
  for (std::size_t z = 0; z < net.num_links(); ++z) {
    const RoadLink& l = net.link(z);
    if (net.is_source_link(z)) {
      const double room = l.capacity - state.n[z] - ex.e(z);
      c.f_u[z] = std::max(0.0, std::min(ex.d[z] + state.q[z], room));
    }
    if (net.is_destination_link(z)) {
      c.f_d[z] = l.dest_outflow_cap.value_or(0.0);
      continue;
    }
    double green = 0.0;
    for (std::size_t p : net.link_phases(z)) green += c.g[p];
    c.f_d[z] = l.saturation_flow * green;
  }
  return c;
}

class Controller {
 public:
  Controller(const Scenario& sc, const Strategy& strategy, const RunOptions& options)
      : sc_(sc), strategy_(strategy), options_(options) {
    mp_.alpha = sc.params.alpha;
    mp_.beta = sc.params.beta;
    lp_ = stage_config(sc.params.rho_lp);
    qp_ = stage_config(sc.params.rho_qp);
  }

  // Fills controls and solver fields of `rec`.
  void decide(std::size_t step, const TrafficState& state, StepRecord& rec, ConvergenceReport* trace) {
    const ExogenousForecast forecast = sc_.forecast(step);
    if (strategy_.kind == StrategyKind::kFixed) {
      rec.applied = fixed_time_control(sc_, state, forecast.steps.front());
      return;
    }
    try {
      std::vector<LocalProblem> pc = build_pc_problem(sc_.net, sc_.partition, state, forecast);
      std::vector<LocalProblem> final_problems;
      DistResult final_result;
      if (strategy_.kind == StrategyKind::kWeighted) {
        auto wp = build_weighted_problem(pc, sc_.net, sc_.partition, state, strategy_.theta, mp_.alpha);
        final_result = solve(wp, qp_, tsc_);
        rec.iters_tsc = final_result.report.iterations;
        final_problems = std::move(wp);
      } else {
        DistResult first = solve(pc, lp_, pc_);
        rec.iters_pc = first.report.iterations;
        if (!first.report.converged) {
          fall_back(step, state, rec, "SolverDiverged: first stage hit s_max");
          rec.residual = first.report.residual;
          return;
        }
        auto lifted = lift_tsc_problem(pc, first.x, sc_.net, sc_.partition, state, mp_, lp_.tol);
        final_result = solve(lifted, qp_, tsc_);
        rec.iters_tsc = final_result.report.iterations;
        final_problems = std::move(lifted);
      }
      rec.residual = final_result.report.residual;
      if (trace != nullptr) *trace = final_result.report;
      if (!final_result.report.converged) {
        fall_back(step, state, rec, "SolverDiverged: stage hit s_max");
        return;
      }
      ExtractedControls ex = extract_controls(sc_.net, sc_.partition, final_problems, final_result.x, 0);
      rec.applied = ex.control;
      if (std::optional<ControlInput> p = polish(sc_, sc_.partition, state, rec.applied, step)) rec.applied = *p;
      previous_ = rec.applied;
    } catch (const Error& e) {
      rec.converged = false;
      fall_back(step, state, rec, e.what());
    }
  }

 private:
  struct WarmState {
    std::vector<LocalProblem> problems;
    std::vector<AgentIterate> iterates;
  };

  SolverConfig stage_config(double rho) const {
    SolverConfig c;
    c.rho = rho;
    c.g_scale = rho;
    c.tol = sc_.params.tol / rho;
    c.s_max = sc_.params.s_max;
    c.warm_start = options_.warm_start;
    c.workers = options_.workers;
    return c;
  }

  DistResult solve(const std::vector<LocalProblem>& problems, const SolverConfig& config, WarmState& warm) {
    std::vector<AgentIterate> seed;
    const bool reuse = config.warm_start && warm.problems.size() == problems.size();
    if (reuse) {
      for (std::size_t a = 0; a < problems.size(); ++a) {
        seed.push_back(shift_iterate(warm.problems[a], warm.iterates[a], problems[a]));
      }
    }
    SyncBus bus;
    DistResult r = dist_sol(problems, config, bus, reuse ? &seed : nullptr);
    warm.problems = problems;
    warm.iterates = r.iterates;
    return r;
  }

  void fall_back(std::size_t step, const TrafficState& state, StepRecord& rec, const std::string& why) {
    rec.converged = false;
    rec.fallback = true;
    rec.note = why;
    const ControlInput base = previous_ ? *previous_ : fixed_time_control(sc_, state, sc_.exogenous_at(step));
    rec.applied = base;
    if (std::optional<ControlInput> p = polish(sc_, sc_.partition, state, base, step)) rec.applied = *p;
  }

  // Closest control satisfying every first-step constraint exactly; removes
  // the O(tol) violations an ADMM solution carries.
  std::optional<ControlInput> polish(const Scenario& sc, const Partition& part, const TrafficState& state,
                                     const ControlInput& target, std::size_t step) const;

  const Scenario& sc_;
  Strategy strategy_;
  RunOptions options_;
  ModelParams mp_;
  SolverConfig lp_;
  SolverConfig qp_;
  WarmState pc_;
  WarmState tsc_;
  std::optional<ControlInput> previous_;
};

std::optional<ControlInput> Controller::polish(const Scenario& sc, const Partition& part, const TrafficState& state,
                                               const ControlInput& target, std::size_t step) const {
  const Network& net = sc.net;
  std::vector<LocalProblem> one;
  try {
    one = build_pc_problem(net, part, state, sc.forecast(step, 1));
  } catch (const Error&) {
    return std::nullopt;
  }
  for (LocalProblem& lp : one) {
    const auto n = static_cast<Eigen::Index>(lp.dim());
    std::vector<Eigen::Triplet<double>> diag;
    lp.w = Eigen::VectorXd::Zero(n);
    for (std::size_t pos = 0; pos < lp.dim(); ++pos) {
      const VariableKey& key = lp.layout.key(pos);
      double goal = 0.0;
      switch (key.quantity) {
        case Quantity::kFd: goal = target.f_d[key.id]; break;
        case Quantity::kFu: goal = target.f_u[key.id]; break;
        case Quantity::kG: goal = target.g[key.id]; break;
        default: continue;
      }
      const auto i = static_cast<Eigen::Index>(pos);
      diag.emplace_back(i, i, 1.0);
      lp.w[i] = -goal;
    }
    lp.W = SparseMatrix(n, n);
    lp.W.setFromTriplets(diag.begin(), diag.end());
    lp.cost_constant = 0.0;
  }
  try {
    const GlobalProblem g = assemble_global(one);
    const CentralSolution s = solve_centralized(g);
    ExtractedControls ex = extract_controls(net, part, one, g.split(s.x), 0);
    return ex.control;
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace

RunLog run_closed_loop(const Scenario& scenario, const Strategy& strategy, const RunOptions& options) {
  const Network& net = scenario.net;
  RunLog log;
  log.strategy = strategy;
  log.cycle = net.cycle();

  Controller controller(scenario, strategy, options);
  std::mt19937_64 rng(scenario.seed);
  TrafficState state = TrafficState::zero(net);
  double served = 0.0;

  const std::size_t steps = scenario.steps();
  for (std::size_t t = 0; t < steps; ++t) {
    StepRecord rec;
    rec.t = t;
    rec.state = state;
    ConvergenceReport report;
    const bool keep = options.trace_steps.count(t) > 0;
    controller.decide(t, state, rec, keep ? &report : nullptr);
    if (keep) log.convergence[t] = report;

    const PlantStep ps = step_plant(net, state, scenario.exogenous_at(t), rec.applied, scenario.noise, rng);
    rec.applied = ps.applied;
    rec.next = ps.next;
    rec.demand = ps.demand;
    rec.e_in = ps.e_in;
    rec.e_out = ps.e_out;
    rec.clamped = ps.clamped;
    rec.step_served = ps.served;
    served += ps.served;
    rec.served = served;
    for (std::size_t z = 0; z < net.num_links(); ++z) {
      rec.phi2 += state.n[z] - ps.applied.f_d[z];
      rec.phi3 += ps.next.n[z] * ps.next.n[z] / net.link(z).capacity;
      if (net.is_source_link(z)) rec.phi1 += ps.next.q[z];
    }
    log.steps.push_back(rec);
    state = ps.next;
  }

  // Occupancy every 10 s, interpolating n linearly inside each cycle.
  const double horizon_s = static_cast<double>(steps) * net.cycle();
  for (std::size_t i = 0;; ++i) {
    const double s = 10.0 * static_cast<double>(i);
    if (s >= horizon_s - 1e-9) break;
    const auto k = std::min(steps - 1, static_cast<std::size_t>(s / net.cycle()));
    const double frac = (s - static_cast<double>(k) * net.cycle()) / net.cycle();
    TrafficState mid = log.steps[k].state;
    for (std::size_t z = 0; z < net.num_links(); ++z) {
      mid.n[z] += frac * (log.steps[k].next.n[z] - mid.n[z]);
    }
    log.occupancy.push_back({s, occupancy_count(net, mid, 0.6), occupancy_count(net, mid, 0.8)});
  }
  return log;
}

void emit_metrics(const RunLog& log, const std::string& outdir) {
  if (log.steps.empty()) throw Error(ErrorCode::kIoError, "run log is empty");
  std::error_code ec;
  std::filesystem::create_directories(outdir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + outdir + ": " + ec.message());
  const std::filesystem::path dir(outdir);
  char buf[512];

  {
    const std::string path = (dir / "steps.csv").string();
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
    out << "t,phi1,phi2,phi3,served,queue_total,iters_pc,iters_tsc,residual\n";
    for (const StepRecord& r : log.steps) {
      double queue = 0.0;
      for (double q : r.next.q) queue += q;
      std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%d,%.9g\n", r.t, r.phi1, r.phi2, r.phi3, r.served,
                    queue, r.iters_pc, r.iters_tsc, r.residual);
      out << buf;
    }
    if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
  }
  {
    const std::string path = (dir / "occupancy.csv").string();
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
    out << "t10,count_gt_0.6,count_gt_0.8\n";
    for (const OccupancySample& s : log.occupancy) {
      std::snprintf(buf, sizeof buf, "%.9g,%d,%d\n", s.t10, s.count_gt_06, s.count_gt_08);
      out << buf;
    }
    if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
  }
  for (const auto& [t, report] : log.convergence) {
    report.write_csv((dir / ("convergence_" + std::to_string(t) + ".csv")).string());
  }
}

}  // namespace lexinet
