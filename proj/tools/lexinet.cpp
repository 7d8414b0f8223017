#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lexinet/admm.hpp"
#include "lexinet/closed_loop.hpp"
#include "lexinet/error.hpp"
#include "lexinet/problem.hpp"
#include "lexinet/problem_io.hpp"
#include "lexinet/reference.hpp"
#include "lexinet/scenario.hpp"

using namespace lexinet;

namespace {

int cmd_run(const std::string& path, const std::string& strategy_name, double theta, int k, long long seed,
            const std::string& out, const std::vector<std::size_t>& traces, int workers) {
  Scenario sc = load_scenario(path);
  if (k > 0) sc.horizon = static_cast<std::size_t>(k);
  if (seed >= 0) sc.seed = static_cast<std::uint64_t>(seed);
  const Strategy strategy = parse_strategy(strategy_name, theta > 0.0 ? theta : sc.params.theta);
  RunOptions opts;
  opts.trace_steps.insert(traces.begin(), traces.end());
  opts.workers = workers;
  const RunLog log = run_closed_loop(sc, strategy, opts);
  emit_metrics(log, out);
  int fallbacks = 0;
  for (const StepRecord& r : log.steps) {
    if (r.fallback) {
      ++fallbacks;
      std::fprintf(stderr, "step %zu: %s\n", r.t, r.note.c_str());
    }
  }
  const StepRecord& last = log.steps.back();
  std::printf("%s: %zu steps, served %.9g, final queues %.9g, fallbacks %d -> %s\n", to_string(strategy).c_str(),
              log.steps.size(), last.served, last.phi1, fallbacks, out.c_str());
  return 0;
}

int cmd_validate(const std::string& path) {
  const Scenario sc = load_scenario(path);
  std::printf("ok: %zu junctions, %zu links, %zu agents, %zu steps of %g s, K=%zu\n", sc.net.num_junctions(),
              sc.net.num_links(), sc.partition.num_agents(), sc.steps(), sc.net.cycle(), sc.horizon);
  return 0;
}

SolverConfig stage_config(const Scenario& sc, double rho) {
  SolverConfig c;
  c.rho = rho;
  c.g_scale = rho;
  c.tol = sc.params.tol / rho;
  c.s_max = sc.params.s_max;
  return c;
}

int cmd_solve_once(const std::string& path, const std::string& dir) {
  const Scenario sc = load_scenario(path);
  const TrafficState state = TrafficState::zero(sc.net);
  const ExogenousForecast forecast = sc.forecast(0);
  ModelParams mp{sc.params.alpha, sc.params.beta};

  const auto pc = build_pc_problem(sc.net, sc.partition, state, forecast);
  const auto tsc = build_tsc_problem(pc, sc.net, sc.partition, state, mp);
  const SolverConfig lp = stage_config(sc, sc.params.rho_lp);
  const DistResult first = dist_sol(pc, lp);
  const auto lifted = lift_tsc_problem(pc, first.x, sc.net, sc.partition, state, mp, lp.tol);
  const DistResult second = dist_sol(lifted, stage_config(sc, sc.params.rho_qp));

  write_problems(sc.net, pc, dir, "pc");
  write_problems(sc.net, tsc, dir, "tsc");
  write_problems(sc.net, lifted, dir, "lifted");

  double phi_pc = 0.0, phi_tsc = 0.0, lex = 0.0;
  for (std::size_t a = 0; a < pc.size(); ++a) {
    phi_pc += pc[a].c.dot(first.x[a]);
    const Eigen::VectorXd x = drop_virtual(lifted[a], second.x[a]);
    phi_tsc += tsc[a].objective(x);
    lex += pc[a].c.dot(x);
  }
  nlohmann::json summary = {{"phi_pc", phi_pc},
                            {"phi_tsc", phi_tsc},
                            {"lex_sum", lex},
                            {"iters_pc", first.report.iterations},
                            {"iters_tsc", second.report.iterations},
                            {"converged_pc", first.report.converged},
                            {"converged_tsc", second.report.converged}};
  std::ofstream(std::filesystem::path(dir) / "summary.json") << summary.dump(1) << "\n";
  first.report.write_csv((std::filesystem::path(dir) / "convergence_pc.csv").string());
  second.report.write_csv((std::filesystem::path(dir) / "convergence_tsc.csv").string());
  std::printf("pc  %.9g (%d iterations)\ntsc %.9g (%d iterations)\nwrote %zu agents to %s\n", phi_pc,
              first.report.iterations, phi_tsc, second.report.iterations, pc.size(), dir.c_str());
  return 0;
}

int cmd_oracle(const std::string& dir) {
  const auto pc = read_problems(dir, "pc");
  const auto tsc = read_problems(dir, "tsc");
  const LexicographicSolution lex = solve_lexicographic_centralized(pc, tsc);
  std::printf("oracle pc  %.9g\noracle tsc %.9g\noracle lexicographic residual %.3g\n", lex.phi_pc, lex.tsc_cost,
              lex.lex_residual);
  std::ifstream in(std::filesystem::path(dir) / "summary.json");
  if (in) {
    const nlohmann::json s = nlohmann::json::parse(in);
    const double dpc = s.at("phi_pc").get<double>();
    const double dtsc = s.at("phi_tsc").get<double>();
    std::printf("admm   pc  %.9g  |diff| %.3g (rel %.3g)\n", dpc, std::abs(dpc - lex.phi_pc),
                std::abs(dpc - lex.phi_pc) / (1.0 + std::abs(lex.phi_pc)));
    std::printf("admm   tsc %.9g  |diff| %.3g (rel %.3g)\n", dtsc, std::abs(dtsc - lex.tsc_cost),
                std::abs(dtsc - lex.tsc_cost) / (1.0 + std::abs(lex.tsc_cost)));
    std::printf("admm   lexicographic residual %.3g\n", std::abs(s.at("lex_sum").get<double>() - lex.phi_pc));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lexinet: distributed lexicographic MPC for urban traffic"};
  app.require_subcommand(1);

  std::string scenario, strategy = "lexi", out, problems;
  double theta = 0.0;
  int k = 0, workers = 1;
  long long seed = -1;
  std::vector<std::size_t> traces;

  CLI::App* run = app.add_subcommand("run", "closed-loop simulation");
  run->add_option("--scenario", scenario, "scenario JSON")->required();
  run->add_option("--strategy", strategy, "fixed | weighted | lexi")->required();
  run->add_option("--theta", theta, "weight on total queues (weighted strategy)");
  run->add_option("--k", k, "override the prediction horizon");
  run->add_option("--seed", seed, "override the plant seed");
  run->add_option("--out", out, "output directory")->required();
  run->add_option("--trace", traces, "steps whose ADMM convergence trace is written");
  run->add_option("--workers", workers, "threads per ADMM solve");

  CLI::App* validate = app.add_subcommand("validate", "load and validate a scenario");
  validate->add_option("--scenario", scenario, "scenario JSON")->required();

  CLI::App* once = app.add_subcommand("solve-once", "solve the first control step and dump the problems");
  once->add_option("--scenario", scenario, "scenario JSON")->required();
  once->add_option("--dump-problems", out, "output directory")->required();

  CLI::App* oracle = app.add_subcommand("oracle", "solve dumped problems centrally and compare");
  oracle->add_option("--problems", problems, "directory written by solve-once")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(scenario, strategy, theta, k, seed, out, traces, workers);
    if (*validate) return cmd_validate(scenario);
    if (*once) return cmd_solve_once(scenario, out);
    if (*oracle) return cmd_oracle(problems);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
