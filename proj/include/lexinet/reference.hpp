#pragma once

#include <Eigen/Dense>
#include <vector>

#include "lexinet/problem.hpp"

namespace lexinet {

// All agents' blocks stacked into one dense problem
//   min 1/2 x'Wx + w'x + constant  s.t.  Ux = u,  Vx <= v
// with the coupling rows U_ij x_i - U_ji x_j = 0 (i < j) appended to U.
struct GlobalProblem {
  Eigen::MatrixXd W;
  Eigen::VectorXd w;
  Eigen::MatrixXd U;
  Eigen::VectorXd u;
  Eigen::MatrixXd V;
  Eigen::VectorXd v;
  Eigen::VectorXd c;
  double constant = 0.0;
  std::vector<Eigen::Index> offset;  // first column of each agent
  std::vector<Eigen::Index> size;

  Eigen::Index dim() const { return w.size(); }
  double objective(const Eigen::VectorXd& x) const { return 0.5 * x.dot(W * x) + w.dot(x) + constant; }
  std::vector<Eigen::VectorXd> split(const Eigen::VectorXd& x) const;
  Eigen::VectorXd stack(const std::vector<Eigen::VectorXd>& parts) const;
};

GlobalProblem assemble_global(const std::vector<LocalProblem>& problems);

struct CentralSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd eq_dual;
  Eigen::VectorXd ineq_dual;  // >= 0
  double cost = 0.0;
  int iterations = 0;
  // Largest of the scaled stationarity, feasibility and complementarity residuals.
  double kkt_residual = 0.0;
};

struct CentralOptions {
  double tol = 1e-9;
  double accept = 1e-7;  // a stalled run whose best iterate reaches this counts as solved
  int max_iterations = 200;
};

// Primal-dual interior point (Mehrotra predictor-corrector) on the dense KKT
// system. Throws Error with kInfeasible, kUnbounded or kMaxIterations.
CentralSolution solve_centralized(const GlobalProblem& problem, const CentralOptions& options = {});

struct LexicographicSolution {
  double phi_pc = 0.0;         // optimal first-stage value
  Eigen::VectorXd pc_x;
  Eigen::VectorXd tsc_x;
  double tsc_cost = 0.0;       // includes constants
  double lex_residual = 0.0;   // |c'x - phi_pc|
};

// Solves the first stage, then the second stage with c'x = phi_pc appended.
// `tsc` is the unlifted second stage (build_tsc_problem or weighted form).
LexicographicSolution solve_lexicographic_centralized(const std::vector<LocalProblem>& pc,
                                                      const std::vector<LocalProblem>& tsc,
                                                      const CentralOptions& options = {});

}  // namespace lexinet
