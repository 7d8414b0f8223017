#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lexinet/problem.hpp"

namespace lexinet {

struct SolverConfig {
  double rho = 1.0;
  double g_scale = 1.0;  // G = g_scale * I
  double tol = 1e-5;
  int s_max = 5000;
  bool warm_start = false;
  int workers = 1;  // threads executing agents; 1 runs inline
  // Also require ||x(s+1) - x(s)||_inf <= tol in the local stop flag.
  bool step_check = true;

  static SolverConfig lp() { return {1.0, 1.0, 1e-5, 5000, false, 1, true}; }
  static SolverConfig qp() { return {0.1, 0.1, 1e-4, 5000, false, 1, true}; }
  void validate() const;
};

struct AgentIterate {
  Eigen::VectorXd x;
  Eigen::VectorXd y;       // <= 0
  Eigen::VectorXd lambda;
  std::vector<Eigen::VectorXd> y_c;       // per entry of LocalProblem::couplings
  std::vector<Eigen::VectorXd> lambda_c;

  static AgentIterate zeros(const LocalProblem& problem);
  bool matches(const LocalProblem& problem) const;
};

// Carries an iterate from the previous control step onto a problem with the
// same structure, shifting every k-indexed entry one block forward and
// repeating the last block. Entries without a counterpart start at zero.
AgentIterate shift_iterate(const LocalProblem& previous, const AgentIterate& old, const LocalProblem& next);

class AgentFactorization {
 public:
  AgentFactorization(const LocalProblem& problem, const SolverConfig& config);

  // x solving  Wt x = rhs - U' mu,  U x = u.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
  const SparseMatrix& system() const { return wt_; }

 private:
  SparseMatrix wt_;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> chol_;
  Eigen::MatrixXd wt_inv_ut_;  // Wt^{-1} U'
  Eigen::LLT<Eigen::MatrixXd> schur_;
  SparseMatrix u_mat_;
  Eigen::VectorXd u_;
};

Eigen::VectorXd proximal_x_update(const LocalProblem& problem, const AgentFactorization& factor,
                                  const AgentIterate& it, const SolverConfig& config);

// U_ij x - lambda_ij / rho for coupling slot c.
Eigen::VectorXd coupling_payload(const LocalProblem& problem, const AgentIterate& it, std::size_t c,
                                 const SolverConfig& config);

// `inbox[c]` is the neighbour payload for coupling slot c; it.x must already
// hold x(s+1).
void slack_dual_update(const LocalProblem& problem, AgentIterate& it,
                       const std::vector<std::optional<Eigen::VectorXd>>& inbox, const SolverConfig& config);

// Max of ||Vx - y - v||_inf and ||U_ij x - y_ij||_inf over neighbours.
double primal_residual(const LocalProblem& problem, const AgentIterate& it);

// One synchronous round: every agent takes the min over its closed neighbourhood.
std::vector<int> min_consensus_round(const std::vector<std::vector<std::size_t>>& neighbors,
                                     const std::vector<int>& flags);
// `rounds` synchronous rounds.
std::vector<int> min_consensus(const std::vector<std::vector<std::size_t>>& neighbors, std::vector<int> flags,
                               std::size_t rounds);

struct RoundMessage {
  std::size_t from = 0;
  std::size_t to = 0;
  Eigen::VectorXd payload;
  int flag = 1;
};

// Mailbox between agents. Within a round every (to, from) slot is written by
// exactly one sender and read by exactly one receiver, on opposite sides of a
// barrier.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void reset(std::size_t agents) = 0;
  virtual void post(RoundMessage message) = 0;
  virtual std::optional<RoundMessage> take(std::size_t to, std::size_t from) = 0;
};

class SyncBus : public Transport {
 public:
  void reset(std::size_t agents) override;
  void post(RoundMessage message) override;
  std::optional<RoundMessage> take(std::size_t to, std::size_t from) override;

 private:
  std::size_t agents_ = 0;
  std::vector<std::optional<RoundMessage>> slots_;
};

// Drops each message independently with probability `loss`.
class LossyBus : public Transport {
 public:
  LossyBus(double loss, std::uint64_t seed) : loss_(loss), rng_(seed) {}
  void reset(std::size_t agents) override { inner_.reset(agents); }
  void post(RoundMessage message) override;
  std::optional<RoundMessage> take(std::size_t to, std::size_t from) override { return inner_.take(to, from); }

 private:
  double loss_;
  std::mt19937_64 rng_;
  SyncBus inner_;
};

struct TracePoint {
  int iteration = 0;
  double residual = 0.0;
  double cost = 0.0;
};

struct ConvergenceReport {
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
  std::vector<TracePoint> trace;

  void write_csv(const std::string& path, double optimal_cost = 0.0, bool has_optimal = false) const;
};

struct DistResult {
  std::vector<Eigen::VectorXd> x;
  std::vector<AgentIterate> iterates;
  ConvergenceReport report;
};

// Algorithm 1 over all agents. `warm` seeds the iterates when config.warm_start
// is set and the shapes match.
DistResult dist_sol(const std::vector<LocalProblem>& problems, const SolverConfig& config, Transport& transport,
                    const std::vector<AgentIterate>* warm = nullptr);

DistResult dist_sol(const std::vector<LocalProblem>& problems, const SolverConfig& config);

}  // namespace lexinet
