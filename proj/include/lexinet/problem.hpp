#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "lexinet/dynamics.hpp"
#include "lexinet/network.hpp"

namespace lexinet {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// Block k holds n(t+k+1), q(t+k+1), f_d(t+k), f_u(t+k), g(t+k).
enum class Quantity { kN, kQ, kFd, kFu, kG, kVirtual };

const char* to_string(Quantity q);

struct VariableKey {
  Quantity quantity;
  std::size_t id;  // link index, phase index, or neighbour agent (kVirtual)
  std::size_t k;   // block index; 0 for kVirtual

  auto tie() const { return std::tie(quantity, id, k); }
  bool operator<(const VariableKey& o) const { return tie() < o.tie(); }
  bool operator==(const VariableKey& o) const { return tie() == o.tie(); }
};

class VariableLayout {
 public:
  VariableLayout() = default;
  explicit VariableLayout(std::size_t horizon) : horizon_(horizon) {}

  std::size_t push(const VariableKey& key);
  std::size_t size() const { return keys_.size(); }
  std::size_t horizon() const { return horizon_; }
  const VariableKey& key(std::size_t pos) const { return keys_[pos]; }
  // kNoIndex when absent.
  std::size_t find(Quantity q, std::size_t id, std::size_t k) const;
  bool contains(Quantity q, std::size_t id, std::size_t k) const { return find(q, id, k) != kNoIndex; }
  std::string label(const Network& net, std::size_t pos) const;

 private:
  std::size_t horizon_ = 0;
  std::vector<VariableKey> keys_;
  std::map<VariableKey, std::size_t> index_;
};

enum class RowFamily {
  kConservation,
  kQueue,
  kLift,
  kInequality,  // see RowLabel::constraint
  kCouplingN,
  kCouplingFd,
  kCouplingVirtual,
};

struct RowLabel {
  RowFamily family;
  ConstraintFamily constraint = ConstraintFamily::kSignalBudget;  // kInequality only
  std::size_t element = 0;  // link, junction, phase, or neighbour index
  std::size_t k = 0;

  std::string to_string(const Network& net) const;
  auto tie() const { return std::tie(family, constraint, element, k); }
  bool operator<(const RowLabel& o) const { return tie() < o.tie(); }
};

struct Coupling {
  std::size_t neighbor = 0;
  SparseMatrix matrix;  // selects this agent's copies
  std::vector<RowLabel> rows;
};

// One agent's blocks of
//   min 1/2 x'Wx + w'x  s.t.  Ux = u,  Vx <= v,  U_ij x_i = U_ji x_j.
struct LocalProblem {
  std::size_t agent = 0;
  VariableLayout layout;
  SparseMatrix W;
  Eigen::VectorXd w;
  SparseMatrix U;
  Eigen::VectorXd u;
  std::vector<RowLabel> eq_rows;
  SparseMatrix V;
  Eigen::VectorXd v;
  std::vector<RowLabel> ineq_rows;
  std::vector<Coupling> couplings;  // sorted by neighbour
  Eigen::VectorXd c;                // queue-sum selector of the first stage
  double cost_constant = 0.0;       // terms dropped from w (measured n(t))

  std::size_t dim() const { return layout.size(); }
  const Coupling* coupling_with(std::size_t neighbor) const;
  double objective(const Eigen::VectorXd& x) const;  // includes cost_constant
};

struct ModelParams {
  double alpha = 0.25;
  double beta = 0.01;
};

std::vector<VariableLayout> layout_variables(const Network& net, const Partition& part, std::size_t horizon);

// First stage: minimise total predicted boundary queues.
std::vector<LocalProblem> build_pc_problem(const Network& net, const Partition& part, const TrafficState& state,
                                           const ExogenousForecast& forecast);

// Adds H, h of the signal-control cost (without the lexicographic row).
std::vector<LocalProblem> build_tsc_problem(const std::vector<LocalProblem>& pc, const Network& net,
                                            const Partition& part, const TrafficState& state,
                                            const ModelParams& params);

// Second stage lifted with one virtual variable per neighbour so the
// lexicographic equality becomes local rows plus neighbour couplings.
// Throws kNotConverged when the first-stage solutions violate their rows by
// more than `pc_tol` (half that for copy mismatches, which split the error).
std::vector<LocalProblem> lift_tsc_problem(const std::vector<LocalProblem>& pc,
                                           const std::vector<Eigen::VectorXd>& pc_solutions,
                                           const Network& net, const Partition& part, const TrafficState& state,
                                           const ModelParams& params, double pc_tol);

// Largest violation of the scaled first-stage rows by per-agent solutions:
// equalities, inequalities, and half of each coupled copy mismatch.
double first_stage_residual(const std::vector<LocalProblem>& pc, const std::vector<Eigen::VectorXd>& x);

// theta * Phi1 + alpha * Phi2 + Phi3 as one problem.
std::vector<LocalProblem> build_weighted_problem(const std::vector<LocalProblem>& pc, const Network& net,
                                                 const Partition& part, const TrafficState& state, double theta,
                                                 double alpha);

// Drops virtual variables of a lifted solution.
Eigen::VectorXd drop_virtual(const LocalProblem& lifted, const Eigen::VectorXd& x);

struct ExtractedControls {
  ControlInput control;
  std::vector<double> link_green;  // g_z = f_z^d / S_z, seconds
  double max_copy_discrepancy = 0.0;
  std::vector<std::string> warnings;
};

// Controls for block k (k = 0 is the one applied).
ExtractedControls extract_controls(const Network& net, const Partition& part,
                                   const std::vector<LocalProblem>& problems,
                                   const std::vector<Eigen::VectorXd>& solutions, std::size_t k = 0);

inline ExtractedControls extract_first_step_controls(const Network& net, const Partition& part,
                                                     const std::vector<LocalProblem>& problems,
                                                     const std::vector<Eigen::VectorXd>& solutions) {
  return extract_controls(net, part, problems, solutions, 0);
}

// Inverse direction: fills every agent's vector from a control plan and the
// trajectory it induces (virtual variables left at zero).
std::vector<Eigen::VectorXd> solution_from_plan(const Network& net, const std::vector<LocalProblem>& problems,
                                                const TrafficState& state, const ExogenousForecast& forecast,
                                                const std::vector<ControlInput>& plan);

struct Objectives {
  double phi1 = 0.0;  // total boundary queues
  double phi2 = 0.0;  // vehicles held back
  double phi3 = 0.0;  // sum n^2 / nbar
  double queue_sq = 0.0;
  double tsc(const ModelParams& p) const { return phi3 + p.alpha * phi2 + p.beta * queue_sq; }
};

// Direct evaluation of the performance indexes over a plan.
Objectives evaluate_objectives(const Network& net, const TrafficState& state, const ExogenousForecast& forecast,
                               const std::vector<ControlInput>& plan);

// min eigenvalue of U U' after scaling rows to unit infinity norm.
double min_row_gram_eigenvalue(const SparseMatrix& U);

}  // namespace lexinet
