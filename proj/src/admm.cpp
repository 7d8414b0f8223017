#include "lexinet/admm.hpp"

#include <algorithm>
#include <barrier>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "lexinet/error.hpp"

namespace lexinet {

namespace {

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

void SolverConfig::validate() const {
  if (!(rho > 0.0)) throw Error(ErrorCode::kValidationError, "rho must be positive");
  if (!(g_scale > 0.0)) throw Error(ErrorCode::kValidationError, "g_scale must be positive");
  if (!(tol > 0.0)) throw Error(ErrorCode::kValidationError, "tol must be positive");
  if (s_max < 1) throw Error(ErrorCode::kValidationError, "s_max must be at least 1");
  if (workers < 1) throw Error(ErrorCode::kValidationError, "workers must be at least 1");
}

AgentIterate AgentIterate::zeros(const LocalProblem& problem) {
  AgentIterate it;
  it.x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.dim()));
  it.y = Eigen::VectorXd::Zero(problem.V.rows());
  it.lambda = Eigen::VectorXd::Zero(problem.V.rows());
  for (const Coupling& c : problem.couplings) {
    it.y_c.push_back(Eigen::VectorXd::Zero(c.matrix.rows()));
    it.lambda_c.push_back(Eigen::VectorXd::Zero(c.matrix.rows()));
  }
  return it;
}

bool AgentIterate::matches(const LocalProblem& problem) const {
  if (x.size() != static_cast<Eigen::Index>(problem.dim())) return false;
  if (y.size() != problem.V.rows() || lambda.size() != problem.V.rows()) return false;
  if (y_c.size() != problem.couplings.size() || lambda_c.size() != problem.couplings.size()) return false;
  for (std::size_t c = 0; c < problem.couplings.size(); ++c) {
    if (y_c[c].size() != problem.couplings[c].matrix.rows()) return false;
    if (lambda_c[c].size() != problem.couplings[c].matrix.rows()) return false;
  }
  return true;
}

AgentIterate shift_iterate(const LocalProblem& previous, const AgentIterate& old, const LocalProblem& next) {
  AgentIterate it = AgentIterate::zeros(next);
  if (!old.matches(previous)) return it;
  const std::size_t last = previous.layout.horizon() == 0 ? 0 : previous.layout.horizon() - 1;
  auto later = [&](std::size_t k) { return std::min(k + 1, last); };

  for (std::size_t p = 0; p < next.dim(); ++p) {
    const VariableKey& key = next.layout.key(p);
    const std::size_t k = key.quantity == Quantity::kVirtual ? 0 : later(key.k);
    const std::size_t src = previous.layout.find(key.quantity, key.id, k);
    if (src != kNoIndex) it.x[static_cast<Eigen::Index>(p)] = old.x[static_cast<Eigen::Index>(src)];
  }

  auto carry = [&](const std::vector<RowLabel>& from_rows, const Eigen::VectorXd& from_a, const Eigen::VectorXd& from_b,
                   const std::vector<RowLabel>& to_rows, Eigen::VectorXd& to_a, Eigen::VectorXd& to_b) {
    std::map<RowLabel, std::size_t> index;
    for (std::size_t r = 0; r < from_rows.size(); ++r) index.emplace(from_rows[r], r);
    for (std::size_t r = 0; r < to_rows.size(); ++r) {
      RowLabel label = to_rows[r];
      if (label.family != RowFamily::kCouplingVirtual) label.k = later(label.k);
      auto found = index.find(label);
      if (found == index.end()) continue;
      to_a[static_cast<Eigen::Index>(r)] = from_a[static_cast<Eigen::Index>(found->second)];
      to_b[static_cast<Eigen::Index>(r)] = from_b[static_cast<Eigen::Index>(found->second)];
    }
  };
  carry(previous.ineq_rows, old.y, old.lambda, next.ineq_rows, it.y, it.lambda);
  for (std::size_t c = 0; c < next.couplings.size(); ++c) {
    for (std::size_t pc = 0; pc < previous.couplings.size(); ++pc) {
      if (previous.couplings[pc].neighbor != next.couplings[c].neighbor) continue;
      carry(previous.couplings[pc].rows, old.y_c[pc], old.lambda_c[pc], next.couplings[c].rows, it.y_c[c],
            it.lambda_c[c]);
    }
  }
  return it;
}

AgentFactorization::AgentFactorization(const LocalProblem& problem, const SolverConfig& config)
    : u_mat_(problem.U), u_(problem.u) {
  const auto n = static_cast<Eigen::Index>(problem.dim());
  SparseMatrix g(n, n);
  g.setIdentity();
  g *= config.g_scale;
  SparseMatrix vtv = SparseMatrix(problem.V.transpose()) * problem.V;
  wt_ = g + problem.W + config.rho * vtv;
  for (const Coupling& c : problem.couplings) {
    SparseMatrix ctc = SparseMatrix(c.matrix.transpose()) * c.matrix;
    wt_ += config.rho * ctc;
  }
  Eigen::SparseMatrix<double> col_major(wt_);
  chol_.compute(col_major);
  if (chol_.info() != Eigen::Success) throw Error(ErrorCode::kSingularKkt, "proximal system is not positive definite");

  if (problem.U.rows() > 0) {
    const Eigen::MatrixXd ut = Eigen::MatrixXd(problem.U).transpose();
    wt_inv_ut_ = chol_.solve(ut);
    const Eigen::MatrixXd schur = problem.U * wt_inv_ut_;
    schur_.compute(schur);
    if (schur_.info() != Eigen::Success) throw Error(ErrorCode::kSingularKkt, "equality block is rank deficient");
    const Eigen::MatrixXd l = schur_.matrixL();
    if (l.diagonal().cwiseAbs2().minCoeff() <= 1e-12) {
      throw Error(ErrorCode::kSingularKkt, "Schur complement pivot below 1e-12");
    }
  }
}

Eigen::VectorXd AgentFactorization::solve(const Eigen::VectorXd& rhs) const {
  Eigen::VectorXd x = chol_.solve(rhs);
  if (u_mat_.rows() == 0) return x;
  const Eigen::VectorXd mu = schur_.solve(u_mat_ * x - u_);
  x -= wt_inv_ut_ * mu;
  return x;
}

Eigen::VectorXd proximal_x_update(const LocalProblem& problem, const AgentFactorization& factor,
                                  const AgentIterate& it, const SolverConfig& config) {
  Eigen::VectorXd rhs = -problem.w + config.g_scale * it.x;
  if (problem.V.rows() > 0) {
    rhs += problem.V.transpose() * (config.rho * (it.y + problem.v) + it.lambda);
  }
  for (std::size_t c = 0; c < problem.couplings.size(); ++c) {
    rhs += problem.couplings[c].matrix.transpose() * (config.rho * it.y_c[c] + it.lambda_c[c]);
  }
  return factor.solve(rhs);
}

Eigen::VectorXd coupling_payload(const LocalProblem& problem, const AgentIterate& it, std::size_t c,
                                 const SolverConfig& config) {
  return problem.couplings[c].matrix * it.x - it.lambda_c[c] / config.rho;
}

void slack_dual_update(const LocalProblem& problem, AgentIterate& it,
                       const std::vector<std::optional<Eigen::VectorXd>>& inbox, const SolverConfig& config) {
  if (inbox.size() != problem.couplings.size()) {
    throw Error(ErrorCode::kMissingMessage, "inbox does not cover every neighbour");
  }
  for (std::size_t c = 0; c < inbox.size(); ++c) {
    if (!inbox[c] || inbox[c]->size() != problem.couplings[c].matrix.rows()) {
      throw Error(ErrorCode::kMissingMessage, "no payload from agent " +
                                                  std::to_string(problem.couplings[c].neighbor + 1) + " for agent " +
                                                  std::to_string(problem.agent + 1));
    }
  }
  if (problem.V.rows() > 0) {
    const Eigen::VectorXd vx = problem.V * it.x;
    it.y = (vx - problem.v - it.lambda / config.rho).cwiseMin(0.0);
    it.lambda -= config.rho * (vx - it.y - problem.v);
  }
  for (std::size_t c = 0; c < inbox.size(); ++c) {
    const Eigen::VectorXd own = coupling_payload(problem, it, c, config);
    it.y_c[c] = 0.5 * (own + *inbox[c]);
    it.lambda_c[c] -= config.rho * (problem.couplings[c].matrix * it.x - it.y_c[c]);
  }
}

double primal_residual(const LocalProblem& problem, const AgentIterate& it) {
  double r = 0.0;
  if (problem.V.rows() > 0) r = inf_norm(problem.V * it.x - it.y - problem.v);
  for (std::size_t c = 0; c < problem.couplings.size(); ++c) {
    r = std::max(r, inf_norm(problem.couplings[c].matrix * it.x - it.y_c[c]));
  }
  return r;
}

std::vector<int> min_consensus_round(const std::vector<std::vector<std::size_t>>& neighbors,
                                     const std::vector<int>& flags) {
  std::vector<int> out = flags;
  for (std::size_t a = 0; a < flags.size(); ++a) {
    for (std::size_t b : neighbors[a]) out[a] = std::min(out[a], flags[b]);
  }
  return out;
}

std::vector<int> min_consensus(const std::vector<std::vector<std::size_t>>& neighbors, std::vector<int> flags,
                               std::size_t rounds) {
  for (std::size_t r = 0; r < rounds; ++r) flags = min_consensus_round(neighbors, flags);
  return flags;
}

void SyncBus::reset(std::size_t agents) {
  agents_ = agents;
  slots_.assign(agents * agents, std::nullopt);
}

void SyncBus::post(RoundMessage message) {
  if (message.to >= agents_ || message.from >= agents_) {
    throw Error(ErrorCode::kTransportFailure, "message addressed outside the agent set");
  }
  const std::size_t slot = message.to * agents_ + message.from;
  slots_[slot] = std::move(message);
}

std::optional<RoundMessage> SyncBus::take(std::size_t to, std::size_t from) {
  if (to >= agents_ || from >= agents_) return std::nullopt;
  std::optional<RoundMessage> out;
  out.swap(slots_[to * agents_ + from]);
  return out;
}

void LossyBus::post(RoundMessage message) {
  std::bernoulli_distribution drop(loss_);
  bool lost = false;
  {
    // Senders may run on different workers.
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    lost = drop(rng_);
  }
  if (!lost) inner_.post(std::move(message));
}

void ConvergenceReport::write_csv(const std::string& path, double optimal_cost, bool has_optimal) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << "iteration,residual,cost" << (has_optimal ? ",cost_error" : "") << "\n";
  char buf[128];
  for (const TracePoint& p : trace) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g", p.iteration, p.residual, p.cost);
    out << buf;
    if (has_optimal) {
      std::snprintf(buf, sizeof buf, ",%.9g", std::abs(p.cost - optimal_cost));
      out << buf;
    }
    out << "\n";
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
}

namespace {

void check_shapes(const std::vector<LocalProblem>& problems) {
  for (std::size_t a = 0; a < problems.size(); ++a) {
    const LocalProblem& p = problems[a];
    const auto n = static_cast<Eigen::Index>(p.dim());
    const bool ok = p.agent == a && p.W.rows() == n && p.W.cols() == n && p.w.size() == n && p.U.cols() == n &&
                    p.u.size() == p.U.rows() && p.V.cols() == n && p.v.size() == p.V.rows();
    if (!ok) throw Error(ErrorCode::kInconsistentProblem, "agent " + std::to_string(a + 1) + " blocks disagree");
    for (const Coupling& c : p.couplings) {
      if (c.neighbor >= problems.size() || c.neighbor == a || c.matrix.cols() != n) {
        throw Error(ErrorCode::kInconsistentProblem, "bad coupling at agent " + std::to_string(a + 1));
      }
      const Coupling* back = problems[c.neighbor].coupling_with(a);
      if (back == nullptr || back->matrix.rows() != c.matrix.rows()) {
        throw Error(ErrorCode::kInconsistentProblem, "coupling rows between agents " + std::to_string(a + 1) +
                                                         " and " + std::to_string(c.neighbor + 1) + " do not align");
      }
    }
  }
}

}  // namespace

DistResult dist_sol(const std::vector<LocalProblem>& problems, const SolverConfig& config, Transport& transport,
                    const std::vector<AgentIterate>* warm) {
  config.validate();
  check_shapes(problems);
  const std::size_t agents = problems.size();
  DistResult result;
  if (agents == 0) return result;

  std::vector<std::unique_ptr<AgentFactorization>> factors;
  for (const LocalProblem& p : problems) factors.push_back(std::make_unique<AgentFactorization>(p, config));

  std::vector<AgentIterate> it;
  for (std::size_t a = 0; a < agents; ++a) {
    if (config.warm_start && warm != nullptr && a < warm->size() && (*warm)[a].matches(problems[a])) {
      it.push_back((*warm)[a]);
    } else {
      it.push_back(AgentIterate::zeros(problems[a]));
    }
  }
  std::vector<std::vector<std::size_t>> neighbors(agents);
  for (std::size_t a = 0; a < agents; ++a) {
    for (const Coupling& c : problems[a].couplings) neighbors[a].push_back(c.neighbor);
  }
  transport.reset(agents);

  std::vector<double> residual(agents, 0.0), step(agents, 0.0), cost(agents, 0.0);
  std::vector<int> flag(agents, 0), next_flag(agents, 0);
  std::vector<std::exception_ptr> failure(agents);
  std::vector<AgentIterate> best = it;
  double best_residual = std::numeric_limits<double>::infinity();
  bool stop = false;
  bool failed = false;
  int iterations = 0;

  const int workers = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(config.workers), agents));
  std::barrier sync(workers);

  auto guarded = [&](std::size_t a, auto&& body) {
    if (failure[a]) return;
    try {
      body();
    } catch (...) {
      failure[a] = std::current_exception();
    }
  };

  auto worker = [&](int wid) {
    auto mine = [&](auto&& fn) {
      for (std::size_t a = static_cast<std::size_t>(wid); a < agents; a += static_cast<std::size_t>(workers)) fn(a);
    };
    for (int s = 0; s < config.s_max; ++s) {
      mine([&](std::size_t a) {
        guarded(a, [&] {
          const Eigen::VectorXd prev = it[a].x;
          it[a].x = proximal_x_update(problems[a], *factors[a], it[a], config);
          step[a] = inf_norm(it[a].x - prev);
          for (std::size_t c = 0; c < problems[a].couplings.size(); ++c) {
            transport.post({a, problems[a].couplings[c].neighbor, coupling_payload(problems[a], it[a], c, config), 1});
          }
        });
      });
      sync.arrive_and_wait();
      mine([&](std::size_t a) {
        guarded(a, [&] {
          std::vector<std::optional<Eigen::VectorXd>> inbox;
          for (const Coupling& c : problems[a].couplings) {
            std::optional<RoundMessage> m = transport.take(a, c.neighbor);
            inbox.push_back(m ? std::optional<Eigen::VectorXd>(std::move(m->payload)) : std::nullopt);
          }
          slack_dual_update(problems[a], it[a], inbox, config);
          residual[a] = primal_residual(problems[a], it[a]);
          cost[a] = problems[a].objective(it[a].x);
          const bool small_step = !config.step_check || step[a] <= config.tol;
          flag[a] = residual[a] <= config.tol && small_step ? 1 : 0;
        });
      });
      sync.arrive_and_wait();
      for (std::size_t r = 0; r < agents; ++r) {
        mine([&](std::size_t a) {
          for (std::size_t b : neighbors[a]) transport.post({a, b, Eigen::VectorXd(), flag[a]});
        });
        sync.arrive_and_wait();
        mine([&](std::size_t a) {
          int f = flag[a];
          for (std::size_t b : neighbors[a]) {
            std::optional<RoundMessage> m = transport.take(a, b);
            if (!m) {
              if (!failure[a]) {
                failure[a] = std::make_exception_ptr(Error(ErrorCode::kMissingMessage, "flag lost"));
              }
              f = 0;
            } else {
              f = std::min(f, m->flag);
            }
          }
          next_flag[a] = f;
        });
        sync.arrive_and_wait();
        mine([&](std::size_t a) { flag[a] = next_flag[a]; });
      }
      if (wid == 0) {
        double res = 0.0, total = 0.0;
        for (std::size_t a = 0; a < agents; ++a) {
          res = std::max(res, residual[a]);
          total += cost[a];
          if (failure[a]) failed = true;
        }
        iterations = s + 1;
        result.report.trace.push_back({s + 1, res, total});
        if (res < best_residual) {
          best_residual = res;
          best = it;
        }
        stop = failed || std::all_of(flag.begin(), flag.end(), [](int f) { return f == 1; });
      }
      sync.arrive_and_wait();
      if (stop) break;
    }
  };

  if (workers == 1) {
    worker(0);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker, w);
  }

  for (std::size_t a = 0; a < agents; ++a) {
    if (!failure[a]) continue;
    try {
      std::rethrow_exception(failure[a]);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kMissingMessage || e.code() == ErrorCode::kTransportFailure) {
        throw Error(ErrorCode::kTransportFailure, e.what());
      }
      throw;
    }
  }

  result.report.iterations = iterations;
  result.report.converged = std::all_of(flag.begin(), flag.end(), [](int f) { return f == 1; });
  if (!result.report.converged) it = best;
  result.report.residual = result.report.converged ? result.report.trace.back().residual : best_residual;
  for (const AgentIterate& a : it) result.x.push_back(a.x);
  result.iterates = std::move(it);
  return result;
}

DistResult dist_sol(const std::vector<LocalProblem>& problems, const SolverConfig& config) {
  SyncBus bus;
  return dist_sol(problems, config, bus);
}

}  // namespace lexinet
