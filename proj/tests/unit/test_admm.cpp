#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <functional>
#include <random>

#include "lexinet/admm.hpp"
#include "lexinet/error.hpp"
#include "lexinet/reference.hpp"
#include "../support/instances.hpp"

using namespace lexinet;

namespace {

SparseMatrix dense(const Eigen::MatrixXd& m) { return m.sparseView(); }

LocalProblem make_problem(std::size_t agent, const Eigen::MatrixXd& W, const Eigen::VectorXd& w,
                          const Eigen::MatrixXd& U, const Eigen::VectorXd& u, const Eigen::MatrixXd& V,
                          const Eigen::VectorXd& v) {
  LocalProblem p;
  p.agent = agent;
  p.layout = VariableLayout(1);
  for (Eigen::Index i = 0; i < w.size(); ++i) p.layout.push({Quantity::kN, static_cast<std::size_t>(i), 0});
  p.W = dense(W);
  p.w = w;
  p.U = dense(U);
  p.u = u;
  p.V = dense(V);
  p.v = v;
  p.c = Eigen::VectorXd::Zero(w.size());
  return p;
}

Eigen::MatrixXd none(Eigen::Index cols) { return Eigen::MatrixXd::Zero(0, cols); }
Eigen::VectorXd vec(std::initializer_list<double> xs) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}
Eigen::MatrixXd mat(Eigen::Index r, Eigen::Index c, std::initializer_list<double> xs) {
  Eigen::MatrixXd m(r, c);
  Eigen::Index i = 0;
  for (double x : xs) {
    m(i / c, i % c) = x;
    ++i;
  }
  return m;
}

SolverConfig config(double rho, double g) {
  SolverConfig c;
  c.rho = rho;
  c.g_scale = g;
  c.tol = 1e-8;
  c.s_max = 20000;
  return c;
}

void add_coupling(LocalProblem& p, std::size_t neighbor, const Eigen::MatrixXd& m) {
  Coupling c;
  c.neighbor = neighbor;
  c.matrix = dense(m);
  c.rows.assign(static_cast<std::size_t>(m.rows()), RowLabel{RowFamily::kCouplingN});
  p.couplings.push_back(std::move(c));
}

// Every connected simple graph on n vertices, as adjacency lists.
std::vector<std::vector<std::vector<std::size_t>>> connected_graphs(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  std::vector<std::vector<std::vector<std::size_t>>> out;
  for (std::size_t mask = 0; mask < (std::size_t{1} << pairs.size()); ++mask) {
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t e = 0; e < pairs.size(); ++e) {
      if (mask >> e & 1) {
        adj[pairs[e].first].push_back(pairs[e].second);
        adj[pairs[e].second].push_back(pairs[e].first);
      }
    }
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack = {0};
    seen[0] = true;
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      for (std::size_t w : adj[v]) {
        if (!seen[w]) {
          seen[w] = true;
          stack.push_back(w);
        }
      }
    }
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) out.push_back(adj);
  }
  return out;
}

}  // namespace

TEST_CASE("x-update: an equality pins the variable") {
  const LocalProblem p = make_problem(0, mat(1, 1, {0}), vec({0}), mat(1, 1, {1}), vec({3}), none(1), vec({}));
  const SolverConfig c = config(1.0, 1.0);
  const AgentFactorization f(p, c);
  for (double xs : {-7.0, 0.0, 2.5}) {
    AgentIterate it = AgentIterate::zeros(p);
    it.x[0] = xs;
    CHECK(proximal_x_update(p, f, it, c)[0] == doctest::Approx(3.0).epsilon(1e-14));
  }
}

TEST_CASE("x-update: unconstrained scalar gives -1/2") {
  const LocalProblem p = make_problem(0, mat(1, 1, {2}), vec({4}), none(1), vec({}), none(1), vec({}));
  const SolverConfig c = config(1.0, 2.0);
  const AgentFactorization f(p, c);
  AgentIterate it = AgentIterate::zeros(p);
  it.x[0] = 1.0;
  CHECK(proximal_x_update(p, f, it, c)[0] == doctest::Approx(-0.5).epsilon(1e-14));
}

TEST_CASE("x-update: inequality memory gives (1 + 1) x = 2") {
  const LocalProblem p = make_problem(0, mat(1, 1, {0}), vec({0}), none(1), vec({}), mat(1, 1, {1}), vec({0}));
  const SolverConfig c = config(1.0, 1.0);
  const AgentFactorization f(p, c);
  AgentIterate it = AgentIterate::zeros(p);
  it.x[0] = 2.0;
  CHECK(proximal_x_update(p, f, it, c)[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("x-update solves the equality-constrained proximal system") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 6, me = 2, mi = 4, mc = 2;
    Eigen::MatrixXd B(n, n);
    for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = g(rng);
    Eigen::MatrixXd U(me, n), V(mi, n), C(mc, n);
    Eigen::VectorXd w(n), u(me), v(mi);
    for (Eigen::Index i = 0; i < U.size(); ++i) U.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < V.size(); ++i) V.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < C.size(); ++i) C.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = g(rng);
    for (Eigen::Index i = 0; i < me; ++i) u[i] = g(rng);
    for (Eigen::Index i = 0; i < mi; ++i) v[i] = g(rng);
    LocalProblem p = make_problem(0, B * B.transpose(), w, U, u, V, v);
    add_coupling(p, 1, C);
    const SolverConfig c = config(0.7, 0.3);
    const AgentFactorization f(p, c);
    AgentIterate it = AgentIterate::zeros(p);
    for (Eigen::Index i = 0; i < n; ++i) it.x[i] = g(rng);
    for (Eigen::Index i = 0; i < mi; ++i) {
      it.y[i] = -std::abs(g(rng));
      it.lambda[i] = g(rng);
    }
    for (Eigen::Index i = 0; i < mc; ++i) {
      it.y_c[0][i] = g(rng);
      it.lambda_c[0][i] = g(rng);
    }
    const Eigen::VectorXd x = proximal_x_update(p, f, it, c);

    const Eigen::MatrixXd Wt = c.g_scale * Eigen::MatrixXd::Identity(n, n) + B * B.transpose() +
                               c.rho * (V.transpose() * V + C.transpose() * C);
    const Eigen::VectorXd rhs = -w + c.g_scale * it.x + V.transpose() * (c.rho * (it.y + v) + it.lambda) +
                                C.transpose() * (c.rho * it.y_c[0] + it.lambda_c[0]);
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + me, n + me);
    kkt.topLeftCorner(n, n) = Wt;
    kkt.topRightCorner(n, me) = U.transpose();
    kkt.bottomLeftCorner(me, n) = U;
    Eigen::VectorXd b(n + me);
    b << rhs, u;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(b);
    CHECK((x - sol.head(n)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((U * x - u).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("rank-deficient equality block raises SingularKKT") {
  const LocalProblem p =
      make_problem(0, mat(2, 2, {0, 0, 0, 0}), vec({0, 0}), mat(2, 2, {1, 1, 2, 2}), vec({1, 2}), none(2), vec({}));
  try {
    AgentFactorization f(p, config(1.0, 1.0));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingularKkt);
  }
}

TEST_CASE("slack is clamped at zero elementwise") {
  const LocalProblem p = make_problem(0, mat(2, 2, {0, 0, 0, 0}), vec({0, 0}), none(2), vec({}),
                                      mat(2, 2, {1, 0, 0, 1}), vec({0, 0}));
  AgentIterate it = AgentIterate::zeros(p);
  it.x = vec({2, -3});
  const SolverConfig c = config(1.0, 1.0);
  slack_dual_update(p, it, {}, c);
  CHECK(it.y[0] == 0.0);
  CHECK(it.y[1] == -3.0);
  // lambda(s+1) = lambda(s) - rho (Vx - y - v)
  CHECK(it.lambda[0] == -2.0);
  CHECK(it.lambda[1] == 0.0);
}

TEST_CASE("coupling consensus is the mean; dual moves by the disagreement") {
  LocalProblem p = make_problem(0, mat(1, 1, {0}), vec({0}), none(1), vec({}), none(1), vec({}));
  add_coupling(p, 1, mat(1, 1, {1}));
  AgentIterate it = AgentIterate::zeros(p);
  it.x[0] = 4.0;
  const SolverConfig c = config(1.0, 1.0);
  CHECK(coupling_payload(p, it, 0, c)[0] == 4.0);
  slack_dual_update(p, it, {vec({2.0})}, c);
  CHECK(it.y_c[0][0] == 3.0);
  CHECK(it.lambda_c[0][0] == -1.0);
}

TEST_CASE("both endpoints compute the same consensus value") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  LocalProblem a = make_problem(0, mat(2, 2, {0, 0, 0, 0}), vec({0, 0}), none(2), vec({}), none(2), vec({}));
  LocalProblem b = make_problem(1, mat(1, 1, {0}), vec({0}), none(1), vec({}), none(1), vec({}));
  add_coupling(a, 1, mat(1, 2, {0, 1}));
  add_coupling(b, 0, mat(1, 1, {1}));
  const SolverConfig c = config(0.3, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    AgentIterate ia = AgentIterate::zeros(a), ib = AgentIterate::zeros(b);
    ia.x = vec({g(rng), g(rng)});
    ib.x = vec({g(rng)});
    ia.lambda_c[0][0] = g(rng);
    ib.lambda_c[0][0] = g(rng);
    const Eigen::VectorXd pa = coupling_payload(a, ia, 0, c), pb = coupling_payload(b, ib, 0, c);
    slack_dual_update(a, ia, {pb}, c);
    slack_dual_update(b, ib, {pa}, c);
    CHECK(ia.y_c[0][0] == ib.y_c[0][0]);
  }
}

TEST_CASE("missing neighbour payload raises MissingMessage") {
  LocalProblem p = make_problem(0, mat(1, 1, {0}), vec({0}), none(1), vec({}), none(1), vec({}));
  add_coupling(p, 1, mat(1, 1, {1}));
  AgentIterate it = AgentIterate::zeros(p);
  try {
    slack_dual_update(p, it, {std::nullopt}, config(1.0, 1.0));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kMissingMessage);
  }
}

TEST_CASE("min-consensus: all ones stop everywhere") {
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& g : connected_graphs(n)) {
      const auto out = min_consensus(g, std::vector<int>(n, 1), n);
      CHECK(std::all_of(out.begin(), out.end(), [](int f) { return f == 1; }));
    }
  }
}

TEST_CASE("min-consensus: a zero in the middle of a path reaches both ends") {
  const std::vector<std::vector<std::size_t>> path = {{1}, {0, 2}, {1}};
  CHECK(min_consensus(path, {1, 0, 1}, 3) == std::vector<int>{0, 0, 0});
}

TEST_CASE("min-consensus: every flag assignment on every connected graph with N <= 4") {
  std::size_t graphs = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    for (const auto& g : connected_graphs(n)) {
      ++graphs;
      for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        std::vector<int> flags(n);
        for (std::size_t i = 0; i < n; ++i) flags[i] = static_cast<int>(mask >> i & 1);
        const int global = *std::min_element(flags.begin(), flags.end());
        const auto out = min_consensus(g, flags, n);
        CHECK(std::all_of(out.begin(), out.end(), [&](int f) { return f == global; }));
      }
    }
  }
  CHECK(graphs == 1 + 1 + 4 + 38);
}

TEST_CASE("single-agent box LP matches the centralized oracle") {
  // min -x1 - 2 x2  s.t.  0 <= x <= (3, 1), x1 + x2 <= 3.5
  const LocalProblem p = make_problem(0, mat(2, 2, {0, 0, 0, 0}), vec({-1, -2}), none(2), vec({}),
                                      mat(5, 2, {1, 0, 0, 1, -1, 0, 0, -1, 1, 1}), vec({3, 1, 0, 0, 3.5}));
  SolverConfig c = SolverConfig::lp();
  const DistResult r = dist_sol({p}, c);
  REQUIRE(r.report.converged);
  const CentralSolution s = solve_centralized(assemble_global({p}));
  CHECK(s.cost == doctest::Approx(-4.5).epsilon(1e-9));
  CHECK(std::abs(p.objective(r.x[0]) - s.cost) <= 1e-5);
}

TEST_CASE("two agents sharing a variable meet at the average") {
  LocalProblem a = make_problem(0, mat(1, 1, {1}), vec({-1}), none(1), vec({}), none(1), vec({}));
  LocalProblem b = make_problem(1, mat(1, 1, {1}), vec({-3}), none(1), vec({}), none(1), vec({}));
  add_coupling(a, 1, mat(1, 1, {1}));
  add_coupling(b, 0, mat(1, 1, {1}));
  const DistResult r = dist_sol({a, b}, SolverConfig::qp());
  REQUIRE(r.report.converged);
  CHECK(r.x[0][0] == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(r.x[1][0] == doctest::Approx(2.0).epsilon(1e-3));
  const CentralSolution s = solve_centralized(assemble_global({a, b}));
  CHECK(s.x[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(std::abs(a.objective(r.x[0]) + b.objective(r.x[1]) - s.cost) <= 1e-4 * (1.0 + std::abs(s.cost)));
}

TEST_CASE("s_max = 1 stops unconverged with a residual report") {
  const LocalProblem p = make_problem(0, mat(1, 1, {0}), vec({1}), none(1), vec({}), mat(1, 1, {-1}), vec({-2}));
  SolverConfig c = SolverConfig::lp();
  c.s_max = 1;
  const DistResult r = dist_sol({p}, c);
  CHECK_FALSE(r.report.converged);
  CHECK(r.report.iterations == 1);
  CHECK(r.report.residual > c.tol);
  CHECK(r.report.trace.size() == 1);
}

TEST_CASE("invalid configurations and inconsistent shapes are rejected") {
  const LocalProblem p = make_problem(0, mat(1, 1, {0}), vec({1}), none(1), vec({}), mat(1, 1, {-1}), vec({-2}));
  SolverConfig c = SolverConfig::lp();
  c.g_scale = 0.0;
  CHECK_THROWS_AS(dist_sol({p}, c), Error);
  LocalProblem bad = p;
  add_coupling(bad, 3, mat(1, 1, {1}));
  try {
    dist_sol({bad}, SolverConfig::lp());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInconsistentProblem);
  }
}

TEST_CASE("lossy transport surfaces as TransportFailure") {
  LocalProblem a = make_problem(0, mat(1, 1, {1}), vec({-1}), none(1), vec({}), none(1), vec({}));
  LocalProblem b = make_problem(1, mat(1, 1, {1}), vec({-3}), none(1), vec({}), none(1), vec({}));
  add_coupling(a, 1, mat(1, 1, {1}));
  add_coupling(b, 0, mat(1, 1, {1}));
  LossyBus bus(0.5, 1);
  try {
    dist_sol({a, b}, SolverConfig::qp(), bus);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTransportFailure);
  }
}

TEST_CASE("iterates are bitwise identical for any number of workers") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const auto inst = lexinet::testing::random_instance(rng, 2, 0, 3);
    const Partition part = build_partition(inst.net, inst.assignment);
    const auto pc = build_pc_problem(inst.net, part, inst.state, inst.forecast);
    SolverConfig c = SolverConfig::lp();
    c.s_max = 300;
    const DistResult one = dist_sol(pc, c);
    for (int workers : {2, 3}) {
      c.workers = workers;
      const DistResult many = dist_sol(pc, c);
      CHECK(many.report.iterations == one.report.iterations);
      for (std::size_t a = 0; a < pc.size(); ++a) {
        CHECK(many.x[a] == one.x[a]);
        CHECK(many.iterates[a].lambda == one.iterates[a].lambda);
      }
      for (std::size_t s = 0; s < one.report.trace.size(); ++s) {
        CHECK(many.report.trace[s].residual == one.report.trace[s].residual);
        CHECK(many.report.trace[s].cost == one.report.trace[s].cost);
      }
    }
  }
}

TEST_CASE("dual update matches the recomputed primal residual") {
  std::mt19937_64 rng(7);
  const auto inst = lexinet::testing::random_instance(rng, 2, 0, 2);
  const Partition part = build_partition(inst.net, inst.assignment);
  const auto pc = build_pc_problem(inst.net, part, inst.state, inst.forecast);
  const SolverConfig c = SolverConfig::lp();
  std::vector<AgentIterate> it;
  std::vector<std::unique_ptr<AgentFactorization>> f;
  for (const LocalProblem& p : pc) {
    it.push_back(AgentIterate::zeros(p));
    f.push_back(std::make_unique<AgentFactorization>(p, c));
  }
  for (int s = 0; s < 50; ++s) {
    std::vector<std::vector<Eigen::VectorXd>> payload(pc.size());
    for (std::size_t a = 0; a < pc.size(); ++a) {
      it[a].x = proximal_x_update(pc[a], *f[a], it[a], c);
      for (std::size_t k = 0; k < pc[a].couplings.size(); ++k) payload[a].push_back(coupling_payload(pc[a], it[a], k, c));
    }
    for (std::size_t a = 0; a < pc.size(); ++a) {
      std::vector<std::optional<Eigen::VectorXd>> inbox;
      for (const Coupling& cp : pc[a].couplings) {
        const LocalProblem& other = pc[cp.neighbor];
        for (std::size_t k = 0; k < other.couplings.size(); ++k) {
          if (other.couplings[k].neighbor == a) inbox.emplace_back(payload[cp.neighbor][k]);
        }
      }
      const AgentIterate before = it[a];
      slack_dual_update(pc[a], it[a], inbox, c);
      const Eigen::VectorXd r = pc[a].V * it[a].x - it[a].y - pc[a].v;
      CHECK((it[a].lambda - (before.lambda - c.rho * r)).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(it[a].y.maxCoeff() <= 0.0);
      for (std::size_t k = 0; k < pc[a].couplings.size(); ++k) {
        const Eigen::VectorXd rc = pc[a].couplings[k].matrix * it[a].x - it[a].y_c[k];
        CHECK((it[a].lambda_c[k] - (before.lambda_c[k] - c.rho * rc)).cwiseAbs().maxCoeff() <= 1e-12);
      }
    }
  }
}
