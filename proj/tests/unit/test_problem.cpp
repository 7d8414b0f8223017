#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <set>

#include "lexinet/error.hpp"
#include "lexinet/problem.hpp"
#include "lexinet/reference.hpp"
#include "../support/fixtures.hpp"
#include "../support/instances.hpp"

using namespace lexinet;
using lexinet::testing::chain_network;

namespace {

ExogenousForecast zero_forecast(const Network& net, std::size_t horizon) {
  ExogenousForecast f;
  for (std::size_t k = 0; k < horizon; ++k) f.steps.push_back(ExogenousStep::zero(net));
  return f;
}

Partition single_agent(const Network& net) {
  std::map<JunctionId, int> a;
  for (const Junction& j : net.junctions()) a[j.id] = 1;
  return build_partition(net, a);
}

// B1 -> J1 -> J2 -> B2; J2 alone forms agent 2, which owns no boundary junction.
Network line_network() {
  std::vector<Junction> js = {
      {"B1", JunctionKind::kBoundary, 0.0, {}},
      {"B2", JunctionKind::kBoundary, 0.0, {}},
      {"J1", JunctionKind::kInternal, 4.0, {{"p1", {1}}}},
      {"J2", JunctionKind::kInternal, 4.0, {{"p1", {2}}}},
  };
  std::vector<RoadLink> ls = {
      {1, "B1", "J1", 50.0, 0.5, 0.5, {{2, 1.0}}, std::nullopt},
      {2, "J1", "J2", 50.0, 0.5, 0.5, {{3, 1.0}}, std::nullopt},
      {3, "J2", "B2", 50.0, 0.5, 0.5, {}, 30.0},
  };
  return Network(js, ls, 60.0);
}

const std::map<JunctionId, int> kLineSplit = {{"B1", 1}, {"J1", 1}, {"B2", 1}, {"J2", 2}};

std::vector<Eigen::VectorXd> oracle_split(const std::vector<LocalProblem>& problems) {
  const GlobalProblem g = assemble_global(problems);
  return g.split(solve_centralized(g).x);
}

std::size_t count_family(const std::vector<LocalProblem>& problems, ConstraintFamily f) {
  std::size_t n = 0;
  for (const LocalProblem& lp : problems) {
    for (const RowLabel& r : lp.ineq_rows) n += (r.family == RowFamily::kInequality && r.constraint == f) ? 1 : 0;
  }
  return n;
}

}  // namespace

TEST_CASE("chain layout for K = 2 has 14 entries") {
  const Network net = chain_network();
  const auto layouts = layout_variables(net, single_agent(net), 2);
  REQUIRE(layouts.size() == 1);
  CHECK(layouts[0].size() == 14);
  for (std::size_t k = 0; k < 2; ++k) {
    std::size_t n = 0, q = 0, fd = 0, fu = 0, g = 0;
    for (std::size_t p = 0; p < layouts[0].size(); ++p) {
      const VariableKey& key = layouts[0].key(p);
      if (key.k != k) continue;
      n += key.quantity == Quantity::kN;
      q += key.quantity == Quantity::kQ;
      fd += key.quantity == Quantity::kFd;
      fu += key.quantity == Quantity::kFu;
      g += key.quantity == Quantity::kG;
    }
    CHECK(n == 2);
    CHECK(q == 1);
    CHECK(fd == 2);
    CHECK(fu == 1);
    CHECK(g == 1);
  }
}

TEST_CASE("empty horizon gives an empty layout") {
  const Network net = chain_network();
  CHECK(layout_variables(net, single_agent(net), 0)[0].size() == 0);
}

TEST_CASE("layout is k-major and bijective") {
  const Scenario sc = lexinet::testing::fixture("appendix_c.json");
  for (const VariableLayout& layout : layout_variables(sc.net, sc.partition, 3)) {
    std::set<VariableKey> keys;
    for (std::size_t p = 0; p < layout.size(); ++p) {
      const VariableKey& key = layout.key(p);
      CHECK(layout.find(key.quantity, key.id, key.k) == p);
      keys.insert(key);
      if (p > 0) CHECK(layout.key(p - 1).k <= key.k);
    }
    CHECK(keys.size() == layout.size());
  }
}

TEST_CASE("three-agent network: agent 2 holds n for its own and connecting links") {
  const Scenario sc = lexinet::testing::fixture("appendix_c.json");
  const VariableLayout layout = layout_variables(sc.net, sc.partition, 1)[1];
  std::set<LinkId> n;
  for (std::size_t p = 0; p < layout.size(); ++p) {
    if (layout.key(p).quantity == Quantity::kN) n.insert(sc.net.link(layout.key(p).id).id);
  }
  CHECK(n == std::set<LinkId>{1, 2, 8, 9, 5, 6, 7, 13, 14, 15});
}

TEST_CASE("chain with K = 1 has two conservation rows and one queue row") {
  const Network net = chain_network();
  const auto pc = build_pc_problem(net, single_agent(net), TrafficState::zero(net), zero_forecast(net, 1));
  CHECK(pc[0].U.rows() == 3);
  std::size_t conservation = 0, queue = 0;
  for (const RowLabel& r : pc[0].eq_rows) {
    conservation += r.family == RowFamily::kConservation;
    queue += r.family == RowFamily::kQueue;
  }
  CHECK(conservation == 2);
  CHECK(queue == 1);
}

TEST_CASE("first-stage cost selects queues; zero without boundary junctions") {
  const Network net = line_network();
  const Partition part = build_partition(net, kLineSplit);
  const auto pc = build_pc_problem(net, part, TrafficState::zero(net), zero_forecast(net, 2));
  REQUIRE(pc.size() == 2);
  CHECK(pc[1].c.size() == static_cast<Eigen::Index>(pc[1].dim()));
  CHECK(pc[1].c.isZero(0.0));
  for (std::size_t p = 0; p < pc[0].dim(); ++p) {
    CHECK(pc[0].c[static_cast<Eigen::Index>(p)] == (pc[0].layout.key(p).quantity == Quantity::kQ ? 1.0 : 0.0));
  }
  for (const LocalProblem& lp : pc) {
    CHECK(lp.W.nonZeros() == 0);
    CHECK(lp.w == lp.c);
  }
}

TEST_CASE("one shared link over K = 3 gives six coupling rows") {
  const Network net = chain_network();
  const Partition part = build_partition(net, {{"B1", 1}, {"J1", 1}, {"B2", 2}});
  REQUIRE(part.cross_links(0, 1).size() == 1);
  REQUIRE(part.cross_links(1, 0).empty());
  const auto pc = build_pc_problem(net, part, TrafficState::zero(net), zero_forecast(net, 3));
  const Coupling* a12 = pc[0].coupling_with(1);
  const Coupling* a21 = pc[1].coupling_with(0);
  REQUIRE(a12 != nullptr);
  REQUIRE(a21 != nullptr);
  CHECK(a12->matrix.rows() == 6);
  CHECK(a21->matrix.rows() == 6);
}

TEST_CASE("coupling rows of both agents select the same variables in order") {
  const Scenario sc = lexinet::testing::fixture("appendix_c.json");
  const auto pc = build_pc_problem(sc.net, sc.partition, TrafficState::zero(sc.net), sc.forecast(0, 2));
  for (const LocalProblem& lp : pc) {
    for (const Coupling& c : lp.couplings) {
      const LocalProblem& other = pc[c.neighbor];
      const Coupling* back = other.coupling_with(lp.agent);
      REQUIRE(back != nullptr);
      REQUIRE(back->matrix.rows() == c.matrix.rows());
      for (int r = 0; r < c.matrix.rows(); ++r) {
        REQUIRE(c.matrix.row(r).nonZeros() == 1);
        REQUIRE(back->matrix.row(r).nonZeros() == 1);
        SparseMatrix::InnerIterator mine(c.matrix, r), theirs(back->matrix, r);
        CHECK(lp.layout.key(static_cast<std::size_t>(mine.col())) ==
              other.layout.key(static_cast<std::size_t>(theirs.col())));
        CHECK(mine.value() == theirs.value());
      }
    }
  }
}

TEST_CASE("equality blocks have full row rank") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto inst = lexinet::testing::random_instance(rng, 1 + trial % 4);
    const Partition part = build_partition(inst.net, inst.assignment);
    for (const LocalProblem& lp : build_pc_problem(inst.net, part, inst.state, inst.forecast)) {
      CHECK(min_row_gram_eigenvalue(lp.U) > 1e-10);
    }
  }
}

TEST_CASE("every constraint instance appears exactly once across agents") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t K = 1 + static_cast<std::size_t>(trial % 4);
    const auto inst = lexinet::testing::random_instance(rng, K);
    const Network& net = inst.net;
    const Partition part = build_partition(net, inst.assignment);
    const auto pc = build_pc_problem(net, part, inst.state, inst.forecast);
    std::size_t internal = 0, sources = 0, dests = 0;
    for (std::size_t j = 0; j < net.num_junctions(); ++j) internal += !net.is_boundary(j);
    for (std::size_t z = 0; z < net.num_links(); ++z) {
      sources += net.is_source_link(z);
      dests += net.is_destination_link(z);
    }
    const std::size_t links = net.num_links();
    CHECK(count_family(pc, ConstraintFamily::kSignalBudget) == internal * K);
    CHECK(count_family(pc, ConstraintFamily::kSplitNonneg) == net.num_phases() * K);
    CHECK(count_family(pc, ConstraintFamily::kFlowNonneg) == links * K);
    CHECK(count_family(pc, ConstraintFamily::kFlowAvailability) == links * K);
    CHECK(count_family(pc, ConstraintFamily::kUpstreamCapacity) == (links - sources) * K);
    CHECK(count_family(pc, ConstraintFamily::kInflowNonneg) == sources * K);
    CHECK(count_family(pc, ConstraintFamily::kInflowCapacity) == sources * K);
    CHECK(count_family(pc, ConstraintFamily::kGreenFlow) == (links - dests) * K);
    CHECK(count_family(pc, ConstraintFamily::kQueueNonneg) == sources * K);
    CHECK(count_family(pc, ConstraintFamily::kOutflowCap) == dests * K);
    CHECK(count_family(pc, ConstraintFamily::kSmoothness) == links * K);

    std::set<RowLabel> seen;
    std::size_t rows = 0, eq = 0;
    for (const LocalProblem& lp : pc) {
      rows += lp.ineq_rows.size();
      seen.insert(lp.ineq_rows.begin(), lp.ineq_rows.end());
      eq += lp.eq_rows.size();
      CHECK(lp.V.rows() == static_cast<Eigen::Index>(lp.ineq_rows.size()));
      CHECK(lp.V.cols() == static_cast<Eigen::Index>(lp.dim()));
    }
    CHECK(seen.size() == rows);
    CHECK(eq == (links + sources) * K);
  }
}

TEST_CASE("an over-capacity source link is reported as structurally infeasible") {
  const Network net = chain_network();
  TrafficState s = TrafficState::zero(net);
  s.n[0] = 60.0;
  try {
    build_pc_problem(net, single_agent(net), s, zero_forecast(net, 1));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInfeasibleDetected);
  }
}

TEST_CASE("quadratic weight is 2 / nbar on n and 2 beta on q") {
  const Network net = chain_network(50.0);
  const Partition part = single_agent(net);
  const TrafficState s = TrafficState::zero(net);
  const auto pc = build_pc_problem(net, part, s, zero_forecast(net, 3));
  const auto tsc = build_tsc_problem(pc, net, part, s, {0.25, 0.01});
  const Eigen::MatrixXd H(tsc[0].W);
  for (std::size_t p = 0; p < tsc[0].dim(); ++p) {
    const auto i = static_cast<Eigen::Index>(p);
    const Quantity q = tsc[0].layout.key(p).quantity;
    if (q == Quantity::kN) CHECK(H(i, i) == doctest::Approx(0.04).epsilon(1e-15));
    if (q == Quantity::kQ) CHECK(H(i, i) == doctest::Approx(0.02).epsilon(1e-15));
    if (q == Quantity::kFd) CHECK(tsc[0].w[i] == -0.25);
  }
  CHECK((H - Eigen::MatrixXd(H.diagonal().asDiagonal())).isZero(0.0));
}

TEST_CASE("beta = 0 leaves no queue entries in H") {
  SUBCASE("agent with queues") {
    const Network net = chain_network();
    const Partition part = single_agent(net);
    const auto pc = build_pc_problem(net, part, TrafficState::zero(net), zero_forecast(net, 2));
    const auto tsc = build_tsc_problem(pc, net, part, TrafficState::zero(net), {0.25, 0.0});
    const Eigen::MatrixXd H(tsc[0].W);
    for (std::size_t p = 0; p < tsc[0].dim(); ++p) {
      if (tsc[0].layout.key(p).quantity == Quantity::kQ) {
        CHECK(H.row(static_cast<Eigen::Index>(p)).isZero(0.0));
      }
    }
  }
  SUBCASE("agent without boundary junctions") {
    const Network net = line_network();
    const Partition part = build_partition(net, kLineSplit);
    const auto pc = build_pc_problem(net, part, TrafficState::zero(net), zero_forecast(net, 2));
    const auto tsc = build_tsc_problem(pc, net, part, TrafficState::zero(net), {0.25, 0.0});
    for (std::size_t p = 0; p < tsc[1].dim(); ++p) CHECK(tsc[1].layout.key(p).quantity != Quantity::kQ);
  }
}

TEST_CASE("lift adds one virtual variable per neighbour and one equality row") {
  const Scenario sc = lexinet::testing::fixture("appendix_c.json");
  const TrafficState s = TrafficState::zero(sc.net);
  const auto pc = build_pc_problem(sc.net, sc.partition, s, sc.forecast(0, 1));
  const auto lifted = lift_tsc_problem(pc, oracle_split(pc), sc.net, sc.partition, s, {0.25, 0.01}, 1e-6);
  REQUIRE(sc.partition.agent(0).neighbors.size() == 2);
  for (std::size_t a = 0; a < pc.size(); ++a) {
    const std::size_t nb = sc.partition.agent(a).neighbors.size();
    CHECK(lifted[a].dim() == pc[a].dim() + nb);
    CHECK(lifted[a].U.rows() == pc[a].U.rows() + 1);
    CHECK(lifted[a].V.rows() == pc[a].V.rows());
    for (std::size_t c = 0; c < pc[a].couplings.size(); ++c) {
      CHECK(lifted[a].couplings[c].matrix.rows() == pc[a].couplings[c].matrix.rows() + 1);
    }
  }
  CHECK(lifted[0].dim() == pc[0].dim() + 2);
}

TEST_CASE("lift rejects a first-stage point that violates its rows") {
  const Network net = chain_network();
  const Partition part = single_agent(net);
  const TrafficState s = TrafficState::zero(net);
  const auto pc = build_pc_problem(net, part, s, zero_forecast(net, 1));
  std::vector<Eigen::VectorXd> x = oracle_split(pc);
  x[0][static_cast<Eigen::Index>(pc[0].layout.find(Quantity::kFd, 0, 0))] = -1.0;
  try {
    lift_tsc_problem(pc, x, net, part, s, {0.25, 0.01}, 1e-5);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNotConverged);
  }
}

TEST_CASE("lift rows telescope to the global lexicographic equality") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = lexinet::testing::random_instance(rng, 2, 0, 3);
    const Partition part = build_partition(inst.net, inst.assignment);
    const auto pc = build_pc_problem(inst.net, part, inst.state, inst.forecast);
    const auto xs = oracle_split(pc);
    const auto lifted = lift_tsc_problem(pc, xs, inst.net, part, inst.state, {0.25, 0.01}, 1e-6);

    // Random point whose virtual coordinates satisfy v_ij + v_ji = 0.
    std::map<std::pair<std::size_t, std::size_t>, double> v;
    std::vector<Eigen::VectorXd> x(lifted.size());
    double lhs = 0.0, rhs = 0.0, phi = 0.0;
    for (std::size_t a = 0; a < lifted.size(); ++a) {
      x[a] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lifted[a].dim()));
      for (std::size_t p = 0; p < lifted[a].dim(); ++p) {
        const VariableKey& key = lifted[a].layout.key(p);
        if (key.quantity != Quantity::kVirtual) {
          x[a][static_cast<Eigen::Index>(p)] = u(rng);
          continue;
        }
        const auto edge = std::minmax(a, key.id);
        if (!v.count(edge)) v[edge] = u(rng);
        x[a][static_cast<Eigen::Index>(p)] = a < key.id ? v[edge] : -v[edge];
      }
    }
    for (std::size_t a = 0; a < lifted.size(); ++a) {
      const auto last = lifted[a].U.rows() - 1;
      lhs += lifted[a].U.row(last).dot(x[a]);
      rhs += lifted[a].u[last];
      phi += pc[a].c.dot(drop_virtual(lifted[a], x[a]));
    }
    double pc_opt = 0.0;
    for (std::size_t a = 0; a < pc.size(); ++a) pc_opt += pc[a].c.dot(xs[a]);
    CHECK(lhs == doctest::Approx(phi).epsilon(1e-12));
    CHECK(rhs == doctest::Approx(pc_opt).epsilon(1e-12));
    // The virtual coupling rows hold at this point: copies of v agree after the sign.
    for (std::size_t a = 0; a < lifted.size(); ++a) {
      for (const Coupling& c : lifted[a].couplings) {
        const Coupling* back = lifted[c.neighbor].coupling_with(a);
        const auto r = c.matrix.rows() - 1;
        CHECK(c.matrix.row(r).dot(x[a]) == doctest::Approx(back->matrix.row(r).dot(x[c.neighbor])));
      }
    }
  }
}

TEST_CASE("dropping virtual variables keeps the lifted cost") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto inst = lexinet::testing::random_instance(rng, 2, 0, 2);
    const Partition part = build_partition(inst.net, inst.assignment);
    const auto pc = build_pc_problem(inst.net, part, inst.state, inst.forecast);
    const auto tsc = build_tsc_problem(pc, inst.net, part, inst.state, {0.25, 0.01});
    const auto lifted = lift_tsc_problem(pc, oracle_split(pc), inst.net, part, inst.state, {0.25, 0.01}, 1e-6);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (std::size_t a = 0; a < lifted.size(); ++a) {
      Eigen::VectorXd x(static_cast<Eigen::Index>(lifted[a].dim()));
      for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = u(rng);
      CHECK(lifted[a].objective(x) == doctest::Approx(tsc[a].objective(drop_virtual(lifted[a], x))).epsilon(1e-12));
    }
  }
}

TEST_CASE("assembled costs equal the performance indexes of the plan") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 15.0);
  const ModelParams mp{0.25, 0.01};
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t K = 1 + static_cast<std::size_t>(trial % 4);
    const auto inst = lexinet::testing::random_instance(rng, K);
    const Network& net = inst.net;
    const Partition part = build_partition(net, inst.assignment);
    const auto pc = build_pc_problem(net, part, inst.state, inst.forecast);
    const auto tsc = build_tsc_problem(pc, net, part, inst.state, mp);
    std::vector<ControlInput> plan(K, ControlInput::zero(net));
    for (ControlInput& c : plan) {
      for (std::size_t z = 0; z < net.num_links(); ++z) {
        c.f_d[z] = u(rng);
        if (net.is_source_link(z)) c.f_u[z] = u(rng);
      }
      for (double& g : c.g) g = u(rng);
    }
    const auto xs = solution_from_plan(net, pc, inst.state, inst.forecast, plan);
    const Objectives obj = evaluate_objectives(net, inst.state, inst.forecast, plan);
    double phi1 = 0.0, phi_tsc = 0.0;
    for (std::size_t a = 0; a < pc.size(); ++a) {
      phi1 += pc[a].c.dot(xs[a]);
      phi_tsc += tsc[a].objective(xs[a]);
      CHECK((pc[a].U * xs[a] - pc[a].u).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(phi1 == doctest::Approx(obj.phi1).epsilon(1e-12));
    CHECK(phi_tsc == doctest::Approx(obj.tsc(mp)).epsilon(1e-12));
  }
}

TEST_CASE("per-link green is f_d / S") {
  const Network net = chain_network(50.0, 0.5);
  const Partition part = single_agent(net);
  const auto pc = build_pc_problem(net, part, TrafficState::zero(net), zero_forecast(net, 1));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pc[0].dim()));
  x[static_cast<Eigen::Index>(pc[0].layout.find(Quantity::kFd, 0, 0))] = 6.0;
  const ExtractedControls ex = extract_first_step_controls(net, part, pc, {x});
  CHECK(ex.control.f_d[0] == 6.0);
  CHECK(ex.link_green[0] == doctest::Approx(12.0).epsilon(1e-15));
  CHECK(ex.control.f_d[1] == 0.0);
  CHECK(ex.link_green[1] == 0.0);
  CHECK(ex.warnings.empty());
}

TEST_CASE("shared link takes the downstream owner's copy and logs the gap") {
  const Network net = line_network();
  const Partition part = build_partition(net, kLineSplit);
  const auto pc = build_pc_problem(net, part, TrafficState::zero(net), zero_forecast(net, 1));
  const std::size_t shared = net.link_index(2);
  REQUIRE(part.source_agent(shared) == 0);
  REQUIRE(part.dest_agent(shared) == 1);
  std::vector<Eigen::VectorXd> xs;
  for (const LocalProblem& lp : pc) xs.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lp.dim())));
  xs[1][static_cast<Eigen::Index>(pc[1].layout.find(Quantity::kFd, shared, 0))] = 4.000001;
  xs[0][static_cast<Eigen::Index>(pc[0].layout.find(Quantity::kFd, shared, 0))] = 3.999999;
  const ExtractedControls ex = extract_first_step_controls(net, part, pc, xs);
  CHECK(ex.control.f_d[shared] == 4.000001);
  CHECK(ex.max_copy_discrepancy == doctest::Approx(2e-6).epsilon(1e-6));
  REQUIRE(ex.warnings.size() == 1);
  CHECK(ex.warnings[0].find("link 2") != std::string::npos);
}

TEST_CASE("negative extracted values are clamped with a warning") {
  const Network net = chain_network();
  const Partition part = single_agent(net);
  const auto pc = build_pc_problem(net, part, TrafficState::zero(net), zero_forecast(net, 1));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pc[0].dim()));
  x[static_cast<Eigen::Index>(pc[0].layout.find(Quantity::kFu, 0, 0))] = -0.5;
  x[static_cast<Eigen::Index>(pc[0].layout.find(Quantity::kFd, 0, 0))] = -1e-8;
  const ExtractedControls ex = extract_first_step_controls(net, part, pc, {x});
  CHECK(ex.control.f_u[0] == 0.0);
  CHECK(ex.control.f_d[0] == 0.0);
  REQUIRE(ex.warnings.size() == 1);
  CHECK(ex.warnings[0].rfind("NegativeControl", 0) == 0);
}
