#include "lexinet/problem.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "lexinet/error.hpp"

namespace lexinet {

const char* to_string(Quantity q) {
  switch (q) {
    case Quantity::kN: return "n";
    case Quantity::kQ: return "q";
    case Quantity::kFd: return "fd";
    case Quantity::kFu: return "fu";
    case Quantity::kG: return "g";
    case Quantity::kVirtual: return "v";
  }
  return "?";
}

std::size_t VariableLayout::push(const VariableKey& key) {
  const std::size_t pos = keys_.size();
  keys_.push_back(key);
  index_.emplace(key, pos);
  return pos;
}

std::size_t VariableLayout::find(Quantity q, std::size_t id, std::size_t k) const {
  auto it = index_.find({q, id, k});
  return it == index_.end() ? kNoIndex : it->second;
}

std::string VariableLayout::label(const Network& net, std::size_t pos) const {
  const VariableKey& key = keys_[pos];
  std::ostringstream os;
  os << to_string(key.quantity) << "[";
  switch (key.quantity) {
    case Quantity::kG: os << net.junction(net.phases()[key.id].junction).id << "/" << net.phases()[key.id].id; break;
    case Quantity::kVirtual: os << "agent " << key.id + 1; break;
    default: os << net.link(key.id).id; break;
  }
  os << "]";
  if (key.quantity != Quantity::kVirtual) os << "@" << key.k;
  return os.str();
}

std::string RowLabel::to_string(const Network& net) const {
  std::ostringstream os;
  switch (family) {
    case RowFamily::kConservation: os << "conservation link " << net.link(element).id; break;
    case RowFamily::kQueue: os << "queue link " << net.link(element).id; break;
    case RowFamily::kLift: return "lexicographic";
    case RowFamily::kInequality: {
      os << lexinet::to_string(constraint) << " ";
      if (constraint == ConstraintFamily::kSignalBudget) {
        os << "junction " << net.junction(element).id;
      } else if (constraint == ConstraintFamily::kSplitNonneg) {
        os << "phase " << net.junction(net.phases()[element].junction).id << "/" << net.phases()[element].id;
      } else {
        os << "link " << net.link(element).id;
      }
      break;
    }
    case RowFamily::kCouplingN: os << "coupling n link " << net.link(element).id; break;
    case RowFamily::kCouplingFd: os << "coupling fd link " << net.link(element).id; break;
    case RowFamily::kCouplingVirtual: return "coupling virtual agent " + std::to_string(element + 1);
  }
  os << " k=" << k;
  return os.str();
}

const Coupling* LocalProblem::coupling_with(std::size_t neighbor) const {
  for (const Coupling& c : couplings) {
    if (c.neighbor == neighbor) return &c;
  }
  return nullptr;
}

double LocalProblem::objective(const Eigen::VectorXd& x) const {
  return 0.5 * x.dot(W * x) + w.dot(x) + cost_constant;
}

std::vector<VariableLayout> layout_variables(const Network& net, const Partition& part, std::size_t horizon) {
  std::vector<VariableLayout> out;
  for (std::size_t i = 0; i < part.num_agents(); ++i) {
    VariableLayout layout(horizon);
    std::vector<std::size_t> touched, sources, phases;
    for (std::size_t z = 0; z < net.num_links(); ++z) {
      const bool mine = part.source_agent(z) == i || part.dest_agent(z) == i;
      if (mine) touched.push_back(z);
      if (part.source_agent(z) == i && net.is_source_link(z)) sources.push_back(z);
    }
    for (std::size_t j : part.agent(i).internal) {
      for (std::size_t p : net.junction_phases(j)) phases.push_back(p);
    }
    std::sort(phases.begin(), phases.end());
    for (std::size_t k = 0; k < horizon; ++k) {
      for (std::size_t z : touched) layout.push({Quantity::kN, z, k});
      for (std::size_t z : sources) layout.push({Quantity::kQ, z, k});
      for (std::size_t z : touched) layout.push({Quantity::kFd, z, k});
      for (std::size_t z : sources) layout.push({Quantity::kFu, z, k});
      for (std::size_t p : phases) layout.push({Quantity::kG, p, k});
    }
    out.push_back(std::move(layout));
  }
  return out;
}

namespace {

struct Term {
  VariableKey key;
  double coef;
};

struct PendingRow {
  std::vector<Term> terms;
  double rhs = 0.0;
  RowLabel label;
};

struct RowSink {
  std::vector<PendingRow> eq;
  std::vector<PendingRow> ineq;
};

bool holds_all(const VariableLayout& layout, const std::vector<Term>& terms) {
  return std::all_of(terms.begin(), terms.end(), [&](const Term& t) {
    return layout.contains(t.key.quantity, t.key.id, t.key.k);
  });
}

SparseMatrix to_matrix(const std::vector<PendingRow>& rows, const VariableLayout& layout, Eigen::VectorXd& rhs,
                       std::vector<RowLabel>& labels, bool scale) {
  std::vector<Eigen::Triplet<double>> trips;
  rhs.resize(static_cast<Eigen::Index>(rows.size()));
  labels.clear();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    // Merge duplicate keys before scaling.
    std::map<std::size_t, double> merged;
    for (const Term& t : rows[r].terms) merged[layout.find(t.key.quantity, t.key.id, t.key.k)] += t.coef;
    double norm = 0.0;
    for (const auto& [col, val] : merged) norm = std::max(norm, std::abs(val));
    const double s = (scale && norm > 0.0) ? 1.0 / norm : 1.0;
    for (const auto& [col, val] : merged) {
      if (val != 0.0) trips.emplace_back(static_cast<int>(r), static_cast<int>(col), val * s);
    }
    rhs[static_cast<Eigen::Index>(r)] = rows[r].rhs * s;
    labels.push_back(rows[r].label);
  }
  SparseMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(layout.size()));
  m.setFromTriplets(trips.begin(), trips.end());
  return m;
}

class PcAssembler {
 public:
  PcAssembler(const Network& net, const Partition& part, const TrafficState& state, const ExogenousForecast& forecast)
      : net_(net), part_(part), state_(state), fc_(forecast), layouts_(layout_variables(net, part, forecast.horizon())),
        sinks_(part.num_agents()) {}

  std::vector<LocalProblem> build() {
    const std::size_t K = fc_.horizon();
    for (std::size_t k = 0; k < K; ++k) {
      equality_rows(k);
      junction_rows(k);
      for (std::size_t z = 0; z < net_.num_links(); ++z) link_rows(z, k);
    }
    if (!infeasible_.empty()) {
      std::ostringstream os;
      for (const std::string& s : infeasible_) os << s << "; ";
      throw Error(ErrorCode::kInfeasibleDetected, os.str());
    }

    std::vector<LocalProblem> out;
    for (std::size_t i = 0; i < part_.num_agents(); ++i) {
      LocalProblem lp;
      lp.agent = i;
      lp.layout = layouts_[i];
      const auto dim = static_cast<Eigen::Index>(lp.layout.size());
      lp.U = to_matrix(sinks_[i].eq, lp.layout, lp.u, lp.eq_rows, true);
      lp.V = to_matrix(sinks_[i].ineq, lp.layout, lp.v, lp.ineq_rows, true);
      lp.W = SparseMatrix(dim, dim);
      lp.c = Eigen::VectorXd::Zero(dim);
      for (std::size_t pos = 0; pos < lp.layout.size(); ++pos) {
        if (lp.layout.key(pos).quantity == Quantity::kQ) lp.c[static_cast<Eigen::Index>(pos)] = 1.0;
      }
      lp.w = lp.c;
      for (std::size_t j : part_.agent(i).neighbors) lp.couplings.push_back(coupling(i, j));
      if (lp.U.rows() > 0 && min_row_gram_eigenvalue(lp.U) <= 1e-10) {
        throw Error(ErrorCode::kInconsistentProblem,
                    "equality block of agent " + std::to_string(i + 1) + " is rank deficient");
      }
      out.push_back(std::move(lp));
    }
    return out;
  }

 private:
  // n_z at time t+k: a variable for k >= 1, the measurement for k = 0.
  void add_n(std::vector<Term>& terms, double& rhs, std::size_t z, std::size_t k, double coef) const {
    if (k == 0) {
      rhs -= coef * state_.n[z];
    } else {
      terms.push_back({{Quantity::kN, z, k - 1}, coef});
    }
  }

  void add_q(std::vector<Term>& terms, double& rhs, std::size_t z, std::size_t k, double coef) const {
    if (k == 0) {
      rhs -= coef * state_.q[z];
    } else {
      terms.push_back({{Quantity::kQ, z, k - 1}, coef});
    }
  }

  void equality_rows(std::size_t k) {
    const ExogenousStep& ex = fc_.steps[k];
    for (std::size_t z = 0; z < net_.num_links(); ++z) {
      const std::size_t owner = part_.source_agent(z);
      PendingRow row;
      row.label = {RowFamily::kConservation, {}, z, k};
      row.rhs = ex.e(z);
      row.terms.push_back({{Quantity::kN, z, k}, 1.0});
      add_n(row.terms, row.rhs, z, k, -1.0);
      for (std::size_t m : net_.upstream(z)) {
        const std::size_t w = net_.movements()[m].from;
        if (ex.ratio[m] != 0.0) row.terms.push_back({{Quantity::kFd, w, k}, -ex.ratio[m]});
      }
      row.terms.push_back({{Quantity::kFd, z, k}, 1.0});
      if (net_.is_source_link(z)) row.terms.push_back({{Quantity::kFu, z, k}, -1.0});
      sinks_[owner].eq.push_back(std::move(row));

      if (net_.is_source_link(z)) {
        PendingRow qrow;
        qrow.label = {RowFamily::kQueue, {}, z, k};
        qrow.rhs = ex.d[z];
        qrow.terms.push_back({{Quantity::kQ, z, k}, 1.0});
        add_q(qrow.terms, qrow.rhs, z, k, -1.0);
        qrow.terms.push_back({{Quantity::kFu, z, k}, 1.0});
        sinks_[owner].eq.push_back(std::move(qrow));
      }
    }
  }

  void junction_rows(std::size_t k) {
    for (std::size_t j = 0; j < net_.num_junctions(); ++j) {
      if (net_.is_boundary(j)) continue;
      const std::size_t owner = part_.agent_of(j);
      PendingRow budget;
      budget.label = {RowFamily::kInequality, ConstraintFamily::kSignalBudget, j, k};
      budget.rhs = net_.cycle() - net_.junction(j).lost_time;
      for (std::size_t p : net_.junction_phases(j)) {
        budget.terms.push_back({{Quantity::kG, p, k}, 1.0});
        PendingRow nonneg;
        nonneg.label = {RowFamily::kInequality, ConstraintFamily::kSplitNonneg, p, k};
        nonneg.terms.push_back({{Quantity::kG, p, k}, -1.0});
        sinks_[owner].ineq.push_back(std::move(nonneg));
      }
      sinks_[owner].ineq.push_back(std::move(budget));
    }
  }

  void place(PendingRow row, std::size_t link) {
    const bool empty = std::all_of(row.terms.begin(), row.terms.end(), [](const Term& t) { return t.coef == 0.0; });
    if (empty && row.rhs < -1e-9) {
      std::ostringstream os;
      os << row.label.to_string(net_) << " requires 0 <= " << row.rhs;
      infeasible_.push_back(os.str());
    }
    for (std::size_t owner : {part_.dest_agent(link), part_.source_agent(link)}) {
      if (holds_all(layouts_[owner], row.terms)) {
        sinks_[owner].ineq.push_back(std::move(row));
        return;
      }
    }
    throw Error(ErrorCode::kInconsistentProblem,
                "no agent holds every variable of " + row.label.to_string(net_));
  }

  void link_rows(std::size_t z, std::size_t k) {
    const RoadLink& l = net_.link(z);
    const ExogenousStep& ex = fc_.steps[k];
    const double e = ex.e(z);
    auto ineq = [&](ConstraintFamily f) {
      PendingRow r;
      r.label = {RowFamily::kInequality, f, z, k};
      return r;
    };

    PendingRow nonneg = ineq(ConstraintFamily::kFlowNonneg);
    nonneg.terms.push_back({{Quantity::kFd, z, k}, -1.0});
    place(std::move(nonneg), z);

    PendingRow avail = ineq(ConstraintFamily::kFlowAvailability);
    avail.rhs = e;
    avail.terms.push_back({{Quantity::kFd, z, k}, 1.0});
    add_n(avail.terms, avail.rhs, z, k, -1.0);
    if (net_.is_source_link(z)) avail.terms.push_back({{Quantity::kFu, z, k}, -1.0});
    place(std::move(avail), z);

    if (net_.is_source_link(z)) {
      PendingRow fu_nonneg = ineq(ConstraintFamily::kInflowNonneg);
      fu_nonneg.terms.push_back({{Quantity::kFu, z, k}, -1.0});
      place(std::move(fu_nonneg), z);

      PendingRow cap = ineq(ConstraintFamily::kInflowCapacity);
      cap.rhs = l.capacity - e;
      cap.terms.push_back({{Quantity::kFu, z, k}, 1.0});
      add_n(cap.terms, cap.rhs, z, k, 1.0);
      if (k == 0 && cap.rhs < -1e-9) {
        infeasible_.push_back("link " + std::to_string(l.id) + " is over capacity and cannot admit inflow >= 0");
      }
      place(std::move(cap), z);

      PendingRow queue = ineq(ConstraintFamily::kQueueNonneg);
      queue.terms.push_back({{Quantity::kQ, z, k}, -1.0});
      place(std::move(queue), z);
    } else {
      PendingRow cap = ineq(ConstraintFamily::kUpstreamCapacity);
      cap.rhs = l.capacity - e;
      for (std::size_t m : net_.upstream(z)) {
        cap.terms.push_back({{Quantity::kFd, net_.movements()[m].from, k}, ex.ratio[m]});
      }
      add_n(cap.terms, cap.rhs, z, k, 1.0);
      place(std::move(cap), z);
    }

    double flow_ub = 0.0;
    if (net_.is_destination_link(z)) {
      PendingRow out = ineq(ConstraintFamily::kOutflowCap);
      out.rhs = l.dest_outflow_cap.value_or(0.0);
      out.terms.push_back({{Quantity::kFd, z, k}, 1.0});
      flow_ub = out.rhs;
      place(std::move(out), z);
    } else {
      PendingRow green = ineq(ConstraintFamily::kGreenFlow);
      green.terms.push_back({{Quantity::kFd, z, k}, 1.0});
      for (std::size_t p : net_.link_phases(z)) green.terms.push_back({{Quantity::kG, p, k}, -l.saturation_flow});
      const std::size_t tau = net_.dest_of(z);
      flow_ub = l.saturation_flow * (net_.cycle() - net_.junction(tau).lost_time);
      place(std::move(green), z);
    }

    PendingRow smooth = ineq(ConstraintFamily::kSmoothness);
    smooth.rhs = l.gamma * l.capacity;
    smooth.terms.push_back({{Quantity::kFd, z, k}, -1.0});
    add_n(smooth.terms, smooth.rhs, z, k, 1.0);

    if (k == 0) {
      // Required discharge at k = 0 against the largest possible flow.
      const double lower = std::max(0.0, state_.n[z] - l.gamma * l.capacity);
      double avail_ub = state_.n[z] + e;
      if (net_.is_source_link(z)) {
        avail_ub += std::max(0.0, std::min(state_.q[z] + ex.d[z], l.capacity - state_.n[z] - e));
      }
      const double upper = std::min(flow_ub, avail_ub);
      if (lower > upper + 1e-9) {
        std::ostringstream os;
        os << "link " << l.id << " must discharge " << lower << " but at most " << upper << " can leave";
        infeasible_.push_back(os.str());
      }
    }
    place(std::move(smooth), z);
  }

  Coupling coupling(std::size_t i, std::size_t j) const {
    std::vector<std::size_t> shared = part_.cross_links(i, j);
    const auto& back = part_.cross_links(j, i);
    shared.insert(shared.end(), back.begin(), back.end());
    std::sort(shared.begin(), shared.end());

    Coupling c;
    c.neighbor = j;
    const VariableLayout& layout = layouts_[i];
    std::vector<Eigen::Triplet<double>> trips;
    int row = 0;
    for (std::size_t k = 0; k < fc_.horizon(); ++k) {
      for (std::size_t z : shared) {
        trips.emplace_back(row++, static_cast<int>(layout.find(Quantity::kN, z, k)), 1.0);
        c.rows.push_back({RowFamily::kCouplingN, {}, z, k});
      }
      for (std::size_t z : shared) {
        trips.emplace_back(row++, static_cast<int>(layout.find(Quantity::kFd, z, k)), 1.0);
        c.rows.push_back({RowFamily::kCouplingFd, {}, z, k});
      }
    }
    c.matrix = SparseMatrix(row, static_cast<Eigen::Index>(layout.size()));
    c.matrix.setFromTriplets(trips.begin(), trips.end());
    return c;
  }

  const Network& net_;
  const Partition& part_;
  const TrafficState& state_;
  const ExogenousForecast& fc_;
  std::vector<VariableLayout> layouts_;
  std::vector<RowSink> sinks_;
  std::vector<std::string> infeasible_;
};

// H and h of the signal-control cost restricted to links with sigma in J_i.
void signal_cost(LocalProblem& lp, const Network& net, const Partition& part, const TrafficState& state,
                 double alpha, double beta) {
  const auto dim = static_cast<Eigen::Index>(lp.dim());
  std::vector<Eigen::Triplet<double>> trips;
  Eigen::VectorXd h = Eigen::VectorXd::Zero(dim);
  double constant = 0.0;
  const std::size_t K = lp.layout.horizon();
  for (std::size_t z = 0; z < net.num_links(); ++z) {
    if (part.source_agent(z) != lp.agent) continue;
    const RoadLink& l = net.link(z);
    constant += alpha * state.n[z];
    for (std::size_t k = 0; k < K; ++k) {
      const auto n_pos = static_cast<int>(lp.layout.find(Quantity::kN, z, k));
      trips.emplace_back(n_pos, n_pos, 2.0 / l.capacity);
      h[static_cast<Eigen::Index>(lp.layout.find(Quantity::kFd, z, k))] -= alpha;
      if (k + 1 < K) h[n_pos] += alpha;  // n(t+k+1) appears in the k+1 term
      if (beta != 0.0 && net.is_source_link(z)) {
        const auto q_pos = static_cast<int>(lp.layout.find(Quantity::kQ, z, k));
        trips.emplace_back(q_pos, q_pos, 2.0 * beta);
      }
    }
  }
  lp.W = SparseMatrix(dim, dim);
  lp.W.setFromTriplets(trips.begin(), trips.end());
  lp.w = h;
  lp.cost_constant = constant;
}

}  // namespace

std::vector<LocalProblem> build_pc_problem(const Network& net, const Partition& part, const TrafficState& state,
                                           const ExogenousForecast& forecast) {
  if (forecast.horizon() == 0) throw Error(ErrorCode::kDimensionMismatch, "horizon must be at least 1");
  if (state.n.size() != net.num_links() || state.q.size() != net.num_links()) {
    throw Error(ErrorCode::kDimensionMismatch, "state does not match the network");
  }
  return PcAssembler(net, part, state, forecast).build();
}

std::vector<LocalProblem> build_tsc_problem(const std::vector<LocalProblem>& pc, const Network& net,
                                            const Partition& part, const TrafficState& state,
                                            const ModelParams& params) {
  std::vector<LocalProblem> out = pc;
  for (LocalProblem& lp : out) signal_cost(lp, net, part, state, params.alpha, params.beta);
  return out;
}

std::vector<LocalProblem> build_weighted_problem(const std::vector<LocalProblem>& pc, const Network& net,
                                                 const Partition& part, const TrafficState& state, double theta,
                                                 double alpha) {
  std::vector<LocalProblem> out = pc;
  for (LocalProblem& lp : out) {
    signal_cost(lp, net, part, state, alpha, 0.0);
    lp.w += theta * lp.c;
  }
  return out;
}

namespace {

SparseMatrix widen(const SparseMatrix& m, Eigen::Index cols, Eigen::Index rows = -1) {
  SparseMatrix out(rows < 0 ? m.rows() : rows, cols);
  std::vector<Eigen::Triplet<double>> trips;
  for (int r = 0; r < m.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(m, r); it; ++it) trips.emplace_back(r, static_cast<int>(it.col()), it.value());
  }
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

}  // namespace

std::vector<LocalProblem> lift_tsc_problem(const std::vector<LocalProblem>& pc,
                                           const std::vector<Eigen::VectorXd>& pc_solutions,
                                           const Network& net, const Partition& part, const TrafficState& state,
                                           const ModelParams& params, double pc_tol) {
  if (pc_solutions.size() != pc.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "one first-stage solution per agent required");
  }
  for (std::size_t a = 0; a < pc.size(); ++a) {
    if (static_cast<std::size_t>(pc_solutions[a].size()) != pc[a].dim()) {
      throw Error(ErrorCode::kDimensionMismatch, "first-stage solution size");
    }
  }
  if (const double r = first_stage_residual(pc, pc_solutions); !(r <= pc_tol)) {
    std::ostringstream os;
    os << "first-stage residual " << r << " exceeds " << pc_tol;
    throw Error(ErrorCode::kNotConverged, os.str());
  }
  std::vector<LocalProblem> out = build_tsc_problem(pc, net, part, state, params);
  for (std::size_t a = 0; a < out.size(); ++a) {
    LocalProblem& lp = out[a];
    const auto base = static_cast<Eigen::Index>(lp.dim());
    if (pc_solutions[a].size() != base) throw Error(ErrorCode::kDimensionMismatch, "first-stage solution size");
    const auto& neighbors = part.agent(lp.agent).neighbors;
    for (std::size_t j : neighbors) lp.layout.push({Quantity::kVirtual, j, 0});
    const auto dim = static_cast<Eigen::Index>(lp.dim());

    lp.W = widen(lp.W, dim, dim);
    lp.w.conservativeResize(dim);
    lp.w.tail(dim - base).setZero();
    lp.V = widen(lp.V, dim);

    // [A 0; c' 1'] x = [a; c' x_pc]
    std::vector<Eigen::Triplet<double>> trips;
    for (int r = 0; r < lp.U.outerSize(); ++r) {
      for (SparseMatrix::InnerIterator it(lp.U, r); it; ++it) trips.emplace_back(r, static_cast<int>(it.col()), it.value());
    }
    const int lift = static_cast<int>(lp.U.rows());
    for (Eigen::Index p = 0; p < base; ++p) {
      if (lp.c[p] != 0.0) trips.emplace_back(lift, static_cast<int>(p), lp.c[p]);
    }
    for (Eigen::Index p = base; p < dim; ++p) trips.emplace_back(lift, static_cast<int>(p), 1.0);
    lp.U = SparseMatrix(lift + 1, dim);
    lp.U.setFromTriplets(trips.begin(), trips.end());
    lp.u.conservativeResize(lift + 1);
    lp.u[lift] = lp.c.dot(pc_solutions[a]);
    lp.eq_rows.push_back({RowFamily::kLift, {}, lp.agent, 0});

    for (Coupling& cp : lp.couplings) {
      SparseMatrix m = widen(cp.matrix, dim);
      std::vector<Eigen::Triplet<double>> ct;
      for (int r = 0; r < m.outerSize(); ++r) {
        for (SparseMatrix::InnerIterator it(m, r); it; ++it) ct.emplace_back(r, static_cast<int>(it.col()), it.value());
      }
      const int row = static_cast<int>(m.rows());
      const auto pos = static_cast<int>(lp.layout.find(Quantity::kVirtual, cp.neighbor, 0));
      // Copies-equal consensus turns opposite signs into v_ij + v_ji = 0.
      ct.emplace_back(row, pos, lp.agent < cp.neighbor ? 1.0 : -1.0);
      cp.matrix = SparseMatrix(row + 1, dim);
      cp.matrix.setFromTriplets(ct.begin(), ct.end());
      cp.rows.push_back({RowFamily::kCouplingVirtual, {}, cp.neighbor, 0});
    }
    lp.c.conservativeResize(dim);
    lp.c.tail(dim - base).setZero();
    if (min_row_gram_eigenvalue(lp.U) <= 1e-10) {
      throw Error(ErrorCode::kInconsistentProblem,
                  "lifted equality block of agent " + std::to_string(lp.agent + 1) + " is rank deficient");
    }
  }
  return out;
}

double first_stage_residual(const std::vector<LocalProblem>& pc, const std::vector<Eigen::VectorXd>& x) {
  double r = 0.0;
  for (std::size_t a = 0; a < pc.size(); ++a) {
    const LocalProblem& lp = pc[a];
    if (lp.U.rows() > 0) r = std::max(r, (lp.U * x[a] - lp.u).cwiseAbs().maxCoeff());
    if (lp.V.rows() > 0) r = std::max(r, (lp.V * x[a] - lp.v).maxCoeff());
    for (const Coupling& cp : lp.couplings) {
      const Coupling* back = pc[cp.neighbor].coupling_with(a);
      if (back == nullptr || cp.matrix.rows() == 0) continue;
      const Eigen::VectorXd gap = cp.matrix * x[a] - back->matrix * x[cp.neighbor];
      r = std::max(r, 0.5 * gap.cwiseAbs().maxCoeff());
    }
  }
  return r;
}

Eigen::VectorXd drop_virtual(const LocalProblem& lifted, const Eigen::VectorXd& x) {
  Eigen::Index keep = 0;
  for (std::size_t p = 0; p < lifted.dim(); ++p) {
    if (lifted.layout.key(p).quantity != Quantity::kVirtual) ++keep;
  }
  return x.head(keep);
}

ExtractedControls extract_controls(const Network& net, const Partition& part,
                                   const std::vector<LocalProblem>& problems,
                                   const std::vector<Eigen::VectorXd>& solutions, std::size_t k) {
  if (problems.size() != solutions.size()) throw Error(ErrorCode::kDimensionMismatch, "solutions per agent");
  ExtractedControls out;
  out.control = ControlInput::zero(net);
  out.link_green.assign(net.num_links(), 0.0);

  auto value = [&](std::size_t agent, Quantity q, std::size_t id) -> double {
    const LocalProblem& lp = problems[agent];
    const std::size_t pos = lp.layout.find(q, id, k);
    if (pos == kNoIndex) throw Error(ErrorCode::kDimensionMismatch, "variable missing from layout");
    if (static_cast<std::size_t>(solutions[agent].size()) != lp.dim()) {
      throw Error(ErrorCode::kDimensionMismatch, "solution length does not match layout");
    }
    return solutions[agent][static_cast<Eigen::Index>(pos)];
  };
  auto nonneg = [&](double v, const std::string& what) {
    if (v < -1e-6) {
      std::ostringstream os;
      os << "NegativeControl: " << what << " = " << v << " clamped to 0";
      out.warnings.push_back(os.str());
    }
    return std::max(0.0, v);
  };

  for (std::size_t z = 0; z < net.num_links(); ++z) {
    const std::size_t tau_owner = part.dest_agent(z);
    const std::size_t sigma_owner = part.source_agent(z);
    const double fd = value(tau_owner, Quantity::kFd, z);
    if (tau_owner != sigma_owner) {
      const double other = value(sigma_owner, Quantity::kFd, z);
      const double gap = std::abs(fd - other);
      out.max_copy_discrepancy = std::max(out.max_copy_discrepancy, gap);
      if (gap > 1e-9) {
        std::ostringstream os;
        os << "link " << net.link(z).id << " copies differ by " << gap;
        out.warnings.push_back(os.str());
      }
    }
    out.control.f_d[z] = nonneg(fd, "f_d link " + std::to_string(net.link(z).id));
    out.link_green[z] = out.control.f_d[z] / net.link(z).saturation_flow;
    if (net.is_source_link(z)) {
      out.control.f_u[z] = nonneg(value(sigma_owner, Quantity::kFu, z), "f_u link " + std::to_string(net.link(z).id));
    }
  }
  for (std::size_t p = 0; p < net.num_phases(); ++p) {
    const std::size_t owner = part.agent_of(net.phases()[p].junction);
    out.control.g[p] = nonneg(value(owner, Quantity::kG, p), "g phase " + net.phases()[p].id);
  }
  return out;
}

std::vector<Eigen::VectorXd> solution_from_plan(const Network& net, const std::vector<LocalProblem>& problems,
                                                const TrafficState& state, const ExogenousForecast& forecast,
                                                const std::vector<ControlInput>& plan) {
  const std::vector<TrafficState> traj = predict_trajectory(net, state, forecast, plan);
  std::vector<Eigen::VectorXd> out;
  for (const LocalProblem& lp : problems) {
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lp.dim()));
    for (std::size_t p = 0; p < lp.dim(); ++p) {
      const VariableKey& key = lp.layout.key(p);
      double v = 0.0;
      switch (key.quantity) {
        case Quantity::kN: v = traj[key.k].n[key.id]; break;
        case Quantity::kQ: v = traj[key.k].q[key.id]; break;
        case Quantity::kFd: v = plan[key.k].f_d[key.id]; break;
        case Quantity::kFu: v = plan[key.k].f_u[key.id]; break;
        case Quantity::kG: v = plan[key.k].g[key.id]; break;
        case Quantity::kVirtual: v = 0.0; break;
      }
      x[static_cast<Eigen::Index>(p)] = v;
    }
    out.push_back(std::move(x));
  }
  return out;
}

Objectives evaluate_objectives(const Network& net, const TrafficState& state, const ExogenousForecast& forecast,
                               const std::vector<ControlInput>& plan) {
  const std::vector<TrafficState> traj = predict_trajectory(net, state, forecast, plan);
  Objectives o;
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const TrafficState& cur = k == 0 ? state : traj[k - 1];
    for (std::size_t z = 0; z < net.num_links(); ++z) {
      o.phi2 += cur.n[z] - plan[k].f_d[z];
      o.phi3 += traj[k].n[z] * traj[k].n[z] / net.link(z).capacity;
      if (net.is_source_link(z)) {
        o.phi1 += traj[k].q[z];
        o.queue_sq += traj[k].q[z] * traj[k].q[z];
      }
    }
  }
  return o;
}

double min_row_gram_eigenvalue(const SparseMatrix& U) {
  if (U.rows() == 0) return 0.0;
  Eigen::MatrixXd dense(U);
  for (Eigen::Index r = 0; r < dense.rows(); ++r) {
    const double norm = dense.row(r).cwiseAbs().maxCoeff();
    if (norm > 0.0) dense.row(r) /= norm;
  }
  const Eigen::MatrixXd gram = dense * dense.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace lexinet
