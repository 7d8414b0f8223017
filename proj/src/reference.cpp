#include "lexinet/reference.hpp"

#include <Eigen/LU>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "lexinet/error.hpp"

namespace lexinet {

std::vector<Eigen::VectorXd> GlobalProblem::split(const Eigen::VectorXd& x) const {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t a = 0; a < offset.size(); ++a) out.push_back(x.segment(offset[a], size[a]));
  return out;
}

Eigen::VectorXd GlobalProblem::stack(const std::vector<Eigen::VectorXd>& parts) const {
  if (parts.size() != offset.size()) throw Error(ErrorCode::kDimensionMismatch, "one vector per agent required");
  Eigen::VectorXd x(dim());
  for (std::size_t a = 0; a < parts.size(); ++a) {
    if (parts[a].size() != size[a]) throw Error(ErrorCode::kDimensionMismatch, "agent vector length");
    x.segment(offset[a], size[a]) = parts[a];
  }
  return x;
}

GlobalProblem assemble_global(const std::vector<LocalProblem>& problems) {
  GlobalProblem g;
  Eigen::Index n = 0, me = 0, mi = 0;
  for (const LocalProblem& lp : problems) {
    g.offset.push_back(n);
    g.size.push_back(static_cast<Eigen::Index>(lp.dim()));
    n += static_cast<Eigen::Index>(lp.dim());
    me += lp.U.rows();
    mi += lp.V.rows();
  }
  Eigen::Index mc = 0;
  for (std::size_t a = 0; a < problems.size(); ++a) {
    for (const Coupling& cp : problems[a].couplings) {
      if (cp.neighbor >= problems.size()) throw Error(ErrorCode::kInconsistentProblem, "coupling to unknown agent");
      const Coupling* back = problems[cp.neighbor].coupling_with(a);
      if (back == nullptr || back->matrix.rows() != cp.matrix.rows()) {
        throw Error(ErrorCode::kInconsistentProblem, "coupling blocks do not align");
      }
      if (a < cp.neighbor) mc += cp.matrix.rows();
    }
  }

  g.W = Eigen::MatrixXd::Zero(n, n);
  g.w = Eigen::VectorXd::Zero(n);
  g.c = Eigen::VectorXd::Zero(n);
  g.U = Eigen::MatrixXd::Zero(me + mc, n);
  g.u = Eigen::VectorXd::Zero(me + mc);
  g.V = Eigen::MatrixXd::Zero(mi, n);
  g.v = Eigen::VectorXd::Zero(mi);

  Eigen::Index re = 0, ri = 0;
  for (std::size_t a = 0; a < problems.size(); ++a) {
    const LocalProblem& lp = problems[a];
    const Eigen::Index o = g.offset[a], s = g.size[a];
    g.W.block(o, o, s, s) = Eigen::MatrixXd(lp.W);
    g.w.segment(o, s) = lp.w;
    if (lp.c.size() == s) g.c.segment(o, s) = lp.c;
    g.constant += lp.cost_constant;
    g.U.block(re, o, lp.U.rows(), s) = Eigen::MatrixXd(lp.U);
    g.u.segment(re, lp.U.rows()) = lp.u;
    re += lp.U.rows();
    g.V.block(ri, o, lp.V.rows(), s) = Eigen::MatrixXd(lp.V);
    g.v.segment(ri, lp.V.rows()) = lp.v;
    ri += lp.V.rows();
  }
  for (std::size_t a = 0; a < problems.size(); ++a) {
    for (const Coupling& cp : problems[a].couplings) {
      const std::size_t b = cp.neighbor;
      if (a > b) continue;
      const Coupling* back = problems[b].coupling_with(a);
      const Eigen::Index rows = cp.matrix.rows();
      g.U.block(re, g.offset[a], rows, g.size[a]) = Eigen::MatrixXd(cp.matrix);
      g.U.block(re, g.offset[b], rows, g.size[b]) = -Eigen::MatrixXd(back->matrix);
      re += rows;
    }
  }
  return g;
}

namespace {

double step_to_boundary(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
  }
  return alpha;
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

enum class Outcome { kSolved, kStalled, kDiverged };

struct IpmResult {
  Outcome outcome = Outcome::kStalled;
  CentralSolution sol;
};

IpmResult interior_point(const GlobalProblem& p, const CentralOptions& opt) {
  const Eigen::Index n = p.dim(), me = p.U.rows(), mi = p.V.rows();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(me);
  Eigen::VectorXd s = (p.v - p.V * x).cwiseMax(1.0);
  Eigen::VectorXd z = Eigen::VectorXd::Ones(mi);

  const double scale_d = 1.0 + inf_norm(p.w);
  const double scale_e = 1.0 + inf_norm(p.u);
  const double scale_i = 1.0 + inf_norm(p.v);
  constexpr double kReg = 1e-10;

  IpmResult res;
  // Degenerate problems can lose accuracy after the optimum is reached, so
  // the best iterate is kept.
  CentralSolution best;
  double best_kkt = std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iterations; ++it) {
    const Eigen::VectorXd rd = p.W * x + p.w + p.U.transpose() * y + p.V.transpose() * z;
    const Eigen::VectorXd re = p.U * x - p.u;
    const Eigen::VectorXd ri = p.V * x + s - p.v;
    const double mu = mi > 0 ? s.dot(z) / static_cast<double>(mi) : 0.0;
    const double gap = mu / (1.0 + std::abs(p.objective(x) - p.constant));
    const double kkt = std::max({inf_norm(rd) / scale_d, inf_norm(re) / scale_e, inf_norm(ri) / scale_i, gap});
    if (kkt < best_kkt) {
      best_kkt = kkt;
      best = {x, y, z, 0.0, it, kkt};
    }
    if (kkt <= opt.tol) {
      res.outcome = Outcome::kSolved;
      break;
    }
    if (!x.allFinite() || inf_norm(x) > 1e12) {
      res.outcome = Outcome::kDiverged;
      break;
    }
    if (best_kkt <= opt.accept && it - best.iterations > 20) break;

    const Eigen::VectorXd d = z.cwiseQuotient(s);
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + me, n + me);
    K.topLeftCorner(n, n) = p.W + p.V.transpose() * d.asDiagonal() * p.V;
    K.topLeftCorner(n, n).diagonal().array() += kReg;
    K.topRightCorner(n, me) = p.U.transpose();
    K.bottomLeftCorner(me, n) = p.U;
    K.bottomRightCorner(me, me).diagonal().array() -= kReg;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(K);

    auto solve = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& ds,
                     Eigen::VectorXd& dz) {
      // Z ds + S dz = -rc, ds = -ri - V dx
      Eigen::VectorXd rhs(n + me);
      rhs.head(n) = -rd - p.V.transpose() * ((-rc + z.cwiseProduct(ri)).cwiseQuotient(s));
      rhs.tail(me) = -re;
      Eigen::VectorXd sol = lu.solve(rhs);
      for (int refine = 0; refine < 2; ++refine) sol += lu.solve(rhs - K * sol);
      dx = sol.head(n);
      dy = sol.tail(me);
      ds = -ri - p.V * dx;
      dz = (-rc - z.cwiseProduct(ds)).cwiseQuotient(s);
    };

    Eigen::VectorXd dx, dy, ds, dz;
    Eigen::VectorXd rc = s.cwiseProduct(z);
    solve(rc, dx, dy, ds, dz);
    const double ap = step_to_boundary(s, ds);
    const double ad = step_to_boundary(z, dz);
    double sigma = 0.0;
    if (mi > 0) {
      const double mu_aff = (s + ap * ds).dot(z + ad * dz) / static_cast<double>(mi);
      sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
      rc = s.cwiseProduct(z) + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(mi, sigma * mu);
      solve(rc, dx, dy, ds, dz);
    }
    const double eta = 0.995;
    const double step_p = std::min(1.0, eta * step_to_boundary(s, ds));
    const double step_d = std::min(1.0, eta * step_to_boundary(z, dz));
    x += step_p * dx;
    s += step_p * ds;
    y += step_d * dy;
    z += step_d * dz;
  }
  if (res.outcome == Outcome::kDiverged) {
    res.sol = {x, y, z, 0.0, opt.max_iterations, best_kkt};
  } else {
    res.sol = best;
    if (res.outcome != Outcome::kSolved && best_kkt <= opt.accept) res.outcome = Outcome::kSolved;
  }
  res.sol.cost = p.objective(res.sol.x);
  return res;
}

// min sum(p + m + t) s.t. Ux + p - m = u, Vx - t <= v, p, m, t >= 0.
double phase_one(const GlobalProblem& prob, const CentralOptions& opt) {
  const Eigen::Index n = prob.dim(), me = prob.U.rows(), mi = prob.V.rows();
  const Eigen::Index nn = n + 2 * me + mi;
  GlobalProblem f;
  f.W = Eigen::MatrixXd::Zero(nn, nn);
  f.w = Eigen::VectorXd::Zero(nn);
  f.w.tail(2 * me + mi).setOnes();
  f.U = Eigen::MatrixXd::Zero(me, nn);
  f.U.leftCols(n) = prob.U;
  f.U.block(0, n, me, me) = Eigen::MatrixXd::Identity(me, me);
  f.U.block(0, n + me, me, me) = -Eigen::MatrixXd::Identity(me, me);
  f.u = prob.u;
  f.V = Eigen::MatrixXd::Zero(mi + 2 * me + mi, nn);
  f.V.topLeftCorner(mi, n) = prob.V;
  f.V.block(0, n + 2 * me, mi, mi) = -Eigen::MatrixXd::Identity(mi, mi);
  f.V.bottomRightCorner(2 * me + mi, 2 * me + mi) = -Eigen::MatrixXd::Identity(2 * me + mi, 2 * me + mi);
  f.v = Eigen::VectorXd::Zero(mi + 2 * me + mi);
  f.v.head(mi) = prob.v;
  // Small proximal weight keeps the free x block well posed.
  f.W.topLeftCorner(n, n).diagonal().setConstant(1e-8);
  IpmResult r = interior_point(f, opt);
  return r.sol.cost;
}

// The set {x feasible, c'x = phi} has no strictly feasible point, which
// stalls an interior-point method. The first-stage solution is strictly
// complementary, so the inequalities carrying a positive multiplier are
// exactly those active on the whole optimal face; pinning them describes the
// same set with an interior relative to the remaining rows.
GlobalProblem restrict_to_optimal_face(GlobalProblem second, const GlobalProblem& first, const CentralSolution& s1,
                                       double phi) {
  const Eigen::VectorXd slack = first.v - first.V * s1.x;
  std::vector<Eigen::Index> active, inactive;
  double separation = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < slack.size(); ++i) {
    const double sl = std::max(slack[i], 1e-300), z = std::max(s1.ineq_dual[i], 1e-300);
    (z > sl ? active : inactive).push_back(i);
    separation = std::min(separation, std::max(z / sl, sl / z));
  }
  Eigen::MatrixXd eq(second.U.rows() + static_cast<Eigen::Index>(active.size()) + 1, second.dim());
  Eigen::VectorXd rhs(eq.rows());
  eq.topRows(second.U.rows()) = second.U;
  rhs.head(second.U.rows()) = second.u;
  Eigen::Index r = second.U.rows();
  if (separation < 1e3) {
    // Ambiguous split: fall back to the single lexicographic row.
    eq.conservativeResize(r + 1, Eigen::NoChange);
    rhs.conservativeResize(r + 1);
    eq.row(r) = first.c.transpose();
    rhs[r] = phi;
    second.U = eq;
    second.u = rhs;
    return second;
  }
  for (Eigen::Index i : active) {
    eq.row(r) = first.V.row(i);
    rhs[r++] = first.v[i];
  }
  eq.row(r) = first.c.transpose();
  rhs[r] = phi;

  // Keep a linearly independent subset of the rows.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(eq.transpose());
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index k = 0; k < rank; ++k) keep.push_back(qr.colsPermutation().indices()[k]);
  std::sort(keep.begin(), keep.end());
  second.U.resize(rank, second.dim());
  second.u.resize(rank);
  for (Eigen::Index k = 0; k < rank; ++k) {
    second.U.row(k) = eq.row(keep[static_cast<std::size_t>(k)]);
    second.u[k] = rhs[keep[static_cast<std::size_t>(k)]];
  }
  Eigen::MatrixXd v(static_cast<Eigen::Index>(inactive.size()), second.dim());
  Eigen::VectorXd vv(v.rows());
  for (std::size_t k = 0; k < inactive.size(); ++k) {
    v.row(static_cast<Eigen::Index>(k)) = second.V.row(inactive[k]);
    vv[static_cast<Eigen::Index>(k)] = second.v[inactive[k]];
  }
  second.V = v;
  second.v = vv;
  return second;
}

}  // namespace

CentralSolution solve_centralized(const GlobalProblem& problem, const CentralOptions& options) {
  IpmResult r = interior_point(problem, options);
  if (r.outcome == Outcome::kSolved) return r.sol;

  CentralOptions loose = options;
  loose.tol = std::max(options.tol, 1e-8);
  const double infeas = phase_one(problem, loose);
  if (infeas > 1e-6) {
    std::ostringstream os;
    os << "constraints cannot be met; phase-one residual " << infeas;
    throw Error(ErrorCode::kInfeasible, os.str());
  }
  if (r.outcome == Outcome::kDiverged) throw Error(ErrorCode::kUnbounded, "objective is unbounded below");
  std::ostringstream os;
  os << "interior point stopped after " << r.sol.iterations << " iterations, residual " << r.sol.kkt_residual;
  throw Error(ErrorCode::kMaxIterations, os.str());
}

LexicographicSolution solve_lexicographic_centralized(const std::vector<LocalProblem>& pc,
                                                      const std::vector<LocalProblem>& tsc,
                                                      const CentralOptions& options) {
  LexicographicSolution out;
  const GlobalProblem first = assemble_global(pc);
  const CentralSolution s1 = solve_centralized(first, options);
  out.pc_x = s1.x;
  out.phi_pc = first.c.dot(s1.x);

  GlobalProblem second = assemble_global(tsc);
  if (second.dim() != first.dim()) throw Error(ErrorCode::kDimensionMismatch, "stages have different layouts");
  second = restrict_to_optimal_face(second, first, s1, out.phi_pc);
  const CentralSolution s2 = solve_centralized(second, options);
  out.tsc_x = s2.x;
  out.tsc_cost = s2.cost;
  out.lex_residual = std::abs(first.c.dot(s2.x) - out.phi_pc);
  return out;
}

}  // namespace lexinet
