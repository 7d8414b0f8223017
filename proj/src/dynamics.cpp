#include "lexinet/dynamics.hpp"

#include <algorithm>
#include <numeric>

#include "lexinet/error.hpp"

namespace lexinet {

TrafficState TrafficState::zero(const Network& net) {
  return {std::vector<double>(net.num_links(), 0.0), std::vector<double>(net.num_links(), 0.0)};
}

double TrafficState::total() const {
  return std::accumulate(n.begin(), n.end(), 0.0) + std::accumulate(q.begin(), q.end(), 0.0);
}

ExogenousStep ExogenousStep::zero(const Network& net) {
  ExogenousStep s;
  s.d.assign(net.num_links(), 0.0);
  s.e_in.assign(net.num_links(), 0.0);
  s.e_out.assign(net.num_links(), 0.0);
  for (const Movement& m : net.movements()) s.ratio.push_back(m.ratio);
  return s;
}

ControlInput ControlInput::zero(const Network& net) {
  return {std::vector<double>(net.num_links(), 0.0), std::vector<double>(net.num_links(), 0.0),
          std::vector<double>(net.num_phases(), 0.0)};
}

namespace {

void check_dims(const Network& net, const TrafficState& state, const ExogenousForecast& forecast,
                const std::vector<ControlInput>& controls) {
  const std::size_t nl = net.num_links();
  if (state.n.size() != nl || state.q.size() != nl) {
    throw Error(ErrorCode::kDimensionMismatch, "state does not match the network");
  }
  if (controls.size() != forecast.horizon()) {
    throw Error(ErrorCode::kDimensionMismatch, "controls and forecast horizons differ");
  }
  for (const ControlInput& c : controls) {
    if (c.f_d.size() != nl || c.f_u.size() != nl || c.g.size() != net.num_phases()) {
      throw Error(ErrorCode::kDimensionMismatch, "control does not match the network");
    }
  }
  for (const ExogenousStep& s : forecast.steps) {
    if (s.d.size() != nl || s.e_in.size() != nl || s.e_out.size() != nl ||
        s.ratio.size() != net.movements().size()) {
      throw Error(ErrorCode::kDimensionMismatch, "forecast does not match the network");
    }
  }
}

// Upstream inflow sum_w r_wz f_w^d into every link.
std::vector<double> upstream_inflow(const Network& net, const ExogenousStep& ex, const std::vector<double>& f_d) {
  std::vector<double> in(net.num_links(), 0.0);
  const auto moves = net.movements();
  for (std::size_t m = 0; m < moves.size(); ++m) in[moves[m].to] += ex.ratio[m] * f_d[moves[m].from];
  return in;
}

TrafficState advance(const Network& net, const TrafficState& s, const ExogenousStep& ex,
                     const std::vector<double>& d, const ControlInput& c) {
  TrafficState next = s;
  const std::vector<double> in = upstream_inflow(net, ex, c.f_d);
  for (std::size_t z = 0; z < net.num_links(); ++z) {
    next.n[z] = s.n[z] + ex.e(z) + in[z] - c.f_d[z] + c.f_u[z];
    if (net.is_source_link(z)) next.q[z] = s.q[z] + d[z] - c.f_u[z];
  }
  return next;
}

}  // namespace

std::vector<TrafficState> predict_trajectory(const Network& net, const TrafficState& state,
                                             const ExogenousForecast& forecast,
                                             const std::vector<ControlInput>& controls) {
  check_dims(net, state, forecast, controls);
  std::vector<TrafficState> out;
  out.reserve(controls.size());
  const TrafficState* cur = &state;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    out.push_back(advance(net, *cur, forecast.steps[k], forecast.steps[k].d, controls[k]));
    cur = &out.back();
  }
  return out;
}

PlantStep step_plant(const Network& net, const TrafficState& state, const ExogenousStep& realized,
                     const ControlInput& control, double noise, std::mt19937_64& rng) {
  ExogenousForecast one{{realized}};
  check_dims(net, state, one, {control});
  const std::size_t nl = net.num_links();
  constexpr double kClampEps = 1e-9;

  PlantStep out;
  ExogenousStep ex = realized;
  std::uniform_real_distribution<double> eps(-noise, noise);
  for (std::size_t z = 0; z < nl; ++z) {
    if (!net.is_source_link(z)) {
      ex.d[z] = 0.0;
      continue;
    }
    const double e = noise > 0.0 ? eps(rng) : 0.0;
    ex.d[z] = std::max(0.0, realized.d[z] * (1.0 + e));
  }
  for (std::size_t z = 0; z < nl; ++z) {
    ex.e_out[z] = std::clamp(realized.e_out[z], 0.0, state.n[z] + std::max(0.0, realized.e_in[z]));
    ex.e_in[z] = std::clamp(realized.e_in[z], 0.0, std::max(0.0, net.link(z).capacity - state.n[z] + ex.e_out[z]));
  }

  ControlInput c = control;
  bool clamped = false;
  auto clamp_to = [&](double& v, double lo, double hi) {
    const double before = v;
    v = std::clamp(v, lo, std::max(lo, hi));
    if (before - v > kClampEps || v - before > kClampEps) clamped = true;
  };

  // Signal splits cannot exceed the usable cycle.
  for (std::size_t j = 0; j < net.num_junctions(); ++j) {
    if (net.is_boundary(j)) continue;
    double sum = 0.0;
    for (std::size_t p : net.junction_phases(j)) {
      clamp_to(c.g[p], 0.0, net.cycle());
      sum += c.g[p];
    }
    const double budget = net.cycle() - net.junction(j).lost_time;
    if (sum > budget + kClampEps) {
      clamped = true;
      for (std::size_t p : net.junction_phases(j)) c.g[p] *= budget / sum;
    }
  }

  for (std::size_t z = 0; z < nl; ++z) {
    if (net.is_source_link(z)) {
      clamp_to(c.f_u[z], 0.0, state.q[z] + ex.d[z]);
    } else {
      clamp_to(c.f_u[z], 0.0, 0.0);
    }
    double discharge = 0.0;
    if (net.is_destination_link(z)) {
      discharge = net.link(z).dest_outflow_cap.value_or(0.0);
    } else {
      for (std::size_t p : net.link_phases(z)) discharge += c.g[p];
      discharge *= net.link(z).saturation_flow;
    }
    clamp_to(c.f_d[z], 0.0, discharge);
  }

  // Receiving capacity: inflow into z must fit nbar - n - e.
  {
    const std::vector<double> in = upstream_inflow(net, ex, c.f_d);
    std::vector<double> scale(nl, 1.0);
    for (std::size_t z = 0; z < nl; ++z) {
      const double space = std::max(0.0, net.link(z).capacity - state.n[z] - ex.e(z));
      const double total = in[z] + c.f_u[z];
      if (total > space + kClampEps) scale[z] = space / total;
    }
    for (std::size_t z = 0; z < nl; ++z) {
      double s = 1.0;
      for (std::size_t m : net.downstream(z)) {
        if (ex.ratio[m] > 0.0) s = std::min(s, scale[net.movements()[m].to]);
      }
      if (s < 1.0) {
        c.f_d[z] *= s;
        clamped = true;
      }
      if (scale[z] < 1.0) {
        c.f_u[z] *= scale[z];
        clamped = true;
      }
    }
  }

  // Availability: a link cannot send more than it holds.
  for (std::size_t z = 0; z < nl; ++z) {
    clamp_to(c.f_d[z], 0.0, state.n[z] + c.f_u[z] + ex.e(z));
  }

  out.next = advance(net, state, ex, ex.d, c);
  for (std::size_t z = 0; z < nl; ++z) {
    out.demand += ex.d[z];
    out.e_in += ex.e_in[z];
    out.e_out += ex.e_out[z];
    if (net.is_destination_link(z)) out.served += c.f_d[z];
  }
  out.applied = std::move(c);
  out.clamped = clamped;
  return out;
}

const char* to_string(ConstraintFamily family) {
  switch (family) {
    case ConstraintFamily::kSignalBudget: return "signal_budget";
    case ConstraintFamily::kSplitNonneg: return "split_nonneg";
    case ConstraintFamily::kFlowNonneg: return "flow_nonneg";
    case ConstraintFamily::kFlowAvailability: return "flow_availability";
    case ConstraintFamily::kUpstreamCapacity: return "upstream_capacity";
    case ConstraintFamily::kInflowNonneg: return "inflow_nonneg";
    case ConstraintFamily::kInflowCapacity: return "inflow_capacity";
    case ConstraintFamily::kGreenFlow: return "green_flow";
    case ConstraintFamily::kQueueNonneg: return "queue_nonneg";
    case ConstraintFamily::kOutflowCap: return "outflow_cap";
    case ConstraintFamily::kSmoothness: return "smoothness";
  }
  return "unknown";
}

std::vector<Violation> check_feasibility(const Network& net, const TrafficState& state,
                                         const ExogenousForecast& forecast,
                                         const std::vector<ControlInput>& controls, double tol) {
  const std::vector<TrafficState> traj = predict_trajectory(net, state, forecast, controls);
  std::vector<Violation> out;
  auto check = [&](ConstraintFamily f, const std::string& subject, std::size_t k, double lhs, double rhs) {
    if (lhs - rhs > tol) out.push_back({f, subject, k, lhs - rhs});
  };

  for (std::size_t k = 0; k < controls.size(); ++k) {
    const TrafficState& cur = k == 0 ? state : traj[k - 1];
    const TrafficState& nxt = traj[k];
    const ControlInput& c = controls[k];
    const ExogenousStep& ex = forecast.steps[k];

    for (std::size_t j = 0; j < net.num_junctions(); ++j) {
      if (net.is_boundary(j)) continue;
      double sum = 0.0;
      for (std::size_t p : net.junction_phases(j)) {
        sum += c.g[p];
        check(ConstraintFamily::kSplitNonneg, "phase " + net.junction(j).id + "/" + net.phases()[p].id, k,
              -c.g[p], 0.0);
      }
      check(ConstraintFamily::kSignalBudget, "junction " + net.junction(j).id, k, sum,
            net.cycle() - net.junction(j).lost_time);
    }

    const std::vector<double> in = upstream_inflow(net, ex, c.f_d);
    for (std::size_t z = 0; z < net.num_links(); ++z) {
      const RoadLink& l = net.link(z);
      const std::string subject = "link " + std::to_string(l.id);
      const double e = ex.e(z);
      check(ConstraintFamily::kFlowNonneg, subject, k, -c.f_d[z], 0.0);
      check(ConstraintFamily::kFlowAvailability, subject, k, c.f_d[z], cur.n[z] + c.f_u[z] + e);
      if (net.is_source_link(z)) {
        check(ConstraintFamily::kInflowNonneg, subject, k, -c.f_u[z], 0.0);
        check(ConstraintFamily::kInflowCapacity, subject, k, c.f_u[z], l.capacity - cur.n[z] - e);
        check(ConstraintFamily::kQueueNonneg, subject, k, -nxt.q[z], 0.0);
      } else {
        check(ConstraintFamily::kUpstreamCapacity, subject, k, in[z], l.capacity - cur.n[z] - e);
      }
      if (net.is_destination_link(z)) {
        check(ConstraintFamily::kOutflowCap, subject, k, c.f_d[z], l.dest_outflow_cap.value_or(0.0));
      } else {
        double green = 0.0;
        for (std::size_t p : net.link_phases(z)) green += c.g[p];
        check(ConstraintFamily::kGreenFlow, subject, k, c.f_d[z], l.saturation_flow * green);
      }
      check(ConstraintFamily::kSmoothness, subject, k, cur.n[z] - c.f_d[z], l.gamma * l.capacity);
    }
  }
  return out;
}

}  // namespace lexinet
