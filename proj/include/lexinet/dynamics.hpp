#pragma once

#include <random>
#include <string>
#include <vector>

#include "lexinet/network.hpp"

namespace lexinet {

// Vehicle counts per link index. q is only meaningful on source links and
// stays zero elsewhere.
struct TrafficState {
  std::vector<double> n;
  std::vector<double> q;

  static TrafficState zero(const Network& net);
  double total() const;
};

// Exogenous data for one interval [(t+k)T, (t+k+1)T).
struct ExogenousStep {
  std::vector<double> d;      // demand per source link, veh/interval
  std::vector<double> e_in;   // trips starting on the link
  std::vector<double> e_out;  // trips ending on the link
  std::vector<double> ratio;  // per Network::movements() entry

  static ExogenousStep zero(const Network& net);  // zero flows, nominal ratios
  double e(std::size_t link) const { return e_in[link] - e_out[link]; }
};

struct ExogenousForecast {
  std::vector<ExogenousStep> steps;
  std::size_t horizon() const { return steps.size(); }
};

struct ControlInput {
  std::vector<double> f_d;  // per link
  std::vector<double> f_u;  // per link, zero off source links
  std::vector<double> g;    // per network phase, seconds

  static ControlInput zero(const Network& net);
};

// n(t+k+1|t), q(t+k+1|t) for k = 0..K-1 by the store-and-forward recursion.
// No clamping: a pure affine map of (state, controls, forecast).
std::vector<TrafficState> predict_trajectory(const Network& net, const TrafficState& state,
                                             const ExogenousForecast& forecast,
                                             const std::vector<ControlInput>& controls);

struct PlantStep {
  TrafficState next;
  ControlInput applied;  // after clamping
  double demand = 0.0;   // realized demand total
  double e_in = 0.0;     // realized totals
  double e_out = 0.0;
  double served = 0.0;   // destination outflow
  bool clamped = false;  // some flow was reduced by more than 1e-9
};

// Macroscopic stand-in for the real network. Demand is perturbed by
// d * (1 + eps), eps ~ U[-noise, noise] per source link. Flows are clamped so
// that links never exceed capacity and never send more than they hold;
// competing inflows into a full link are scaled proportionally.
PlantStep step_plant(const Network& net, const TrafficState& state, const ExogenousStep& realized,
                     const ControlInput& control, double noise, std::mt19937_64& rng);

enum class ConstraintFamily {
  kSignalBudget,      // sum_p g_p <= T - L
  kSplitNonneg,       // g_p >= 0
  kFlowNonneg,        // f_d >= 0
  kFlowAvailability,  // f_d <= n + f_u + e
  kUpstreamCapacity,  // sum_w r_wz f_w <= nbar - n - e
  kInflowNonneg,      // f_u >= 0
  kInflowCapacity,    // f_u <= nbar - n - e
  kGreenFlow,         // f_d <= S sum_{p in P_z} g_p
  kQueueNonneg,       // q >= 0
  kOutflowCap,        // f_d <= fbar
  kSmoothness,        // n - f_d <= gamma nbar
};

const char* to_string(ConstraintFamily family);

struct Violation {
  ConstraintFamily family;
  std::string subject;  // "link 7", "junction J2", "phase J2/p1"
  std::size_t k = 0;
  double slack = 0.0;  // amount by which the constraint is broken
};

std::vector<Violation> check_feasibility(const Network& net, const TrafficState& state,
                                         const ExogenousForecast& forecast,
                                         const std::vector<ControlInput>& controls,
                                         double tol = 1e-6);

}  // namespace lexinet
