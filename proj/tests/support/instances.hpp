#pragma once

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lexinet/dynamics.hpp"
#include "lexinet/network.hpp"

namespace lexinet::testing {

// B1 -> J1 -> B2 with one phase on link 1.
inline Network chain_network(double capacity = 50.0, double sat = 0.5, double gamma = 0.5, double outflow = 30.0) {
  std::vector<Junction> js = {
      {"B1", JunctionKind::kBoundary, 0.0, {}},
      {"B2", JunctionKind::kBoundary, 0.0, {}},
      {"J1", JunctionKind::kInternal, 4.0, {{"p1", {1}}}},
  };
  RoadLink in{1, "B1", "J1", capacity, sat, gamma, {{2, 1.0}}, std::nullopt};
  RoadLink out{2, "J1", "B2", capacity, sat, gamma, {}, outflow};
  return Network(js, {in, out}, 60.0);
}

struct Instance {
  Network net;
  std::map<JunctionId, int> assignment;
  TrafficState state;
  ExogenousForecast forecast;
};

// Random feasible instance: 2..6 internal junctions on a random tree (plus an
// optional chord), one boundary junction per internal junction, random
// ratios and demands. n(0) <= gamma * nbar and e = 0 keep zero control
// feasible; total queues bound the first stage from below.
inline Instance random_instance(std::mt19937_64& rng, std::size_t horizon, int internal = 0, int agents = 0) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const int m = internal > 0 ? internal : pick(2, 6);
  std::vector<std::pair<int, int>> edges;
  for (int j = 1; j < m; ++j) edges.emplace_back(pick(0, j - 1), j);
  if (m >= 3 && u01(rng) < 0.5) {
    int a = pick(0, m - 1), b = pick(0, m - 1);
    bool dup = a == b;
    for (auto [x, y] : edges) dup = dup || (x == std::min(a, b) && y == std::max(a, b));
    if (!dup) edges.emplace_back(std::min(a, b), std::max(a, b));
  }

  struct Draft {
    int id;
    std::string src, dst;
  };
  std::vector<Draft> drafts;
  int next = 1;
  auto jname = [](int j) { return "J" + std::to_string(j + 1); };
  for (auto [a, b] : edges) {
    drafts.push_back({next++, jname(a), jname(b)});
    drafts.push_back({next++, jname(b), jname(a)});
  }
  for (int j = 0; j < m; ++j) {
    const std::string b = "B" + std::to_string(j + 1);
    drafts.push_back({next++, b, jname(j)});
    drafts.push_back({next++, jname(j), b});
  }

  std::vector<RoadLink> links;
  for (const Draft& d : drafts) {
    RoadLink l;
    l.id = d.id;
    l.source = d.src;
    l.dest = d.dst;
    l.capacity = uni(30.0, 80.0);
    l.saturation_flow = uni(0.5, 2.0);
    l.gamma = uni(0.4, 1.0);
    if (d.dst[0] == 'B') {
      l.dest_outflow_cap = uni(20.0, 60.0);
    } else {
      std::vector<int> outs;
      for (const Draft& o : drafts) {
        if (o.src == d.dst && o.dst != d.src) outs.push_back(o.id);
      }
      if (outs.empty()) {
        for (const Draft& o : drafts) {
          if (o.src == d.dst) outs.push_back(o.id);
        }
      }
      std::vector<double> w;
      double sum = 0.0;
      for (std::size_t i = 0; i < outs.size(); ++i) {
        w.push_back(uni(0.1, 1.0));
        sum += w.back();
      }
      double acc = 0.0;
      for (std::size_t i = 0; i + 1 < outs.size(); ++i) {
        l.turn_ratios[outs[i]] = w[i] / sum;
        acc += w[i] / sum;
      }
      l.turn_ratios[outs.back()] = 1.0 - acc;
    }
    links.push_back(l);
  }

  std::vector<Junction> junctions;
  for (int j = 0; j < m; ++j) {
    Junction jn{jname(j), JunctionKind::kInternal, 4.0, {}};
    std::vector<int> incoming;
    for (const Draft& d : drafts) {
      if (d.dst == jname(j)) incoming.push_back(d.id);
    }
    const int phases = std::min<int>(pick(1, 3), static_cast<int>(incoming.size()));
    std::vector<std::vector<int>> sets(static_cast<std::size_t>(phases));
    for (std::size_t i = 0; i < incoming.size(); ++i) {
      // Every phase gets one link first, the rest land randomly.
      const std::size_t p = i < sets.size() ? i : static_cast<std::size_t>(pick(0, phases - 1));
      sets[p].push_back(incoming[i]);
    }
    for (int p = 0; p < phases; ++p) jn.phases.push_back({"p" + std::to_string(p + 1), sets[static_cast<std::size_t>(p)]});
    junctions.push_back(jn);
    junctions.push_back({"B" + std::to_string(j + 1), JunctionKind::kBoundary, 0.0, {}});
  }

  Instance inst;
  inst.net = Network(junctions, links, 60.0);
  const int n_agents = agents > 0 ? agents : pick(1, std::min(m, 3));
  std::vector<int> owner(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) owner[static_cast<std::size_t>(j)] = j < n_agents ? j + 1 : pick(1, n_agents);
  for (int j = 0; j < m; ++j) {
    inst.assignment[jname(j)] = owner[static_cast<std::size_t>(j)];
    inst.assignment["B" + std::to_string(j + 1)] = owner[static_cast<std::size_t>(j)];
  }

  const Network& net = inst.net;
  inst.state = TrafficState::zero(net);
  for (std::size_t z = 0; z < net.num_links(); ++z) {
    inst.state.n[z] = uni(0.0, net.link(z).gamma * net.link(z).capacity);
    if (net.is_source_link(z)) inst.state.q[z] = uni(0.0, 20.0);
  }
  for (std::size_t k = 0; k < horizon; ++k) {
    ExogenousStep ex = ExogenousStep::zero(net);
    for (std::size_t z = 0; z < net.num_links(); ++z) {
      if (net.is_source_link(z)) ex.d[z] = uni(0.0, 40.0);
    }
    inst.forecast.steps.push_back(ex);
  }
  return inst;
}

}  // namespace lexinet::testing
