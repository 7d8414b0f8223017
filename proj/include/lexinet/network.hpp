#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace lexinet {

using LinkId = int;
using JunctionId = std::string;

inline constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

enum class JunctionKind { kBoundary, kInternal };

struct Phase {
  std::string id;
  std::vector<LinkId> permitted_links;
};

struct Junction {
  JunctionId id;
  JunctionKind kind = JunctionKind::kInternal;
  double lost_time = 0.0;     // seconds, internal only
  std::vector<Phase> phases;  // internal only, signal order
};

struct RoadLink {
  LinkId id = 0;
  JunctionId source;
  JunctionId dest;
  double capacity = 0.0;         // vehicles
  double saturation_flow = 0.0;  // veh/second, lanes aggregated
  double gamma = 1.0;
  std::map<LinkId, double> turn_ratios;    // downstream link -> ratio
  std::optional<double> dest_outflow_cap;  // veh/interval, destination links only
};

// Allowed movement z -> w through junction tau(z) = sigma(w).
struct Movement {
  std::size_t from = kNoIndex;
  std::size_t to = kNoIndex;
  double ratio = 0.0;
};

// A phase flattened into the network-wide phase list.
struct PhaseRef {
  std::size_t junction = kNoIndex;
  std::string id;
  std::vector<std::size_t> links;  // link indices
};

// Immutable directed graph of junctions and road links. Links and junctions
// are stored sorted by id; every index-based accessor refers to that order.
// Construction never throws on modelling errors; call validate_network().
class Network {
 public:
  Network() = default;
  Network(std::vector<Junction> junctions, std::vector<RoadLink> links, double cycle);

  double cycle() const { return cycle_; }

  std::size_t num_links() const { return links_.size(); }
  std::size_t num_junctions() const { return junctions_.size(); }
  std::size_t num_phases() const { return phases_.size(); }

  const RoadLink& link(std::size_t i) const { return links_[i]; }
  const Junction& junction(std::size_t j) const { return junctions_[j]; }
  std::span<const RoadLink> links() const { return links_; }
  std::span<const Junction> junctions() const { return junctions_; }

  std::size_t link_index(LinkId id) const;
  std::size_t junction_index(const JunctionId& id) const;

  std::size_t source_of(std::size_t link) const { return source_[link]; }
  std::size_t dest_of(std::size_t link) const { return dest_[link]; }

  bool is_boundary(std::size_t junction) const {
    return junctions_[junction].kind == JunctionKind::kBoundary;
  }
  // sigma(z) is a boundary junction.
  bool is_source_link(std::size_t link) const;
  // tau(z) is a boundary junction.
  bool is_destination_link(std::size_t link) const;

  std::span<const Movement> movements() const { return movements_; }
  // Movement indices w -> z with z == link (N_z^+).
  std::span<const std::size_t> upstream(std::size_t link) const { return upstream_[link]; }
  // Movement indices z -> w with z == link (N_z^-).
  std::span<const std::size_t> downstream(std::size_t link) const { return downstream_[link]; }

  std::span<const std::size_t> incoming(std::size_t junction) const { return incoming_[junction]; }
  std::span<const std::size_t> outgoing(std::size_t junction) const { return outgoing_[junction]; }

  std::span<const PhaseRef> phases() const { return phases_; }
  std::span<const std::size_t> junction_phases(std::size_t junction) const {
    return junction_phases_[junction];
  }
  // P_z: phases granting right of way to the link.
  std::span<const std::size_t> link_phases(std::size_t link) const { return link_phases_[link]; }
  std::size_t phase_index(const JunctionId& junction, const std::string& phase) const;

  // Turn-ratio keys or phase members that did not resolve to a link.
  const std::vector<std::string>& unresolved() const { return unresolved_; }

 private:
  std::vector<Junction> junctions_;
  std::vector<RoadLink> links_;
  double cycle_ = 0.0;

  std::map<LinkId, std::size_t> link_lookup_;
  std::map<JunctionId, std::size_t> junction_lookup_;
  std::vector<std::size_t> source_;
  std::vector<std::size_t> dest_;
  std::vector<Movement> movements_;
  std::vector<std::vector<std::size_t>> upstream_;
  std::vector<std::vector<std::size_t>> downstream_;
  std::vector<std::vector<std::size_t>> incoming_;
  std::vector<std::vector<std::size_t>> outgoing_;
  std::vector<PhaseRef> phases_;
  std::vector<std::vector<std::size_t>> junction_phases_;
  std::vector<std::vector<std::size_t>> link_phases_;
  std::vector<std::string> unresolved_;
};

enum class IssueKind {
  kDuplicateId,
  kDanglingEndpoint,
  kBadLinkParameter,
  kBadTurnRatio,
  kRatioSum,
  kOutflowCap,
  kBadJunction,
  kOrphanPhase,
  kUnphasedLink,
  kUnreachable,
  kBadCycle,
};

struct Issue {
  IssueKind kind;
  std::string subject;  // "link 7", "junction J3", ...
  std::string message;
};

struct ValidationReport {
  std::vector<Issue> issues;
  bool ok() const { return issues.empty(); }
  bool mentions(IssueKind kind, const std::string& subject) const;
  std::string to_string() const;
};

ValidationReport validate_network(const Network& net);

// Decomposition into agent subnetworks. Agents are addressed by a dense
// zero-based index here; files and logs use 1..N.
class Partition {
 public:
  struct Agent {
    std::vector<std::size_t> junctions;  // J_i
    std::vector<std::size_t> boundary;   // J_i^B
    std::vector<std::size_t> internal;   // J_i^I
    std::vector<std::size_t> links;      // R_i
    std::vector<std::size_t> neighbors;  // N_{S_i}, sorted
  };

  std::size_t num_agents() const { return agents_.size(); }
  const Agent& agent(std::size_t i) const { return agents_[i]; }
  std::size_t agent_of(std::size_t junction) const { return assignment_[junction]; }
  std::size_t source_agent(std::size_t link) const { return link_source_agent_[link]; }
  std::size_t dest_agent(std::size_t link) const { return link_dest_agent_[link]; }
  // R_ij: links from a junction of agent i to a junction of agent j (i != j).
  const std::vector<std::size_t>& cross_links(std::size_t i, std::size_t j) const;
  bool are_neighbors(std::size_t i, std::size_t j) const;

 private:
  friend Partition build_partition(const Network&, const std::map<JunctionId, int>&);

  std::vector<std::size_t> assignment_;
  std::vector<std::size_t> link_source_agent_;
  std::vector<std::size_t> link_dest_agent_;
  std::vector<Agent> agents_;
  std::vector<std::vector<std::vector<std::size_t>>> cross_;
};

// `assignment` maps junction id -> agent number in 1..N (dense).
Partition build_partition(const Network& net, const std::map<JunctionId, int>& assignment);

}  // namespace lexinet
