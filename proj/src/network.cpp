#include "lexinet/network.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

#include "lexinet/error.hpp"

namespace lexinet {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingJunction: return "MissingJunction";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kInfeasibleDetected: return "InfeasibleDetected";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kNegativeControl: return "NegativeControl";
    case ErrorCode::kSingularKkt: return "SingularKKT";
    case ErrorCode::kMissingMessage: return "MissingMessage";
    case ErrorCode::kTransportFailure: return "TransportFailure";
    case ErrorCode::kInconsistentProblem: return "InconsistentProblem";
    case ErrorCode::kInfeasible: return "Infeasible";
    case ErrorCode::kUnbounded: return "Unbounded";
    case ErrorCode::kMaxIterations: return "MaxIterations";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kValidationError: return "ValidationError";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kUnsupported: return "Unsupported";
  }
  return "Unknown";
}

Network::Network(std::vector<Junction> junctions, std::vector<RoadLink> links, double cycle)
    : junctions_(std::move(junctions)), links_(std::move(links)), cycle_(cycle) {
  std::stable_sort(junctions_.begin(), junctions_.end(),
                   [](const Junction& a, const Junction& b) { return a.id < b.id; });
  std::stable_sort(links_.begin(), links_.end(),
                   [](const RoadLink& a, const RoadLink& b) { return a.id < b.id; });
  for (std::size_t j = 0; j < junctions_.size(); ++j) junction_lookup_.emplace(junctions_[j].id, j);
  for (std::size_t i = 0; i < links_.size(); ++i) link_lookup_.emplace(links_[i].id, i);

  const std::size_t nl = links_.size();
  const std::size_t nj = junctions_.size();
  source_.assign(nl, kNoIndex);
  dest_.assign(nl, kNoIndex);
  upstream_.assign(nl, {});
  downstream_.assign(nl, {});
  incoming_.assign(nj, {});
  outgoing_.assign(nj, {});
  junction_phases_.assign(nj, {});
  link_phases_.assign(nl, {});

  for (std::size_t i = 0; i < nl; ++i) {
    source_[i] = junction_index(links_[i].source);
    dest_[i] = junction_index(links_[i].dest);
    if (source_[i] != kNoIndex) outgoing_[source_[i]].push_back(i);
    if (dest_[i] != kNoIndex) incoming_[dest_[i]].push_back(i);
  }

  for (std::size_t i = 0; i < nl; ++i) {
    for (const auto& [to_id, ratio] : links_[i].turn_ratios) {
      const std::size_t to = link_index(to_id);
      if (to == kNoIndex) {
        unresolved_.push_back("link " + std::to_string(links_[i].id) + " turns into unknown link " +
                              std::to_string(to_id));
        continue;
      }
      downstream_[i].push_back(movements_.size());
      upstream_[to].push_back(movements_.size());
      movements_.push_back({i, to, ratio});
    }
  }

  for (std::size_t j = 0; j < nj; ++j) {
    for (const Phase& p : junctions_[j].phases) {
      PhaseRef ref{j, p.id, {}};
      for (LinkId id : p.permitted_links) {
        const std::size_t li = link_index(id);
        if (li == kNoIndex) {
          unresolved_.push_back("phase " + junctions_[j].id + "/" + p.id + " names unknown link " +
                                std::to_string(id));
          continue;
        }
        ref.links.push_back(li);
        link_phases_[li].push_back(phases_.size());
      }
      junction_phases_[j].push_back(phases_.size());
      phases_.push_back(std::move(ref));
    }
  }
}

std::size_t Network::link_index(LinkId id) const {
  auto it = link_lookup_.find(id);
  return it == link_lookup_.end() ? kNoIndex : it->second;
}

std::size_t Network::junction_index(const JunctionId& id) const {
  auto it = junction_lookup_.find(id);
  return it == junction_lookup_.end() ? kNoIndex : it->second;
}

std::size_t Network::phase_index(const JunctionId& junction, const std::string& phase) const {
  const std::size_t j = junction_index(junction);
  if (j == kNoIndex) return kNoIndex;
  for (std::size_t p : junction_phases_[j]) {
    if (phases_[p].id == phase) return p;
  }
  return kNoIndex;
}

bool Network::is_source_link(std::size_t link) const {
  return source_[link] != kNoIndex && is_boundary(source_[link]);
}

bool Network::is_destination_link(std::size_t link) const {
  return dest_[link] != kNoIndex && is_boundary(dest_[link]);
}

bool ValidationReport::mentions(IssueKind kind, const std::string& subject) const {
  return std::any_of(issues.begin(), issues.end(),
                     [&](const Issue& i) { return i.kind == kind && i.subject == subject; });
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const Issue& i : issues) os << i.subject << ": " << i.message << "\n";
  return os.str();
}

namespace {

std::string link_subject(const RoadLink& l) { return "link " + std::to_string(l.id); }
std::string junction_subject(const Junction& j) { return "junction " + j.id; }

void check_duplicates(const Network& net, ValidationReport& report) {
  for (std::size_t i = 1; i < net.num_links(); ++i) {
    if (net.link(i).id == net.link(i - 1).id) {
      report.issues.push_back({IssueKind::kDuplicateId, link_subject(net.link(i)), "duplicate link id"});
    }
  }
  for (std::size_t j = 1; j < net.num_junctions(); ++j) {
    if (net.junction(j).id == net.junction(j - 1).id) {
      report.issues.push_back(
          {IssueKind::kDuplicateId, junction_subject(net.junction(j)), "duplicate junction id"});
    }
  }
}

void check_links(const Network& net, ValidationReport& report) {
  for (std::size_t i = 0; i < net.num_links(); ++i) {
    const RoadLink& l = net.link(i);
    const std::string subject = link_subject(l);
    if (net.source_of(i) == kNoIndex || net.dest_of(i) == kNoIndex) {
      report.issues.push_back({IssueKind::kDanglingEndpoint, subject,
                               "endpoint junction does not exist (" + l.source + " -> " + l.dest + ")"});
      continue;
    }
    if (!(l.capacity > 0.0)) {
      report.issues.push_back({IssueKind::kBadLinkParameter, subject, "capacity must be positive"});
    }
    if (!(l.saturation_flow > 0.0)) {
      report.issues.push_back({IssueKind::kBadLinkParameter, subject, "saturation flow must be positive"});
    }
    if (!(l.gamma > 0.0 && l.gamma <= 1.0)) {
      report.issues.push_back({IssueKind::kBadLinkParameter, subject, "gamma must lie in (0, 1]"});
    }

    const bool to_boundary = net.is_destination_link(i);
    double sum = 0.0;
    for (std::size_t m : net.downstream(i)) {
      const Movement& mv = net.movements()[m];
      sum += mv.ratio;
      if (mv.ratio < 0.0) {
        report.issues.push_back({IssueKind::kBadTurnRatio, subject, "negative turn ratio"});
      }
      if (net.source_of(mv.to) != net.dest_of(i)) {
        report.issues.push_back({IssueKind::kBadTurnRatio, subject,
                                 "turn into link " + std::to_string(net.link(mv.to).id) +
                                     " which does not leave " + l.dest});
      }
    }
    if (to_boundary && !net.downstream(i).empty()) {
      report.issues.push_back(
          {IssueKind::kBadTurnRatio, subject, "destination link must not have downstream neighbours"});
    }
    if (!to_boundary) {
      if (net.downstream(i).empty()) {
        report.issues.push_back({IssueKind::kRatioSum, subject, "no downstream neighbours"});
      } else if (std::abs(sum - 1.0) > 1e-9) {
        std::ostringstream os;
        os << "turn ratios sum to " << sum << ", expected 1";
        report.issues.push_back({IssueKind::kRatioSum, subject, os.str()});
      }
    }
    if (to_boundary != l.dest_outflow_cap.has_value()) {
      report.issues.push_back({IssueKind::kOutflowCap, subject,
                               to_boundary ? "destination link needs an outflow cap"
                                           : "outflow cap only allowed on destination links"});
    } else if (l.dest_outflow_cap && *l.dest_outflow_cap < 0.0) {
      report.issues.push_back({IssueKind::kOutflowCap, subject, "outflow cap must be non-negative"});
    }
  }
}

void check_junctions(const Network& net, ValidationReport& report) {
  for (std::size_t j = 0; j < net.num_junctions(); ++j) {
    const Junction& jn = net.junction(j);
    const std::string subject = junction_subject(jn);
    if (jn.kind == JunctionKind::kBoundary) {
      if (!jn.phases.empty()) {
        report.issues.push_back({IssueKind::kBadJunction, subject, "boundary junction with phases"});
      }
      continue;
    }
    if (jn.phases.empty()) {
      report.issues.push_back({IssueKind::kBadJunction, subject, "internal junction without phases"});
    }
    if (!(jn.lost_time >= 0.0 && jn.lost_time < net.cycle())) {
      report.issues.push_back({IssueKind::kBadJunction, subject, "lost time must lie in [0, cycle)"});
    }
    for (std::size_t p : net.junction_phases(j)) {
      const PhaseRef& ph = net.phases()[p];
      if (ph.links.empty()) {
        report.issues.push_back({IssueKind::kOrphanPhase, subject, "phase " + ph.id + " permits no link"});
      }
      for (std::size_t li : ph.links) {
        if (net.dest_of(li) != j) {
          report.issues.push_back({IssueKind::kOrphanPhase, subject,
                                   "phase " + ph.id + " permits link " + std::to_string(net.link(li).id) +
                                       " which does not enter this junction"});
        }
      }
    }
    for (std::size_t li : net.incoming(j)) {
      if (net.link_phases(li).empty()) {
        report.issues.push_back(
            {IssueKind::kUnphasedLink, link_subject(net.link(li)), "incoming link belongs to no phase"});
      }
    }
  }
}

void check_reachability(const Network& net, ValidationReport& report) {
  const std::size_t nl = net.num_links();
  std::vector<char> fwd(nl, 0), bwd(nl, 0);
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < nl; ++i) {
    if (net.source_of(i) != kNoIndex && net.is_source_link(i)) {
      fwd[i] = 1;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const std::size_t z = queue.front();
    queue.pop_front();
    for (std::size_t m : net.downstream(z)) {
      const std::size_t w = net.movements()[m].to;
      if (!fwd[w]) {
        fwd[w] = 1;
        queue.push_back(w);
      }
    }
  }
  for (std::size_t i = 0; i < nl; ++i) {
    if (net.dest_of(i) != kNoIndex && net.is_destination_link(i)) {
      bwd[i] = 1;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    const std::size_t z = queue.front();
    queue.pop_front();
    for (std::size_t m : net.upstream(z)) {
      const std::size_t w = net.movements()[m].from;
      if (!bwd[w]) {
        bwd[w] = 1;
        queue.push_back(w);
      }
    }
  }
  for (std::size_t i = 0; i < nl; ++i) {
    if (!fwd[i]) {
      report.issues.push_back(
          {IssueKind::kUnreachable, link_subject(net.link(i)), "not reachable from any source link"});
    }
    if (!bwd[i]) {
      report.issues.push_back(
          {IssueKind::kUnreachable, link_subject(net.link(i)), "cannot reach any destination link"});
    }
  }
}

}  // namespace

ValidationReport validate_network(const Network& net) {
  ValidationReport report;
  if (!(net.cycle() > 0.0)) report.issues.push_back({IssueKind::kBadCycle, "network", "cycle must be positive"});
  for (const std::string& u : net.unresolved()) {
    report.issues.push_back({IssueKind::kDanglingEndpoint, "network", u});
  }
  check_duplicates(net, report);
  check_links(net, report);
  check_junctions(net, report);
  check_reachability(net, report);
  return report;
}

const std::vector<std::size_t>& Partition::cross_links(std::size_t i, std::size_t j) const {
  return cross_[i][j];
}

bool Partition::are_neighbors(std::size_t i, std::size_t j) const {
  const auto& n = agents_[i].neighbors;
  return std::binary_search(n.begin(), n.end(), j);
}

Partition build_partition(const Network& net, const std::map<JunctionId, int>& assignment) {
  Partition part;
  part.assignment_.assign(net.num_junctions(), kNoIndex);
  std::set<int> numbers;
  for (std::size_t j = 0; j < net.num_junctions(); ++j) {
    auto it = assignment.find(net.junction(j).id);
    if (it == assignment.end()) {
      throw Error(ErrorCode::kMissingJunction, "junction " + net.junction(j).id + " is not assigned");
    }
    numbers.insert(it->second);
  }
  for (const auto& [id, agent] : assignment) {
    if (net.junction_index(id) == kNoIndex) {
      throw Error(ErrorCode::kValidationError, "assignment names unknown junction " + id);
    }
  }
  const int count = static_cast<int>(numbers.size());
  if (numbers.empty() || *numbers.begin() != 1 || *numbers.rbegin() != count) {
    throw Error(ErrorCode::kValidationError, "agent numbers must be dense 1..N");
  }

  const std::size_t n = static_cast<std::size_t>(count);
  part.agents_.assign(n, {});
  part.cross_.assign(n, std::vector<std::vector<std::size_t>>(n));
  for (std::size_t j = 0; j < net.num_junctions(); ++j) {
    const std::size_t a = static_cast<std::size_t>(assignment.at(net.junction(j).id) - 1);
    part.assignment_[j] = a;
    auto& agent = part.agents_[a];
    agent.junctions.push_back(j);
    (net.is_boundary(j) ? agent.boundary : agent.internal).push_back(j);
  }

  part.link_source_agent_.assign(net.num_links(), kNoIndex);
  part.link_dest_agent_.assign(net.num_links(), kNoIndex);
  for (std::size_t z = 0; z < net.num_links(); ++z) {
    const std::size_t si = part.assignment_[net.source_of(z)];
    const std::size_t di = part.assignment_[net.dest_of(z)];
    part.link_source_agent_[z] = si;
    part.link_dest_agent_[z] = di;
    if (si == di) {
      part.agents_[si].links.push_back(z);
    } else {
      part.cross_[si][di].push_back(z);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && (!part.cross_[i][j].empty() || !part.cross_[j][i].empty())) {
        part.agents_[i].neighbors.push_back(j);
      }
    }
  }
  return part;
}

}  // namespace lexinet
