#include "lexinet/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "lexinet/error.hpp"

namespace lexinet {

using json = nlohmann::json;

double Profile::at(double minute) const {
  for (const Piece& p : pieces) {
    if (minute >= p.from_min && minute < p.to_min) return p.veh_per_hour;
  }
  if (!pieces.empty() && minute >= pieces.back().to_min) return pieces.back().veh_per_hour;
  return 0.0;
}

std::size_t Scenario::steps() const {
  return static_cast<std::size_t>(std::llround(duration_min * 60.0 / net.cycle()));
}

ExogenousStep Scenario::exogenous_at(std::size_t step) const {
  ExogenousStep ex = ExogenousStep::zero(net);
  const double minute = static_cast<double>(step) * net.cycle() / 60.0;
  const double per_interval = net.cycle() / 3600.0;
  for (const Profile& p : demands) ex.d[net.link_index(p.link)] = p.at(minute) * per_interval;
  for (const Profile& p : e_in) ex.e_in[net.link_index(p.link)] = p.at(minute) * per_interval;
  for (const Profile& p : e_out) ex.e_out[net.link_index(p.link)] = p.at(minute) * per_interval;
  const auto moves = net.movements();
  for (const TurningOverride& o : turning) {
    if (minute < o.from_min || minute >= o.to_min) continue;
    const std::size_t from = net.link_index(o.from), to = net.link_index(o.to);
    for (std::size_t m = 0; m < moves.size(); ++m) {
      if (moves[m].from == from && moves[m].to == to) ex.ratio[m] = o.ratio;
    }
  }
  return ex;
}

ExogenousForecast Scenario::forecast(std::size_t step, std::size_t k) const {
  ExogenousForecast f;
  for (std::size_t i = 0; i < k; ++i) f.steps.push_back(exogenous_at(step + i));
  return f;
}

std::vector<double> Scenario::fixed_time_greens() const {
  std::vector<double> g(net.num_phases(), 0.0);
  for (std::size_t j = 0; j < net.num_junctions(); ++j) {
    if (net.is_boundary(j)) continue;
    const auto phases = net.junction_phases(j);
    auto plan = fixed_time_plan.find(net.junction(j).id);
    for (std::size_t i = 0; i < phases.size(); ++i) {
      g[phases[i]] = plan != fixed_time_plan.end()
                         ? plan->second[i]
                         : (net.cycle() - net.junction(j).lost_time) / static_cast<double>(phases.size());
    }
  }
  return g;
}

namespace {

class Reader {
 public:
  explicit Reader(std::vector<std::string>& problems) : problems_(problems) {}

  // Every key of `obj` must be listed in `allowed`.
  void keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
      fail(where + " must be an object");
      return;
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items()) {
      if (!ok.count(k)) fail("unknown key '" + k + "' in " + where);
    }
  }

  double number(const json& obj, const char* key, const std::string& where, double fallback, bool required) {
    if (!obj.contains(key)) {
      if (required) fail("missing key '" + std::string(key) + "' in " + where);
      return fallback;
    }
    if (!obj[key].is_number()) {
      fail("key '" + std::string(key) + "' in " + where + " must be a number");
      return fallback;
    }
    return obj[key].get<double>();
  }

  std::string text(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !(obj[key].is_string() || obj[key].is_number_integer())) {
      fail("missing or non-string key '" + std::string(key) + "' in " + where);
      return {};
    }
    return obj[key].is_string() ? obj[key].get<std::string>() : std::to_string(obj[key].get<long long>());
  }

  int integer(const json& obj, const char* key, const std::string& where) {
    if (!obj.contains(key) || !obj[key].is_number_integer()) {
      fail("missing or non-integer key '" + std::string(key) + "' in " + where);
      return 0;
    }
    return obj[key].get<int>();
  }

  const json& array(const json& obj, const char* key, const std::string& where, bool required = true) {
    static const json empty = json::array();
    if (!obj.contains(key)) {
      if (required) fail("missing key '" + std::string(key) + "' in " + where);
      return empty;
    }
    if (!obj[key].is_array()) {
      fail("key '" + std::string(key) + "' in " + where + " must be an array");
      return empty;
    }
    return obj[key];
  }

  void fail(const std::string& msg) { problems_.push_back(msg); }

 private:
  std::vector<std::string>& problems_;
};

std::vector<Profile> read_profiles(Reader& r, const json& list, const std::string& where) {
  std::vector<Profile> out;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string at = where + "[" + std::to_string(i) + "]";
    const json& e = list[i];
    r.keys(e, at, {"link", "pieces"});
    if (!e.is_object()) continue;
    Profile p;
    p.link = r.integer(e, "link", at);
    const json& pieces = r.array(e, "pieces", at);
    for (std::size_t k = 0; k < pieces.size(); ++k) {
      const std::string pat = at + ".pieces[" + std::to_string(k) + "]";
      r.keys(pieces[k], pat, {"from_min", "to_min", "veh_per_hour"});
      if (!pieces[k].is_object()) continue;
      p.pieces.push_back({r.number(pieces[k], "from_min", pat, 0.0, true), r.number(pieces[k], "to_min", pat, 0.0, true),
                          r.number(pieces[k], "veh_per_hour", pat, 0.0, true)});
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    // Report the line of the failing byte.
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw Error(ErrorCode::kParseError, "line " + std::to_string(line) + ": " + e.what());
  }

  std::vector<std::string> problems;
  Reader r(problems);
  r.keys(doc, "scenario",
         {"network", "partition", "horizon_K", "demands", "exogenous", "turning", "noise", "seed", "params",
          "fixed_time_plan", "description"});
  if (!problems.empty() || !doc.contains("network") || !doc["network"].is_object()) {
    if (!doc.is_object() || !doc.contains("network")) problems.push_back("missing key 'network'");
    std::ostringstream os;
    for (const std::string& p : problems) os << "\n  " << p;
    throw Error(ErrorCode::kParseError, os.str());
  }

  Scenario sc;
  if (doc.contains("params")) {
    const json& p = doc["params"];
    r.keys(p, "params", {"alpha", "beta", "theta", "gamma_default", "rho_lp", "rho_qp", "tol", "s_max"});
    sc.params.alpha = r.number(p, "alpha", "params", sc.params.alpha, false);
    sc.params.beta = r.number(p, "beta", "params", sc.params.beta, false);
    sc.params.theta = r.number(p, "theta", "params", sc.params.theta, false);
    sc.params.gamma_default = r.number(p, "gamma_default", "params", sc.params.gamma_default, false);
    sc.params.rho_lp = r.number(p, "rho_lp", "params", sc.params.rho_lp, false);
    sc.params.rho_qp = r.number(p, "rho_qp", "params", sc.params.rho_qp, false);
    sc.params.tol = r.number(p, "tol", "params", sc.params.tol, false);
    sc.params.s_max = static_cast<int>(r.number(p, "s_max", "params", sc.params.s_max, false));
  }

  const json& nj = doc["network"];
  r.keys(nj, "network", {"junctions", "links", "cycle_s"});
  const double cycle = r.number(nj, "cycle_s", "network", 0.0, true);
  std::vector<Junction> junctions;
  const json& jl = r.array(nj, "junctions", "network");
  for (std::size_t i = 0; i < jl.size(); ++i) {
    const std::string at = "network.junctions[" + std::to_string(i) + "]";
    const json& e = jl[i];
    r.keys(e, at, {"id", "kind", "lost_time", "phases"});
    if (!e.is_object()) continue;
    Junction j;
    j.id = r.text(e, "id", at);
    const std::string kind = r.text(e, "kind", at);
    if (kind == "boundary") {
      j.kind = JunctionKind::kBoundary;
    } else if (kind == "internal") {
      j.kind = JunctionKind::kInternal;
    } else {
      r.fail(at + ": kind must be 'boundary' or 'internal'");
    }
    j.lost_time = r.number(e, "lost_time", at, 0.0, j.kind == JunctionKind::kInternal);
    const json& phases = r.array(e, "phases", at, false);
    for (std::size_t k = 0; k < phases.size(); ++k) {
      const std::string pat = at + ".phases[" + std::to_string(k) + "]";
      r.keys(phases[k], pat, {"id", "links"});
      if (!phases[k].is_object()) continue;
      Phase p;
      p.id = r.text(phases[k], "id", pat);
      for (const json& l : r.array(phases[k], "links", pat)) {
        if (l.is_number_integer()) {
          p.permitted_links.push_back(l.get<int>());
        } else {
          r.fail(pat + ": link ids must be integers");
        }
      }
      j.phases.push_back(std::move(p));
    }
    junctions.push_back(std::move(j));
  }

  std::vector<RoadLink> links;
  const json& ll = r.array(nj, "links", "network");
  for (std::size_t i = 0; i < ll.size(); ++i) {
    const std::string at = "network.links[" + std::to_string(i) + "]";
    const json& e = ll[i];
    r.keys(e, at, {"id", "source", "dest", "capacity", "saturation_flow", "gamma", "turn_ratios", "dest_outflow_cap"});
    if (!e.is_object()) continue;
    RoadLink l;
    l.id = r.integer(e, "id", at);
    l.source = r.text(e, "source", at);
    l.dest = r.text(e, "dest", at);
    l.capacity = r.number(e, "capacity", at, 0.0, true);
    l.saturation_flow = r.number(e, "saturation_flow", at, 0.0, true);
    l.gamma = r.number(e, "gamma", at, sc.params.gamma_default, false);
    if (e.contains("turn_ratios")) {
      if (!e["turn_ratios"].is_object()) {
        r.fail(at + ": turn_ratios must be an object");
      } else {
        for (const auto& [k, v] : e["turn_ratios"].items()) {
          try {
            std::size_t used = 0;
            const int to = std::stoi(k, &used);
            if (used != k.size() || !v.is_number()) throw std::invalid_argument(k);
            l.turn_ratios[to] = v.get<double>();
          } catch (const std::exception&) {
            r.fail(at + ": bad turn ratio entry '" + k + "'");
          }
        }
      }
    }
    if (e.contains("dest_outflow_cap")) l.dest_outflow_cap = r.number(e, "dest_outflow_cap", at, 0.0, true);
    links.push_back(std::move(l));
  }
  sc.net = Network(std::move(junctions), std::move(links), cycle);

  if (doc.contains("partition")) {
    const json& p = doc["partition"];
    if (!p.is_object()) {
      r.fail("partition must be an object");
    } else {
      for (const auto& [k, v] : p.items()) {
        if (v.is_number_integer()) {
          sc.assignment[k] = v.get<int>();
        } else {
          r.fail("partition entry '" + k + "' must be an integer agent number");
        }
      }
    }
  } else {
    for (const Junction& j : sc.net.junctions()) sc.assignment[j.id] = 1;
  }

  if (doc.contains("horizon_K")) {
    if (!doc["horizon_K"].is_number_integer() || doc["horizon_K"].get<int>() < 1) {
      r.fail("horizon_K must be a positive integer");
    } else {
      sc.horizon = doc["horizon_K"].get<std::size_t>();
    }
  }
  sc.demands = read_profiles(r, r.array(doc, "demands", "scenario"), "demands");
  if (doc.contains("exogenous")) {
    const json& ex = doc["exogenous"];
    r.keys(ex, "exogenous", {"e_in", "e_out"});
    if (ex.is_object()) {
      sc.e_in = read_profiles(r, r.array(ex, "e_in", "exogenous", false), "exogenous.e_in");
      sc.e_out = read_profiles(r, r.array(ex, "e_out", "exogenous", false), "exogenous.e_out");
    }
  }
  const json& turning = r.array(doc, "turning", "scenario", false);
  for (std::size_t i = 0; i < turning.size(); ++i) {
    const std::string at = "turning[" + std::to_string(i) + "]";
    r.keys(turning[i], at, {"from", "to", "ratio", "from_min", "to_min"});
    if (!turning[i].is_object()) continue;
    sc.turning.push_back({r.integer(turning[i], "from", at), r.integer(turning[i], "to", at),
                          r.number(turning[i], "ratio", at, 0.0, true),
                          r.number(turning[i], "from_min", at, 0.0, false),
                          r.number(turning[i], "to_min", at, 1e300, false)});
  }
  sc.noise = r.number(doc, "noise", "scenario", sc.noise, false);
  if (doc.contains("seed")) {
    if (doc["seed"].is_number_unsigned() || doc["seed"].is_number_integer()) {
      sc.seed = doc["seed"].get<std::uint64_t>();
    } else {
      r.fail("seed must be a non-negative integer");
    }
  }
  if (doc.contains("fixed_time_plan")) {
    const json& plan = doc["fixed_time_plan"];
    if (!plan.is_object()) r.fail("fixed_time_plan must be an object");
    for (const auto& [k, v] : plan.items()) {
      if (!v.is_array()) {
        r.fail("fixed_time_plan entry '" + k + "' must be an array of seconds");
        continue;
      }
      std::vector<double> greens;
      for (const json& g : v) greens.push_back(g.is_number() ? g.get<double>() : -1.0);
      sc.fixed_time_plan[k] = std::move(greens);
    }
  }

  if (!problems.empty()) {
    std::ostringstream os;
    for (const std::string& p : problems) os << "\n  " << p;
    throw Error(ErrorCode::kParseError, os.str());
  }

  // Semantic checks.
  std::vector<std::string> issues;
  const ValidationReport report = validate_network(sc.net);
  for (const Issue& i : report.issues) issues.push_back(i.subject + ": " + i.message);

  auto check_profiles = [&](const std::vector<Profile>& list, const std::string& what, bool sources_only) {
    for (const Profile& p : list) {
      const std::size_t li = sc.net.link_index(p.link);
      if (li == kNoIndex) {
        issues.push_back(what + " refers to unknown link " + std::to_string(p.link));
        continue;
      }
      if (sources_only && !sc.net.is_source_link(li)) {
        issues.push_back(what + " on link " + std::to_string(p.link) + " which is not a source link");
      }
      double expect = 0.0;
      for (const Piece& piece : p.pieces) {
        if (std::abs(piece.from_min - expect) > 1e-9 || piece.to_min <= piece.from_min) {
          issues.push_back(what + " pieces of link " + std::to_string(p.link) + " are not contiguous from minute 0");
          break;
        }
        if (piece.veh_per_hour < 0.0) {
          issues.push_back(what + " of link " + std::to_string(p.link) + " is negative");
        }
        expect = piece.to_min;
      }
    }
  };
  check_profiles(sc.demands, "demand", true);
  check_profiles(sc.e_in, "e_in", false);
  check_profiles(sc.e_out, "e_out", false);

  for (const Profile& p : sc.demands) {
    if (!p.pieces.empty()) sc.duration_min = std::max(sc.duration_min, p.pieces.back().to_min);
  }
  for (const Profile& p : sc.demands) {
    if (p.pieces.empty() || p.pieces.back().to_min + 1e-9 < sc.duration_min) {
      issues.push_back("demand pieces of link " + std::to_string(p.link) + " do not cover the full run");
    }
  }
  if (sc.demands.empty()) issues.push_back("at least one demand profile is required");

  std::set<double> breakpoints{0.0};
  for (const TurningOverride& o : sc.turning) {
    const std::size_t from = sc.net.link_index(o.from), to = sc.net.link_index(o.to);
    if (from == kNoIndex || to == kNoIndex || !sc.net.link(from).turn_ratios.count(o.to)) {
      issues.push_back("turning override " + std::to_string(o.from) + "->" + std::to_string(o.to) +
                       " is not an allowed movement");
    }
    if (o.ratio < 0.0) issues.push_back("turning override ratio is negative");
    breakpoints.insert(o.from_min);
    if (o.to_min < 1e299) breakpoints.insert(o.to_min);
  }
  if (report.ok() && issues.empty()) {
    for (double minute : breakpoints) {
      const std::size_t step = static_cast<std::size_t>(std::ceil(minute * 60.0 / sc.net.cycle() - 1e-9));
      const ExogenousStep ex = sc.exogenous_at(step);
      for (std::size_t z = 0; z < sc.net.num_links(); ++z) {
        double sum = 0.0;
        for (std::size_t m : sc.net.downstream(z)) sum += ex.ratio[m];
        if (!sc.net.downstream(z).empty() && std::abs(sum - 1.0) > 1e-9) {
          std::ostringstream os;
          os << "link " << sc.net.link(z).id << ": turning ratios sum to " << sum << " from minute " << minute;
          issues.push_back(os.str());
        }
      }
    }
  }

  for (const auto& [jid, greens] : sc.fixed_time_plan) {
    const std::size_t j = sc.net.junction_index(jid);
    if (j == kNoIndex || sc.net.is_boundary(j)) {
      issues.push_back("fixed_time_plan names unknown or boundary junction " + jid);
      continue;
    }
    double sum = 0.0;
    bool negative = false;
    for (double g : greens) {
      sum += g;
      negative = negative || g < 0.0;
    }
    if (greens.size() != sc.net.junction_phases(j).size() || negative ||
        sum > sc.net.cycle() - sc.net.junction(j).lost_time + 1e-9) {
      issues.push_back("fixed_time_plan of junction " + jid + " violates the signal budget");
    }
  }

  const ScenarioParams& p = sc.params;
  if (!(p.alpha >= 0.0) || !(p.beta >= 0.0) || !(p.theta > 0.0) || !(p.rho_lp > 0.0) || !(p.rho_qp > 0.0) ||
      !(p.tol > 0.0) || p.s_max < 1 || !(p.gamma_default > 0.0 && p.gamma_default <= 1.0)) {
    issues.push_back("params out of range");
  }
  if (!(sc.noise >= 0.0 && sc.noise < 1.0)) issues.push_back("noise must lie in [0, 1)");

  if (issues.empty()) {
    try {
      sc.partition = build_partition(sc.net, sc.assignment);
    } catch (const Error& e) {
      issues.push_back(e.what());
    }
  }
  if (!issues.empty()) {
    std::ostringstream os;
    for (const std::string& i : issues) os << "\n  " << i;
    throw Error(ErrorCode::kValidationError, os.str());
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

}  // namespace lexinet
