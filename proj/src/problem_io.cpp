#include "lexinet/problem_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lexinet/error.hpp"

namespace lexinet {

using json = nlohmann::json;

namespace {

json dense_rows(const SparseMatrix& m) {
  json rows = json::array();
  const Eigen::MatrixXd d(m);
  for (Eigen::Index r = 0; r < d.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < d.cols(); ++c) row.push_back(d(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vec(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

SparseMatrix to_sparse(const json& rows, Eigen::Index cols, const char* what) {
  if (!rows.is_array()) throw Error(ErrorCode::kParseError, std::string(what) + " must be an array of rows");
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const json& row = rows[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw Error(ErrorCode::kParseError, std::string(what) + " row " + std::to_string(r) + " has the wrong length");
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      const double x = row[c].get<double>();
      if (x != 0.0) t.emplace_back(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c), x);
    }
  }
  SparseMatrix m(static_cast<Eigen::Index>(rows.size()), cols);
  m.setFromTriplets(t.begin(), t.end());
  return m;
}

Eigen::VectorXd to_vec(const json& j, Eigen::Index size, const char* what) {
  if (!j.is_array() || (size >= 0 && static_cast<Eigen::Index>(j.size()) != size)) {
    throw Error(ErrorCode::kParseError, std::string(what) + " has the wrong length");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

std::vector<std::string> row_names(const Network& net, const std::vector<RowLabel>& rows) {
  std::vector<std::string> out;
  for (const RowLabel& r : rows) out.push_back(r.to_string(net));
  return out;
}

}  // namespace

std::string dump_problem(const Network& net, const LocalProblem& p) {
  json doc;
  doc["agent"] = p.agent + 1;
  json layout = json::array();
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const VariableKey& k = p.layout.key(i);
    layout.push_back({{"label", p.layout.label(net, i)},
                      {"quantity", to_string(k.quantity)},
                      {"id", k.id},
                      {"k", k.k}});
  }
  doc["horizon"] = p.layout.horizon();
  doc["variables"] = layout;
  doc["W"] = dense_rows(p.W);
  doc["w"] = vec(p.w);
  doc["U"] = dense_rows(p.U);
  doc["u"] = vec(p.u);
  doc["eq_rows"] = row_names(net, p.eq_rows);
  doc["V"] = dense_rows(p.V);
  doc["v"] = vec(p.v);
  doc["ineq_rows"] = row_names(net, p.ineq_rows);
  json couplings = json::array();
  for (const Coupling& c : p.couplings) {
    couplings.push_back({{"neighbor", c.neighbor + 1}, {"matrix", dense_rows(c.matrix)}, {"rows", row_names(net, c.rows)}});
  }
  doc["couplings"] = couplings;
  doc["c"] = vec(p.c);
  doc["cost_constant"] = p.cost_constant;
  return doc.dump(1);
}

LocalProblem parse_problem(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
  try {
    LocalProblem p;
    p.agent = doc.at("agent").get<std::size_t>() - 1;
    p.layout = VariableLayout(doc.at("horizon").get<std::size_t>());
    for (const json& v : doc.at("variables")) {
      const std::string q = v.at("quantity").get<std::string>();
      Quantity quantity = Quantity::kVirtual;
      bool known = false;
      for (Quantity cand : {Quantity::kN, Quantity::kQ, Quantity::kFd, Quantity::kFu, Quantity::kG, Quantity::kVirtual}) {
        if (q == to_string(cand)) {
          quantity = cand;
          known = true;
        }
      }
      if (!known) throw Error(ErrorCode::kParseError, "unknown quantity '" + q + "'");
      p.layout.push({quantity, v.at("id").get<std::size_t>(), v.at("k").get<std::size_t>()});
    }
    const auto n = static_cast<Eigen::Index>(p.dim());
    p.W = to_sparse(doc.at("W"), n, "W");
    if (p.W.rows() != n) throw Error(ErrorCode::kParseError, "W must be square");
    p.w = to_vec(doc.at("w"), n, "w");
    p.U = to_sparse(doc.at("U"), n, "U");
    p.u = to_vec(doc.at("u"), p.U.rows(), "u");
    p.eq_rows.resize(static_cast<std::size_t>(p.U.rows()), RowLabel{RowFamily::kConservation});
    p.V = to_sparse(doc.at("V"), n, "V");
    p.v = to_vec(doc.at("v"), p.V.rows(), "v");
    p.ineq_rows.resize(static_cast<std::size_t>(p.V.rows()), RowLabel{RowFamily::kInequality});
    for (const json& c : doc.at("couplings")) {
      Coupling cp;
      cp.neighbor = c.at("neighbor").get<std::size_t>() - 1;
      cp.matrix = to_sparse(c.at("matrix"), n, "coupling");
      cp.rows.resize(static_cast<std::size_t>(cp.matrix.rows()), RowLabel{RowFamily::kCouplingN});
      p.couplings.push_back(std::move(cp));
    }
    p.c = to_vec(doc.at("c"), n, "c");
    p.cost_constant = doc.at("cost_constant").get<double>();
    return p;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

void write_problems(const Network& net, const std::vector<LocalProblem>& problems, const std::string& dir,
                    const std::string& stage) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create " + dir + ": " + ec.message());
  for (const LocalProblem& p : problems) {
    const std::string path =
        (std::filesystem::path(dir) / (stage + "_agent" + std::to_string(p.agent + 1) + ".json")).string();
    std::ofstream out(path);
    out << dump_problem(net, p) << "\n";
    if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path);
  }
}

std::vector<LocalProblem> read_problems(const std::string& dir, const std::string& stage) {
  std::vector<LocalProblem> out;
  for (std::size_t i = 1;; ++i) {
    const std::filesystem::path path = std::filesystem::path(dir) / (stage + "_agent" + std::to_string(i) + ".json");
    std::ifstream in(path);
    if (!in) break;
    std::ostringstream buf;
    buf << in.rdbuf();
    out.push_back(parse_problem(buf.str()));
  }
  if (out.empty()) throw Error(ErrorCode::kIoError, "no " + stage + " problems in " + dir);
  return out;
}

}  // namespace lexinet
