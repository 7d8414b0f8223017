#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lexinet/admm.hpp"
#include "lexinet/closed_loop.hpp"
#include "lexinet/error.hpp"

namespace py = pybind11;
using namespace lexinet;

namespace {

py::dict run(const std::string& path, const std::string& strategy, double theta) {
  const Scenario sc = load_scenario(path);
  const RunLog log = run_closed_loop(sc, parse_strategy(strategy, theta));
  std::vector<double> phi1, phi2, phi3, served;
  std::vector<int> iters_pc, iters_tsc;
  std::vector<bool> fallback;
  for (const StepRecord& r : log.steps) {
    phi1.push_back(r.phi1);
    phi2.push_back(r.phi2);
    phi3.push_back(r.phi3);
    served.push_back(r.served);
    iters_pc.push_back(r.iters_pc);
    iters_tsc.push_back(r.iters_tsc);
    fallback.push_back(r.fallback);
  }
  py::dict out;
  out["strategy"] = to_string(log.strategy);
  out["phi1"] = phi1;
  out["phi2"] = phi2;
  out["phi3"] = phi3;
  out["served"] = served;
  out["iters_pc"] = iters_pc;
  out["iters_tsc"] = iters_tsc;
  out["fallback"] = fallback;
  return out;
}

py::dict describe(const std::string& path) {
  const Scenario sc = load_scenario(path);
  py::dict out;
  out["links"] = sc.net.num_links();
  out["junctions"] = sc.net.num_junctions();
  out["agents"] = sc.partition.num_agents();
  out["steps"] = sc.steps();
  out["horizon"] = sc.horizon;
  return out;
}

}  // namespace

PYBIND11_MODULE(_lexinet, m) {
  py::register_exception<Error>(m, "LexinetError", PyExc_RuntimeError);
  m.def("describe", &describe, py::arg("scenario"));
  m.def("run", &run, py::arg("scenario"), py::arg("strategy") = "lexi", py::arg("theta") = 5000.0);
  m.def("min_consensus", &min_consensus, py::arg("neighbors"), py::arg("flags"), py::arg("rounds"));
}
