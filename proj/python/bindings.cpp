#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "capgov/governance.hpp"
#include "capgov/harness.hpp"
#include "capgov/stats.hpp"
#include "capgov/tables.hpp"

namespace py = pybind11;
using namespace capgov;

namespace {

// Results cross the boundary as JSON text; the Python package decodes them.
RunConfig load_config(const std::string& path, const std::vector<std::string>& variants) {
  auto cfg = RunConfig::load(path);
  if (!variants.empty()) {
    cfg.variants.clear();
    for (const auto& v : variants) cfg.variants.push_back(parse_enum<Variant>(v));
  }
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_capgov, m) {
  m.doc() = "Runtime governance middleware and simulation harness";

  py::register_exception<RegistryError>(m, "RegistryError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CorruptLog>(m, "CorruptLog", PyExc_ValueError);

  m.def("validate_registry", [](const std::string& path) {
    auto reg = Registry::load_file(path);
    reg.validate();
    std::vector<std::string> names;
    for (const auto& c : reg.capabilities()) names.push_back(c.name);
    return names;
  }, py::arg("path"), "Load and validate a registry file; returns the capability names.");

  m.def("govern_json", [](const std::string& registry_path, const std::string& request_json) {
    auto reg = Registry::load_file(registry_path);
    auto req = request_from_json(nlohmann::json::parse(request_json));
    auto ctx = make_context(reg, req.profile);
    ctx.authority = reg.profile(req.profile).authority;
    auto d = govern(req, ctx);
    nlohmann::json j{{"classification", to_string(d.classification)},
                     {"admission", to_string(d.admission.verdict)},
                     {"reason", to_string(d.admission.reason)},
                     {"refusal", d.refusal}};
    if (d.policy) {
      j["policy"] = to_string(d.policy->verdict);
      j["fired_rule"] = d.policy->fired_rule;
    }
    if (auto* a = d.authorization()) j["final_params"] = to_json(a->final_params());
    return j.dump();
  }, py::arg("registry_path"), py::arg("request_json"));

  m.def("run_cell_json", [](const std::string& config_path, const std::string& variant, std::uint64_t seed, int trials) {
    auto cfg = load_config(config_path, {});
    if (trials > 0) cfg.trials_per_seed = trials;
    auto reg = Registry::load_file(cfg.registry_path);
    py::gil_scoped_release release;
    auto cell = run_cell(reg, cfg, parse_enum<Variant>(variant), seed, nullptr);
    return nlohmann::json{{"metrics", to_json(cell.metrics)}, {"latency", to_json(cell.latency)}}.dump();
  }, py::arg("config_path"), py::arg("variant"), py::arg("seed"), py::arg("trials") = 0);

  m.def("run_tables_json", [](const std::string& config_path, const std::vector<std::string>& variants, int trials) {
    auto cfg = load_config(config_path, variants);
    if (trials > 0) cfg.trials_per_seed = trials;
    auto reg = Registry::load_file(cfg.registry_path);
    py::gil_scoped_release release;
    auto r = run_experiment(reg, cfg);
    nlohmann::json out = nlohmann::json::object();
    for (const auto& t : all_tables(r)) out[t.id] = t.to_csv();
    return out.dump();
  }, py::arg("config_path"), py::arg("variants") = std::vector<std::string>{}, py::arg("trials") = 0);

  m.def("replay_json", [](const std::string& audit_path) {
    auto r = replay(read_log_file(audit_path));
    return nlohmann::json{{"matches", r.matches()}, {"metrics", to_json(r.metrics)}, {"sessions", r.records.size()}}.dump();
  }, py::arg("audit_path"));

  m.def("paired_t_test", [](const std::vector<double>& a, const std::vector<double>& b) {
    auto r = capgov::paired_t_test("x", a, b);
    return py::make_tuple(r.t, r.p);
  }, py::arg("a"), py::arg("b"), "Two-sided paired t-test; returns (t, p).");

  m.attr("protocol_version") = 1;
}
