#include "capgov/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "capgov/runtime.hpp"
#include "capgov/stats.hpp"

namespace capgov {

using nlohmann::json;

// ---------------------------------------------------------------------------------------------
// Configuration

json to_json(const Calibration& c) {
  return {{"tick_seconds", c.tick_seconds},
          {"s_real_restricted", c.s_real_restricted},
          {"s_human_shared", c.s_human_shared},
          {"rollback_success", c.rollback_success},
          {"static_share", c.static_share},
          {"permission_fraction", c.permission_fraction},
          {"p_unresolved", c.p_unresolved},
          {"b3_sensitivity", c.b3_sensitivity}};
}

Calibration calibration_from_json(const json& j) {
  Calibration c;
  c.tick_seconds = j.at("tick_seconds").get<double>();
  c.s_real_restricted = j.at("s_real_restricted").get<double>();
  c.s_human_shared = j.at("s_human_shared").get<double>();
  c.rollback_success = j.at("rollback_success").get<double>();
  c.static_share = j.at("static_share").get<double>();
  c.permission_fraction = j.at("permission_fraction").get<double>();
  c.p_unresolved = j.at("p_unresolved").get<double>();
  c.b3_sensitivity = j.at("b3_sensitivity").get<double>();
  return c;
}

namespace {

template <typename F>
void for_calibration_fields(Calibration& c, F&& f) {
  f("tick_seconds", c.tick_seconds);
  f("s_real_restricted", c.s_real_restricted);
  f("s_human_shared", c.s_human_shared);
  f("rollback_success", c.rollback_success);
  f("static_share", c.static_share);
  f("permission_fraction", c.permission_fraction);
  f("p_unresolved", c.p_unresolved);
  f("b3_sensitivity", c.b3_sensitivity);
}

template <typename F>
void for_recovery_fields(RecoveryConfig& r, F&& f) {
  f("rollback_ticks", r.rollback_ticks);
  f("retry_success", r.retry_success);
  f("retry_ticks", r.retry_ticks);
  f("recovery_capability_ticks", r.recovery_capability_ticks);
  f("mode_switch_ticks", r.mode_switch_ticks);
  f("takeover_ticks", r.takeover_ticks);
  f("terminate_ticks", r.terminate_ticks);
  f("recovery_capability", r.recovery_capability);
  f("fallback_timeout_ticks", r.fallback_timeout_ticks);
  f("fallback_attempts", r.fallback_attempts);
  f("fallback_attempt_ticks", r.fallback_attempt_ticks);
  f("fallback_success", r.fallback_success);
  f("local_detect_ticks", r.local_detect_ticks);
  f("local_attempts", r.local_attempts);
  f("local_retry_success", r.local_retry_success);
}

[[noreturn]] void config_fail(const YAML::Node& n, const std::string& what) {
  throw ConfigError("line " + std::to_string(n.Mark().line + 1) + ": " + what);
}

template <typename T>
T read_as(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    config_fail(n, "bad value for '" + key + "'");
  }
}

template <typename T>
void check_probability(const std::string& key, T v) {
  if constexpr (std::is_same_v<T, double>)
    if ((key.rfind("p_", 0) == 0 || key.find("success") != std::string::npos || key.rfind("s_", 0) == 0 ||
         key.find("share") != std::string::npos || key.find("fraction") != std::string::npos ||
         key.find("sensitivity") != std::string::npos || key == "approve_probability") &&
        (v < 0.0 || v > 1.0))
      throw ConfigError("'" + key + "' must lie in [0, 1]");
}

template <typename Fields, typename Obj>
void read_block(const YAML::Node& node, const std::string& block, Obj& obj, Fields&& fields) {
  if (!node.IsMap()) config_fail(node, "'" + block + "' must be a mapping");
  for (auto it = node.begin(); it != node.end(); ++it) {
    auto key = it->first.as<std::string>();
    bool known = false;
    fields(obj, [&](const char* name, auto& field) {
      if (key != name) return;
      known = true;
      field = read_as<std::decay_t<decltype(field)>>(it->second, key);
      check_probability(key, field);
    });
    if (!known) config_fail(it->first, "unknown key '" + block + "." + key + "'");
  }
}

std::string shortest(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

std::vector<Variant> RunConfig::active_variants() const {
  if (!variants.empty()) return variants;
  auto all = all_values<Variant>();
  return {all.begin(), all.end()};
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

RunConfig RunConfig::parse(const std::string& text, const std::filesystem::path& base_dir) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  RunConfig c;
  if (root.IsNull()) return c;
  if (!root.IsMap()) config_fail(root, "run config must be a mapping");
  for (auto it = root.begin(); it != root.end(); ++it) {
    auto key = it->first.as<std::string>();
    const auto& v = it->second;
    if (key == "seeds") {
      c.seeds = read_as<std::vector<std::uint64_t>>(v, key);
      if (c.seeds.empty()) config_fail(v, "'seeds' must not be empty");
    } else if (key == "trials_per_seed") {
      c.trials_per_seed = read_as<int>(v, key);
      if (c.trials_per_seed <= 0) config_fail(v, "'trials_per_seed' must be positive");
    } else if (key == "registry") {
      std::filesystem::path p = read_as<std::string>(v, key);
      c.registry_path = p.is_relative() ? base_dir / p : p;
    } else if (key == "variants") {
      c.variants.clear();
      for (const auto& n : v) {
        auto name = read_as<std::string>(n, key);
        auto parsed = try_parse<Variant>(name);
        if (!parsed) config_fail(n, "unknown variant '" + name + "'");
        c.variants.push_back(*parsed);
      }
    } else if (key == "horizon") {
      c.horizon = read_as<int>(v, key);
      if (c.horizon < 8) config_fail(v, "'horizon' must be at least 8");
    } else if (key == "episode_length") {
      c.episode_length = read_as<int>(v, key);
      if (c.episode_length < 1) config_fail(v, "'episode_length' must be positive");
    } else if (key == "p_unauthorized" || key == "p_defer" || key == "p_mode_omitted" ||
               key == "approve_probability") {
      double d = read_as<double>(v, key);
      check_probability(key, d);
      (key == "p_unauthorized" ? c.p_unauthorized
       : key == "p_defer"      ? c.p_defer
       : key == "p_mode_omitted" ? c.p_mode_omitted
                                 : c.approve_probability) = d;
    } else if (key == "calibration") {
      read_block(v, key, c.calibration, [](Calibration& o, auto&& f) { for_calibration_fields(o, f); });
      if (c.calibration.tick_seconds <= 0) config_fail(v, "'tick_seconds' must be positive");
    } else if (key == "recovery") {
      read_block(v, key, c.recovery, [](RecoveryConfig& o, auto&& f) { for_recovery_fields(o, f); });
    } else {
      config_fail(it->first, "unknown key '" + key + "'");
    }
  }
  c.recovery.rollback_success = c.calibration.rollback_success;
  return c;
}

std::string RunConfig::serialize() const {
  YAML::Emitter out;
  out << YAML::BeginMap;
  out << YAML::Key << "seeds" << YAML::Value << YAML::Flow << seeds;
  out << YAML::Key << "trials_per_seed" << YAML::Value << trials_per_seed;
  if (!registry_path.empty()) out << YAML::Key << "registry" << YAML::Value << registry_path.string();
  if (!variants.empty()) {
    out << YAML::Key << "variants" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (auto v : variants) out << std::string(to_string(v));
    out << YAML::EndSeq;
  }
  out << YAML::Key << "horizon" << YAML::Value << horizon;
  out << YAML::Key << "episode_length" << YAML::Value << episode_length;
  out << YAML::Key << "p_unauthorized" << YAML::Value << shortest(p_unauthorized);
  out << YAML::Key << "p_defer" << YAML::Value << shortest(p_defer);
  out << YAML::Key << "p_mode_omitted" << YAML::Value << shortest(p_mode_omitted);
  out << YAML::Key << "approve_probability" << YAML::Value << shortest(approve_probability);
  auto emit_block = [&](const char* name, auto obj, auto fields) {
    out << YAML::Key << name << YAML::Value << YAML::BeginMap;
    fields(obj, [&](const char* k, auto& v) {
      out << YAML::Key << k << YAML::Value;
      if constexpr (std::is_same_v<std::decay_t<decltype(v)>, double>) out << shortest(v);
      else out << v;
    });
    out << YAML::EndMap;
  };
  emit_block("calibration", calibration, [](Calibration& o, auto&& f) { for_calibration_fields(o, f); });
  emit_block("recovery", recovery, [](RecoveryConfig& o, auto&& f) { for_recovery_fields(o, f); });
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

json RunConfig::to_json() const {
  json j{{"seeds", seeds},
         {"trials_per_seed", trials_per_seed},
         {"horizon", horizon},
         {"episode_length", episode_length},
         {"p_unauthorized", p_unauthorized},
         {"p_defer", p_defer},
         {"p_mode_omitted", p_mode_omitted},
         {"approve_probability", approve_probability},
         {"calibration", capgov::to_json(calibration)}};
  json r = json::object();
  RecoveryConfig rc = recovery;
  for_recovery_fields(rc, [&](const char* k, auto& v) { r[k] = v; });
  j["recovery"] = r;
  json vs = json::array();
  for (auto v : active_variants()) vs.push_back(std::string(to_string(v)));
  j["variants"] = vs;
  return j;
}

Registry calibrated_registry(Registry base, const Calibration& c) {
  if (base.has_profile(ProfileId::real_restricted)) base.set_watcher_sensitivity(ProfileId::real_restricted, c.s_real_restricted);
  if (base.has_profile(ProfileId::human_shared)) base.set_watcher_sensitivity(ProfileId::human_shared, c.s_human_shared);
  return base;
}

// ---------------------------------------------------------------------------------------------
// Variants

VariantSpec variant_spec(Variant v) {
  VariantSpec s;
  switch (v) {
    case Variant::proposed: break;
    case Variant::direct_execution:
      s.governance = {AdmissionMode::off, false, false};
      s.watcher = false;
      s.recovery_manager = false;
      s.human = false;
      break;
    case Variant::static_rule:
      s.governance = {AdmissionMode::static_only, false, false};
      s.watcher = false;
      s.recovery_manager = false;
      s.human = false;
      break;
    case Variant::capability_internal:
      s.governance = {AdmissionMode::static_only, false, false};
      s.watcher = false;
      s.local_checker = true;
      s.recovery_manager = false;
      s.local_recovery = true;
      s.human = false;
      break;
    case Variant::ablate_admit: s.governance.admission = AdmissionMode::off; break;
    case Variant::ablate_policy: s.governance.policy_guard = false; break;
    case Variant::ablate_watch: s.watcher = false; break;
    case Variant::ablate_recov: s.recovery_manager = false; break;
    case Variant::ablate_human:
      s.governance.human_gate = false;
      s.human = false;
      break;
    case Variant::override_on: s.override_scenarios = true; break;
    case Variant::override_off:
      s.governance.human_gate = false;
      s.override_scenarios = true;
      break;
  }
  return s;
}

std::string_view variant_label(Variant v) {
  switch (v) {
    case Variant::proposed: return "Proposed";
    case Variant::direct_execution: return "Direct";
    case Variant::static_rule: return "Static";
    case Variant::capability_internal: return "Cap-Internal";
    case Variant::ablate_admit: return "-Admit";
    case Variant::ablate_policy: return "-Policy";
    case Variant::ablate_watch: return "-Watch";
    case Variant::ablate_recov: return "-Recov";
    case Variant::ablate_human: return "-Human";
    case Variant::override_on: return "With override";
    case Variant::override_off: return "Without override";
  }
  return "?";
}

// ---------------------------------------------------------------------------------------------
// Trial generation

json to_json(const TrialSpec& t) {
  json j{{"seed", t.seed},
         {"index", t.index},
         {"capability", t.capability},
         {"profile", to_string(t.profile)},
         {"authorized", t.authorized},
         {"injection_step", t.injection_step},
         {"defer_once", t.defer_once},
         {"override_scenario", t.override_scenario},
         {"unapproved_high_risk", t.unapproved_high_risk},
         {"request", to_json(t.request)}};
  if (t.unauthorized_kind) j["unauthorized_kind"] = to_string(*t.unauthorized_kind);
  if (t.injection) j["injection"] = to_string(*t.injection);
  if (t.failure) j["failure"] = to_string(*t.failure);
  if (!t.violation_zone.empty()) j["violation_zone"] = t.violation_zone;
  return j;
}

namespace {

// Catalog entries no profile restricts, and zones some profile forbids.
struct Catalog {
  std::vector<std::string> normal_objects, normal_zones, sensitive_zones;
};

Catalog catalog(const Registry& reg) {
  Catalog c;
  std::set<std::string> restricted, forbidden;
  for (auto id : reg.profile_ids()) {
    const auto& p = reg.profile(id);
    restricted.insert(p.restricted_objects.begin(), p.restricted_objects.end());
    forbidden.insert(p.forbidden_zones.begin(), p.forbidden_zones.end());
  }
  for (const auto& o : reg.objects())
    if (!restricted.count(o)) c.normal_objects.push_back(o);
  for (const auto& z : reg.zones()) (forbidden.count(z) ? c.sensitive_zones : c.normal_zones).push_back(z);
  return c;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& g) {
  if (v.empty()) throw InvalidDefinition("registry catalog too small to generate trials");
  return v[g.below(v.size())];
}

template <typename T>
T pick(const std::set<T>& s, Rng& g) {
  std::vector<T> v(s.begin(), s.end());
  return pick(v, g);
}

std::optional<std::string> accepted_tag(const CapabilityManifest& m, const EnvironmentProfile& p) {
  for (const auto& t : m.env_profile_tags)
    if (p.accepted_tags.count(t)) return t;
  return std::nullopt;
}

std::optional<std::string> rejected_tag(const CapabilityManifest& m, const EnvironmentProfile& p) {
  for (const auto& t : m.env_profile_tags)
    if (!p.accepted_tags.count(t)) return t;
  return std::nullopt;
}

bool needs_approval(const CapabilityManifest& m, const EnvironmentProfile& p) {
  return p.approval_required_risk && at_least(m.risk, *p.approval_required_risk);
}

InvocationRequest base_request(const CapabilityManifest& m, const EnvironmentProfile& p, const Catalog& cat,
                               const RunConfig& cfg, Rng& g) {
  InvocationRequest r;
  r.capability = m.name;
  r.profile = p.name;
  for (const auto& in : m.inputs) {
    switch (in.kind) {
      case ParamKind::object: r.params[in.name] = pick(cat.normal_objects, g); break;
      case ParamKind::zone: r.params[in.name] = pick(cat.normal_zones, g); break;
      case ParamKind::pose:
        r.params[in.name] = Pose{g.uniform(-5.0, 5.0), g.uniform(-5.0, 5.0), g.uniform(-std::numbers::pi, std::numbers::pi)};
        break;
      case ParamKind::scalar:
        if (in.name == "speed") r.params[in.name] = g.uniform(0.1, 1.0);
        else if (in.name == "force") r.params[in.name] = g.uniform(5.0, 35.0);
        else r.params[in.name] = g.uniform();
        break;
    }
  }
  r.agent_permissions = m.permissions;
  if (needs_approval(m, p)) r.approval_token = "standing-approval";
  if (!g.bernoulli(cfg.p_mode_omitted)) r.meta.execution_mode = accepted_tag(m, p);
  return r;
}

}  // namespace

std::vector<std::pair<UnauthorizedKind, double>> feasible_kinds(const CapabilityManifest& m,
                                                                const EnvironmentProfile& p, const Calibration& c) {
  std::vector<std::pair<UnauthorizedKind, double>> out;
  const double rest = (1.0 - c.static_share) / 3.0;
  if (!m.permissions.empty()) out.emplace_back(UnauthorizedKind::missing_permission, c.static_share * c.permission_fraction);
  if (!m.inputs_of_kind(ParamKind::object).empty() && !p.restricted_objects.empty())
    out.emplace_back(UnauthorizedKind::restricted_object, c.static_share * (1.0 - c.permission_fraction));
  if (!m.inputs_of_kind(ParamKind::zone).empty() && !p.forbidden_zones.empty())
    out.emplace_back(UnauthorizedKind::forbidden_zone, rest);
  if (needs_approval(m, p)) out.emplace_back(UnauthorizedKind::missing_approval, rest);
  if (rejected_tag(m, p)) out.emplace_back(UnauthorizedKind::env_profile_mismatch, rest);
  double total = 0.0;
  for (const auto& [k, w] : out) total += w;
  if (total > 0.0)
    for (auto& [k, w] : out) w /= total;
  return out;
}

TrialSpec generate_trial(const Registry& reg, const RunConfig& cfg, std::uint64_t seed, int index) {
  Rng g(seed, static_cast<std::uint64_t>(index), "generation");
  const auto cat = catalog(reg);
  const auto& m = pick(reg.capabilities(), g);
  const auto& p = reg.profile(pick(reg.profile_ids(), g));

  TrialSpec t;
  t.seed = seed;
  t.index = index;
  t.capability = m.name;
  t.profile = p.name;
  t.authorized = !g.bernoulli(cfg.p_unauthorized);
  t.request = base_request(m, p, cat, cfg, g);
  t.defer_once = !m.preconditions.empty() && g.bernoulli(cfg.p_defer);

  if (t.authorized) {
    t.injection = static_cast<ViolationType>(g.below(enum_count<ViolationType>()));
    static const std::vector<FailureKind> failures{FailureKind::failed_grasp, FailureKind::blocked_path,
                                                   FailureKind::perception_mismatch, FailureKind::timeout};
    t.failure = pick(failures, g);
    t.injection_step = 2 + static_cast<int>(g.below(4));
    t.violation_zone = pick(cat.sensitive_zones, g);
    return t;
  }

  auto kinds = feasible_kinds(m, p, cfg.calibration);
  if (kinds.empty()) throw InvalidDefinition("no unauthorized kind is feasible for " + m.name);
  double u = g.uniform(), acc = 0.0;
  UnauthorizedKind kind = kinds.back().first;
  for (const auto& [k, w] : kinds) {
    acc += w;
    if (u < acc) {
      kind = k;
      break;
    }
  }
  t.unauthorized_kind = kind;
  auto& r = t.request;
  switch (kind) {
    case UnauthorizedKind::missing_permission: r.agent_permissions.erase(pick(m.permissions, g)); break;
    case UnauthorizedKind::restricted_object:
      r.params[m.inputs_of_kind(ParamKind::object).front()] = pick(p.restricted_objects, g);
      break;
    case UnauthorizedKind::forbidden_zone:
      r.params[m.inputs_of_kind(ParamKind::zone).front()] = pick(p.forbidden_zones, g);
      break;
    case UnauthorizedKind::missing_approval: r.approval_token.reset(); break;
    case UnauthorizedKind::env_profile_mismatch:
      // The agent runs in the wrong execution mode; sometimes it cannot tell and declares nothing.
      if (g.bernoulli(cfg.calibration.p_unresolved)) r.meta.execution_mode.reset();
      else r.meta.execution_mode = rejected_tag(m, p);
      break;
  }
  return t;
}

TrialSpec generate_override_trial(const Registry& reg, const RunConfig& cfg, std::uint64_t seed, int index) {
  Rng g(seed, static_cast<std::uint64_t>(index), "override");
  const auto cat = catalog(reg);
  static const std::vector<std::string> caps{"navigate_to", "grasp_object", "transport_object"};
  const auto* m = reg.lookup(pick(caps, g));
  if (!m || !reg.has_profile(ProfileId::human_shared))
    throw InvalidDefinition("override scenarios need navigate_to, grasp_object, transport_object and human_shared");
  const auto& p = reg.profile(ProfileId::human_shared);

  TrialSpec t;
  t.seed = seed;
  t.index = index;
  t.capability = m->name;
  t.profile = p.name;
  t.override_scenario = true;
  RunConfig rc = cfg;
  rc.p_mode_omitted = 0.0;
  t.request = base_request(*m, p, cat, rc, g);
  auto zones = m->inputs_of_kind(ParamKind::zone);
  if (!zones.empty()) t.request.params[zones.front()] = pick(reg.zones(), g);
  else if (auto objs = m->inputs_of_kind(ParamKind::object); !objs.empty()) t.request.params[objs.front()] = pick(reg.objects(), g);
  if (g.bernoulli(0.5)) t.request.approval_token = "operator-approval";
  else t.request.approval_token.reset();
  t.unapproved_high_risk = needs_approval(*m, p) && !t.request.approval_token;
  t.authorized = !t.unapproved_high_risk;
  return t;
}

// ---------------------------------------------------------------------------------------------
// Cells and experiments

json log_header(const Registry& reg, const RunConfig& cfg, Variant v, std::uint64_t seed) {
  return {{"format", "capgov-audit"},
          {"version", 1},
          {"variant", to_string(v)},
          {"seed", seed},
          {"config", cfg.to_json()},
          {"calibration", to_json(cfg.calibration)},
          {"registry", reg.serialize()}};
}

json log_summary(const CellResult& cell) {
  return {{"variant", to_string(cell.variant)},
          {"seed", cell.seed},
          {"metrics", to_json(cell.metrics)},
          {"latency", to_json(cell.latency)}};
}

CellResult run_cell(const Registry& base, const RunConfig& cfg, Variant v, std::uint64_t seed, AuditLog* log,
                    RuntimeHooks* hooks, OverrideGateway* shared_gateway) {
  const Registry reg = calibrated_registry(base, cfg.calibration);
  AuditLog null_log(std::make_shared<NullSink>());
  AuditLog& out = log ? *log : null_log;
  out.write_header(log_header(reg, cfg, v, seed));
  OverrideGateway own_gateway;
  OverrideGateway& gateway = shared_gateway ? *shared_gateway : own_gateway;
  const bool overrides = variant_spec(v).override_scenarios;

  CellResult cell;
  cell.variant = v;
  cell.seed = seed;
  cell.records.reserve(static_cast<std::size_t>(cfg.trials_per_seed));
  for (int i = 0; i < cfg.trials_per_seed; ++i) {
    auto spec = overrides ? generate_override_trial(reg, cfg, seed, i) : generate_trial(reg, cfg, seed, i);
    cell.records.push_back(run_trial(spec, reg, cfg, v, out, gateway, static_cast<std::uint64_t>(i) + 1, hooks));
  }
  cell.metrics = compute_metrics(cell.records, cfg.calibration.tick_seconds);
  cell.latency = latency_profile(cell.records);
  out.write_summary(log_summary(cell));
  return cell;
}

const CellResult* ExperimentResult::find(Variant v, std::uint64_t seed) const {
  for (const auto& c : cells)
    if (c.variant == v && c.seed == seed) return &c;
  return nullptr;
}

std::vector<const CellResult*> ExperimentResult::of(Variant v) const {
  std::vector<const CellResult*> out;
  for (const auto& c : cells)
    if (c.variant == v) out.push_back(&c);
  return out;
}

std::string cell_log_name(Variant v, std::uint64_t seed) {
  return std::string(to_string(v)) + "_seed" + std::to_string(seed) + ".jsonl";
}

ExperimentResult run_experiment(const Registry& reg, const RunConfig& cfg,
                                const std::optional<std::filesystem::path>& audit_dir) {
  if (audit_dir) std::filesystem::create_directories(*audit_dir);
  ExperimentResult r;
  for (auto v : cfg.active_variants()) {
    for (auto seed : cfg.seeds) {
      if (audit_dir) {
        AuditLog log(std::make_shared<FileSink>(*audit_dir / cell_log_name(v, seed)));
        r.cells.push_back(run_cell(reg, cfg, v, seed, &log));
      } else {
        r.cells.push_back(run_cell(reg, cfg, v, seed, nullptr));
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------------------------
// Replay

namespace {

struct SessionReplay {
  TrialRecord rec;
  const CapabilityManifest* manifest = nullptr;
  const EnvironmentProfile* profile = nullptr;
  std::optional<ViolationType> injection;
  int injection_step = 0;
  int episode_length = 0;
  int admission_attempt = 0;
  bool has_failure = false;
  FailureKind failure_kind = FailureKind::failed_grasp;
  std::vector<RecoveryStep> failure_steps;
  std::optional<RecoveryResult> concluded;
  bool done = false;

  bool in_episode(int step) const {
    return injection && step >= injection_step && step < injection_step + episode_length;
  }
};

bool is_detection(const WatchSignal& s) {
  return s.kind == SignalKind::violation || s.kind == SignalKind::escalation;
}

std::vector<std::uint64_t> u64s(const json& j) { return j.get<std::vector<std::uint64_t>>(); }

}  // namespace

ReplayResult replay(const ParsedLog& log) {
  ReplayResult out;
  const auto& h = log.header;
  if (!h.contains("registry") || !h.contains("calibration") || !h.contains("variant"))
    throw CorruptLog(1, "header lacks registry, calibration or variant");
  const Registry reg = Registry::parse(h.at("registry").get<std::string>());
  const Calibration cal = calibration_from_json(h.at("calibration"));
  out.variant = parse_enum<Variant>(h.at("variant").get<std::string>());
  out.seed = h.at("seed").get<std::uint64_t>();

  std::map<std::uint64_t, SessionReplay> sessions;
  std::vector<std::uint64_t> order;
  for (const auto& e : log.events) {
    auto [it, fresh] = sessions.try_emplace(e.session_id);
    auto& s = it->second;
    if (fresh) order.push_back(e.session_id);
    const auto& p = e.payload;
    auto& r = s.rec;
    switch (e.kind) {
      case AuditKind::proposal: {
        if (!e.ground_truth) throw CorruptLog(0, "proposal without ground truth in session " + std::to_string(e.session_id));
        const auto& gt = *e.ground_truth;
        auto req = request_from_json(p.at("request"));
        s.manifest = reg.lookup(req.capability);
        s.profile = &reg.profile(req.profile);
        r.trial_index = p.at("trial").get<int>();
        r.authorized = gt.at("authorized").get<bool>();
        if (gt.contains("unauthorized_kind")) r.unauthorized_kind = parse_enum<UnauthorizedKind>(gt.at("unauthorized_kind").get<std::string>());
        r.override_scenario = gt.at("override_scenario").get<bool>();
        r.unapproved_high_risk = gt.at("unapproved_high_risk").get<bool>();
        if (gt.contains("injection")) {
          s.injection = parse_enum<ViolationType>(gt.at("injection").get<std::string>());
          s.injection_step = gt.at("injection_step").get<int>();
          s.episode_length = gt.at("episode_length").get<int>();
        }
        r.injection = s.injection;
        r.monitored = monitored_violation(s.injection, gt.value("violation_zone", std::string()), *s.profile);
        s.has_failure = gt.contains("failure");
        if (s.has_failure) s.failure_kind = parse_enum<FailureKind>(gt.at("failure").get<std::string>());
        break;
      }
      case AuditKind::admission_decision:
        s.admission_attempt = p.at("attempt").get<int>();
        if (s.admission_attempt == 1) {
          auto c = p.at("governance_result").get<std::string>();
          r.blocked = c == "refused" || c == "escalated";
          if (p.contains("latency_ns")) r.admission_ns = p.at("latency_ns").get<std::uint64_t>();
        }
        break;
      case AuditKind::policy_decision:
        if (s.admission_attempt == 1) r.policy_ns = p.at("latency_ns").get<std::uint64_t>();
        break;
      case AuditKind::launch:
        r.launched = true;
        r.rollback_eligible = s.has_failure && state_changing(s.failure_kind);
        out.state_sequences[e.session_id].push_back(p.at("state").get<std::string>());
        break;
      case AuditKind::watch_signal: {
        auto sig = signal_from_json(p.at("signal"));
        int step = p.at("step").get<int>();
        if (is_detection(sig)) {
          ++r.detections;
          if (s.in_episode(step) && sig.violation == s.injection && !r.detection_delay) {
            r.detection_delay = step - s.injection_step;
            r.onset_detected = step == s.injection_step;
          }
        }
        break;
      }
      case AuditKind::intervention: {
        auto sig = signal_from_json(p.at("signal"));
        auto action = parse_enum<InterventionAction>(p.at("action").get<std::string>());
        auto authority = parse_enum<AuthorityMode>(p.at("authority").get<std::string>());
        if (is_detection(sig) && permitted_interventions(sig, *s.profile, authority, *s.manifest).count(action))
          ++r.compliant_interventions;
        if (action != InterventionAction::continue_ && s.in_episode(p.at("step").get<int>())) r.intervened = true;
        break;
      }
      case AuditKind::recovery_step: {
        auto step = recovery_step_from_json(p);
        auto authority = parse_enum<AuthorityMode>(p.at("authority").get<std::string>());
        ++r.recovery_actions;
        if (p.at("trigger").get<std::string>() == "violation") {
          auto sig = signal_from_json(p.at("signal"));
          if (permitted_interventions(sig, *s.profile, authority, *s.manifest).count(InterventionAction::rollback))
            ++r.permitted_recovery_actions;
        } else {
          auto kind = parse_enum<FailureKind>(p.at("failure_kind").get<std::string>());
          r.failure_injected = true;
          if (recovery_permitted(step.strategy, kind, *s.manifest, *s.profile, authority, step.attempt))
            ++r.permitted_recovery_actions;
          if (step.strategy == RecoveryStrategy::rollback && step.success) r.rollback_success = true;
          s.failure_steps.push_back(step);
          if (p.contains("result")) {
            s.concluded = parse_recovery_result(p.at("result").get<std::string>());
            r.recovery_ticks = recovery_ticks(s.failure_steps);
          }
        }
        break;
      }
      case AuditKind::state_change:
        out.state_sequences[e.session_id].push_back(p.at("to").get<std::string>());
        break;
      case AuditKind::final_outcome:
        r.outcome = parse_enum<Outcome>(p.at("outcome").get<std::string>());
        r.watcher_ns = u64s(p.at("watcher_ns"));
        r.recovery_ns = u64s(p.at("recovery_ns"));
        s.done = true;
        break;
      case AuditKind::telemetry:
      case AuditKind::human_event: break;
    }
  }
  for (auto id : order) {
    auto& s = sessions.at(id);
    if (!s.done) throw IncompleteRun("session " + std::to_string(id) + " has no final outcome");
    if (s.rec.failure_injected) s.rec.failure_result = classify_failure(s.concluded, *s.rec.outcome);
    out.records.push_back(std::move(s.rec));
  }
  out.metrics = compute_metrics(out.records, cal.tick_seconds);
  out.latency = latency_profile(out.records);
  out.recorded = metrics_from_json(log.summary.at("metrics"));
  return out;
}

// ---------------------------------------------------------------------------------------------
// Calibration

std::vector<CalibrationTarget> default_targets() {
  return {{"proposed.uair", 0.962, 0.054},
          {"static_rule.uair", 0.595, 0.13},
          {"proposed.rvdr", 0.613, 0.05},
          {"proposed.ucr", 0.222, 0.062},
          {"capability_internal.rvdr", 0.351, 0.05},
          {"proposed.rsr", 0.914, 0.06},
          {"proposed.rbsr", 0.541, 0.09},
          {"proposed.mrt_s", 0.169, 0.02},
          {"proposed.detect_human_proximity", 0.242, 0.13},
          {"proposed.detect_zone_violation", 0.539, 0.13}};
}

std::vector<std::pair<CalibrationTarget, double>> evaluate_targets(const Registry& base, const RunConfig& cfg,
                                                                   const Calibration& c,
                                                                   const std::vector<CalibrationTarget>& targets) {
  RunConfig rc = cfg;
  rc.calibration = c;
  rc.recovery.rollback_success = c.rollback_success;
  std::map<Variant, std::vector<MethodMetrics>> per_variant;
  std::vector<std::pair<CalibrationTarget, double>> out;
  for (const auto& t : targets) {
    auto dot = t.name.find('.');
    if (dot == std::string::npos) throw ConfigError("calibration target '" + t.name + "' must be variant.metric");
    auto v = parse_enum<Variant>(t.name.substr(0, dot));
    auto& ms = per_variant[v];
    if (ms.empty())
      for (auto seed : rc.seeds) ms.push_back(run_cell(base, rc, v, seed, nullptr).metrics);
    std::vector<double> xs;
    for (const auto& m : ms)
      if (auto x = metric_value(m, t.name.substr(dot + 1))) xs.push_back(*x);
    out.emplace_back(t, xs.empty() ? std::nan("") : mean_std(xs).mean);
  }
  return out;
}

namespace {

// Worst normalized deviation, plus a small mean term so non-binding targets still tighten.
double objective(const std::vector<std::pair<CalibrationTarget, double>>& achieved) {
  double worst = 0.0, sum = 0.0;
  for (const auto& [t, x] : achieved) {
    double d = std::isnan(x) ? 1e9 : std::abs(x - t.target) / t.tolerance;
    worst = std::max(worst, d);
    sum += d;
  }
  return worst + 0.01 * sum / static_cast<double>(std::max<std::size_t>(achieved.size(), 1));
}

double worst_deviation(const std::vector<std::pair<CalibrationTarget, double>>& achieved) {
  double worst = 0.0;
  for (const auto& [t, x] : achieved) worst = std::max(worst, std::isnan(x) ? 1e9 : std::abs(x - t.target) / t.tolerance);
  return worst;
}

std::vector<double> grid(double lo, double hi, double step) {
  std::vector<double> g;
  for (double x = lo; x <= hi + 1e-9; x += step) g.push_back(std::round(x * 1e6) / 1e6);
  return g;
}

}  // namespace

CalibrationReport calibrate(const Registry& base, const RunConfig& cfg, const std::vector<CalibrationTarget>& targets,
                            int rounds) {
  CalibrationReport best;
  best.fitted = cfg.calibration;
  best.achieved = evaluate_targets(base, cfg, best.fitted, targets);
  best.objective = objective(best.achieved);
  best.evaluations = 1;

  struct Axis {
    double Calibration::*field;
    std::vector<double> values;
  };
  const std::vector<Axis> axes{{&Calibration::static_share, grid(0.40, 0.80, 0.05)},
                               {&Calibration::p_unresolved, grid(0.0, 0.30, 0.05)},
                               {&Calibration::s_real_restricted, grid(0.50, 0.70, 0.05)},
                               {&Calibration::s_human_shared, grid(0.75, 1.0, 0.05)},
                               {&Calibration::b3_sensitivity, grid(0.20, 0.80, 0.025)},
                               {&Calibration::tick_seconds, grid(0.040, 0.060, 0.005)}};
  for (int round = 0; round < rounds; ++round) {
    bool improved = false;
    for (const auto& ax : axes) {
      for (double v : ax.values) {
        Calibration c = best.fitted;
        if (c.*ax.field == v) continue;
        c.*ax.field = v;
        auto achieved = evaluate_targets(base, cfg, c, targets);
        ++best.evaluations;
        double obj = objective(achieved);
        if (obj < best.objective - 1e-12) {
          best.fitted = c;
          best.achieved = std::move(achieved);
          best.objective = obj;
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
  best.objective = worst_deviation(best.achieved);
  if (best.objective > 1.0)
    throw CalibrationInfeasible("no calibration point meets every target tolerance (objective " +
                                    std::to_string(best.objective) + ")",
                                best);
  return best;
}

}  // namespace capgov
