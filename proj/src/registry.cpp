#include "capgov/registry.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace capgov {

namespace {

ParamKind infer_kind(std::string_view name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
  };
  if (name == "pose" || ends_with("_pose")) return ParamKind::pose;
  if (name == "zone" || ends_with("_zone")) return ParamKind::zone;
  if (name == "object_id" || ends_with("_object")) return ParamKind::object;
  return ParamKind::scalar;
}

int line_of(const YAML::Node& n) { return n.Mark().line + 1; }

[[noreturn]] void fail(const YAML::Node& n, const std::string& field, const std::string& what) {
  throw ParseError(line_of(n), field, what);
}

const YAML::Node require(const YAML::Node& map, const std::string& key) {
  auto n = map[key];
  if (!n) fail(map, key, "missing required field");
  return n;
}

std::string scalar(const YAML::Node& n, const std::string& field) {
  if (!n.IsScalar()) fail(n, field, "expected a scalar");
  return n.as<std::string>();
}

double number(const YAML::Node& n, const std::string& field) {
  try {
    return n.as<double>();
  } catch (const YAML::Exception&) {
    fail(n, field, "expected a number");
  }
}

int integer(const YAML::Node& n, const std::string& field) {
  try {
    return n.as<int>();
  } catch (const YAML::Exception&) {
    fail(n, field, "expected an integer");
  }
}

std::vector<std::string> list(const YAML::Node& n, const std::string& field) {
  if (!n.IsSequence()) fail(n, field, "expected a list");
  std::vector<std::string> out;
  for (const auto& item : n) out.push_back(scalar(item, field));
  return out;
}

std::set<std::string> set_of(const YAML::Node& n, const std::string& field) {
  auto v = list(n, field);
  return {v.begin(), v.end()};
}

template <typename E>
E enum_field(const YAML::Node& n, const std::string& field) {
  auto s = scalar(n, field);
  if (auto e = try_parse<E>(s)) return *e;
  fail(n, field, "unknown value '" + s + "'");
}

void check_keys(const YAML::Node& map, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!map.IsMap()) fail(map, where, "expected a mapping");
  for (const auto& kv : map) {
    auto key = kv.first.as<std::string>();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(kv.first, key, "unknown field in " + where);
  }
}

RulePredicate parse_predicate(const YAML::Node& n) {
  auto text = scalar(n, "when");
  RulePredicate p;
  auto eq = text.find('=');
  auto head = text.substr(0, eq);
  auto arg = eq == std::string::npos ? std::string{} : text.substr(eq + 1);
  using K = RulePredicate::Kind;
  if (head == "always") {
    p.kind = K::always;
  } else if (head == "capability") {
    p.kind = K::capability_is;
    p.name = arg;
  } else if (head == "target_zone_forbidden") {
    p.kind = K::target_zone_forbidden;
  } else if (head == "object_restricted") {
    p.kind = K::object_restricted;
  } else if (head == "mode_disallowed") {
    p.kind = K::mode_disallowed;
  } else if (head == "param_above") {
    auto colon = arg.find(':');
    if (colon == std::string::npos) fail(n, "when", "param_above needs <param>:<limit>");
    p.kind = K::param_above;
    p.name = arg.substr(0, colon);
    try {
      p.limit = std::stod(arg.substr(colon + 1));
    } catch (const std::exception&) {
      fail(n, "when", "bad limit in '" + text + "'");
    }
  } else {
    fail(n, "when", "unknown predicate '" + head + "'");
  }
  if ((p.kind == K::capability_is || p.kind == K::param_above) && p.name.empty())
    fail(n, "when", "predicate '" + head + "' needs an argument");
  return p;
}

ModifierOp parse_modifier(const YAML::Node& n) {
  auto text = scalar(n, "modifier");
  auto eq = text.find('=');
  auto colon = text.find(':', eq == std::string::npos ? 0 : eq);
  if (eq == std::string::npos || colon == std::string::npos) fail(n, "modifier", "expected op=param:value");
  ModifierOp op;
  auto head = text.substr(0, eq);
  op.param = text.substr(eq + 1, colon - eq - 1);
  auto value = text.substr(colon + 1);
  if (head == "clamp") {
    op.kind = ModifierOp::Kind::clamp;
    try {
      op.value = std::stod(value);
    } catch (const std::exception&) {
      fail(n, "modifier", "clamp bound must be numeric");
    }
  } else if (head == "set") {
    op.kind = ModifierOp::Kind::set;
    char* end = nullptr;
    double d = std::strtod(value.c_str(), &end);
    if (!value.empty() && end == value.c_str() + value.size()) {
      op.value = d;
    } else {
      op.value = value;
    }
  } else {
    fail(n, "modifier", "unknown modifier op '" + head + "'");
  }
  return op;
}

std::string format_number(double d) {
  std::ostringstream os;
  os.precision(17);
  os << d;
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    std::ostringstream t;
    t.precision(prec);
    t << d;
    if (std::stod(t.str()) == d) return t.str();
  }
  return os.str();
}

std::string predicate_text(const RulePredicate& p) {
  using K = RulePredicate::Kind;
  switch (p.kind) {
    case K::always: return "always";
    case K::capability_is: return "capability=" + p.name;
    case K::target_zone_forbidden: return "target_zone_forbidden";
    case K::object_restricted: return "object_restricted";
    case K::mode_disallowed: return "mode_disallowed";
    case K::param_above: return "param_above=" + p.name + ":" + format_number(p.limit);
  }
  return "always";
}

std::string modifier_text(const ModifierOp& op) {
  std::string value;
  if (auto d = std::get_if<double>(&op.value)) {
    value = format_number(*d);
  } else if (auto s = std::get_if<std::string>(&op.value)) {
    value = *s;
  }
  return std::string(op.kind == ModifierOp::Kind::clamp ? "clamp=" : "set=") + op.param + ":" + value;
}

template <typename Seq>
void emit_list(YAML::Emitter& out, const std::string& key, const Seq& items) {
  out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& i : items) out << i;
  out << YAML::EndSeq;
}

}  // namespace

bool CapabilityManifest::has_input(std::string_view n) const {
  return std::any_of(inputs.begin(), inputs.end(), [&](const ParamSpec& p) { return p.name == n; });
}

std::vector<std::string> CapabilityManifest::inputs_of_kind(ParamKind k) const {
  std::vector<std::string> out;
  for (const auto& p : inputs)
    if (p.kind == k) out.push_back(p.name);
  return out;
}

void Registry::register_zone(const std::string& zone) {
  if (std::find(zones_.begin(), zones_.end(), zone) != zones_.end()) throw DuplicateName("zone '" + zone + "'");
  zones_.push_back(zone);
}

void Registry::register_object(const std::string& object) {
  if (std::find(objects_.begin(), objects_.end(), object) != objects_.end())
    throw DuplicateName("object '" + object + "'");
  objects_.push_back(object);
}

void Registry::check_profile(const EnvironmentProfile& p) {
  auto name = std::string(to_string(p.name));
  if (!(p.watcher_sensitivity >= 0.0 && p.watcher_sensitivity <= 1.0))
    throw InvalidDefinition("profile " + name + ": watcher_sensitivity outside [0,1]");
  if (p.name == ProfileId::human_shared && !(p.watcher_sensitivity > 0.7))
    throw InvalidDefinition("profile human_shared: watcher_sensitivity must exceed 0.7");
  if (p.retry_budget < 0) throw InvalidDefinition("profile " + name + ": negative retry_budget");
  if (p.force_limit < 0 || p.speed_limit < 0) throw InvalidDefinition("profile " + name + ": negative bound");
}

void Registry::register_profile(EnvironmentProfile profile) {
  check_profile(profile);
  if (profiles_.count(profile.name)) throw DuplicateName("profile '" + std::string(to_string(profile.name)) + "'");
  for (const auto& z : profile.forbidden_zones)
    if (std::find(zones_.begin(), zones_.end(), z) == zones_.end())
      throw DanglingReference("profile " + std::string(to_string(profile.name)) + " forbids unknown zone '" + z + "'");
  for (const auto& o : profile.restricted_objects)
    if (std::find(objects_.begin(), objects_.end(), o) == objects_.end())
      throw DanglingReference("profile " + std::string(to_string(profile.name)) + " restricts unknown object '" + o +
                              "'");
  auto id = profile.name;
  profiles_.emplace(id, std::move(profile));
}

bool Registry::tag_resolves(const std::string& tag) const {
  for (const auto& [id, p] : profiles_) {
    if (p.accepted_tags.count(tag)) return true;
    if (tag == to_string(id)) return true;
  }
  return false;
}

const CapabilityManifest& Registry::register_capability(CapabilityManifest manifest) {
  if (manifest.name.empty()) throw InvalidDefinition("capability with empty name");
  if (lookup(manifest.name)) throw DuplicateName("capability '" + manifest.name + "'");
  for (const auto& tag : manifest.env_profile_tags)
    if (!tag_resolves(tag))
      throw UnresolvedProfileTag("capability " + manifest.name + ": env_profile tag '" + tag + "' resolves to no profile");
  capabilities_.push_back(std::move(manifest));
  return capabilities_.back();
}

void Registry::register_policy_set(PolicySet set) {
  auto name = std::string(to_string(set.profile));
  if (!profiles_.count(set.profile)) throw DanglingReference("policy set for unregistered profile " + name);
  if (policies_.count(set.profile)) throw DuplicateName("policy set for profile " + name);
  std::set<std::string> ids;
  for (const auto& r : set.rules) {
    if (!ids.insert(r.id).second) throw DuplicateName("rule id '" + r.id + "' in policy set " + name);
    if ((r.outcome == PolicyVerdict::modify) != !r.modifier.empty())
      throw InvalidDefinition("rule " + r.id + ": modifier present iff outcome is modify");
    for (const auto& p : r.when)
      if (p.kind == RulePredicate::Kind::capability_is && !lookup(p.name))
        throw DanglingReference("rule " + r.id + " references unknown capability '" + p.name + "'");
  }
  std::sort(set.rules.begin(), set.rules.end(), [](const PolicyRule& a, const PolicyRule& b) { return a.id < b.id; });
  policies_.emplace(set.profile, std::move(set));
}

const CapabilityManifest* Registry::lookup(std::string_view name) const noexcept {
  for (const auto& c : capabilities_)
    if (c.name == name) return &c;
  return nullptr;
}

const EnvironmentProfile& Registry::profile(ProfileId id) const {
  auto it = profiles_.find(id);
  if (it == profiles_.end()) throw DanglingReference("profile " + std::string(to_string(id)) + " not registered");
  return it->second;
}

const PolicySet& Registry::policy_set(ProfileId id) const {
  static const std::map<ProfileId, PolicySet> empty = [] {
    std::map<ProfileId, PolicySet> m;
    for (auto p : all_values<ProfileId>()) m[p] = PolicySet{p, {}};
    return m;
  }();
  auto it = policies_.find(id);
  if (it != policies_.end()) return it->second;
  if (!profiles_.count(id)) throw DanglingReference("profile " + std::string(to_string(id)) + " not registered");
  return empty.at(id);
}

std::vector<ProfileId> Registry::profile_ids() const {
  std::vector<ProfileId> out;
  for (const auto& [id, _] : profiles_) out.push_back(id);
  return out;
}

void Registry::set_watcher_sensitivity(ProfileId id, double s) {
  auto it = profiles_.find(id);
  if (it == profiles_.end()) throw DanglingReference("profile " + std::string(to_string(id)) + " not registered");
  auto copy = it->second;
  copy.watcher_sensitivity = s;
  check_profile(copy);
  it->second = copy;
}

void Registry::validate() const {
  for (const auto& p : profiles_) check_profile(p.second);
  for (const auto& c : capabilities_)
    for (const auto& tag : c.env_profile_tags)
      if (!tag_resolves(tag)) throw UnresolvedProfileTag("capability " + c.name + ": tag '" + tag + "'");
  for (const auto& [id, set] : policies_)
    for (const auto& r : set.rules)
      for (const auto& p : r.when)
        if (p.kind == RulePredicate::Kind::capability_is && !lookup(p.name))
          throw DanglingReference("rule " + r.id + " references unknown capability '" + p.name + "'");
}

Registry Registry::parse(std::string_view text) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw ParseError(e.mark.line + 1, "<document>", e.msg);
  }
  if (!root.IsMap()) throw ParseError(1, "<document>", "expected a mapping at top level");
  check_keys(root, {"zones", "objects", "profiles", "capabilities", "policies"}, "registry");

  Registry reg;
  if (auto z = root["zones"])
    for (const auto& s : list(z, "zones")) reg.register_zone(s);
  if (auto o = root["objects"])
    for (const auto& s : list(o, "objects")) reg.register_object(s);

  for (const auto& pn : require(root, "profiles")) {
    check_keys(pn,
               {"name", "watcher_sensitivity", "force_limit", "speed_limit", "forbidden_zones",
                "approval_required_risk", "retry_budget", "audit_verbosity", "accepted_tags", "authority",
                "restricted_objects", "disallowed_capabilities"},
               "profile");
    EnvironmentProfile p;
    p.name = enum_field<ProfileId>(require(pn, "name"), "name");
    p.watcher_sensitivity = number(require(pn, "watcher_sensitivity"), "watcher_sensitivity");
    p.force_limit = number(require(pn, "force_limit"), "force_limit");
    p.speed_limit = number(require(pn, "speed_limit"), "speed_limit");
    if (auto n = pn["forbidden_zones"]) p.forbidden_zones = set_of(n, "forbidden_zones");
    if (auto n = pn["approval_required_risk"]) {
      if (scalar(n, "approval_required_risk") != "none")
        p.approval_required_risk = enum_field<Risk>(n, "approval_required_risk");
    }
    p.retry_budget = integer(require(pn, "retry_budget"), "retry_budget");
    if (auto n = pn["audit_verbosity"]) p.audit_verbosity = enum_field<AuditVerbosity>(n, "audit_verbosity");
    p.accepted_tags = set_of(require(pn, "accepted_tags"), "accepted_tags");
    p.authority = enum_field<AuthorityMode>(require(pn, "authority"), "authority");
    if (auto n = pn["restricted_objects"]) p.restricted_objects = set_of(n, "restricted_objects");
    if (auto n = pn["disallowed_capabilities"]) p.disallowed_capabilities = set_of(n, "disallowed_capabilities");
    try {
      reg.register_profile(std::move(p));
    } catch (const InvalidDefinition& e) {
      fail(pn, "profile", e.what());
    }
  }

  for (const auto& cn : require(root, "capabilities")) {
    check_keys(cn, {"name", "inputs", "preconditions", "postconditions", "permissions", "risk", "rollback", "env_profile"},
               "capability");
    CapabilityManifest m;
    m.name = scalar(require(cn, "name"), "name");
    for (const auto& in : list(require(cn, "inputs"), "inputs")) {
      auto colon = in.find(':');
      if (colon == std::string::npos) {
        m.inputs.push_back({in, infer_kind(in)});
      } else {
        auto kind = try_parse<ParamKind>(in.substr(colon + 1));
        if (!kind) fail(cn["inputs"], "inputs", "unknown parameter kind in '" + in + "'");
        m.inputs.push_back({in.substr(0, colon), *kind});
      }
    }
    if (auto n = cn["preconditions"]) m.preconditions = list(n, "preconditions");
    if (auto n = cn["postconditions"]) m.postconditions = list(n, "postconditions");
    if (auto n = cn["permissions"]) m.permissions = set_of(n, "permissions");
    m.risk = enum_field<Risk>(require(cn, "risk"), "risk");
    if (auto n = cn["rollback"]) {
      auto r = scalar(n, "rollback");
      if (r != "none") m.rollback = r;
    }
    m.env_profile_tags = set_of(require(cn, "env_profile"), "env_profile");
    reg.register_capability(std::move(m));
  }

  if (auto pol = root["policies"]) {
    for (const auto& sn : pol) {
      check_keys(sn, {"profile", "rules"}, "policy set");
      PolicySet set;
      set.profile = enum_field<ProfileId>(require(sn, "profile"), "profile");
      for (const auto& rn : require(sn, "rules")) {
        check_keys(rn, {"id", "when", "outcome", "modifier"}, "rule");
        PolicyRule r;
        r.id = scalar(require(rn, "id"), "id");
        auto when = require(rn, "when");
        if (!when.IsSequence()) fail(when, "when", "expected a list");
        for (const auto& w : when) r.when.push_back(parse_predicate(w));
        r.outcome = enum_field<PolicyVerdict>(require(rn, "outcome"), "outcome");
        if (auto mod = rn["modifier"]) {
          if (!mod.IsSequence()) fail(mod, "modifier", "expected a list");
          for (const auto& m : mod) r.modifier.push_back(parse_modifier(m));
        }
        if ((r.outcome == PolicyVerdict::modify) != !r.modifier.empty())
          fail(rn, "modifier", "modifier present iff outcome is modify");
        set.rules.push_back(std::move(r));
      }
      reg.register_policy_set(std::move(set));
    }
  }
  reg.validate();
  return reg;
}

Registry Registry::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RegistryError("cannot open registry file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string Registry::serialize() const {
  YAML::Emitter out;
  out << YAML::BeginMap;
  emit_list(out, "zones", zones_);
  emit_list(out, "objects", objects_);

  out << YAML::Key << "profiles" << YAML::Value << YAML::BeginSeq;
  for (const auto& [id, p] : profiles_) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << std::string(to_string(p.name));
    out << YAML::Key << "watcher_sensitivity" << YAML::Value << format_number(p.watcher_sensitivity);
    out << YAML::Key << "force_limit" << YAML::Value << format_number(p.force_limit);
    out << YAML::Key << "speed_limit" << YAML::Value << format_number(p.speed_limit);
    emit_list(out, "forbidden_zones", p.forbidden_zones);
    out << YAML::Key << "approval_required_risk" << YAML::Value
        << (p.approval_required_risk ? std::string(to_string(*p.approval_required_risk)) : std::string("none"));
    out << YAML::Key << "retry_budget" << YAML::Value << p.retry_budget;
    out << YAML::Key << "audit_verbosity" << YAML::Value << std::string(to_string(p.audit_verbosity));
    emit_list(out, "accepted_tags", p.accepted_tags);
    out << YAML::Key << "authority" << YAML::Value << std::string(to_string(p.authority));
    emit_list(out, "restricted_objects", p.restricted_objects);
    emit_list(out, "disallowed_capabilities", p.disallowed_capabilities);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "capabilities" << YAML::Value << YAML::BeginSeq;
  for (const auto& c : capabilities_) {
    out << YAML::BeginMap;
    out << YAML::Key << "name" << YAML::Value << c.name;
    std::vector<std::string> inputs;
    for (const auto& p : c.inputs)
      inputs.push_back(infer_kind(p.name) == p.kind ? p.name : p.name + ":" + std::string(to_string(p.kind)));
    emit_list(out, "inputs", inputs);
    emit_list(out, "preconditions", c.preconditions);
    emit_list(out, "postconditions", c.postconditions);
    emit_list(out, "permissions", c.permissions);
    out << YAML::Key << "risk" << YAML::Value << std::string(to_string(c.risk));
    out << YAML::Key << "rollback" << YAML::Value << c.rollback.value_or("none");
    emit_list(out, "env_profile", c.env_profile_tags);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;

  out << YAML::Key << "policies" << YAML::Value << YAML::BeginSeq;
  for (const auto& [id, set] : policies_) {
    out << YAML::BeginMap;
    out << YAML::Key << "profile" << YAML::Value << std::string(to_string(id));
    out << YAML::Key << "rules" << YAML::Value << YAML::BeginSeq;
    for (const auto& r : set.rules) {
      out << YAML::BeginMap;
      out << YAML::Key << "id" << YAML::Value << r.id;
      std::vector<std::string> when;
      for (const auto& p : r.when) when.push_back(predicate_text(p));
      emit_list(out, "when", when);
      out << YAML::Key << "outcome" << YAML::Value << std::string(to_string(r.outcome));
      if (!r.modifier.empty()) {
        std::vector<std::string> mods;
        for (const auto& m : r.modifier) mods.push_back(modifier_text(m));
        emit_list(out, "modifier", mods);
      }
      out << YAML::EndMap;
    }
    out << YAML::EndSeq << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

bool Registry::operator==(const Registry& o) const {
  return zones_ == o.zones_ && objects_ == o.objects_ && capabilities_ == o.capabilities_ && profiles_ == o.profiles_ &&
         policies_ == o.policies_;
}

}  // namespace capgov
