#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "capgov/enums.hpp"
#include "capgov/params.hpp"

namespace capgov {

struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::scalar;
  bool operator==(const ParamSpec&) const = default;
};

/// A declared executable unit. A manifest without a rollback routine is non-reversible.
struct CapabilityManifest {
  std::string name;
  std::vector<ParamSpec> inputs;
  std::vector<std::string> preconditions;
  std::vector<std::string> postconditions;
  std::set<std::string> permissions;
  Risk risk = Risk::low;
  std::optional<std::string> rollback;
  std::set<std::string> env_profile_tags;

  bool reversible() const { return rollback.has_value(); }
  bool has_input(std::string_view n) const;
  std::vector<std::string> inputs_of_kind(ParamKind k) const;
  bool operator==(const CapabilityManifest&) const = default;
};

struct EnvironmentProfile {
  ProfileId name = ProfileId::sim_relaxed;
  double watcher_sensitivity = 0.0;
  double force_limit = 0.0;  // newtons
  double speed_limit = 0.0;  // m/s
  std::set<std::string> forbidden_zones;
  std::optional<Risk> approval_required_risk;  // absent: no approval gate in this profile
  int retry_budget = 0;
  AuditVerbosity audit_verbosity = AuditVerbosity::normal;

  // Execution-mode tags this profile accepts; a capability is registered for the
  // profile when at least one of its env_profile tags is accepted.
  std::set<std::string> accepted_tags;
  AuthorityMode authority = AuthorityMode::review_only;
  std::set<std::string> restricted_objects;
  std::set<std::string> disallowed_capabilities;

  bool operator==(const EnvironmentProfile&) const = default;
};

struct RulePredicate {
  enum class Kind { always, capability_is, target_zone_forbidden, object_restricted, mode_disallowed, param_above };
  Kind kind = Kind::always;
  std::string name;  // capability name or parameter name
  double limit = 0.0;
  bool operator==(const RulePredicate&) const = default;
};

struct ModifierOp {
  enum class Kind { clamp, set };
  Kind kind = Kind::clamp;
  std::string param;
  ParamValue value;  // clamp: upper bound (double); set: value to assign
  bool operator==(const ModifierOp&) const = default;
};

struct PolicyRule {
  std::string id;
  std::vector<RulePredicate> when;  // conjunction
  PolicyVerdict outcome = PolicyVerdict::allow;
  std::vector<ModifierOp> modifier;  // non-empty iff outcome == modify
  bool operator==(const PolicyRule&) const = default;
};

struct PolicySet {
  ProfileId profile = ProfileId::sim_relaxed;
  std::vector<PolicyRule> rules;  // ascending id
  bool operator==(const PolicySet&) const = default;
};

struct RegistryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DuplicateName : RegistryError {
  using RegistryError::RegistryError;
};
struct UnresolvedProfileTag : RegistryError {
  using RegistryError::RegistryError;
};
struct DanglingReference : RegistryError {
  using RegistryError::RegistryError;
};
struct InvalidDefinition : RegistryError {
  using RegistryError::RegistryError;
};
struct ParseError : RegistryError {
  ParseError(int line, std::string field, const std::string& what)
      : RegistryError("line " + std::to_string(line) + ", field '" + field + "': " + what),
        line(line),
        field(std::move(field)) {}
  int line;
  std::string field;
};

/// Capabilities, environment profiles and policy sets. Immutable once a run starts.
class Registry {
 public:
  void register_zone(const std::string& zone);
  void register_object(const std::string& object);
  void register_profile(EnvironmentProfile profile);
  const CapabilityManifest& register_capability(CapabilityManifest manifest);
  void register_policy_set(PolicySet set);

  const CapabilityManifest* lookup(std::string_view name) const noexcept;
  const EnvironmentProfile& profile(ProfileId id) const;
  const PolicySet& policy_set(ProfileId id) const;
  bool has_profile(ProfileId id) const { return profiles_.count(id) != 0; }

  const std::vector<CapabilityManifest>& capabilities() const { return capabilities_; }
  const std::vector<std::string>& zones() const { return zones_; }
  const std::vector<std::string>& objects() const { return objects_; }
  std::vector<ProfileId> profile_ids() const;

  // Calibration hook: the only mutation allowed after load, applied before any session starts.
  void set_watcher_sensitivity(ProfileId id, double s);

  // Cross-reference check over the whole registry.
  void validate() const;

  static Registry parse(std::string_view text);
  static Registry load_file(const std::filesystem::path& path);
  std::string serialize() const;

  bool operator==(const Registry& o) const;

 private:
  static void check_profile(const EnvironmentProfile& p);
  bool tag_resolves(const std::string& tag) const;

  std::vector<std::string> zones_;
  std::vector<std::string> objects_;
  std::vector<CapabilityManifest> capabilities_;
  std::map<ProfileId, EnvironmentProfile> profiles_;
  std::map<ProfileId, PolicySet> policies_;
};

}  // namespace capgov
