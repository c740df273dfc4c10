#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include "capgov/enums.hpp"
#include "capgov/params.hpp"
#include "capgov/registry.hpp"

namespace capgov {

struct RequestMeta {
  double confidence = 1.0;
  std::string intent = "task";
  int priority = 0;
  // Execution-mode tag the agent declares; absent when the agent could not resolve it.
  std::optional<std::string> execution_mode;
  bool operator==(const RequestMeta&) const = default;
};

struct InvocationRequest {
  std::string capability;
  ParamMap params;
  RequestMeta meta;
  ProfileId profile = ProfileId::sim_relaxed;
  std::set<std::string> agent_permissions;
  std::optional<std::string> approval_token;
  bool operator==(const InvocationRequest&) const = default;
};

nlohmann::json to_json(const InvocationRequest& r);
InvocationRequest request_from_json(const nlohmann::json& j);

struct GovernanceContext {
  const Registry* registry = nullptr;
  const EnvironmentProfile* profile = nullptr;
  const PolicySet* policy_set = nullptr;
  AuthorityMode authority = AuthorityMode::review_only;
  std::uint64_t clock = 0;
  // Precondition identifiers the environment currently reports as unsatisfied.
  std::set<std::string> unsatisfied_preconditions;
};

GovernanceContext make_context(const Registry& reg, ProfileId profile, std::uint64_t clock = 0);

struct AdmissionOutcome {
  AdmissionVerdict verdict = AdmissionVerdict::accept;
  AdmissionReason reason = AdmissionReason::none;
  bool operator==(const AdmissionOutcome&) const = default;
};

struct PolicyOutcome {
  PolicyVerdict verdict = PolicyVerdict::allow;
  std::optional<ParamMap> constrained_params;
  std::string fired_rule;  // empty when no rule matched
  bool operator==(const PolicyOutcome&) const = default;
};

struct UnsatisfiableConstraint : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Which governance stages are active. The baselines and ablations switch these off.
struct GovernComponents {
  AdmissionMode admission = AdmissionMode::full;
  bool policy_guard = true;
  bool human_gate = true;
  bool operator==(const GovernComponents&) const = default;
};

AdmissionOutcome admit(const InvocationRequest& request, const GovernanceContext& ctx,
                       const GovernComponents& components = {});
PolicyOutcome check(const InvocationRequest& request, const GovernanceContext& ctx);
InvocationRequest constrain(const InvocationRequest& request, const PolicyRule& rule, const GovernanceContext& ctx);

// Whether a rule's conjunction holds for the request.
bool rule_matches(const PolicyRule& rule, const InvocationRequest& request, const GovernanceContext& ctx);

// True when the parameters sit inside the profile's force and speed bounds.
bool within_profile_bounds(const ParamMap& params, const EnvironmentProfile& profile);

enum class Classification { launch, refused, deferred, escalated };
std::string_view to_string(Classification c);

class GovernanceDecision;

// Proof that a request went through govern and was cleared to launch.
class LaunchAuthorization {
 public:
  const InvocationRequest& request() const { return request_; }
  const ParamMap& final_params() const { return request_.params; }

 private:
  friend GovernanceDecision govern(const InvocationRequest&, const GovernanceContext&, const GovernComponents&);
  explicit LaunchAuthorization(InvocationRequest r) : request_(std::move(r)) {}
  InvocationRequest request_;
};

struct StageTimings {
  std::uint64_t admission_ns = 0;
  std::uint64_t policy_ns = 0;
};

class GovernanceDecision {
 public:
  Classification classification = Classification::refused;
  AdmissionOutcome admission;
  std::optional<PolicyOutcome> policy;  // absent when admission stopped the request or the guard is off
  std::string refusal;                  // coded reason when refused or escalated
  StageTimings timings;

  const LaunchAuthorization* authorization() const { return launch_ ? &*launch_ : nullptr; }
  bool launched() const { return classification == Classification::launch; }

 private:
  friend GovernanceDecision govern(const InvocationRequest&, const GovernanceContext&, const GovernComponents&);
  std::optional<LaunchAuthorization> launch_;
};

GovernanceDecision govern(const InvocationRequest& request, const GovernanceContext& ctx,
                          const GovernComponents& components = {});

// Restrictiveness rank used by the monotone-strictness property: launch unchanged < launch modified < blocked.
int strictness_rank(const GovernanceDecision& d);

}  // namespace capgov
