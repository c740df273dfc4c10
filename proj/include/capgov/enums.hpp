#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace capgov {

enum class Risk { low, medium, high };
enum class ProfileId { sim_relaxed, real_restricted, human_shared, test_audit };
enum class ParamKind { object, pose, zone, scalar };
enum class AuditVerbosity { normal, full };
enum class AuthorityMode { approval_required, approval_on_escalation, interrupt_enabled, takeover_enabled, review_only };

enum class PolicyVerdict { allow, modify, deny, escalate };

enum class AdmissionVerdict { accept, reject, defer, escalate };
enum class AdmissionReason {
  none,
  unknown_capability,
  unregistered_for_profile,
  missing_permission,
  profile_disallowed,
  supervisory_review,
  precondition_pending,
  static_rule_violation,
};

enum class SessionState { RUNNING, PAUSED, ESCALATED, RECOVERING, COMPLETED, FAILED };
enum class SessionEvent { anomaly, pause, resume, stop, recover_begin, recover_done, recover_failed, escalate, clearance, complete };

enum class SignalKind { normal, warning, violation, timeout, instability, escalation, completion };
enum class ViolationType { force_exceeded, speed_exceeded, retry_exceeded, postcondition_failed, zone_violation, human_proximity };

enum class FailureKind {
  failed_grasp,
  blocked_path,
  perception_mismatch,
  timeout,
  precondition_failure,
  unsafe_state,
  policy_violation,
  tool_unavailable,
};

enum class RecoveryStrategy {
  bounded_retry,
  invoke_recovery_capability,
  rollback,
  mode_switch_lower_risk,
  terminate_replan,
  human_takeover,
  // Capability-embedded fallback used when no governance recovery manager is present.
  unstructured_retry,
};

enum class InterventionAction { continue_, pause, stop, rollback, escalate };

enum class TicketStatus { pending, approved, denied, expired };
enum class HumanVerdict { approve, deny, pause, stop, takeover, resume };

enum class UnauthorizedKind { missing_permission, restricted_object, forbidden_zone, missing_approval, env_profile_mismatch };

enum class TelemetryKind {
  progress,
  controller_status,
  force_reading,
  speed_reading,
  retry_tick,
  postcondition_status,
  zone_entered,
  human_proximity,
  timeout_tick,
};

enum class Outcome {
  completed,
  substrate_error,
  stopped_by_human,
  stopped_by_governance,
  stopped_locally,
  stopped_by_shutdown,
  handover_unavailable,
  handed_over,
  rollback_failed,
  recovery_exhausted,
  terminated_replan,
  audit_failure,
  human_denied,
  refused,
};

enum class Variant {
  proposed,
  direct_execution,
  static_rule,
  capability_internal,
  ablate_admit,
  ablate_policy,
  ablate_watch,
  ablate_recov,
  ablate_human,
  override_on,
  override_off,
};

enum class AdmissionMode { full, static_only, off };

template <typename E>
struct enum_names;

#define CAPGOV_ENUM_NAMES(E, ...)                                 \
  template <>                                                     \
  struct enum_names<E> {                                          \
    static constexpr auto values = std::to_array<std::string_view>({__VA_ARGS__}); \
    static constexpr std::string_view type = #E;                  \
  };

CAPGOV_ENUM_NAMES(Risk, "low", "medium", "high")
CAPGOV_ENUM_NAMES(ProfileId, "sim_relaxed", "real_restricted", "human_shared", "test_audit")
CAPGOV_ENUM_NAMES(ParamKind, "object", "pose", "zone", "scalar")
CAPGOV_ENUM_NAMES(AuditVerbosity, "normal", "full")
CAPGOV_ENUM_NAMES(AuthorityMode, "approval_required", "approval_on_escalation", "interrupt_enabled", "takeover_enabled",
                  "review_only")
CAPGOV_ENUM_NAMES(PolicyVerdict, "allow", "modify", "deny", "escalate")
CAPGOV_ENUM_NAMES(AdmissionVerdict, "accept", "reject", "defer", "escalate")
CAPGOV_ENUM_NAMES(AdmissionReason, "none", "unknown_capability", "unregistered_for_profile", "missing_permission",
                  "profile_disallowed", "supervisory_review", "precondition_pending", "static_rule_violation")
CAPGOV_ENUM_NAMES(SessionState, "RUNNING", "PAUSED", "ESCALATED", "RECOVERING", "COMPLETED", "FAILED")
CAPGOV_ENUM_NAMES(SessionEvent, "anomaly", "pause", "resume", "stop", "recover_begin", "recover_done", "recover_failed",
                  "escalate", "clearance", "complete")
CAPGOV_ENUM_NAMES(SignalKind, "normal", "warning", "violation", "timeout", "instability", "escalation", "completion")
CAPGOV_ENUM_NAMES(ViolationType, "force_exceeded", "speed_exceeded", "retry_exceeded", "postcondition_failed",
                  "zone_violation", "human_proximity")
CAPGOV_ENUM_NAMES(FailureKind, "failed_grasp", "blocked_path", "perception_mismatch", "timeout", "precondition_failure",
                  "unsafe_state", "policy_violation", "tool_unavailable")
CAPGOV_ENUM_NAMES(RecoveryStrategy, "bounded_retry", "invoke_recovery_capability", "rollback", "mode_switch_lower_risk",
                  "terminate_replan", "human_takeover", "unstructured_retry")
CAPGOV_ENUM_NAMES(InterventionAction, "continue", "pause", "stop", "rollback", "escalate")
CAPGOV_ENUM_NAMES(TicketStatus, "pending", "approved", "denied", "expired")
CAPGOV_ENUM_NAMES(HumanVerdict, "approve", "deny", "pause", "stop", "takeover", "resume")
CAPGOV_ENUM_NAMES(UnauthorizedKind, "missing_permission", "restricted_object", "forbidden_zone", "missing_approval",
                  "env_profile_mismatch")

CAPGOV_ENUM_NAMES(TelemetryKind, "progress", "controller_status", "force_reading", "speed_reading", "retry_tick",
                  "postcondition_status", "zone_entered", "human_proximity", "timeout_tick")
CAPGOV_ENUM_NAMES(Outcome, "completed", "substrate_error", "stopped_by_human", "stopped_by_governance", "stopped_locally",
                  "stopped_by_shutdown", "handover_unavailable", "handed_over", "rollback_failed", "recovery_exhausted",
                  "terminated_replan", "audit_failure", "human_denied", "refused")
CAPGOV_ENUM_NAMES(Variant, "proposed", "direct_execution", "static_rule", "capability_internal", "ablate_admit",
                  "ablate_policy", "ablate_watch", "ablate_recov", "ablate_human", "override_on", "override_off")
CAPGOV_ENUM_NAMES(AdmissionMode, "full", "static_only", "off")

#undef CAPGOV_ENUM_NAMES

template <typename E>
constexpr std::size_t enum_count() {
  return enum_names<E>::values.size();
}

template <typename E>
constexpr std::string_view to_string(E e) {
  return enum_names<E>::values.at(static_cast<std::size_t>(e));
}

template <typename E>
constexpr std::optional<E> try_parse(std::string_view s) {
  const auto& v = enum_names<E>::values;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] == s) return static_cast<E>(i);
  }
  return std::nullopt;
}

template <typename E>
E parse_enum(std::string_view s) {
  if (auto e = try_parse<E>(s)) return *e;
  throw std::invalid_argument("unknown " + std::string(enum_names<E>::type) + " value '" + std::string(s) + "'");
}

template <typename E>
constexpr std::array<E, enum_names<E>::values.size()> all_values() {
  std::array<E, enum_names<E>::values.size()> out{};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<E>(i);
  return out;
}

constexpr bool at_least(Risk r, Risk threshold) {
  return static_cast<int>(r) >= static_cast<int>(threshold);
}

}  // namespace capgov
