#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "capgov/enums.hpp"
#include "capgov/governance.hpp"
#include "capgov/rng.hpp"
#include "capgov/watcher.hpp"

namespace capgov {

struct InterventionDecision {
  InterventionAction action = InterventionAction::continue_;
  WatchSignal cause;
  std::string permitting_rule;
};

// Interventions the active policy accepts for a signal. Used as ground truth for compliance.
std::set<InterventionAction> permitted_interventions(const WatchSignal& signal, const EnvironmentProfile& profile,
                                                     AuthorityMode authority, const CapabilityManifest& manifest);

InterventionDecision intervene(const WatchSignal& signal, const GovernanceContext& ctx, AuthorityMode authority,
                               const CapabilityManifest& manifest);

struct FailureEvent {
  std::uint64_t session_id = 0;
  FailureKind kind = FailureKind::failed_grasp;
  bool detected = true;
};

// Failures that leave the world in a changed state a rollback routine can undo.
bool state_changing(FailureKind k);

struct RecoveryPlan {
  RecoveryStrategy strategy = RecoveryStrategy::terminate_replan;
  int budget = 0;
  std::optional<std::string> rollback_routine;
};

struct RecoveryConfig {
  double rollback_success = 0.90;
  double retry_success = 0.5;
  int rollback_ticks = 4;
  int retry_ticks = 3;
  int recovery_capability_ticks = 3;
  int mode_switch_ticks = 3;
  int takeover_ticks = 4;
  int terminate_ticks = 1;
  std::string recovery_capability = "safe_retreat";
  bool takeover_available = true;
  bool rollback_available = true;

  // Capability-embedded fallback used when no recovery manager is present.
  int fallback_timeout_ticks = 20;
  int fallback_attempts = 2;
  int fallback_attempt_ticks = 3;
  double fallback_success = 0.2;

  // Capability-internal baseline: local retry after its own failure detector fires.
  int local_detect_ticks = 8;
  int local_attempts = 2;
  double local_retry_success = 0.5;
};

bool recovery_permitted(RecoveryStrategy s, FailureKind kind, const CapabilityManifest& manifest,
                        const EnvironmentProfile& profile, AuthorityMode authority, int attempt);

struct RecoveryStep {
  RecoveryStrategy strategy = RecoveryStrategy::terminate_replan;
  int attempt = 1;
  bool success = false;
  int ticks = 0;
  std::optional<std::string> routine;
};

nlohmann::json to_json(const RecoveryStep& s);
RecoveryStep recovery_step_from_json(const nlohmann::json& j);

enum class RecoveryResult { recovered, rolled_back, terminated, handed_over, exhausted, rollback_failed };
std::string_view to_string(RecoveryResult r);
std::optional<RecoveryResult> parse_recovery_result(std::string_view s);

struct RecoveryOutcome {
  RecoveryResult result = RecoveryResult::exhausted;
  std::vector<RecoveryStep> steps;
  // True when the session continues (RUNNING); otherwise it ends with terminal_outcome.
  bool resumes() const { return result == RecoveryResult::recovered || result == RecoveryResult::rolled_back; }
  Outcome terminal_outcome() const;
  bool safe() const { return result != RecoveryResult::exhausted && result != RecoveryResult::rollback_failed; }
};

RecoveryPlan plan_recovery(const FailureEvent& failure, const CapabilityManifest& manifest,
                           const GovernanceContext& ctx, const RecoveryConfig& cfg);

// Selects a plan and executes it to a concluded outcome. Bounded by retry_budget + 1 attempts.
RecoveryOutcome recover(const FailureEvent& failure, const CapabilityManifest& manifest, const GovernanceContext& ctx,
                        Rng& rng, const RecoveryConfig& cfg);

// Executes a single rollback routine; used both by recovery and by rollback interventions.
RecoveryStep attempt_rollback(const CapabilityManifest& manifest, Rng& rng, const RecoveryConfig& cfg);

RecoveryOutcome unstructured_fallback(Rng& rng, const RecoveryConfig& cfg);
RecoveryOutcome local_retry(FailureKind kind, Rng& rng, const RecoveryConfig& cfg);

int recovery_ticks(const std::vector<RecoveryStep>& steps);
double recovery_time(const std::vector<RecoveryStep>& steps, double tick_seconds);

}  // namespace capgov
