#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <optional>

#include "capgov/audit.hpp"
#include "capgov/harness.hpp"
#include "capgov/metrics.hpp"
#include "capgov/override.hpp"
#include "capgov/recovery.hpp"
#include "capgov/session.hpp"

namespace capgov {

// Integration points for the live endpoint. The harness leaves all of them empty.
struct RuntimeHooks {
  // Resolve tickets by waiting for an operator instead of the simulated approver.
  bool live = false;
  std::chrono::milliseconds ticket_timeout{300000};
  // Session-level operator commands (pause, stop, resume, takeover), already validated.
  std::function<std::optional<HumanDecision>(std::uint64_t session_id)> poll_command;
  std::function<void(std::uint64_t session_id, const std::string& capability, SessionState state,
                     const std::string& cause)>
      on_state;
  std::function<void(std::uint64_t session_id, const std::string& capability, AuthorityMode authority)> on_launch;
  std::function<void()> on_tick;
  const std::atomic<bool>* shutdown = nullptr;
};

// Outcomes that end a session without leaving the world in an unknown state.
bool safe_outcome(Outcome o);

// A violation counts toward detection metrics when it is real under the profile and the watcher
// covers its type there.
bool monitored_violation(const std::optional<ViolationType>& v, const std::string& zone, const EnvironmentProfile& p);

// How a manifested failure ended. Without a concluded recovery (the trace broke mid-recovery)
// only the session outcome is left to judge by.
FailureResult classify_failure(const std::optional<RecoveryResult>& concluded, Outcome final_outcome);

// Runs one trial through admission, policy, launch, watching, intervention, recovery and audit.
TrialRecord run_trial(const TrialSpec& spec, const Registry& reg, const RunConfig& cfg, Variant variant,
                      AuditLog& log, OverrideGateway& gateway, std::uint64_t session_id, RuntimeHooks* hooks = nullptr);

}  // namespace capgov
