#include "capgov/recovery.hpp"

namespace capgov {

using nlohmann::json;

std::set<InterventionAction> permitted_interventions(const WatchSignal& signal, const EnvironmentProfile& profile,
                                                     AuthorityMode authority, const CapabilityManifest& manifest) {
  (void)profile;
  (void)authority;
  using A = InterventionAction;
  switch (signal.kind) {
    case SignalKind::normal:
    case SignalKind::completion: return {A::continue_};
    case SignalKind::warning: return {A::continue_, A::pause};
    case SignalKind::timeout: return {A::stop, A::escalate};
    case SignalKind::instability:
      if (manifest.reversible()) return {A::rollback, A::stop};
      return {A::stop};
    case SignalKind::violation:
    case SignalKind::escalation: break;
  }
  switch (*signal.violation) {
    case ViolationType::human_proximity: return {A::pause, A::escalate, A::stop};
    case ViolationType::retry_exceeded: return {A::escalate, A::stop};
    default:
      if (manifest.reversible()) return {A::stop, A::escalate, A::rollback};
      return {A::stop, A::escalate};
  }
}

InterventionDecision intervene(const WatchSignal& signal, const GovernanceContext& ctx, AuthorityMode authority,
                               const CapabilityManifest& manifest) {
  using A = InterventionAction;
  InterventionDecision d{A::continue_, signal, ""};
  switch (signal.kind) {
    case SignalKind::normal:
    case SignalKind::warning:
    case SignalKind::completion: d.action = A::continue_; break;
    case SignalKind::timeout: d.action = A::stop; break;
    case SignalKind::instability: d.action = manifest.reversible() ? A::rollback : A::stop; break;
    case SignalKind::violation:
    case SignalKind::escalation:
      if (*signal.violation == ViolationType::retry_exceeded) {
        d.action = A::escalate;
      } else if (*signal.violation == ViolationType::human_proximity) {
        d.action = A::pause;
      } else if (authority == AuthorityMode::takeover_enabled) {
        d.action = A::escalate;
      } else if (manifest.reversible()) {
        d.action = A::rollback;
      } else {
        d.action = A::stop;
      }
      break;
  }
  d.permitting_rule = std::string(to_string(ctx.profile->name)) + ":" + std::string(to_string(signal.kind)) +
                      (signal.violation ? "." + std::string(to_string(*signal.violation)) : std::string()) + "->" +
                      std::string(to_string(d.action));
  return d;
}

bool state_changing(FailureKind k) {
  return k == FailureKind::failed_grasp || k == FailureKind::blocked_path || k == FailureKind::perception_mismatch;
}

bool recovery_permitted(RecoveryStrategy s, FailureKind kind, const CapabilityManifest& manifest,
                        const EnvironmentProfile& profile, AuthorityMode authority, int attempt) {
  // Shared spaces require the human to confirm before the robot retries a state-changing failure on its own.
  const bool needs_human = authority == AuthorityMode::takeover_enabled && state_changing(kind);
  switch (s) {
    case RecoveryStrategy::terminate_replan: return true;
    case RecoveryStrategy::human_takeover: return authority == AuthorityMode::takeover_enabled;
    case RecoveryStrategy::rollback: return manifest.reversible() && state_changing(kind) && !needs_human;
    case RecoveryStrategy::invoke_recovery_capability: return kind == FailureKind::blocked_path && !needs_human;
    case RecoveryStrategy::bounded_retry:
      return kind != FailureKind::timeout && attempt >= 1 && attempt <= profile.retry_budget && !needs_human;
    case RecoveryStrategy::mode_switch_lower_risk:
      return (manifest.has_input("speed") || manifest.has_input("force")) && kind != FailureKind::timeout &&
             !needs_human;
    case RecoveryStrategy::unstructured_retry: return false;
  }
  return false;
}

json to_json(const RecoveryStep& s) {
  json j{{"strategy", to_string(s.strategy)}, {"attempt", s.attempt}, {"success", s.success}, {"ticks", s.ticks}};
  if (s.routine) j["routine"] = *s.routine;
  return j;
}

RecoveryStep recovery_step_from_json(const json& j) {
  RecoveryStep s;
  s.strategy = parse_enum<RecoveryStrategy>(j.at("strategy").get<std::string>());
  s.attempt = j.at("attempt").get<int>();
  s.success = j.at("success").get<bool>();
  s.ticks = j.at("ticks").get<int>();
  if (j.contains("routine")) s.routine = j.at("routine").get<std::string>();
  return s;
}

std::string_view to_string(RecoveryResult r) {
  switch (r) {
    case RecoveryResult::recovered: return "recovered";
    case RecoveryResult::rolled_back: return "rolled_back";
    case RecoveryResult::terminated: return "terminated";
    case RecoveryResult::handed_over: return "handed_over";
    case RecoveryResult::exhausted: return "exhausted";
    case RecoveryResult::rollback_failed: return "rollback_failed";
  }
  return "exhausted";
}

std::optional<RecoveryResult> parse_recovery_result(std::string_view s) {
  for (auto r : {RecoveryResult::recovered, RecoveryResult::rolled_back, RecoveryResult::terminated,
                 RecoveryResult::handed_over, RecoveryResult::exhausted, RecoveryResult::rollback_failed})
    if (to_string(r) == s) return r;
  return std::nullopt;
}

Outcome RecoveryOutcome::terminal_outcome() const {
  switch (result) {
    case RecoveryResult::terminated: return Outcome::terminated_replan;
    case RecoveryResult::handed_over: return Outcome::handed_over;
    case RecoveryResult::rollback_failed: return Outcome::rollback_failed;
    case RecoveryResult::exhausted: return Outcome::recovery_exhausted;
    default: return Outcome::completed;
  }
}

RecoveryPlan plan_recovery(const FailureEvent& failure, const CapabilityManifest& manifest,
                           const GovernanceContext& ctx, const RecoveryConfig& cfg) {
  const auto& p = *ctx.profile;
  if (failure.kind == FailureKind::timeout) return {RecoveryStrategy::terminate_replan, 0, std::nullopt};
  if (cfg.takeover_available && ctx.authority == AuthorityMode::takeover_enabled && state_changing(failure.kind))
    return {RecoveryStrategy::human_takeover, 0, std::nullopt};
  if (cfg.rollback_available && manifest.reversible() && state_changing(failure.kind) &&
      recovery_permitted(RecoveryStrategy::rollback, failure.kind, manifest, p, ctx.authority, 1))
    return {RecoveryStrategy::rollback, 0, manifest.rollback};
  if (failure.kind == FailureKind::blocked_path &&
      recovery_permitted(RecoveryStrategy::invoke_recovery_capability, failure.kind, manifest, p, ctx.authority, 1))
    return {RecoveryStrategy::invoke_recovery_capability, 0, cfg.recovery_capability};
  if (recovery_permitted(RecoveryStrategy::bounded_retry, failure.kind, manifest, p, ctx.authority, 1))
    return {RecoveryStrategy::bounded_retry, p.retry_budget, std::nullopt};
  if (recovery_permitted(RecoveryStrategy::mode_switch_lower_risk, failure.kind, manifest, p, ctx.authority, 1))
    return {RecoveryStrategy::mode_switch_lower_risk, 0, std::nullopt};
  return {RecoveryStrategy::terminate_replan, 0, std::nullopt};
}

RecoveryStep attempt_rollback(const CapabilityManifest& manifest, Rng& rng, const RecoveryConfig& cfg) {
  return {RecoveryStrategy::rollback, 1, rng.bernoulli(cfg.rollback_success), cfg.rollback_ticks, manifest.rollback};
}

RecoveryOutcome recover(const FailureEvent& failure, const CapabilityManifest& manifest, const GovernanceContext& ctx,
                        Rng& rng, const RecoveryConfig& cfg) {
  RecoveryOutcome out;
  auto plan = plan_recovery(failure, manifest, ctx, cfg);
  switch (plan.strategy) {
    case RecoveryStrategy::terminate_replan:
      out.steps.push_back({RecoveryStrategy::terminate_replan, 1, true, cfg.terminate_ticks, std::nullopt});
      out.result = failure.kind == FailureKind::timeout ? RecoveryResult::terminated : RecoveryResult::exhausted;
      if (failure.kind != FailureKind::timeout) out.steps.back().success = false;
      return out;
    case RecoveryStrategy::human_takeover:
      out.steps.push_back({RecoveryStrategy::human_takeover, 1, true, cfg.takeover_ticks, std::nullopt});
      out.result = RecoveryResult::handed_over;
      return out;
    case RecoveryStrategy::rollback: {
      auto step = attempt_rollback(manifest, rng, cfg);
      out.steps.push_back(step);
      // A failed rollback is not retried: the state it left behind is unknown.
      out.result = step.success ? RecoveryResult::rolled_back : RecoveryResult::rollback_failed;
      return out;
    }
    case RecoveryStrategy::invoke_recovery_capability:
      out.steps.push_back({RecoveryStrategy::invoke_recovery_capability, 1, true, cfg.recovery_capability_ticks,
                           plan.rollback_routine});
      out.result = RecoveryResult::recovered;
      return out;
    case RecoveryStrategy::bounded_retry:
    case RecoveryStrategy::mode_switch_lower_risk:
    case RecoveryStrategy::unstructured_retry: break;
  }

  if (plan.strategy == RecoveryStrategy::bounded_retry) {
    for (int attempt = 1; attempt <= plan.budget; ++attempt) {
      bool ok = rng.bernoulli(cfg.retry_success);
      out.steps.push_back({RecoveryStrategy::bounded_retry, attempt, ok, cfg.retry_ticks, std::nullopt});
      if (ok) {
        out.result = RecoveryResult::recovered;
        return out;
      }
    }
  }
  if (recovery_permitted(RecoveryStrategy::mode_switch_lower_risk, failure.kind, manifest, *ctx.profile,
                         ctx.authority, 1)) {
    out.steps.push_back({RecoveryStrategy::mode_switch_lower_risk, 1, true, cfg.mode_switch_ticks, std::nullopt});
    out.result = RecoveryResult::recovered;
    return out;
  }
  out.result = RecoveryResult::exhausted;
  return out;
}

RecoveryOutcome unstructured_fallback(Rng& rng, const RecoveryConfig& cfg) {
  RecoveryOutcome out;
  for (int attempt = 1; attempt <= cfg.fallback_attempts; ++attempt) {
    bool ok = rng.bernoulli(cfg.fallback_success);
    int ticks = cfg.fallback_attempt_ticks + (attempt == 1 ? cfg.fallback_timeout_ticks : 0);
    out.steps.push_back({RecoveryStrategy::unstructured_retry, attempt, ok, ticks, std::nullopt});
    if (ok) {
      out.result = RecoveryResult::recovered;
      return out;
    }
  }
  out.result = RecoveryResult::exhausted;
  return out;
}

RecoveryOutcome local_retry(FailureKind kind, Rng& rng, const RecoveryConfig& cfg) {
  RecoveryOutcome out;
  for (int attempt = 1; attempt <= cfg.local_attempts; ++attempt) {
    // Re-running an action that timed out only times out again.
    bool ok = rng.bernoulli(cfg.local_retry_success) && kind != FailureKind::timeout;
    int ticks = cfg.retry_ticks + (attempt == 1 ? cfg.local_detect_ticks : 0);
    out.steps.push_back({RecoveryStrategy::bounded_retry, attempt, ok, ticks, std::nullopt});
    if (ok) {
      out.result = RecoveryResult::recovered;
      return out;
    }
  }
  out.result = RecoveryResult::exhausted;
  return out;
}

int recovery_ticks(const std::vector<RecoveryStep>& steps) {
  int t = 0;
  for (const auto& s : steps) t += s.ticks;
  return t;
}

double recovery_time(const std::vector<RecoveryStep>& steps, double tick_seconds) {
  return recovery_ticks(steps) * tick_seconds;
}

}  // namespace capgov
