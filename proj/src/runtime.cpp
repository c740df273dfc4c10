#include "capgov/runtime.hpp"

#include <chrono>
#include <thread>

#include "capgov/watcher.hpp"

namespace capgov {

using nlohmann::json;

bool safe_outcome(Outcome o) {
  switch (o) {
    case Outcome::completed:
    case Outcome::stopped_by_human:
    case Outcome::stopped_by_governance:
    case Outcome::stopped_locally:
    case Outcome::stopped_by_shutdown:
    case Outcome::handover_unavailable:
    case Outcome::handed_over:
    case Outcome::terminated_replan: return true;
    default: return false;
  }
}

FailureResult classify_failure(const std::optional<RecoveryResult>& concluded, Outcome final_outcome) {
  if (!concluded) return safe_outcome(final_outcome) ? FailureResult::safe_terminated : FailureResult::unrecovered;
  switch (*concluded) {
    case RecoveryResult::recovered:
    case RecoveryResult::rolled_back: return FailureResult::recovered;
    case RecoveryResult::terminated:
    case RecoveryResult::handed_over: return FailureResult::safe_terminated;
    default: return FailureResult::unrecovered;
  }
}

bool monitored_violation(const std::optional<ViolationType>& v, const std::string& zone, const EnvironmentProfile& p) {
  if (!v) return false;
  if (*v == ViolationType::zone_violation && !p.forbidden_zones.count(zone)) return false;
  return ExecutionWatcher::covers(*v, p);
}

namespace {

std::uint64_t elapsed_ns(std::chrono::steady_clock::time_point t0) {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count());
}

struct TrialAbort {};

class TrialRunner {
 public:
  TrialRunner(const TrialSpec& spec, const Registry& reg, const RunConfig& cfg, Variant variant, AuditLog& log,
              OverrideGateway& gateway, std::uint64_t sid, RuntimeHooks* hooks)
      : spec_(spec),
        reg_(reg),
        cfg_(cfg),
        variant_(variant),
        vs_(variant_spec(variant)),
        log_(log),
        gateway_(gateway),
        sid_(sid),
        hooks_(hooks),
        manifest_(reg.lookup(spec.capability)),
        profile_(reg.profile(spec.profile)),
        watch_rng_(spec.seed, spec.index, "watch"),
        rollback_rng_(spec.seed, spec.index, "rollback"),
        recovery_rng_(spec.seed, spec.index, "recovery"),
        approval_rng_(spec.seed, spec.index, "approval"),
        approver_(cfg.approve_probability),
        local_(cfg.calibration.b3_sensitivity) {
    ctx_ = make_context(reg, spec.profile, 0);
    ctx_.authority = vs_.human ? profile_.authority : AuthorityMode::review_only;
    rcfg_ = cfg.recovery;
    rcfg_.rollback_success = cfg.calibration.rollback_success;
    rcfg_.takeover_available = vs_.human;
  }

  TrialRecord run() {
    if (!manifest_) throw std::invalid_argument("trial names unregistered capability '" + spec_.capability + "'");
    init_record();
    try {
      govern_and_execute();
    } catch (const StorageFailure&) {
      // Fail closed: nothing further can be recorded, so nothing further may run.
      if (session_) session_->fail_closed(Outcome::audit_failure, tick_);
      final_outcome_ = Outcome::audit_failure;
    } catch (const TrialAbort&) {
    }
    rec_.outcome = final_outcome_;
    if (rec_.failure_injected) rec_.failure_result = classify_failure(concluded_, final_outcome_);
    return rec_;
  }

 private:
  void emit(AuditKind kind, json payload, std::optional<json> gt = std::nullopt) {
    log_.append(sid_, kind, tick_, std::move(payload), std::move(gt));
  }

  bool monitored() const { return monitored_violation(spec_.injection, spec_.violation_zone, profile_); }

  json ground_truth() const {
    json gt{{"authorized", spec_.authorized},
            {"override_scenario", spec_.override_scenario},
            {"unapproved_high_risk", spec_.unapproved_high_risk},
            {"monitored", monitored()}};
    if (spec_.unauthorized_kind) gt["unauthorized_kind"] = to_string(*spec_.unauthorized_kind);
    if (spec_.injection) {
      gt["injection"] = to_string(*spec_.injection);
      gt["injection_step"] = spec_.injection_step;
      gt["episode_length"] = cfg_.episode_length;
      if (!spec_.violation_zone.empty()) gt["violation_zone"] = spec_.violation_zone;
    }
    if (spec_.failure) {
      gt["failure"] = to_string(*spec_.failure);
      gt["failure_step"] = spec_.injection_step + cfg_.episode_length;
    }
    return gt;
  }

  void init_record() {
    rec_.trial_index = spec_.index;
    rec_.authorized = spec_.authorized;
    rec_.unauthorized_kind = spec_.unauthorized_kind;
    rec_.override_scenario = spec_.override_scenario;
    rec_.unapproved_high_risk = spec_.unapproved_high_risk;
    rec_.injection = spec_.injection;
    rec_.monitored = monitored();
  }

  void finish_unlaunched(Outcome o, const std::string& reason) {
    final_outcome_ = o;
    emit(AuditKind::final_outcome, {{"state", nullptr}, {"outcome", to_string(o)}, {"reason", reason},
                                    {"watcher_ns", json::array()}, {"recovery_ns", json::array()}});
  }

  // Returns the ticket after resolution (approved, denied or expired).
  EscalationTicket run_ticket(const InvocationRequest& req, const std::string& reason) {
    auto risk = manifest_ ? manifest_->risk : Risk::high;
    auto t = gateway_.escalate(sid_, req.capability, req.params, risk, reason, req.profile, ctx_.authority);
    emit(AuditKind::human_event, {{"event", "ticket_opened"}, {"ticket", to_json(t)}});
    if (t.status == TicketStatus::expired) return t;
    if (hooks_ && hooks_->live) {
      t = gateway_.wait(t.ticket_id, hooks_->ticket_timeout);
    } else {
      t = gateway_.resolve(t.ticket_id, approver_.decide(t, approval_rng_));
    }
    emit(AuditKind::human_event, {{"event", "ticket_resolved"}, {"ticket", to_json(t)}});
    return t;
  }

  void govern_and_execute() {
    emit(AuditKind::proposal,
         {{"trial", spec_.index}, {"variant", to_string(variant_)}, {"request", to_json(spec_.request)}},
         ground_truth());

    InvocationRequest req = spec_.request;
    if (spec_.defer_once && manifest_ && !manifest_->preconditions.empty())
      ctx_.unsatisfied_preconditions.insert(manifest_->preconditions.front());

    const bool admission_on = vs_.governance.admission != AdmissionMode::off;
    bool first = true;
    std::optional<GovernanceDecision> launched;
    for (int attempt = 1; attempt <= 4 && !launched; ++attempt) {
      auto d = govern(req, ctx_, vs_.governance);
      json adm{{"attempt", attempt},
               {"verdict", to_string(d.admission.verdict)},
               {"reason", to_string(d.admission.reason)},
               {"mode", to_string(vs_.governance.admission)},
               {"governance_result", to_string(d.classification)}};
      if (admission_on) adm["latency_ns"] = d.timings.admission_ns;
      emit(AuditKind::admission_decision, adm);
      if (d.policy) {
        json pol{{"verdict", to_string(d.policy->verdict)},
                 {"fired_rule", d.policy->fired_rule},
                 {"latency_ns", d.timings.policy_ns}};
        if (d.policy->constrained_params) pol["constrained_params"] = to_json(*d.policy->constrained_params);
        emit(AuditKind::policy_decision, pol);
      }
      if (first) {
        first = false;
        rec_.blocked = d.classification == Classification::refused || d.classification == Classification::escalated;
        if (admission_on) rec_.admission_ns = d.timings.admission_ns;
        if (d.policy) rec_.policy_ns = d.timings.policy_ns;
      }
      switch (d.classification) {
        case Classification::launch: launched = std::move(d); break;
        case Classification::deferred:
          // The agent retries next tick; the environment has caught up by then.
          ++tick_;
          ctx_.clock = tick_;
          ctx_.unsatisfied_preconditions.clear();
          break;
        case Classification::refused: return finish_unlaunched(Outcome::refused, d.refusal);
        case Classification::escalated: {
          auto t = run_ticket(req, d.refusal);
          if (t.status != TicketStatus::approved)
            return finish_unlaunched(Outcome::human_denied, "ticket_" + std::string(to_string(t.status)));
          req.approval_token = "ticket-" + std::to_string(t.ticket_id);
          break;
        }
      }
    }
    if (!launched) return finish_unlaunched(Outcome::refused, "defer_limit");

    ScriptedSubstrate substrate(script());
    session_.emplace(launch(*launched->authorization(), sid_, tick_, substrate.available()));
    emit(AuditKind::launch, {{"session_id", sid_}, {"capability", session_->capability()},
                             {"final_params", to_json(session_->final_params())},
                             {"state", to_string(session_->state())}});
    // Counts as launched only once the launch record is durable.
    rec_.launched = true;
    if (spec_.failure) rec_.rollback_eligible = state_changing(*spec_.failure);
    if (session_->state() == SessionState::FAILED) return end_session();
    session_->set_observer([this](const TransitionRecord& r) {
      emit(AuditKind::state_change,
           {{"from", to_string(r.from)}, {"to", to_string(r.to)}, {"event", to_string(r.event)}, {"cause", r.cause}});
      if (hooks_ && hooks_->on_state) hooks_->on_state(sid_, session_->capability(), r.to, r.cause);
    });
    if (hooks_ && hooks_->on_launch) hooks_->on_launch(sid_, session_->capability(), ctx_.authority);
    if (hooks_ && hooks_->on_state) hooks_->on_state(sid_, session_->capability(), SessionState::RUNNING, "launch");

    execute(substrate);
    if (!is_terminal(session_->state())) session_->finish(SessionEvent::complete, Outcome::completed, "completion", tick_);
    end_session();
  }

  TrialScript script() const {
    TrialScript s;
    s.horizon = cfg_.horizon;
    s.injection = spec_.injection;
    s.injection_step = spec_.injection_step;
    s.episode_length = cfg_.episode_length;
    s.violation_zone = spec_.violation_zone;
    s.failure = spec_.failure;
    s.failure_step = spec_.injection_step + cfg_.episode_length;
    return s;
  }

  void end_session() {
    final_outcome_ = *session_->outcome();
    emit(AuditKind::final_outcome, {{"state", to_string(session_->state())},
                                    {"outcome", to_string(final_outcome_)},
                                    {"watcher_ns", rec_.watcher_ns},
                                    {"recovery_ns", rec_.recovery_ns}});
  }

  bool in_episode(int step) const {
    return spec_.injection && step >= spec_.injection_step && step < spec_.injection_step + cfg_.episode_length;
  }

  bool shutting_down() const { return hooks_ && hooks_->shutdown && hooks_->shutdown->load(); }

  void execute(ScriptedSubstrate& substrate) {
    for (int step = 0; step < cfg_.horizon; ++step) {
      ++tick_;
      if (hooks_ && hooks_->on_tick) hooks_->on_tick();
      if (shutting_down()) return session_->finish(SessionEvent::stop, Outcome::stopped_by_shutdown, "shutdown", tick_);
      apply_operator_commands();
      if (is_terminal(session_->state())) return;

      auto events = substrate.step(sid_, session_->final_params(), profile_, step);
      for (const auto& e : events) {
        if (session_->state() != SessionState::RUNNING) break;
        if (e.kind == TelemetryKind::controller_status && e.fault && *e.fault != FailureKind::unsafe_state) {
          emit(AuditKind::telemetry, to_json(e));
          handle_failure(*e.fault);
          continue;
        }
        observe(e, step, substrate);
      }
      if (is_terminal(session_->state())) return;
    }
  }

  void observe(const TelemetryEvent& e, int step, ScriptedSubstrate& substrate) {
    WatchSignal sig;
    if (vs_.watcher || vs_.local_checker) {
      auto t0 = std::chrono::steady_clock::now();
      sig = vs_.watcher ? watcher_.observe(e, ctx_, watch_rng_) : local_.observe(e, profile_, watch_rng_);
      rec_.watcher_ns.push_back(elapsed_ns(t0));
    }
    const bool anomalous = violation_in(e, profile_).has_value() || sig.kind != SignalKind::normal;
    if (anomalous || profile_.audit_verbosity == AuditVerbosity::full) emit(AuditKind::telemetry, to_json(e));
    if (sig.kind == SignalKind::normal || sig.kind == SignalKind::completion) return;
    emit(AuditKind::watch_signal, {{"step", step}, {"signal", to_json(sig)}, {"monitor", vs_.watcher ? "watcher" : "local"}});

    const bool detection = sig.kind == SignalKind::violation || sig.kind == SignalKind::escalation;
    if (detection) {
      ++rec_.detections;
      if (in_episode(step) && sig.violation == spec_.injection && !rec_.detection_delay) {
        rec_.detection_delay = step - spec_.injection_step;
        rec_.onset_detected = step == spec_.injection_step;
      }
    }

    InterventionAction action;
    std::string rule;
    if (vs_.watcher) {
      auto d = intervene(sig, ctx_, ctx_.authority, *manifest_);
      action = d.action;
      rule = d.permitting_rule;
      if (action == InterventionAction::rollback && !vs_.recovery_manager) {
        action = InterventionAction::stop;
        rule += ":no_rollback_executor->stop";
      }
    } else {
      // A skill-local checker halts on physical limits and logs everything else.
      bool physical = sig.violation == ViolationType::force_exceeded || sig.violation == ViolationType::speed_exceeded;
      action = detection && physical ? InterventionAction::stop : InterventionAction::continue_;
      rule = "local:" + std::string(to_string(action));
    }
    auto permitted = permitted_interventions(sig, profile_, ctx_.authority, *manifest_);
    if (detection && permitted.count(action)) ++rec_.compliant_interventions;
    emit(AuditKind::intervention, {{"step", step},
                                   {"action", to_string(action)},
                                   {"signal", to_json(sig)},
                                   {"authority", to_string(ctx_.authority)},
                                   {"permitting_rule", rule}});
    if (action != InterventionAction::continue_ && in_episode(step)) rec_.intervened = true;
    apply(action, sig, substrate);
  }

  void resolve_in_session(const std::string& reason, ScriptedSubstrate& substrate) {
    auto t = run_ticket(session_->request(), reason);
    if (t.status == TicketStatus::approved) {
      session_->transition(SessionEvent::clearance, "ticket_" + std::to_string(t.ticket_id) + "_approved", tick_);
      substrate.clear_episode();
    } else if (t.status == TicketStatus::expired) {
      session_->finish(SessionEvent::stop, Outcome::handover_unavailable, "ticket_expired", tick_);
    } else if (t.resolution && t.resolution->verdict == HumanVerdict::takeover) {
      session_->finish(SessionEvent::stop, Outcome::handed_over, "takeover", tick_);
    } else {
      session_->finish(SessionEvent::stop, Outcome::stopped_by_human, "ticket_denied", tick_);
    }
  }

  void apply(InterventionAction action, const WatchSignal& sig, ScriptedSubstrate& substrate) {
    const std::string cause =
        std::string(to_string(sig.kind)) + (sig.violation ? ":" + std::string(to_string(*sig.violation)) : "");
    switch (action) {
      case InterventionAction::continue_: return;
      case InterventionAction::stop:
        return session_->finish(SessionEvent::stop, vs_.watcher ? Outcome::stopped_by_governance : Outcome::stopped_locally,
                                cause, tick_);
      case InterventionAction::pause:
        session_->transition(SessionEvent::pause, cause, tick_);
        session_->transition(SessionEvent::escalate, "proximity_incursion", tick_);
        return resolve_in_session("proximity_incursion", substrate);
      case InterventionAction::escalate:
        session_->transition(SessionEvent::escalate, cause, tick_);
        return resolve_in_session(cause, substrate);
      case InterventionAction::rollback: {
        session_->transition(SessionEvent::recover_begin, cause, tick_);
        auto t0 = std::chrono::steady_clock::now();
        auto stepr = attempt_rollback(*manifest_, rollback_rng_, rcfg_);
        rec_.recovery_ns.push_back(elapsed_ns(t0));
        tick_ += static_cast<std::uint64_t>(stepr.ticks);
        ++rec_.recovery_actions;
        bool ok = permitted_interventions(sig, profile_, ctx_.authority, *manifest_).count(InterventionAction::rollback);
        if (ok) ++rec_.permitted_recovery_actions;
        json p = to_json(stepr);
        p["trigger"] = "violation";
        p["manager"] = "governance";
        p["authority"] = to_string(ctx_.authority);
        p["signal"] = to_json(sig);
        p["result"] = stepr.success ? "rolled_back" : "rollback_failed";
        emit(AuditKind::recovery_step, p);
        if (stepr.success) {
          session_->transition(SessionEvent::recover_done, "rollback_ok", tick_);
          substrate.clear_episode();
        } else {
          session_->finish(SessionEvent::recover_failed, Outcome::rollback_failed, "rollback_failed", tick_);
        }
        return;
      }
    }
  }

  void handle_failure(FailureKind kind) {
    rec_.failure_injected = true;
    session_->transition(SessionEvent::recover_begin, "failure:" + std::string(to_string(kind)), tick_);
    FailureEvent fe{sid_, kind, true};
    std::string manager;
    auto t0 = std::chrono::steady_clock::now();
    RecoveryOutcome out;
    if (vs_.recovery_manager) {
      out = recover(fe, *manifest_, ctx_, recovery_rng_, rcfg_);
      manager = "governance";
    } else if (vs_.local_recovery) {
      out = local_retry(kind, recovery_rng_, rcfg_);
      manager = "local";
    } else {
      out = unstructured_fallback(recovery_rng_, rcfg_);
      manager = "fallback";
    }
    rec_.recovery_ns.push_back(elapsed_ns(t0));
    for (std::size_t i = 0; i < out.steps.size(); ++i) {
      const auto& s = out.steps[i];
      ++rec_.recovery_actions;
      if (recovery_permitted(s.strategy, kind, *manifest_, profile_, ctx_.authority, s.attempt))
        ++rec_.permitted_recovery_actions;
      if (s.strategy == RecoveryStrategy::rollback && s.success) rec_.rollback_success = true;
      tick_ += static_cast<std::uint64_t>(s.ticks);
      json p = to_json(s);
      p["trigger"] = "failure";
      p["failure_kind"] = to_string(kind);
      p["manager"] = manager;
      p["authority"] = to_string(ctx_.authority);
      if (i + 1 == out.steps.size()) p["result"] = to_string(out.result);
      emit(AuditKind::recovery_step, p);
    }
    rec_.recovery_ticks = recovery_ticks(out.steps);
    concluded_ = out.result;
    if (out.resumes()) {
      session_->transition(SessionEvent::recover_done, std::string(to_string(out.result)), tick_);
    } else {
      auto ev = out.safe() ? SessionEvent::stop : SessionEvent::recover_failed;
      session_->finish(ev, out.terminal_outcome(), std::string(to_string(out.result)), tick_);
    }
  }

  void apply_operator_commands() {
    if (!hooks_ || !hooks_->poll_command) return;
    while (auto cmd = hooks_->poll_command(sid_)) {
      emit(AuditKind::human_event, {{"event", "operator_command"}, {"decision", to_json(*cmd)}});
      switch (cmd->verdict) {
        case HumanVerdict::stop:
        case HumanVerdict::deny:
          if (!is_terminal(session_->state()))
            session_->finish(SessionEvent::stop, Outcome::stopped_by_human, "operator_stop:" + cmd->operator_id, tick_);
          return;
        case HumanVerdict::takeover:
          if (!is_terminal(session_->state()))
            session_->finish(SessionEvent::stop, Outcome::handed_over, "operator_takeover:" + cmd->operator_id, tick_);
          return;
        case HumanVerdict::pause:
          if (session_->state() == SessionState::RUNNING) {
            session_->transition(SessionEvent::pause, "operator_pause:" + cmd->operator_id, tick_);
            wait_while_paused();
          }
          break;
        case HumanVerdict::resume:
        case HumanVerdict::approve:
          if (session_->state() == SessionState::PAUSED)
            session_->transition(SessionEvent::resume, "operator_resume:" + cmd->operator_id, tick_);
          break;
      }
      if (is_terminal(session_->state())) return;
    }
  }

  void wait_while_paused() {
    auto deadline = std::chrono::steady_clock::now() + hooks_->ticket_timeout;
    while (session_->state() == SessionState::PAUSED) {
      if (shutting_down())
        return session_->finish(SessionEvent::stop, Outcome::stopped_by_shutdown, "shutdown", tick_);
      if (std::chrono::steady_clock::now() > deadline)
        return session_->finish(SessionEvent::stop, Outcome::stopped_by_human, "pause_timeout", tick_);
      if (auto cmd = hooks_->poll_command(sid_)) {
        emit(AuditKind::human_event, {{"event", "operator_command"}, {"decision", to_json(*cmd)}});
        switch (cmd->verdict) {
          case HumanVerdict::resume:
          case HumanVerdict::approve:
            session_->transition(SessionEvent::resume, "operator_resume:" + cmd->operator_id, tick_);
            break;
          case HumanVerdict::takeover:
            session_->finish(SessionEvent::stop, Outcome::handed_over, "operator_takeover:" + cmd->operator_id, tick_);
            break;
          case HumanVerdict::pause: break;
          default:
            session_->finish(SessionEvent::stop, Outcome::stopped_by_human, "operator_stop:" + cmd->operator_id, tick_);
        }
        continue;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

  const TrialSpec& spec_;
  const Registry& reg_;
  const RunConfig& cfg_;
  Variant variant_;
  VariantSpec vs_;
  AuditLog& log_;
  OverrideGateway& gateway_;
  std::uint64_t sid_;
  RuntimeHooks* hooks_;
  const CapabilityManifest* manifest_;
  const EnvironmentProfile& profile_;
  GovernanceContext ctx_;
  RecoveryConfig rcfg_;
  Rng watch_rng_, rollback_rng_, recovery_rng_, approval_rng_;
  SimulatedApprover approver_;
  ExecutionWatcher watcher_;
  LocalChecker local_;

  std::uint64_t tick_ = 0;
  std::optional<GovernedSession> session_;
  TrialRecord rec_;
  Outcome final_outcome_ = Outcome::refused;
  std::optional<RecoveryResult> concluded_;
};

}  // namespace

TrialRecord run_trial(const TrialSpec& spec, const Registry& reg, const RunConfig& cfg, Variant variant, AuditLog& log,
                      OverrideGateway& gateway, std::uint64_t session_id, RuntimeHooks* hooks) {
  TrialRunner r(spec, reg, cfg, variant, log, gateway, session_id, hooks);
  return r.run();
}

}  // namespace capgov
