#include "capgov/watcher.hpp"

namespace capgov {

using nlohmann::json;

json to_json(const TelemetryEvent& e) {
  json j{{"step", e.step}, {"signal", to_string(e.kind)}, {"value", e.value}, {"flag", e.flag}};
  if (!e.zone.empty()) j["zone"] = e.zone;
  if (e.fault) j["fault"] = to_string(*e.fault);
  return j;
}

TelemetryEvent telemetry_from_json(const json& j) {
  TelemetryEvent e;
  e.step = j.at("step").get<int>();
  e.kind = parse_enum<TelemetryKind>(j.at("signal").get<std::string>());
  e.value = j.at("value").get<double>();
  e.flag = j.at("flag").get<bool>();
  if (j.contains("zone")) e.zone = j.at("zone").get<std::string>();
  if (j.contains("fault")) e.fault = parse_enum<FailureKind>(j.at("fault").get<std::string>());
  return e;
}

json to_json(const WatchSignal& s) {
  json j{{"kind", to_string(s.kind)}};
  if (s.violation) j["violation"] = to_string(*s.violation);
  return j;
}

WatchSignal signal_from_json(const json& j) {
  WatchSignal s;
  s.kind = parse_enum<SignalKind>(j.at("kind").get<std::string>());
  if (j.contains("violation")) s.violation = parse_enum<ViolationType>(j.at("violation").get<std::string>());
  return s;
}

std::optional<ViolationType> violation_in(const TelemetryEvent& e, const EnvironmentProfile& p) {
  switch (e.kind) {
    case TelemetryKind::force_reading:
      if (e.value > p.force_limit) return ViolationType::force_exceeded;
      break;
    case TelemetryKind::speed_reading:
      if (e.value > p.speed_limit) return ViolationType::speed_exceeded;
      break;
    case TelemetryKind::retry_tick:
      if (e.value > p.retry_budget) return ViolationType::retry_exceeded;
      break;
    case TelemetryKind::postcondition_status:
      if (!e.flag) return ViolationType::postcondition_failed;
      break;
    case TelemetryKind::zone_entered:
      if (p.forbidden_zones.count(e.zone)) return ViolationType::zone_violation;
      break;
    case TelemetryKind::human_proximity:
      if (e.flag) return ViolationType::human_proximity;
      break;
    default: break;
  }
  return std::nullopt;
}

namespace {

WatchSignal detected(ViolationType v) {
  // Excessive retries are escalated rather than treated as a plain violation.
  auto kind = v == ViolationType::retry_exceeded ? SignalKind::escalation : SignalKind::violation;
  return {kind, v};
}

WatchSignal sub_threshold(const TelemetryEvent& e, const EnvironmentProfile& p) {
  switch (e.kind) {
    case TelemetryKind::force_reading:
      if (e.value >= kWarningFraction * p.force_limit) return {SignalKind::warning, std::nullopt};
      break;
    case TelemetryKind::speed_reading:
      if (e.value >= kWarningFraction * p.speed_limit) return {SignalKind::warning, std::nullopt};
      break;
    case TelemetryKind::timeout_tick: return {SignalKind::timeout, std::nullopt};
    case TelemetryKind::progress:
      if (e.value >= 1.0) return {SignalKind::completion, std::nullopt};
      break;
    case TelemetryKind::controller_status:
      if (e.fault == FailureKind::unsafe_state) return {SignalKind::instability, std::nullopt};
      break;
    default: break;
  }
  return {SignalKind::normal, std::nullopt};
}

}  // namespace

bool ExecutionWatcher::covers(ViolationType v, const EnvironmentProfile& p) {
  if (v == ViolationType::human_proximity) return p.watcher_sensitivity > 0.7;
  return true;
}

WatchSignal ExecutionWatcher::observe(const TelemetryEvent& e, const GovernanceContext& ctx, Rng& rng) const {
  const auto& p = *ctx.profile;
  if (auto v = violation_in(e, p)) {
    if (!covers(*v, p)) return {SignalKind::normal, std::nullopt};
    if (rng.bernoulli(p.watcher_sensitivity)) return detected(*v);
    return {SignalKind::normal, std::nullopt};
  }
  return sub_threshold(e, p);
}

bool LocalChecker::covers(ViolationType v) {
  return v == ViolationType::force_exceeded || v == ViolationType::speed_exceeded ||
         v == ViolationType::retry_exceeded || v == ViolationType::postcondition_failed;
}

WatchSignal LocalChecker::observe(const TelemetryEvent& e, const EnvironmentProfile& p, Rng& rng) const {
  if (auto v = violation_in(e, p)) {
    if (!covers(*v)) return {SignalKind::normal, std::nullopt};
    if (rng.bernoulli(sensitivity_)) return {SignalKind::violation, *v};
    return {SignalKind::normal, std::nullopt};
  }
  if (e.kind == TelemetryKind::progress && e.value >= 1.0) return {SignalKind::completion, std::nullopt};
  return {SignalKind::normal, std::nullopt};
}

std::vector<TelemetryEvent> ScriptedSubstrate::step(std::uint64_t session_id, const ParamMap& params,
                                                    const EnvironmentProfile& profile, int step) {
  std::vector<TelemetryEvent> out;
  auto add = [&](TelemetryEvent e) {
    e.session_id = session_id;
    e.step = step;
    out.push_back(std::move(e));
  };

  const bool in_episode = script_.injection && !episode_cleared_ && step >= script_.injection_step &&
                          step < script_.injection_step + script_.episode_length;

  if (auto f = as_scalar(params, "force")) {
    double v = in_episode && *script_.injection == ViolationType::force_exceeded ? profile.force_limit * 1.25 : *f;
    add({.kind = TelemetryKind::force_reading, .value = v});
  } else if (in_episode && *script_.injection == ViolationType::force_exceeded) {
    // Contact force from an unexpected collision during a non-manipulation skill.
    add({.kind = TelemetryKind::force_reading, .value = profile.force_limit * 1.25});
  }
  if (auto s = as_scalar(params, "speed")) {
    double v = in_episode && *script_.injection == ViolationType::speed_exceeded ? profile.speed_limit * 1.3 : *s;
    add({.kind = TelemetryKind::speed_reading, .value = v});
  } else if (in_episode && *script_.injection == ViolationType::speed_exceeded) {
    add({.kind = TelemetryKind::speed_reading, .value = profile.speed_limit * 1.3});
  }

  if (in_episode) {
    switch (*script_.injection) {
      case ViolationType::retry_exceeded:
        add({.kind = TelemetryKind::retry_tick, .value = static_cast<double>(profile.retry_budget + 1 + (step - script_.injection_step))});
        break;
      case ViolationType::postcondition_failed: add({.kind = TelemetryKind::postcondition_status, .flag = false}); break;
      case ViolationType::zone_violation: add({.kind = TelemetryKind::zone_entered, .zone = script_.violation_zone}); break;
      case ViolationType::human_proximity: add({.kind = TelemetryKind::human_proximity, .flag = true}); break;
      default: break;
    }
  }

  if (script_.failure && !failure_cleared_ && step == script_.failure_step)
    add({.kind = TelemetryKind::controller_status, .fault = *script_.failure});

  double progress = static_cast<double>(step + 1) / script_.horizon;
  add({.kind = TelemetryKind::progress, .value = progress >= 1.0 ? 1.0 : progress});
  return out;
}

}  // namespace capgov
