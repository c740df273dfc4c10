#include "capgov/governance.hpp"

#include <algorithm>
#include <chrono>

namespace capgov {

using nlohmann::json;

json to_json(const InvocationRequest& r) {
  json j{{"capability", r.capability},
         {"params", to_json(r.params)},
         {"profile", to_string(r.profile)},
         {"agent_permissions", r.agent_permissions},
         {"meta",
          {{"confidence", r.meta.confidence}, {"intent", r.meta.intent}, {"priority", r.meta.priority}}}};
  if (r.meta.execution_mode) j["meta"]["execution_mode"] = *r.meta.execution_mode;
  if (r.approval_token) j["approval_token"] = *r.approval_token;
  return j;
}

InvocationRequest request_from_json(const json& j) {
  InvocationRequest r;
  r.capability = j.at("capability").get<std::string>();
  r.params = params_from_json(j.at("params"));
  r.profile = parse_enum<ProfileId>(j.at("profile").get<std::string>());
  r.agent_permissions = j.at("agent_permissions").get<std::set<std::string>>();
  const auto& m = j.at("meta");
  r.meta.confidence = m.at("confidence").get<double>();
  r.meta.intent = m.at("intent").get<std::string>();
  r.meta.priority = m.at("priority").get<int>();
  if (m.contains("execution_mode")) r.meta.execution_mode = m.at("execution_mode").get<std::string>();
  if (j.contains("approval_token")) r.approval_token = j.at("approval_token").get<std::string>();
  return r;
}

GovernanceContext make_context(const Registry& reg, ProfileId profile, std::uint64_t clock) {
  GovernanceContext ctx;
  ctx.registry = &reg;
  ctx.profile = &reg.profile(profile);
  ctx.policy_set = &reg.policy_set(profile);
  ctx.authority = ctx.profile->authority;
  ctx.clock = clock;
  return ctx;
}

namespace {

bool registered_for(const CapabilityManifest& m, const EnvironmentProfile& p) {
  return std::any_of(m.env_profile_tags.begin(), m.env_profile_tags.end(),
                     [&](const std::string& t) { return p.accepted_tags.count(t) != 0; });
}

bool touches_restricted_object(const CapabilityManifest& m, const ParamMap& params, const EnvironmentProfile& p) {
  for (const auto& name : m.inputs_of_kind(ParamKind::object))
    if (auto id = as_id(params, name); id && p.restricted_objects.count(*id)) return true;
  return false;
}

bool targets_forbidden_zone(const CapabilityManifest& m, const ParamMap& params, const EnvironmentProfile& p) {
  for (const auto& name : m.inputs_of_kind(ParamKind::zone))
    if (auto id = as_id(params, name); id && p.forbidden_zones.count(*id)) return true;
  return false;
}

bool predicate_holds(const RulePredicate& pred, const InvocationRequest& req, const CapabilityManifest& m,
                     const GovernanceContext& ctx) {
  using K = RulePredicate::Kind;
  switch (pred.kind) {
    case K::always: return true;
    case K::capability_is: return req.capability == pred.name;
    case K::target_zone_forbidden: return targets_forbidden_zone(m, req.params, *ctx.profile);
    case K::object_restricted: return touches_restricted_object(m, req.params, *ctx.profile);
    case K::mode_disallowed:
      // An undeclared mode cannot be resolved against the profile and is treated as compatible.
      return req.meta.execution_mode && !ctx.profile->accepted_tags.count(*req.meta.execution_mode);
    case K::param_above: {
      auto v = as_scalar(req.params, pred.name);
      return v && *v > pred.limit;
    }
  }
  return false;
}

}  // namespace

bool rule_matches(const PolicyRule& rule, const InvocationRequest& request, const GovernanceContext& ctx) {
  auto m = ctx.registry->lookup(request.capability);
  if (!m) return false;
  return std::all_of(rule.when.begin(), rule.when.end(),
                     [&](const RulePredicate& p) { return predicate_holds(p, request, *m, ctx); });
}

bool within_profile_bounds(const ParamMap& params, const EnvironmentProfile& profile) {
  if (auto f = as_scalar(params, "force"); f && *f > profile.force_limit) return false;
  if (auto s = as_scalar(params, "speed"); s && *s > profile.speed_limit) return false;
  return true;
}

AdmissionOutcome admit(const InvocationRequest& request, const GovernanceContext& ctx,
                       const GovernComponents& components) {
  using V = AdmissionVerdict;
  using R = AdmissionReason;
  if (components.admission == AdmissionMode::off) return {V::accept, R::none};

  const auto* m = ctx.registry->lookup(request.capability);
  if (!m) return {V::reject, R::unknown_capability};
  const auto& p = *ctx.profile;
  if (!registered_for(*m, p)) return {V::reject, R::unregistered_for_profile};
  if (components.admission == AdmissionMode::full && p.disallowed_capabilities.count(m->name))
    return {V::reject, R::profile_disallowed};
  for (const auto& perm : m->permissions)
    if (!request.agent_permissions.count(perm)) return {V::reject, R::missing_permission};

  if (components.admission == AdmissionMode::static_only) {
    // Static rule table: a fixed restricted-object list, no environment context.
    if (touches_restricted_object(*m, request.params, p)) return {V::reject, R::static_rule_violation};
    return {V::accept, R::none};
  }

  if (components.human_gate && p.approval_required_risk && at_least(m->risk, *p.approval_required_risk) &&
      !request.approval_token)
    return {V::escalate, R::supervisory_review};

  for (const auto& pre : m->preconditions)
    if (ctx.unsatisfied_preconditions.count(pre)) return {V::defer, R::precondition_pending};

  return {V::accept, R::none};
}

InvocationRequest constrain(const InvocationRequest& request, const PolicyRule& rule, const GovernanceContext& ctx) {
  (void)ctx;
  if (rule.outcome != PolicyVerdict::modify) throw std::invalid_argument("constrain needs a modify rule");
  InvocationRequest out = request;
  for (const auto& op : rule.modifier) {
    if (op.kind == ModifierOp::Kind::clamp) {
      double bound = std::get<double>(op.value);
      auto it = out.params.find(op.param);
      if (it == out.params.end()) continue;
      auto* v = std::get_if<double>(&it->second);
      if (!v) throw UnsatisfiableConstraint("rule " + rule.id + ": parameter '" + op.param + "' is not scalar");
      if (bound < 0.0)
        throw UnsatisfiableConstraint("rule " + rule.id + ": no non-negative value of '" + op.param + "' is <= " +
                                      std::to_string(bound));
      if (*v > bound) *v = bound;
    } else {
      out.params[op.param] = op.value;
    }
  }
  return out;
}

PolicyOutcome check(const InvocationRequest& request, const GovernanceContext& ctx) {
  for (const auto& rule : ctx.policy_set->rules) {
    if (!rule_matches(rule, request, ctx)) continue;
    PolicyOutcome out{rule.outcome, std::nullopt, rule.id};
    if (rule.outcome == PolicyVerdict::modify) out.constrained_params = constrain(request, rule, ctx).params;
    return out;
  }
  return {PolicyVerdict::allow, std::nullopt, ""};
}

std::string_view to_string(Classification c) {
  switch (c) {
    case Classification::launch: return "launch";
    case Classification::refused: return "refused";
    case Classification::deferred: return "deferred";
    case Classification::escalated: return "escalated";
  }
  return "refused";
}

GovernanceDecision govern(const InvocationRequest& request, const GovernanceContext& ctx,
                          const GovernComponents& components) {
  using clock = std::chrono::steady_clock;
  GovernanceDecision d;

  auto t0 = clock::now();
  d.admission = admit(request, ctx, components);
  auto t1 = clock::now();
  d.timings.admission_ns = static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());

  switch (d.admission.verdict) {
    case AdmissionVerdict::reject:
      d.classification = Classification::refused;
      d.refusal = std::string(to_string(d.admission.reason));
      return d;
    case AdmissionVerdict::defer:
      d.classification = Classification::deferred;
      d.refusal = std::string(to_string(d.admission.reason));
      return d;
    case AdmissionVerdict::escalate:
      d.classification = Classification::escalated;
      d.refusal = std::string(to_string(d.admission.reason));
      return d;
    case AdmissionVerdict::accept: break;
  }

  InvocationRequest final_request = request;
  if (components.policy_guard) {
    auto t2 = clock::now();
    try {
      d.policy = check(request, ctx);
    } catch (const UnsatisfiableConstraint& e) {
      d.timings.policy_ns = static_cast<std::uint64_t>(
          std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t2).count());
      d.classification = Classification::refused;
      d.refusal = std::string("unsatisfiable_constraint: ") + e.what();
      return d;
    }
    d.timings.policy_ns =
        static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t2).count());
    switch (d.policy->verdict) {
      case PolicyVerdict::deny:
        d.classification = Classification::refused;
        d.refusal = "policy_deny:" + d.policy->fired_rule;
        return d;
      case PolicyVerdict::escalate:
        d.classification = Classification::escalated;
        d.refusal = "policy_escalate:" + d.policy->fired_rule;
        return d;
      case PolicyVerdict::modify:
        final_request.params = *d.policy->constrained_params;
        if (!within_profile_bounds(final_request.params, *ctx.profile)) {
          d.classification = Classification::refused;
          d.refusal = "unsatisfiable_constraint: rule " + d.policy->fired_rule + " leaves parameters out of bounds";
          return d;
        }
        break;
      case PolicyVerdict::allow: break;
    }
  }
  d.classification = Classification::launch;
  d.launch_.emplace(LaunchAuthorization(std::move(final_request)));
  return d;
}

int strictness_rank(const GovernanceDecision& d) {
  if (!d.launched()) return 2;
  return d.policy && d.policy->verdict == PolicyVerdict::modify ? 1 : 0;
}

}  // namespace capgov
