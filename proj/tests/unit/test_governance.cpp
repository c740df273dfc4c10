#include <doctest.h>

#include "capgov/governance.hpp"
#include "capgov/rng.hpp"
#include "support.hpp"

using namespace capgov;
using test::request_for;

namespace {

const Registry& reg() { return test::default_registry(); }

ParamMap grasp_params(double force, double speed, const std::string& object = "cup") {
  return {{"object_id", object}, {"grasp_pose", Pose{0.1, 0.2, 0.0}}, {"force", force}, {"speed", speed}};
}

ParamMap nav_params(const std::string& zone, double speed = 0.2) {
  return {{"target_zone", zone}, {"goal_pose", Pose{1.0, 2.0, 0.5}}, {"speed", speed}};
}

}  // namespace

TEST_CASE("a known, permitted, profile-compatible request is accepted") {
  auto ctx = make_context(reg(), ProfileId::sim_relaxed);
  auto out = admit(request_for("navigate_to", ProfileId::sim_relaxed, nav_params("dock")), ctx);
  CHECK(out.verdict == AdmissionVerdict::accept);
  CHECK(out.reason == AdmissionReason::none);
}

TEST_CASE("an unknown capability is rejected") {
  auto ctx = make_context(reg(), ProfileId::sim_relaxed);
  auto r = request_for("navigate_to", ProfileId::sim_relaxed, nav_params("dock"));
  r.capability = "teleport";
  auto out = admit(r, ctx);
  CHECK(out.verdict == AdmissionVerdict::reject);
  CHECK(out.reason == AdmissionReason::unknown_capability);
}

TEST_CASE("an unapproved medium-risk grasp in human_shared escalates") {
  auto ctx = make_context(reg(), ProfileId::human_shared);
  auto r = request_for("grasp_object", ProfileId::human_shared, grasp_params(10, 0.1));
  auto out = admit(r, ctx);
  CHECK(out.verdict == AdmissionVerdict::escalate);
  CHECK(out.reason == AdmissionReason::supervisory_review);

  r.approval_token = "operator-approval";
  CHECK(admit(r, ctx).verdict == AdmissionVerdict::accept);
}

TEST_CASE("a missing permission is refused at admission") {
  auto ctx = make_context(reg(), ProfileId::sim_relaxed);
  auto r = request_for("grasp_object", ProfileId::sim_relaxed, grasp_params(10, 0.1));
  r.agent_permissions.clear();
  auto d = govern(r, ctx);
  CHECK(d.classification == Classification::refused);
  CHECK(d.admission.reason == AdmissionReason::missing_permission);
  CHECK_FALSE(d.policy.has_value());
  CHECK(d.authorization() == nullptr);
}

TEST_CASE("a pending precondition defers") {
  auto ctx = make_context(reg(), ProfileId::sim_relaxed);
  ctx.unsatisfied_preconditions = {"arm_ready"};
  auto d = govern(request_for("grasp_object", ProfileId::sim_relaxed, grasp_params(10, 0.1)), ctx);
  CHECK(d.classification == Classification::deferred);
  CHECK(d.admission.reason == AdmissionReason::precondition_pending);
}

TEST_CASE("a grasp in human_shared is clamped below the profile limits") {
  auto ctx = make_context(reg(), ProfileId::human_shared);
  auto r = request_for("grasp_object", ProfileId::human_shared, grasp_params(30, 0.9));
  r.approval_token = "operator-approval";
  auto p = check(r, ctx);
  CHECK(p.verdict == PolicyVerdict::modify);
  CHECK(p.fired_rule == "r040");
  REQUIRE(p.constrained_params);
  CHECK(*as_scalar(*p.constrained_params, "force") == doctest::Approx(15));
  CHECK(*as_scalar(*p.constrained_params, "speed") == doctest::Approx(0.2));
  CHECK(within_profile_bounds(*p.constrained_params, reg().profile(ProfileId::human_shared)));
}

TEST_CASE("navigating into a forbidden zone is denied") {
  auto ctx = make_context(reg(), ProfileId::real_restricted);
  auto p = check(request_for("navigate_to", ProfileId::real_restricted, nav_params("human_workspace")), ctx);
  CHECK(p.verdict == PolicyVerdict::deny);
  CHECK(p.fired_rule == "r010");
}

TEST_CASE("an empty rule list allows and leaves parameters unchanged") {
  auto r = Registry::parse(test::default_registry().serialize());
  Registry empty;
  for (const auto& z : r.zones()) empty.register_zone(z);
  for (const auto& o : r.objects()) empty.register_object(o);
  empty.register_profile(r.profile(ProfileId::sim_relaxed));
  for (const auto& c : r.capabilities()) {
    auto m = c;
    m.env_profile_tags = {"sim"};
    empty.register_capability(m);
  }
  empty.register_policy_set({ProfileId::sim_relaxed, {}});
  auto ctx = make_context(empty, ProfileId::sim_relaxed);
  auto req = request_for("grasp_object", ProfileId::sim_relaxed, grasp_params(99, 9));
  auto p = check(req, ctx);
  CHECK(p.verdict == PolicyVerdict::allow);
  CHECK(p.fired_rule.empty());
}

TEST_CASE("constrain clamps the bounded parameter and keeps the rest") {
  auto ctx = make_context(reg(), ProfileId::real_restricted);
  PolicyRule rule{"t1", {}, PolicyVerdict::modify, {{ModifierOp::Kind::clamp, "speed", 0.5}}};
  auto req = request_for("navigate_to", ProfileId::real_restricted, nav_params("dock", 1.2));
  auto out = constrain(req, rule, ctx);
  CHECK(*as_scalar(out.params, "speed") == doctest::Approx(0.5));
  CHECK(out.params.at("target_zone") == req.params.at("target_zone"));
  CHECK(out.params.at("goal_pose") == req.params.at("goal_pose"));

  auto within = request_for("navigate_to", ProfileId::real_restricted, nav_params("dock", 0.3));
  CHECK(constrain(within, rule, ctx) == within);
}

TEST_CASE("the transport rule adds corridor and collision margin") {
  auto ctx = make_context(reg(), ProfileId::real_restricted);
  ParamMap params{{"object_id", std::string("parcel")}, {"destination_zone", std::string("dock")}, {"speed", 0.45}};
  auto d = govern(request_for("transport_object", ProfileId::real_restricted, params), ctx);
  REQUIRE(d.launched());
  const auto& fp = d.authorization()->final_params();
  CHECK(*as_id(fp, "corridor") == "service_corridor");
  CHECK(*as_scalar(fp, "collision_margin") == doctest::Approx(0.35));
  CHECK(*as_scalar(fp, "speed") == doctest::Approx(0.3));
}

TEST_CASE("a bound no value can meet is unsatisfiable") {
  auto ctx = make_context(reg(), ProfileId::sim_relaxed);
  PolicyRule rule{"t2", {}, PolicyVerdict::modify, {{ModifierOp::Kind::clamp, "speed", -1.0}}};
  auto req = request_for("navigate_to", ProfileId::sim_relaxed, nav_params("dock"));
  CHECK_THROWS_AS(constrain(req, rule, ctx), UnsatisfiableConstraint);
  PolicyRule on_id{"t3", {}, PolicyVerdict::modify, {{ModifierOp::Kind::clamp, "target_zone", 1.0}}};
  CHECK_THROWS_AS(constrain(req, on_id, ctx), UnsatisfiableConstraint);
}

TEST_CASE("an authorized navigate_to in sim_relaxed launches unchanged") {
  auto ctx = make_context(reg(), ProfileId::sim_relaxed);
  auto req = request_for("navigate_to", ProfileId::sim_relaxed, nav_params("dock", 0.8));
  auto d = govern(req, ctx);
  REQUIRE(d.launched());
  CHECK(d.authorization()->final_params() == req.params);
  CHECK(strictness_rank(d) == 0);
}

TEST_CASE("a mismatched execution mode passes admission and is caught by the policy check") {
  auto ctx = make_context(reg(), ProfileId::human_shared);
  auto req = request_for("locate_object", ProfileId::human_shared,
                         {{"object_id", std::string("cup")}, {"search_zone", std::string("dock")}});
  req.meta.execution_mode = "sim";
  CHECK(admit(req, ctx, {AdmissionMode::static_only, true, true}).verdict == AdmissionVerdict::accept);
  CHECK(admit(req, ctx).verdict == AdmissionVerdict::accept);
  auto d = govern(req, ctx);
  CHECK(d.classification == Classification::refused);
  REQUIRE(d.policy);
  CHECK(d.policy->fired_rule == "r030");
}

TEST_CASE("constrain is idempotent on every shipped modify rule") {
  Rng rng(7, 0, "constrain");
  for (auto pid : reg().profile_ids()) {
    auto ctx = make_context(reg(), pid);
    for (const auto& rule : reg().policy_set(pid).rules) {
      if (rule.outcome != PolicyVerdict::modify) continue;
      for (int i = 0; i < 200; ++i) {
        auto req = request_for("grasp_object", pid,
                               grasp_params(rng.uniform(0, 60), rng.uniform(0, 3)));
        auto once = constrain(req, rule, ctx);
        CHECK(constrain(once, rule, ctx) == once);
      }
    }
  }
}

TEST_CASE("govern is deterministic") {
  Rng rng(11, 0, "determinism");
  for (int i = 0; i < 500; ++i) {
    auto pid = reg().profile_ids()[rng.below(4)];
    auto ctx = make_context(reg(), pid);
    auto req = request_for("grasp_object", pid, grasp_params(rng.uniform(0, 60), rng.uniform(0, 3)));
    if (rng.bernoulli(0.5)) req.approval_token = "operator-approval";
    auto a = govern(req, ctx);
    auto b = govern(req, ctx);
    CHECK(a.classification == b.classification);
    CHECK(a.admission == b.admission);
    CHECK(a.policy == b.policy);
    CHECK(a.refusal == b.refusal);
  }
}

TEST_CASE("a tighter profile is never less restrictive") {
  // P1 dominates P2 when every bound is at least as tight and its forbidden zones are a superset.
  const auto loose = reg().profile(ProfileId::sim_relaxed);
  Rng rng(13, 0, "strictness");
  const std::vector<std::string> zones = reg().zones();
  const std::vector<std::string> objects = reg().objects();
  for (int i = 0; i < 300; ++i) {
    auto tight = loose;
    tight.force_limit = loose.force_limit * rng.uniform(0.3, 1.0);
    tight.speed_limit = loose.speed_limit * rng.uniform(0.3, 1.0);
    for (const auto& z : zones)
      if (rng.bernoulli(0.3)) tight.forbidden_zones.insert(z);
    for (const auto& o : objects)
      if (rng.bernoulli(0.3)) tight.restricted_objects.insert(o);

    auto make = [&](const EnvironmentProfile& p) {
      Registry r;
      for (const auto& z : zones) r.register_zone(z);
      for (const auto& o : objects) r.register_object(o);
      r.register_profile(p);
      for (auto c : reg().capabilities()) {
        c.env_profile_tags = {"sim"};
        r.register_capability(c);
      }
      PolicySet s{ProfileId::sim_relaxed, reg().policy_set(ProfileId::sim_relaxed).rules};
      for (auto& rule : s.rules) {
        for (auto& pred : rule.when)
          if (pred.kind == RulePredicate::Kind::param_above)
            pred.limit = pred.name == "speed" ? p.speed_limit : p.force_limit;
        for (auto& op : rule.modifier) op.value = op.param == "speed" ? p.speed_limit : p.force_limit;
      }
      r.register_policy_set(s);
      return r;
    };
    auto r1 = make(tight);
    auto r2 = make(loose);
    auto ctx1 = make_context(r1, ProfileId::sim_relaxed);
    auto ctx2 = make_context(r2, ProfileId::sim_relaxed);
    auto req = request_for("grasp_object", ProfileId::sim_relaxed,
                           grasp_params(rng.uniform(0, 60), rng.uniform(0, 3), objects[rng.below(objects.size())]));
    auto nav = request_for("navigate_to", ProfileId::sim_relaxed, nav_params(zones[rng.below(zones.size())], rng.uniform(0, 3)));
    CHECK(strictness_rank(govern(req, ctx1)) >= strictness_rank(govern(req, ctx2)));
    CHECK(strictness_rank(govern(nav, ctx1)) >= strictness_rank(govern(nav, ctx2)));
  }
}

TEST_CASE("every modify outcome lands inside the profile bounds") {
  Rng rng(17, 0, "bounds");
  for (auto pid : reg().profile_ids()) {
    auto ctx = make_context(reg(), pid);
    for (int i = 0; i < 300; ++i) {
      auto req = request_for("grasp_object", pid, grasp_params(rng.uniform(0, 60), rng.uniform(0, 3)));
      req.approval_token = "operator-approval";
      auto p = check(req, ctx);
      if (p.verdict == PolicyVerdict::modify) CHECK(within_profile_bounds(*p.constrained_params, reg().profile(pid)));
    }
  }
}

TEST_CASE("request json round trip") {
  auto req = request_for("grasp_object", ProfileId::human_shared, grasp_params(12.5, 0.2));
  req.approval_token = "operator-approval";
  req.meta.confidence = 0.75;
  CHECK(request_from_json(to_json(req)) == req);
  req.meta.execution_mode.reset();
  CHECK(request_from_json(nlohmann::json::parse(to_json(req).dump())) == req);
}
