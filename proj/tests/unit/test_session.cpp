#include <doctest.h>

#include <map>
#include <set>

#include "capgov/session.hpp"
#include "support.hpp"

using namespace capgov;
using S = SessionState;
using E = SessionEvent;

namespace {

// Declared edges, written out independently of the implementation's switch.
const std::map<std::pair<S, E>, S>& declared_edges() {
  static const std::map<std::pair<S, E>, S> edges{
      {{S::RUNNING, E::pause}, S::PAUSED},          {{S::RUNNING, E::escalate}, S::ESCALATED},
      {{S::RUNNING, E::anomaly}, S::RECOVERING},    {{S::RUNNING, E::recover_begin}, S::RECOVERING},
      {{S::RUNNING, E::complete}, S::COMPLETED},    {{S::RUNNING, E::stop}, S::FAILED},
      {{S::PAUSED, E::resume}, S::RUNNING},         {{S::PAUSED, E::clearance}, S::RUNNING},
      {{S::PAUSED, E::escalate}, S::ESCALATED},     {{S::PAUSED, E::stop}, S::FAILED},
      {{S::ESCALATED, E::clearance}, S::RUNNING},   {{S::ESCALATED, E::resume}, S::RUNNING},
      {{S::ESCALATED, E::recover_begin}, S::RECOVERING}, {{S::ESCALATED, E::stop}, S::FAILED},
      {{S::RECOVERING, E::recover_done}, S::RUNNING}, {{S::RECOVERING, E::complete}, S::COMPLETED},
      {{S::RECOVERING, E::recover_failed}, S::FAILED}, {{S::RECOVERING, E::stop}, S::FAILED},
  };
  return edges;
}

// Shortest event path from RUNNING to each state.
std::vector<E> path_to(S s) {
  switch (s) {
    case S::RUNNING: return {};
    case S::PAUSED: return {E::pause};
    case S::ESCALATED: return {E::escalate};
    case S::RECOVERING: return {E::recover_begin};
    case S::COMPLETED: return {E::complete};
    case S::FAILED: return {E::stop};
  }
  return {};
}

LaunchAuthorization authorization() {
  static const GovernanceDecision d = [] {
    auto ctx = make_context(test::default_registry(), ProfileId::sim_relaxed);
    return govern(test::request_for("inspect_area", ProfileId::sim_relaxed, {{"area_zone", std::string("dock")}}), ctx);
  }();
  REQUIRE(d.authorization() != nullptr);
  return *d.authorization();
}

}  // namespace

TEST_CASE("every state and event pair either reaches its declared target or throws") {
  int legal = 0;
  for (auto s : all_values<S>()) {
    for (auto e : all_values<E>()) {
      auto session = launch(authorization(), 1, 0);
      for (auto step : path_to(s)) session.transition(step, "setup", 0);
      REQUIRE(session.state() == s);
      auto it = declared_edges().find({s, e});
      CHECK(next_state(s, e) == (it == declared_edges().end() ? std::nullopt : std::optional<S>(it->second)));
      if (it == declared_edges().end()) {
        auto before = session.history().size();
        CHECK_THROWS_AS(session.transition(e, "probe", 1), IllegalTransition);
        CHECK(session.state() == s);
        CHECK(session.history().size() == before);
      } else {
        CHECK(session.transition(e, "probe", 1) == it->second);
        CHECK(session.state() == it->second);
        ++legal;
      }
    }
  }
  CHECK(legal == static_cast<int>(declared_edges().size()));
}

TEST_CASE("terminal states absorb nothing") {
  for (auto t : {S::COMPLETED, S::FAILED}) {
    CHECK(is_terminal(t));
    for (auto e : all_values<E>()) CHECK_FALSE(next_state(t, e).has_value());
  }
  for (auto s : {S::RUNNING, S::PAUSED, S::ESCALATED, S::RECOVERING}) CHECK_FALSE(is_terminal(s));
}

TEST_CASE("pause then resume, and the recovery loop") {
  auto s = launch(authorization(), 1, 0);
  CHECK(s.transition(E::pause, "proximity", 1) == S::PAUSED);
  CHECK(s.transition(E::resume, "clear", 2) == S::RUNNING);
  CHECK(s.transition(E::recover_begin, "failure", 3) == S::RECOVERING);
  CHECK(s.transition(E::recover_done, "recovered", 4) == S::RUNNING);
  s.finish(E::complete, Outcome::completed, "done", 5);
  CHECK(s.state() == S::COMPLETED);
  CHECK(s.outcome() == Outcome::completed);
  CHECK(s.ended_at() == 5u);
  CHECK(s.history().size() == 5);
}

TEST_CASE("completed plus any event is illegal") {
  auto s = launch(authorization(), 1, 0);
  s.finish(E::complete, Outcome::completed, "done", 1);
  for (auto e : all_values<E>()) CHECK_THROWS_AS(s.transition(e, "late", 2), IllegalTransition);
}

TEST_CASE("outcome is present exactly in terminal states") {
  auto s = launch(authorization(), 1, 0);
  CHECK_FALSE(s.outcome().has_value());
  s.transition(E::pause, "p", 1);
  CHECK_FALSE(s.outcome().has_value());
  CHECK_THROWS_AS(s.finish(E::resume, Outcome::completed, "not terminal", 2), IllegalTransition);
  s.finish(E::stop, Outcome::stopped_by_human, "stop", 2);
  CHECK(s.outcome() == Outcome::stopped_by_human);
}

TEST_CASE("a halted substrate yields a failed session") {
  auto s = launch(authorization(), 1, 0, false);
  CHECK(s.state() == S::FAILED);
  CHECK(s.outcome() == Outcome::substrate_error);
}

TEST_CASE("launched sessions carry the constrained parameters and distinct ids") {
  auto ctx = make_context(test::default_registry(), ProfileId::human_shared);
  auto req = test::request_for("grasp_object", ProfileId::human_shared,
                               {{"object_id", std::string("cup")}, {"grasp_pose", Pose{}}, {"force", 30.0}, {"speed", 1.0}});
  req.approval_token = "operator-approval";
  auto d = govern(req, ctx);
  REQUIRE(d.authorization());
  SessionIds ids;
  auto a = launch(*d.authorization(), ids.next(), 0);
  auto b = launch(*d.authorization(), ids.next(), 0);
  CHECK(a.id() != b.id());
  CHECK(a.state() == S::RUNNING);
  CHECK(*as_scalar(a.final_params(), "force") <= 15.0);
  CHECK(*as_scalar(a.final_params(), "speed") <= 0.2);
}

TEST_CASE("an observer that throws leaves the state unchanged") {
  auto s = launch(authorization(), 1, 0);
  s.set_observer([](const TransitionRecord&) { throw std::runtime_error("disk gone"); });
  CHECK_THROWS(s.transition(E::pause, "p", 1));
  CHECK(s.state() == S::RUNNING);
  s.fail_closed(Outcome::audit_failure, 2);
  CHECK(s.state() == S::FAILED);
  CHECK(s.outcome() == Outcome::audit_failure);
}
