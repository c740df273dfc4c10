#include <doctest.h>

#include <atomic>
#include <thread>

#include "capgov/console.hpp"
#include "capgov/runtime.hpp"
#include "support.hpp"

using namespace capgov;
using namespace std::chrono_literals;

namespace {

// An authorized trial in the given profile with the injected violation and failure removed, so the
// session runs its full horizon unless an operator intervenes.
TrialSpec clean_trial(ProfileId profile, const std::string& capability = "") {
  auto cfg = test::default_config();
  for (int i = 0;; ++i) {
    auto t = generate_trial(test::calibrated(), cfg, 99, i);
    if (!t.authorized || t.profile != profile || t.defer_once) continue;
    if (!capability.empty() && t.capability != capability) continue;
    t.injection.reset();
    t.failure.reset();
    return t;
  }
}

struct LiveRig {
  RunConfig cfg = test::default_config();
  OverrideGateway gateway;
  CommandRouter router{gateway};
  std::atomic<bool> shutdown{false};
  RuntimeHooks hooks;
  AuditLog log{std::make_shared<MemorySink>()};

  LiveRig() {
    cfg.horizon = 200;
    hooks.live = true;
    hooks.ticket_timeout = 5s;
    hooks.shutdown = &shutdown;
    hooks.on_tick = [] { std::this_thread::sleep_for(1ms); };
    hooks.poll_command = [this](std::uint64_t sid) { return router.poll(sid); };
    hooks.on_launch = [this](std::uint64_t sid, const std::string& cap, AuthorityMode a) { router.on_launch(sid, cap, a); };
    hooks.on_state = [this](std::uint64_t sid, const std::string& cap, SessionState s, const std::string& cause) {
      router.on_state(sid, cap, s, cause);
    };
  }

  bool wait_for_state(std::uint64_t sid, SessionState s, std::chrono::milliseconds limit = 5000ms) {
    auto deadline = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < deadline) {
      for (const auto& v : router.sessions())
        if (v.session_id == sid && v.state == s) return true;
      std::this_thread::sleep_for(2ms);
    }
    return false;
  }

  bool wait_for_ticket(std::chrono::milliseconds limit = 5000ms) {
    auto deadline = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < deadline) {
      if (!gateway.pending().empty()) return true;
      std::this_thread::sleep_for(2ms);
    }
    return false;
  }

  HumanDecision command(std::uint64_t sid, HumanVerdict v) {
    HumanDecision d;
    d.session_id = sid;
    d.verdict = v;
    d.operator_id = "op";
    return d;
  }
};

}  // namespace

TEST_CASE("an operator stop ends a running session") {
  LiveRig rig;
  auto spec = clean_trial(ProfileId::sim_relaxed);
  TrialRecord rec;
  std::thread runner([&] { rec = run_trial(spec, test::calibrated(), rig.cfg, Variant::proposed, rig.log, rig.gateway, 1, &rig.hooks); });
  REQUIRE(rig.wait_for_state(1, SessionState::RUNNING));
  rig.router.submit(rig.command(1, HumanVerdict::stop));
  runner.join();
  CHECK(rec.outcome == Outcome::stopped_by_human);
  CHECK(rig.wait_for_state(1, SessionState::FAILED, 100ms));
}

TEST_CASE("pause holds the session until resume") {
  LiveRig rig;
  auto spec = clean_trial(ProfileId::sim_relaxed);
  TrialRecord rec;
  std::thread runner([&] { rec = run_trial(spec, test::calibrated(), rig.cfg, Variant::proposed, rig.log, rig.gateway, 1, &rig.hooks); });
  REQUIRE(rig.wait_for_state(1, SessionState::RUNNING));
  rig.router.submit(rig.command(1, HumanVerdict::pause));
  REQUIRE(rig.wait_for_state(1, SessionState::PAUSED));
  // A second pause is refused while paused.
  CHECK_THROWS_AS(rig.router.submit(rig.command(1, HumanVerdict::pause)), StaleTicket);
  std::this_thread::sleep_for(30ms);
  rig.router.submit(rig.command(1, HumanVerdict::resume));
  runner.join();
  CHECK(rec.outcome == Outcome::completed);
}

TEST_CASE("takeover under takeover authority hands the session over") {
  LiveRig rig;
  auto spec = clean_trial(ProfileId::human_shared, "locate_object");
  TrialRecord rec;
  std::thread runner([&] { rec = run_trial(spec, test::calibrated(), rig.cfg, Variant::proposed, rig.log, rig.gateway, 1, &rig.hooks); });
  REQUIRE(rig.wait_for_state(1, SessionState::RUNNING));
  rig.router.submit(rig.command(1, HumanVerdict::takeover));
  runner.join();
  CHECK(rec.outcome == Outcome::handed_over);
}

TEST_CASE("shutdown stops open sessions") {
  LiveRig rig;
  auto spec = clean_trial(ProfileId::sim_relaxed);
  TrialRecord rec;
  std::thread runner([&] { rec = run_trial(spec, test::calibrated(), rig.cfg, Variant::proposed, rig.log, rig.gateway, 1, &rig.hooks); });
  REQUIRE(rig.wait_for_state(1, SessionState::RUNNING));
  rig.shutdown = true;
  runner.join();
  CHECK(rec.outcome == Outcome::stopped_by_shutdown);
}

TEST_CASE("a held request launches after a live approval and is refused after a denial") {
  for (auto verdict : {HumanVerdict::approve, HumanVerdict::deny}) {
    LiveRig rig;
    rig.cfg.horizon = 8;
    auto spec = clean_trial(ProfileId::human_shared, "grasp_object");
    spec.request.approval_token.reset();
    TrialRecord rec;
    std::thread runner([&] { rec = run_trial(spec, test::calibrated(), rig.cfg, Variant::proposed, rig.log, rig.gateway, 1, &rig.hooks); });
    REQUIRE(rig.wait_for_ticket());
    auto t = rig.gateway.pending().front();
    CHECK(t.reason == "supervisory_review");
    HumanDecision d;
    d.ticket_id = t.ticket_id;
    d.verdict = verdict;
    d.operator_id = "op";
    rig.router.submit(d);
    runner.join();
    if (verdict == HumanVerdict::approve) {
      CHECK(rec.launched);
      CHECK(rec.outcome == Outcome::completed);
    } else {
      CHECK_FALSE(rec.launched);
      CHECK(rec.outcome == Outcome::human_denied);
    }
  }
}

TEST_CASE("an unanswered ticket expires and fails closed") {
  LiveRig rig;
  rig.hooks.ticket_timeout = 40ms;
  auto spec = clean_trial(ProfileId::human_shared, "grasp_object");
  spec.request.approval_token.reset();
  auto rec = run_trial(spec, test::calibrated(), rig.cfg, Variant::proposed, rig.log, rig.gateway, 1, &rig.hooks);
  CHECK_FALSE(rec.launched);
  CHECK(rec.outcome == Outcome::human_denied);
  CHECK(rig.gateway.pending().empty());
}

TEST_CASE("no ticket stays pending after a simulated cell") {
  auto cfg = test::default_config();
  cfg.trials_per_seed = 100;
  for (auto v : {Variant::proposed, Variant::override_on}) {
    OverrideGateway g;
    run_cell(test::default_registry(), cfg, v, 42, nullptr, nullptr, &g);
    CHECK(g.pending().empty());
    CHECK_FALSE(g.all().empty());
  }
}

TEST_CASE("the same cell twice gives the same records") {
  auto cfg = test::default_config();
  cfg.trials_per_seed = 80;
  for (auto v : all_values<Variant>()) {
    auto a = run_cell(test::default_registry(), cfg, v, 1024, nullptr);
    auto b = run_cell(test::default_registry(), cfg, v, 1024, nullptr);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      auto x = a.records[i], y = b.records[i];
      x.admission_ns = y.admission_ns;
      x.policy_ns = y.policy_ns;
      x.watcher_ns = y.watcher_ns;
      x.recovery_ns = y.recovery_ns;
      CHECK(x == y);
    }
  }
}

TEST_CASE("variants see identical trial streams") {
  auto cfg = test::default_config();
  for (int i = 0; i < 200; ++i) CHECK(generate_trial(test::calibrated(), cfg, 456, i) == generate_trial(test::calibrated(), cfg, 456, i));
}
