#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "capgov/audit.hpp"
#include "capgov/harness.hpp"
#include "capgov/override.hpp"
#include "capgov/runtime.hpp"
#include "support.hpp"

using namespace capgov;
using nlohmann::json;

namespace {

const std::filesystem::path kGolden = std::filesystem::path(CAPGOV_GOLDEN_DIR) / "proposed_seed42_t40.jsonl";

ParsedLog parse_text(const std::string& text) {
  std::istringstream in(text);
  return read_log(in);
}

// An audit log of one small cell written to memory.
std::string cell_log(Variant v, std::uint64_t seed, int trials) {
  auto cfg = test::default_config();
  cfg.trials_per_seed = trials;
  auto sink = std::make_shared<MemorySink>();
  AuditLog log(sink);
  run_cell(test::default_registry(), cfg, v, seed, &log);
  return sink->text();
}

// Drops wall-clock and timer fields, which vary run to run.
json strip_timing(json j) {
  if (j.is_object()) {
    json out = json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
      const auto& k = it.key();
      if (k == "wall_ns" || k == "latency_ns" || k == "watcher_ns" || k == "recovery_ns" || k == "latency" || k == "adl_us") continue;
      out[k] = strip_timing(it.value());
    }
    return out;
  }
  if (j.is_array()) {
    json out = json::array();
    for (const auto& x : j) out.push_back(strip_timing(x));
    return out;
  }
  return j;
}

}  // namespace

TEST_CASE("appends are numbered per session from zero") {
  auto sink = std::make_shared<MemorySink>();
  AuditLog log(sink);
  CHECK(log.append(1, AuditKind::proposal, 0, json::object()) == 0);
  CHECK(log.append(1, AuditKind::admission_decision, 0, json::object()) == 1);
  CHECK(log.append(2, AuditKind::proposal, 0, json::object()) == 0);
  CHECK(log.append(1, AuditKind::final_outcome, 1, json::object()) == 2);
  CHECK(log.closed(1));
  CHECK_THROWS_AS(log.append(1, AuditKind::telemetry, 2, json::object()), ClosedTrace);
  CHECK(log.append(2, AuditKind::final_outcome, 1, json::object()) == 1);
  CHECK(sink->lines.size() == 5);
}

TEST_CASE("audit events round trip through json") {
  AuditEvent e{3, 7, 11, 12345, AuditKind::intervention, json{{"action", "stop"}}, json{{"authorized", true}}};
  auto back = audit_event_from_json(to_json(e));
  CHECK(back.seq == 3);
  CHECK(back.session_id == 7);
  CHECK(back.kind == AuditKind::intervention);
  CHECK(back.payload == e.payload);
  CHECK(back.ground_truth == e.ground_truth);
}

TEST_CASE("the strict reader rejects damaged logs") {
  auto text = cell_log(Variant::proposed, 42, 5);
  CHECK_NOTHROW(parse_text(text));

  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  auto join = [](const std::vector<std::string>& ls) {
    std::string s;
    for (const auto& l : ls) s += l + "\n";
    return s;
  };

  SUBCASE("missing summary") {
    auto t = lines;
    t.pop_back();
    CHECK_THROWS_AS(parse_text(join(t)), CorruptLog);
  }
  SUBCASE("missing header") {
    auto t = lines;
    t.erase(t.begin());
    CHECK_THROWS_AS(parse_text(join(t)), CorruptLog);
  }
  SUBCASE("sequence gap") {
    auto t = lines;
    t.erase(t.begin() + 3);
    CHECK_THROWS_AS(parse_text(join(t)), CorruptLog);
  }
  SUBCASE("garbage line") {
    auto t = lines;
    t[2] = "{not json";
    try {
      parse_text(join(t));
      FAIL("expected CorruptLog");
    } catch (const CorruptLog& e) {
      CHECK(e.line == 3);
    }
  }
  SUBCASE("event after final outcome") {
    auto t = lines;
    // Swap the last event of session 1 (its final_outcome) ahead of the one before it.
    std::size_t fin = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      auto j = json::parse(t[i]);
      if (j.value("record", "") == "event" && j["session"] == 1 && j["kind"] == "final_outcome") fin = i;
    }
    REQUIRE(fin > 1);
    std::swap(t[fin], t[fin - 1]);
    CHECK_THROWS_AS(parse_text(join(t)), CorruptLog);
  }
}

TEST_CASE("replay recomputes the recorded metrics for every variant") {
  for (auto v : all_values<Variant>()) {
    INFO(to_string(v));
    auto r = replay(parse_text(cell_log(v, 123, 60)));
    CHECK(r.matches());
    CHECK(r.variant == v);
    CHECK(r.seed == 123);
    if (r.metrics.uair) CHECK(r.metrics.confusion.tp + r.metrics.confusion.fn == r.metrics.unauthorized);
  }
}

TEST_CASE("replay rebuilds the online trial records") {
  auto cfg = test::default_config();
  cfg.trials_per_seed = 60;
  auto sink = std::make_shared<MemorySink>();
  AuditLog log(sink);
  auto cell = run_cell(test::default_registry(), cfg, Variant::proposed, 456, &log);
  auto r = replay(parse_text(sink->text()));
  REQUIRE(r.records.size() == cell.records.size());
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    INFO("trial " << i);
    CHECK(r.records[i] == cell.records[i]);
  }
  CHECK(r.metrics == cell.metrics);
}

TEST_CASE("state sequences in the log follow the session machine") {
  auto r = replay(parse_text(cell_log(Variant::proposed, 789, 60)));
  CHECK_FALSE(r.state_sequences.empty());
  for (const auto& [sid, seq] : r.state_sequences) {
    REQUIRE_FALSE(seq.empty());
    CHECK(seq.front() == "RUNNING");
    CHECK((seq.back() == "COMPLETED" || seq.back() == "FAILED"));
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      auto from = parse_enum<SessionState>(seq[i]);
      auto to = parse_enum<SessionState>(seq[i + 1]);
      bool edge = false;
      for (auto e : all_values<SessionEvent>())
        if (next_state(from, e) == to) edge = true;
      CHECK(edge);
    }
  }
}

TEST_CASE("the golden log replays and regenerates byte for byte apart from timers") {
  if (std::getenv("CAPGOV_REGEN_GOLDEN")) {
    std::ofstream(kGolden) << cell_log(Variant::proposed, 42, 40);
  }
  REQUIRE(std::filesystem::exists(kGolden));
  auto golden = read_log_file(kGolden);
  auto r = replay(golden);
  CHECK(r.matches());
  CHECK(r.records.size() == 40);

  auto cfg = test::default_config();
  REQUIRE_MESSAGE(golden.header["calibration"] == to_json(cfg.calibration),
                  "calibration changed; regenerate with CAPGOV_REGEN_GOLDEN=1");
  auto fresh = parse_text(cell_log(Variant::proposed, 42, 40));
  REQUIRE(fresh.events.size() == golden.events.size());
  for (std::size_t i = 0; i < fresh.events.size(); ++i) {
    INFO("event " << i);
    CHECK(strip_timing(to_json(fresh.events[i])) == strip_timing(to_json(golden.events[i])));
  }
  CHECK(strip_timing(fresh.summary) == strip_timing(golden.summary));
}

TEST_CASE("storage failure fails the session closed") {
  auto cfg = test::default_config();
  const auto& reg = test::calibrated();
  // A trial that launches: find one authorized, non-deferred trial.
  TrialSpec spec;
  for (int i = 0;; ++i) {
    spec = generate_trial(reg, cfg, 42, i);
    if (spec.authorized && !spec.defer_once && spec.profile == ProfileId::sim_relaxed) break;
  }
  auto full_sink = std::make_shared<MemorySink>();
  AuditLog full(full_sink);
  OverrideGateway g0;
  auto ok = run_trial(spec, reg, cfg, Variant::proposed, full, g0, 1);
  CHECK(ok.outcome != Outcome::audit_failure);
  const auto total = full_sink->lines.size();
  REQUIRE(total > 4);

  for (std::size_t accept = 0; accept < total; ++accept) {
    INFO("accepting " << accept << " of " << total << " writes");
    auto sink = std::make_shared<FailingSink>(accept);
    AuditLog log(sink);
    OverrideGateway g;
    TrialRecord rec;
    CHECK_NOTHROW(rec = run_trial(spec, reg, cfg, Variant::proposed, log, g, 1));
    CHECK(rec.outcome == Outcome::audit_failure);
    CHECK_FALSE(safe_outcome(Outcome::audit_failure));
    // Nothing reaches storage after the first failed write, and the prefix is what a full run writes.
    CHECK(sink->lines.size() == accept);
    for (std::size_t i = 0; i < accept; ++i)
      CHECK(strip_timing(json::parse(sink->lines[i])) == strip_timing(json::parse(full_sink->lines[i])));
    bool launched = false;
    for (const auto& l : sink->lines)
      if (json::parse(l)["kind"] == "launch") launched = true;
    if (!launched) CHECK_FALSE(rec.launched);
  }
}

TEST_CASE("governance never reads ground truth") {
  // Two logs whose trials differ only in the ground-truth annotation would be impossible to build
  // from outside; instead check the annotation is segregated: payloads of decision events carry no
  // ground-truth keys.
  auto log = parse_text(cell_log(Variant::proposed, 42, 30));
  for (const auto& e : log.events) {
    if (e.kind == AuditKind::proposal) {
      CHECK(e.ground_truth.has_value());
      CHECK_FALSE(e.payload.contains("authorized"));
    } else if (e.kind == AuditKind::admission_decision || e.kind == AuditKind::policy_decision ||
               e.kind == AuditKind::intervention) {
      CHECK_FALSE(e.payload.contains("authorized"));
      CHECK_FALSE(e.payload.contains("injection"));
    }
  }
}
