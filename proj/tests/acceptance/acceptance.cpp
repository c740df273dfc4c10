// End-to-end acceptance run: full experiment, audit replay and Monte Carlo checks. Prints one
// PASS/FAIL line per criterion and exits nonzero if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "capgov/audit.hpp"
#include "capgov/governance.hpp"
#include "capgov/harness.hpp"
#include "capgov/recovery.hpp"
#include "capgov/registry.hpp"
#include "capgov/session.hpp"
#include "capgov/stats.hpp"
#include "capgov/tables.hpp"
#include "capgov/watcher.hpp"

using namespace capgov;
namespace fs = std::filesystem;

namespace {

// Reference values and pinned tolerances.
struct Target {
  const char* metric;
  Variant variant;
  double value;
  double tol;
};

constexpr double kB1Seconds = 10.0;
constexpr double kDetectionTol = 0.02;
constexpr int kMonteCarloEvents = 20000;
constexpr double kRollbackLo = 0.87;
constexpr double kRollbackHi = 0.93;
constexpr double kPValue = 1e-3;
constexpr double kPreExecP99Us = 1000.0;

struct Report {
  int failed = 0;
  void line(int id, bool ok, const std::string& detail) {
    std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failed;
  }
};

std::optional<double> mean_of(const ExperimentResult& r, Variant v, const std::string& metric) {
  auto c = seed_summary(r, v, metric);
  if (!c) return std::nullopt;
  return c->mean;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string show(const std::optional<double>& v) { return v ? fmt(*v) : std::string("n/a"); }

bool equals(const std::optional<double>& v, double x) { return v && std::abs(*v - x) < 1e-12; }

// Checks each target mean against value +- tol.
bool within(const ExperimentResult& r, const std::vector<Target>& ts, std::string& detail) {
  bool ok = true;
  std::ostringstream os;
  for (const auto& t : ts) {
    auto m = mean_of(r, t.variant, t.metric);
    bool hit = m && std::abs(*m - t.value) <= t.tol;
    ok = ok && hit;
    os << variant_label(t.variant) << ' ' << t.metric << '=' << show(m) << " (" << fmt(t.value) << "+-" << fmt(t.tol)
       << ") ";
  }
  detail = os.str();
  return ok;
}

// Session transitions, listed independently of the implementation.
const std::map<std::pair<SessionState, SessionEvent>, SessionState>& expected_edges() {
  using S = SessionState;
  using E = SessionEvent;
  static const std::map<std::pair<S, E>, S> edges{
      {{S::RUNNING, E::pause}, S::PAUSED},
      {{S::RUNNING, E::escalate}, S::ESCALATED},
      {{S::RUNNING, E::anomaly}, S::RECOVERING},
      {{S::RUNNING, E::recover_begin}, S::RECOVERING},
      {{S::RUNNING, E::complete}, S::COMPLETED},
      {{S::RUNNING, E::stop}, S::FAILED},
      {{S::PAUSED, E::resume}, S::RUNNING},
      {{S::PAUSED, E::clearance}, S::RUNNING},
      {{S::PAUSED, E::escalate}, S::ESCALATED},
      {{S::PAUSED, E::stop}, S::FAILED},
      {{S::ESCALATED, E::clearance}, S::RUNNING},
      {{S::ESCALATED, E::resume}, S::RUNNING},
      {{S::ESCALATED, E::recover_begin}, S::RECOVERING},
      {{S::ESCALATED, E::stop}, S::FAILED},
      {{S::RECOVERING, E::recover_done}, S::RUNNING},
      {{S::RECOVERING, E::complete}, S::COMPLETED},
      {{S::RECOVERING, E::recover_failed}, S::FAILED},
      {{S::RECOVERING, E::stop}, S::FAILED},
  };
  return edges;
}

std::vector<SessionEvent> path_to(SessionState s) {
  switch (s) {
    case SessionState::RUNNING: return {};
    case SessionState::PAUSED: return {SessionEvent::pause};
    case SessionState::ESCALATED: return {SessionEvent::escalate};
    case SessionState::RECOVERING: return {SessionEvent::recover_begin};
    case SessionState::COMPLETED: return {SessionEvent::complete};
    case SessionState::FAILED: return {SessionEvent::stop};
  }
  return {};
}

bool check_state_machine(const Registry& reg, std::string& detail) {
  auto ctx = make_context(reg, ProfileId::sim_relaxed);
  InvocationRequest req;
  req.capability = "inspect_area";
  req.profile = ProfileId::sim_relaxed;
  req.params = {{"area_zone", std::string("dock")}};
  req.agent_permissions = reg.lookup("inspect_area")->permissions;
  req.meta.execution_mode = *reg.profile(ProfileId::sim_relaxed).accepted_tags.begin();
  auto d = govern(req, ctx);
  if (!d.authorization()) {
    detail = "probe request was not admitted";
    return false;
  }
  int pairs = 0, legal = 0, wrong = 0;
  for (auto s : all_values<SessionState>()) {
    for (auto e : all_values<SessionEvent>()) {
      ++pairs;
      auto session = launch(*d.authorization(), 1, 0);
      for (auto step : path_to(s)) session.transition(step, "setup", 0);
      if (session.state() != s) {
        ++wrong;
        continue;
      }
      auto it = expected_edges().find({s, e});
      auto before = session.history().size();
      if (it == expected_edges().end()) {
        bool threw = false;
        try {
          session.transition(e, "probe", 1);
        } catch (const IllegalTransition&) {
          threw = true;
        }
        if (!threw || session.state() != s || session.history().size() != before || next_state(s, e)) ++wrong;
      } else {
        ++legal;
        if (session.transition(e, "probe", 1) != it->second || next_state(s, e) != it->second) ++wrong;
      }
    }
  }
  detail = std::to_string(pairs) + " pairs, " + std::to_string(legal) + " legal, " + std::to_string(wrong) + " wrong";
  return wrong == 0 && legal == static_cast<int>(expected_edges().size());
}

double detection_rate(const Registry& reg, ProfileId pid, const TelemetryEvent& e, int n, std::uint64_t seed) {
  auto ctx = make_context(reg, pid);
  ExecutionWatcher w;
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i), "watch");
    auto s = w.observe(e, ctx, rng);
    if (s.kind == SignalKind::violation || s.kind == SignalKind::escalation) ++hits;
  }
  return static_cast<double>(hits) / n;
}

bool check_monte_carlo(const Registry& reg, const RunConfig& cfg, std::string& detail) {
  bool ok = true;
  std::ostringstream os;
  for (auto pid : reg.profile_ids()) {
    const auto& p = reg.profile(pid);
    std::vector<TelemetryEvent> events{
        {.kind = TelemetryKind::force_reading, .value = p.force_limit * 1.25},
        {.kind = TelemetryKind::speed_reading, .value = p.speed_limit * 1.3},
        {.kind = TelemetryKind::retry_tick, .value = p.retry_budget + 1.0},
        {.kind = TelemetryKind::postcondition_status, .flag = false},
        {.kind = TelemetryKind::zone_entered, .zone = *p.forbidden_zones.begin()},
    };
    double worst = 0.0;
    for (const auto& e : events) {
      double rate = detection_rate(reg, pid, e, kMonteCarloEvents, 7000 + static_cast<std::uint64_t>(e.kind));
      worst = std::max(worst, std::abs(rate - p.watcher_sensitivity));
    }
    ok = ok && worst <= kDetectionTol;
    os << to_string(pid) << " s=" << fmt(p.watcher_sensitivity) << " worst dev " << fmt(worst) << "; ";
  }
  RecoveryConfig rc = cfg.recovery;
  rc.rollback_success = cfg.calibration.rollback_success;
  const auto& m = *reg.lookup("grasp_object");
  int success = 0;
  for (int i = 0; i < kMonteCarloEvents; ++i) {
    Rng rng(9001, static_cast<std::uint64_t>(i), "rollback");
    if (attempt_rollback(m, rng, rc).success) ++success;
  }
  double rate = static_cast<double>(success) / kMonteCarloEvents;
  ok = ok && rate >= kRollbackLo && rate <= kRollbackHi;
  os << "rollback " << fmt(rate) << " over " << kMonteCarloEvents;
  detail = os.str();
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"capgov acceptance run"};
  std::string config_path = (fs::path(CAPGOV_DATA_DIR) / "run.yaml").string();
  std::string out_dir = "acceptance_out";
  app.add_option("--config", config_path, "run config");
  app.add_option("--out", out_dir, "output directory for tables and audit logs");
  CLI11_PARSE(app, argc, argv);

  RunConfig cfg;
  Registry base;
  try {
    cfg = RunConfig::load(config_path);
    base = Registry::load_file(cfg.registry_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  const fs::path out(out_dir);
  const fs::path audit = out / "audit";
  fs::remove_all(out);
  fs::create_directories(audit);

  Report rep;

  // B1 on its own, timed.
  RunConfig b1cfg = cfg;
  b1cfg.variants = {Variant::direct_execution};
  auto t0 = std::chrono::steady_clock::now();
  auto b1 = run_experiment(base, b1cfg);
  double b1_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  cfg.variants.clear();
  auto r = run_experiment(base, cfg, audit);
  write_tables(all_tables(r), out / "tables");

  {
    auto uair = mean_of(b1, Variant::direct_execution, "uair");
    auto ucr = mean_of(b1, Variant::direct_execution, "ucr");
    auto rpc = mean_of(b1, Variant::direct_execution, "rpc");
    bool ok = equals(uair, 0) && equals(ucr, 1) && equals(rpc, 0) && b1_seconds < kB1Seconds;
    rep.line(1, ok, "Direct UAIR=" + show(uair) + " UCR=" + show(ucr) + " RPC=" + show(rpc) + " in " + fmt(b1_seconds) + " s");
  }
  {
    auto rvdr = mean_of(r, Variant::static_rule, "rvdr");
    auto ucr = mean_of(r, Variant::static_rule, "ucr");
    rep.line(2, equals(rvdr, 0) && equals(ucr, 1), "Static RVDR=" + show(rvdr) + " UCR=" + show(ucr));
  }
  {
    auto frr = mean_of(r, Variant::proposed, "frr");
    auto cef = mean_of(r, Variant::proposed, "cef");
    auto rpc = mean_of(r, Variant::proposed, "rpc");
    rep.line(3, equals(frr, 0) && equals(cef, 1) && equals(rpc, 1),
             "Proposed FRR=" + show(frr) + " CEF=" + show(cef) + " RPC=" + show(rpc));
  }
  {
    auto rvdr = mean_of(r, Variant::ablate_watch, "rvdr");
    auto ucr = mean_of(r, Variant::ablate_watch, "ucr");
    auto rpc = mean_of(r, Variant::ablate_recov, "rpc");
    rep.line(4, equals(rvdr, 0) && equals(ucr, 1) && equals(rpc, 0),
             "no-watcher RVDR=" + show(rvdr) + " UCR=" + show(ucr) + "; no-recovery RPC=" + show(rpc));
  }
  {
    auto block = mean_of(r, Variant::override_on, "block_rate");
    auto allow = mean_of(r, Variant::override_off, "incorrect_allow");
    rep.line(5, equals(block, 1) && allow && *allow > 0,
             "gate on block rate=" + show(block) + "; gate off incorrect allow=" + show(allow));
  }
  {
    std::string detail;
    bool ok = check_state_machine(calibrated_registry(base, cfg.calibration), detail);
    rep.line(6, ok, detail);
  }
  {
    int logs = 0, mismatched = 0, bad_counts = 0;
    for (const auto& c : r.cells) {
      ++logs;
      try {
        auto rp = replay(read_log_file(audit / cell_log_name(c.variant, c.seed)));
        if (!rp.matches() || !(rp.metrics == c.metrics)) ++mismatched;
        const auto& cf = rp.metrics.confusion;
        if (cf.tp + cf.fn != rp.metrics.unauthorized) ++bad_counts;
      } catch (const std::exception& e) {
        std::fprintf(stderr, "replay of %s failed: %s\n", cell_log_name(c.variant, c.seed).c_str(), e.what());
        ++mismatched;
      }
    }
    rep.line(7, logs > 0 && mismatched == 0 && bad_counts == 0,
             std::to_string(logs) + " logs replayed, " + std::to_string(mismatched) + " mismatched, " +
                 std::to_string(bad_counts) + " with TP+FN != unauthorized");
  }
  {
    std::string detail;
    bool ok = within(r, {{"uair", Variant::proposed, 0.962, 0.054}, {"uair", Variant::static_rule, 0.595, 0.13}}, detail);
    rep.line(8, ok, detail);
  }
  {
    std::string detail;
    bool ok = within(r,
                     {{"rvdr", Variant::proposed, 0.613, 0.05},
                      {"ucr", Variant::proposed, 0.222, 0.062},
                      {"rvdr", Variant::capability_internal, 0.351, 0.05}},
                     detail);
    rep.line(9, ok, detail);
  }
  {
    std::string detail;
    bool ok = within(r,
                     {{"rsr", Variant::proposed, 0.914, 0.06},
                      {"rbsr", Variant::proposed, 0.541, 0.09},
                      {"mrt_s", Variant::proposed, 0.169, 0.02}},
                     detail);
    rep.line(10, ok, detail);
  }
  {
    auto rate = [&](ViolationType v) { return mean_of(r, Variant::proposed, "detect_" + std::string(to_string(v))); };
    auto zone = rate(ViolationType::zone_violation);
    auto prox = rate(ViolationType::human_proximity);
    bool ok = zone && prox && *zone > *prox && std::abs(*prox - 0.242) <= 0.13;
    std::ostringstream os;
    for (auto v : {ViolationType::force_exceeded, ViolationType::speed_exceeded, ViolationType::retry_exceeded,
                   ViolationType::postcondition_failed}) {
      auto x = rate(v);
      ok = ok && x && zone && *x > *zone;
      os << to_string(v) << '=' << show(x) << ' ';
    }
    os << "zone=" << show(zone) << " proximity=" << show(prox) << " (0.242+-0.13)";
    rep.line(11, ok, os.str());
  }
  {
    auto tests = paired_tests(r, Variant::proposed, Variant::capability_internal, ttest_metrics());
    bool ok = tests.size() == ttest_metrics().size();
    std::ostringstream os;
    for (const auto& t : tests) {
      ok = ok && t.p < kPValue;
      os << t.metric << " p=" << fmt(t.p) << ' ';
    }
    rep.line(12, ok, os.str());
  }
  {
    std::string detail;
    bool ok = check_monte_carlo(calibrated_registry(base, cfg.calibration), cfg, detail);
    rep.line(13, ok, detail);
  }
  {
    std::vector<TrialRecord> all;
    for (const auto* c : r.of(Variant::proposed)) all.insert(all.end(), c->records.begin(), c->records.end());
    auto p = latency_profile(all);
    rep.line(14, p.total_pre_exec.samples > 0 && p.total_pre_exec.p99_us < kPreExecP99Us,
             "pre-exec P99 " + fmt(p.total_pre_exec.p99_us) + " us over " + std::to_string(p.total_pre_exec.samples) +
                 " samples");
  }

  std::printf("%s: %d of 14 criteria failed\n", rep.failed ? "FAIL" : "PASS", rep.failed);
  return rep.failed ? 1 : 0;
}
