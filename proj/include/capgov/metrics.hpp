#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "capgov/enums.hpp"

namespace capgov {

enum class FailureResult { none, recovered, safe_terminated, unrecovered };
std::string_view to_string(FailureResult r);
FailureResult parse_failure_result(std::string_view s);

// What one trial contributed to the metrics. Built twice: online while the trial runs, and
// offline from the audit log alone.
struct TrialRecord {
  int trial_index = 0;
  bool authorized = true;
  std::optional<UnauthorizedKind> unauthorized_kind;
  bool override_scenario = false;
  bool unapproved_high_risk = false;

  bool blocked = false;  // first governance decision refused or escalated
  bool launched = false;
  std::optional<std::uint64_t> admission_ns;
  std::optional<std::uint64_t> policy_ns;

  std::optional<ViolationType> injection;
  bool monitored = false;  // the violation is real under the profile and inside the watcher's coverage
  bool onset_detected = false;
  std::optional<int> detection_delay;  // ticks from onset to first detection
  bool intervened = false;             // a non-continue intervention during the episode
  int detections = 0;
  int compliant_interventions = 0;

  bool failure_injected = false;  // the scheduled failure manifested and reached a recovery handler
  bool rollback_eligible = false;
  bool rollback_success = false;
  FailureResult failure_result = FailureResult::none;
  std::optional<int> recovery_ticks;
  int recovery_actions = 0;
  int permitted_recovery_actions = 0;

  std::vector<std::uint64_t> watcher_ns;
  std::vector<std::uint64_t> recovery_ns;
  std::optional<Outcome> outcome;

  bool operator==(const TrialRecord&) const = default;
};

struct Confusion {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int tn = 0;
  bool operator==(const Confusion&) const = default;
};

struct MethodMetrics {
  std::optional<double> uair, frr, adl_us, rvdr, dl_ticks, cef, ucr, rsr, rbsr, mrt_s, rpc;
  std::array<std::optional<double>, 6> per_type{};  // indexed by ViolationType
  Confusion confusion;
  std::optional<double> block_rate, incorrect_allow;
  int trials = 0;
  int unauthorized = 0;
  int authorized = 0;
  int injected = 0;
  int monitored = 0;
  int detections = 0;
  int failures = 0;
  int rollback_eligible = 0;
  int recovery_actions = 0;
  bool operator==(const MethodMetrics&) const = default;
};

struct IncompleteRun : std::runtime_error {
  using std::runtime_error::runtime_error;
};

MethodMetrics compute_metrics(const std::vector<TrialRecord>& records, double tick_seconds);

nlohmann::json to_json(const MethodMetrics& m);
MethodMetrics metrics_from_json(const nlohmann::json& j);

// Metric names in a fixed order, with accessors, for tables and t-tests.
std::vector<std::string> metric_names();
std::optional<double> metric_value(const MethodMetrics& m, const std::string& name);

struct LatencyStats {
  double mean_us = 0.0;
  double std_us = 0.0;
  double p50_us = 0.0;
  double p99_us = 0.0;
  std::size_t samples = 0;
};

// Nearest-rank percentiles over nanosecond samples, reported in microseconds.
LatencyStats latency_stats(std::vector<std::uint64_t> samples_ns);

struct LatencyProfile {
  LatencyStats admission, policy_guard, watcher_step, recovery, total_pre_exec;
};

LatencyProfile latency_profile(const std::vector<TrialRecord>& records);
nlohmann::json to_json(const LatencyStats& s);
nlohmann::json to_json(const LatencyProfile& p);

}  // namespace capgov
