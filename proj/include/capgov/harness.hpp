#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "capgov/audit.hpp"
#include "capgov/enums.hpp"
#include "capgov/governance.hpp"
#include "capgov/metrics.hpp"
#include "capgov/recovery.hpp"
#include "capgov/registry.hpp"

namespace capgov {

// Free constants fitted by calibrate and frozen in the run config.
struct Calibration {
  double tick_seconds = 0.05;
  double s_real_restricted = 0.7;
  double s_human_shared = 0.95;
  double rollback_success = 0.90;
  double static_share = 0.6;        // mixture weight of statically detectable unauthorized kinds
  double permission_fraction = 0.8;  // part of static_share that is missing_permission
  double p_unresolved = 0.1;         // env-profile mismatches the agent fails to declare
  double b3_sensitivity = 0.45;
  bool operator==(const Calibration&) const = default;
};

nlohmann::json to_json(const Calibration& c);
Calibration calibration_from_json(const nlohmann::json& j);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::vector<std::uint64_t> seeds{42, 123, 456, 789, 1024};
  int trials_per_seed = 200;
  Calibration calibration;
  std::filesystem::path registry_path;
  std::vector<Variant> variants;  // empty means every variant
  int horizon = 12;
  int episode_length = 2;
  double p_unauthorized = 0.5;
  double p_defer = 0.1;
  double p_mode_omitted = 0.2;
  double approve_probability = 0.5;
  RecoveryConfig recovery;

  std::vector<Variant> active_variants() const;

  // Reads the YAML run config; a relative registry path resolves against the config's directory.
  static RunConfig load(const std::filesystem::path& path);
  static RunConfig parse(const std::string& text, const std::filesystem::path& base_dir);
  std::string serialize() const;
  nlohmann::json to_json() const;
};

// Registry with the calibrated sensitivities applied.
Registry calibrated_registry(Registry base, const Calibration& c);

struct VariantSpec {
  GovernComponents governance;
  bool watcher = true;
  bool local_checker = false;
  bool recovery_manager = true;
  bool local_recovery = false;
  bool human = true;
  bool override_scenarios = false;
};

VariantSpec variant_spec(Variant v);
std::string_view variant_label(Variant v);  // row label used in tables

struct TrialSpec {
  std::uint64_t seed = 0;
  int index = 0;
  std::string capability;
  ProfileId profile = ProfileId::sim_relaxed;
  bool authorized = true;
  std::optional<UnauthorizedKind> unauthorized_kind;
  std::optional<ViolationType> injection;
  std::optional<FailureKind> failure;
  int injection_step = 0;
  std::string violation_zone;
  bool defer_once = false;
  bool override_scenario = false;
  bool unapproved_high_risk = false;
  InvocationRequest request;

  bool operator==(const TrialSpec&) const = default;
};

nlohmann::json to_json(const TrialSpec& t);

// Unauthorized kinds a (capability, profile) pair can express, with their mixture weights.
std::vector<std::pair<UnauthorizedKind, double>> feasible_kinds(const CapabilityManifest& m,
                                                                const EnvironmentProfile& p, const Calibration& c);

TrialSpec generate_trial(const Registry& reg, const RunConfig& cfg, std::uint64_t seed, int index);
TrialSpec generate_override_trial(const Registry& reg, const RunConfig& cfg, std::uint64_t seed, int index);

struct CellResult {
  Variant variant = Variant::proposed;
  std::uint64_t seed = 0;
  std::vector<TrialRecord> records;
  MethodMetrics metrics;
  LatencyProfile latency;
};

struct RuntimeHooks;
class OverrideGateway;

// One (variant, seed) cell. log may be null, in which case events go nowhere; without a gateway
// the cell gets a private one.
CellResult run_cell(const Registry& reg, const RunConfig& cfg, Variant v, std::uint64_t seed, AuditLog* log,
                    RuntimeHooks* hooks = nullptr, OverrideGateway* gateway = nullptr);

nlohmann::json log_header(const Registry& reg, const RunConfig& cfg, Variant v, std::uint64_t seed);
nlohmann::json log_summary(const CellResult& cell);

struct ExperimentResult {
  std::vector<CellResult> cells;
  const CellResult* find(Variant v, std::uint64_t seed) const;
  std::vector<const CellResult*> of(Variant v) const;
};

// Runs every active variant over identical trial streams. With audit_dir set, one log per cell.
ExperimentResult run_experiment(const Registry& reg, const RunConfig& cfg,
                                const std::optional<std::filesystem::path>& audit_dir = std::nullopt);

std::string cell_log_name(Variant v, std::uint64_t seed);

// Replay: rebuild trial records and metrics from a log with no other input.
struct ReplayResult {
  std::vector<TrialRecord> records;
  MethodMetrics metrics;
  MethodMetrics recorded;
  LatencyProfile latency;
  Variant variant = Variant::proposed;
  std::uint64_t seed = 0;
  std::map<std::uint64_t, std::vector<std::string>> state_sequences;
  bool matches() const { return metrics == recorded; }
};

ReplayResult replay(const ParsedLog& log);

struct CalibrationTarget {
  std::string name;
  double target;
  double tolerance;
};

std::vector<CalibrationTarget> default_targets();

struct CalibrationReport {
  Calibration fitted;
  double objective = 0.0;  // max over targets of |deviation| / tolerance
  std::vector<std::pair<CalibrationTarget, double>> achieved;
  int evaluations = 0;
};

struct CalibrationInfeasible : std::runtime_error {
  CalibrationInfeasible(const std::string& what, CalibrationReport r) : std::runtime_error(what), report(std::move(r)) {}
  CalibrationReport report;
};

// Block-coordinate grid search over the free constants; throws CalibrationInfeasible when the
// best point still misses a tolerance.
CalibrationReport calibrate(const Registry& base, const RunConfig& cfg,
                            const std::vector<CalibrationTarget>& targets = default_targets(), int rounds = 3);

// Measures the targets for one calibration point.
std::vector<std::pair<CalibrationTarget, double>> evaluate_targets(const Registry& base, const RunConfig& cfg,
                                                                   const Calibration& c,
                                                                   const std::vector<CalibrationTarget>& targets);

}  // namespace capgov
