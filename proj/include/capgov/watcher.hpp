#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "capgov/enums.hpp"
#include "capgov/governance.hpp"
#include "capgov/rng.hpp"

namespace capgov {

struct TelemetryEvent {
  std::uint64_t session_id = 0;
  int step = 0;
  TelemetryKind kind = TelemetryKind::progress;
  double value = 0.0;  // reading, progress fraction, or retry count
  bool flag = false;   // postcondition satisfied / human present
  std::string zone;
  std::optional<FailureKind> fault;  // controller_status only
};

nlohmann::json to_json(const TelemetryEvent& e);
TelemetryEvent telemetry_from_json(const nlohmann::json& j);

struct WatchSignal {
  SignalKind kind = SignalKind::normal;
  std::optional<ViolationType> violation;  // present iff kind is violation or escalation
  bool operator==(const WatchSignal&) const = default;
};

nlohmann::json to_json(const WatchSignal& s);
WatchSignal signal_from_json(const nlohmann::json& j);

// The violation an event objectively carries under the profile, regardless of who is watching.
std::optional<ViolationType> violation_in(const TelemetryEvent& e, const EnvironmentProfile& p);

// Readings at or above this fraction of a limit raise a warning.
inline constexpr double kWarningFraction = 0.8;

class ExecutionWatcher {
 public:
  // Whether the watcher reports this violation type at all under the profile.
  static bool covers(ViolationType v, const EnvironmentProfile& p);

  // One draw per violation event, detection probability equal to the profile sensitivity.
  WatchSignal observe(const TelemetryEvent& e, const GovernanceContext& ctx, Rng& rng) const;
};

// Per-capability checker used by the capability-internal baseline: fixed sensitivity,
// sees only the signals a skill can read locally.
class LocalChecker {
 public:
  explicit LocalChecker(double sensitivity) : sensitivity_(sensitivity) {}
  static bool covers(ViolationType v);
  WatchSignal observe(const TelemetryEvent& e, const EnvironmentProfile& p, Rng& rng) const;
  double sensitivity() const { return sensitivity_; }

 private:
  double sensitivity_;
};

struct TrialScript {
  int horizon = 12;
  std::optional<ViolationType> injection;
  int injection_step = 0;
  int episode_length = 2;
  std::string violation_zone;
  std::optional<FailureKind> failure;
  int failure_step = 0;
};

class Substrate {
 public:
  virtual ~Substrate() = default;
  virtual bool available() const { return true; }
  virtual std::vector<TelemetryEvent> step(std::uint64_t session_id, const ParamMap& params,
                                           const EnvironmentProfile& profile, int step) = 0;
};

// Emits the telemetry a trial's schedule calls for: nominal readings, the injected violation
// episode, the recoverable failure and the completion marker.
class ScriptedSubstrate : public Substrate {
 public:
  explicit ScriptedSubstrate(TrialScript script, bool available = true) : script_(std::move(script)), available_(available) {}
  bool available() const override { return available_; }
  std::vector<TelemetryEvent> step(std::uint64_t session_id, const ParamMap& params, const EnvironmentProfile& profile,
                                   int step) override;
  const TrialScript& script() const { return script_; }
  // Ends the injected episode early once an intervention has handled it.
  void clear_episode() { episode_cleared_ = true; }
  void clear_failure() { failure_cleared_ = true; }

 private:
  TrialScript script_;
  bool available_;
  bool episode_cleared_ = false;
  bool failure_cleared_ = false;
};

}  // namespace capgov
