#pragma once

#include <filesystem>
#include <string>

#include "capgov/governance.hpp"
#include "capgov/harness.hpp"
#include "capgov/registry.hpp"

namespace capgov::test {

inline std::filesystem::path data_dir() { return CAPGOV_DATA_DIR; }

inline const Registry& default_registry() {
  static const Registry reg = Registry::load_file(data_dir() / "default_registry.yaml");
  return reg;
}

inline RunConfig default_config() { return RunConfig::load(data_dir() / "run.yaml"); }

inline const Registry& calibrated() {
  static const Registry reg = calibrated_registry(default_registry(), default_config().calibration);
  return reg;
}

// A request with every permission the capability needs and the profile's accepted mode.
inline InvocationRequest request_for(const std::string& capability, ProfileId profile, ParamMap params) {
  const auto& reg = default_registry();
  InvocationRequest r;
  r.capability = capability;
  r.profile = profile;
  r.params = std::move(params);
  if (const auto* m = reg.lookup(capability)) r.agent_permissions = m->permissions;
  r.meta.execution_mode = *reg.profile(profile).accepted_tags.begin();
  return r;
}

}  // namespace capgov::test
