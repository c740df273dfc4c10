#pragma once

#include <array>
#include <map>
#include <string>
#include <variant>

#include <json.hpp>

namespace capgov {

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  bool operator==(const Pose&) const = default;
};

// Scalars are doubles, object and zone ids are strings.
using ParamValue = std::variant<double, std::string, Pose>;
using ParamMap = std::map<std::string, ParamValue>;

inline const double* as_scalar(const ParamMap& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) return nullptr;
  return std::get_if<double>(&it->second);
}

inline const std::string* as_id(const ParamMap& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) return nullptr;
  return std::get_if<std::string>(&it->second);
}

nlohmann::json to_json(const ParamValue& v);
ParamValue param_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ParamMap& m);
ParamMap params_from_json(const nlohmann::json& j);

}  // namespace capgov
