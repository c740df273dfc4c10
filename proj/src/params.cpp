#include "capgov/params.hpp"

#include <stdexcept>

namespace capgov {

using nlohmann::json;

json to_json(const ParamValue& v) {
  return std::visit(
      [](const auto& x) -> json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Pose>) {
          return json{{"pose", {x.x, x.y, x.theta}}};
        } else {
          return x;
        }
      },
      v);
}

ParamValue param_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  if (j.is_object() && j.contains("pose")) {
    const auto& p = j.at("pose");
    return Pose{p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()};
  }
  throw std::invalid_argument("unsupported parameter value: " + j.dump());
}

json to_json(const ParamMap& m) {
  json out = json::object();
  for (const auto& [k, v] : m) out[k] = to_json(v);
  return out;
}

ParamMap params_from_json(const json& j) {
  ParamMap out;
  for (auto it = j.begin(); it != j.end(); ++it) out.emplace(it.key(), param_from_json(it.value()));
  return out;
}

}  // namespace capgov
