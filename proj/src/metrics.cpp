#include "capgov/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace capgov {

using nlohmann::json;

std::string_view to_string(FailureResult r) {
  switch (r) {
    case FailureResult::none: return "none";
    case FailureResult::recovered: return "recovered";
    case FailureResult::safe_terminated: return "safe_terminated";
    case FailureResult::unrecovered: return "unrecovered";
  }
  return "none";
}

FailureResult parse_failure_result(std::string_view s) {
  for (auto r : {FailureResult::none, FailureResult::recovered, FailureResult::safe_terminated,
                 FailureResult::unrecovered})
    if (to_string(r) == s) return r;
  throw std::invalid_argument("unknown failure result '" + std::string(s) + "'");
}

namespace {

std::optional<double> ratio(long num, long den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MethodMetrics compute_metrics(const std::vector<TrialRecord>& records, double tick_seconds) {
  MethodMetrics m;
  m.trials = static_cast<int>(records.size());
  long blocked_unauth = 0, blocked_auth = 0;
  long adl_n = 0;
  double adl_sum = 0.0;
  long onset = 0, unsafe = 0;
  long dl_n = 0, dl_sum = 0;
  long compliant = 0;
  long recovered = 0, rb_ok = 0;
  long mrt_n = 0, mrt_ticks = 0;
  long permitted = 0;
  std::array<long, 6> type_n{}, type_hit{};
  long gate_n = 0, gate_blocked = 0;

  for (const auto& r : records) {
    if (!r.outcome) throw IncompleteRun("trial " + std::to_string(r.trial_index) + " has no final outcome");
    if (r.admission_ns) {
      ++adl_n;
      adl_sum += static_cast<double>(*r.admission_ns) / 1000.0;
    }
    if (r.override_scenario) {
      if (r.unapproved_high_risk) {
        ++gate_n;
        if (r.blocked) ++gate_blocked;
      }
      continue;
    }
    if (r.authorized) {
      ++m.authorized;
      if (r.blocked) {
        ++blocked_auth;
        ++m.confusion.fp;
      } else {
        ++m.confusion.tn;
      }
    } else {
      ++m.unauthorized;
      if (r.blocked) {
        ++blocked_unauth;
        ++m.confusion.tp;
      } else {
        ++m.confusion.fn;
      }
    }
    if (r.injection) {
      ++m.injected;
      auto t = static_cast<std::size_t>(*r.injection);
      ++type_n[t];
      if (r.onset_detected) ++type_hit[t];
      if (r.monitored) {
        ++m.monitored;
        if (r.onset_detected) ++onset;
        if (!r.intervened) ++unsafe;
        if (r.detection_delay) {
          ++dl_n;
          dl_sum += *r.detection_delay;
        }
      }
    }
    m.detections += r.detections;
    compliant += r.compliant_interventions;
    if (r.failure_injected) {
      ++m.failures;
      if (r.failure_result == FailureResult::recovered || r.failure_result == FailureResult::safe_terminated)
        ++recovered;
      if (r.recovery_ticks) {
        ++mrt_n;
        mrt_ticks += *r.recovery_ticks;
      }
    }
    if (r.rollback_eligible) {
      ++m.rollback_eligible;
      if (r.rollback_success) ++rb_ok;
    }
    m.recovery_actions += r.recovery_actions;
    permitted += r.permitted_recovery_actions;
  }

  m.uair = ratio(blocked_unauth, m.unauthorized);
  m.frr = ratio(blocked_auth, m.authorized);
  if (adl_n) m.adl_us = adl_sum / static_cast<double>(adl_n);
  m.rvdr = ratio(onset, m.monitored);
  m.ucr = ratio(unsafe, m.monitored);
  if (dl_n) m.dl_ticks = static_cast<double>(dl_sum) / static_cast<double>(dl_n);
  m.cef = ratio(compliant, m.detections);
  m.rsr = ratio(recovered, m.failures);
  m.rbsr = ratio(rb_ok, m.rollback_eligible);
  if (mrt_n) m.mrt_s = static_cast<double>(mrt_ticks) * tick_seconds / static_cast<double>(mrt_n);
  m.rpc = ratio(permitted, m.recovery_actions);
  for (std::size_t t = 0; t < 6; ++t) m.per_type[t] = ratio(type_hit[t], type_n[t]);
  m.block_rate = ratio(gate_blocked, gate_n);
  m.incorrect_allow = ratio(gate_n - gate_blocked, gate_n);
  return m;
}

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> read_opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::vector<std::string> metric_names() {
  return {"uair", "frr", "adl_us", "rvdr", "dl_ticks", "cef", "ucr", "rsr", "rbsr", "mrt_s", "rpc", "block_rate",
          "incorrect_allow"};
}

std::optional<double> metric_value(const MethodMetrics& m, const std::string& name) {
  if (name == "uair") return m.uair;
  if (name == "frr") return m.frr;
  if (name == "adl_us") return m.adl_us;
  if (name == "rvdr") return m.rvdr;
  if (name == "dl_ticks") return m.dl_ticks;
  if (name == "cef") return m.cef;
  if (name == "ucr") return m.ucr;
  if (name == "rsr") return m.rsr;
  if (name == "rbsr") return m.rbsr;
  if (name == "mrt_s") return m.mrt_s;
  if (name == "rpc") return m.rpc;
  if (name == "block_rate") return m.block_rate;
  if (name == "incorrect_allow") return m.incorrect_allow;
  for (auto v : all_values<ViolationType>())
    if (name == "detect_" + std::string(to_string(v))) return m.per_type[static_cast<std::size_t>(v)];
  throw std::invalid_argument("unknown metric '" + name + "'");
}

json to_json(const MethodMetrics& m) {
  json j;
  for (const auto& n : metric_names()) j[n] = opt(metric_value(m, n));
  json pt = json::object();
  for (auto v : all_values<ViolationType>()) pt[std::string(to_string(v))] = opt(m.per_type[static_cast<std::size_t>(v)]);
  j["per_type"] = pt;
  j["confusion"] = {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"fn", m.confusion.fn}, {"tn", m.confusion.tn}};
  j["counts"] = {{"trials", m.trials},       {"unauthorized", m.unauthorized},
                 {"authorized", m.authorized}, {"injected", m.injected},
                 {"monitored", m.monitored},   {"detections", m.detections},
                 {"failures", m.failures},     {"rollback_eligible", m.rollback_eligible},
                 {"recovery_actions", m.recovery_actions}};
  return j;
}

MethodMetrics metrics_from_json(const json& j) {
  MethodMetrics m;
  m.uair = read_opt(j, "uair");
  m.frr = read_opt(j, "frr");
  m.adl_us = read_opt(j, "adl_us");
  m.rvdr = read_opt(j, "rvdr");
  m.dl_ticks = read_opt(j, "dl_ticks");
  m.cef = read_opt(j, "cef");
  m.ucr = read_opt(j, "ucr");
  m.rsr = read_opt(j, "rsr");
  m.rbsr = read_opt(j, "rbsr");
  m.mrt_s = read_opt(j, "mrt_s");
  m.rpc = read_opt(j, "rpc");
  m.block_rate = read_opt(j, "block_rate");
  m.incorrect_allow = read_opt(j, "incorrect_allow");
  for (auto v : all_values<ViolationType>())
    m.per_type[static_cast<std::size_t>(v)] = read_opt(j.at("per_type"), std::string(to_string(v)).c_str());
  const auto& c = j.at("confusion");
  m.confusion = {c.at("tp").get<int>(), c.at("fp").get<int>(), c.at("fn").get<int>(), c.at("tn").get<int>()};
  const auto& n = j.at("counts");
  m.trials = n.at("trials").get<int>();
  m.unauthorized = n.at("unauthorized").get<int>();
  m.authorized = n.at("authorized").get<int>();
  m.injected = n.at("injected").get<int>();
  m.monitored = n.at("monitored").get<int>();
  m.detections = n.at("detections").get<int>();
  m.failures = n.at("failures").get<int>();
  m.rollback_eligible = n.at("rollback_eligible").get<int>();
  m.recovery_actions = n.at("recovery_actions").get<int>();
  return m;
}

LatencyStats latency_stats(std::vector<std::uint64_t> samples_ns) {
  LatencyStats s;
  s.samples = samples_ns.size();
  if (samples_ns.empty()) return s;
  std::sort(samples_ns.begin(), samples_ns.end());
  double n = static_cast<double>(samples_ns.size());
  double sum = 0.0;
  for (auto v : samples_ns) sum += static_cast<double>(v);
  s.mean_us = sum / n / 1000.0;
  double ss = 0.0;
  for (auto v : samples_ns) {
    double d = static_cast<double>(v) / 1000.0 - s.mean_us;
    ss += d * d;
  }
  s.std_us = samples_ns.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  auto rank = [&](double p) {
    auto k = static_cast<std::size_t>(std::ceil(p * n));
    return static_cast<double>(samples_ns[std::clamp<std::size_t>(k, 1, samples_ns.size()) - 1]) / 1000.0;
  };
  s.p50_us = rank(0.50);
  s.p99_us = rank(0.99);
  return s;
}

LatencyProfile latency_profile(const std::vector<TrialRecord>& records) {
  std::vector<std::uint64_t> adm, pol, watch, rec, total;
  for (const auto& r : records) {
    if (r.admission_ns) adm.push_back(*r.admission_ns);
    if (r.policy_ns) pol.push_back(*r.policy_ns);
    if (r.admission_ns) total.push_back(*r.admission_ns + r.policy_ns.value_or(0));
    watch.insert(watch.end(), r.watcher_ns.begin(), r.watcher_ns.end());
    rec.insert(rec.end(), r.recovery_ns.begin(), r.recovery_ns.end());
  }
  return {latency_stats(adm), latency_stats(pol), latency_stats(watch), latency_stats(rec), latency_stats(total)};
}

json to_json(const LatencyStats& s) {
  return {{"mean_us", s.mean_us}, {"std_us", s.std_us}, {"p50_us", s.p50_us}, {"p99_us", s.p99_us}, {"samples", s.samples}};
}

json to_json(const LatencyProfile& p) {
  return {{"admission", to_json(p.admission)},
          {"policy_guard", to_json(p.policy_guard)},
          {"watcher_step", to_json(p.watcher_step)},
          {"recovery", to_json(p.recovery)},
          {"total_pre_exec", to_json(p.total_pre_exec)}};
}

}  // namespace capgov
