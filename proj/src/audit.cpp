#include "capgov/audit.hpp"

#include <array>
#include <chrono>
#include <sstream>

namespace capgov {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 11> kKindNames = {
    "proposal",    "admission_decision", "policy_decision", "launch",       "telemetry",    "watch_signal",
    "intervention", "recovery_step",     "human_event",     "state_change", "final_outcome"};

std::uint64_t wall_now() {
  return static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
}

}  // namespace

std::string_view to_string(AuditKind k) { return kKindNames.at(static_cast<std::size_t>(k)); }

AuditKind parse_audit_kind(std::string_view s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == s) return static_cast<AuditKind>(i);
  throw std::invalid_argument("unknown audit kind '" + std::string(s) + "'");
}

json to_json(const AuditEvent& e) {
  json j{{"record", "event"},
         {"seq", e.seq},
         {"session", e.session_id},
         {"tick", e.tick},
         {"wall_ns", e.wall_ns},
         {"kind", to_string(e.kind)},
         {"payload", e.payload}};
  if (e.ground_truth) j["ground_truth"] = *e.ground_truth;
  return j;
}

AuditEvent audit_event_from_json(const json& j) {
  AuditEvent e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.session_id = j.at("session").get<std::uint64_t>();
  e.tick = j.at("tick").get<std::uint64_t>();
  e.wall_ns = j.at("wall_ns").get<std::uint64_t>();
  e.kind = parse_audit_kind(j.at("kind").get<std::string>());
  e.payload = j.at("payload");
  if (j.contains("ground_truth")) e.ground_truth = j.at("ground_truth");
  return e;
}

FileSink::FileSink(const std::filesystem::path& path) : out_(path, std::ios::out | std::ios::trunc), path_(path) {
  if (!out_) throw StorageFailure("cannot open audit file " + path.string());
}

void FileSink::write_line(const std::string& line) {
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw StorageFailure("write failed on " + path_.string());
}

std::string MemorySink::text() const {
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

void FailingSink::write_line(const std::string& line) {
  if (remaining_ == 0) throw StorageFailure("simulated storage failure");
  --remaining_;
  lines.push_back(line);
}

void AuditLog::write(const json& record) { sink_->write_line(record.dump()); }

void AuditLog::write_header(const json& header) {
  std::lock_guard lk(mu_);
  json h = header;
  h["record"] = "header";
  write(h);
}

void AuditLog::write_summary(const json& summary) {
  std::lock_guard lk(mu_);
  json s = summary;
  s["record"] = "summary";
  write(s);
}

std::uint64_t AuditLog::append(std::uint64_t session_id, AuditKind kind, std::uint64_t tick, json payload,
                               std::optional<json> ground_truth) {
  std::lock_guard lk(mu_);
  if (closed_.count(session_id))
    throw ClosedTrace("session " + std::to_string(session_id) + " already has a final outcome");
  AuditEvent e;
  e.seq = next_seq_[session_id];
  e.session_id = session_id;
  e.tick = tick;
  e.wall_ns = wall_now();
  e.kind = kind;
  e.payload = std::move(payload);
  e.ground_truth = std::move(ground_truth);
  write(to_json(e));
  // Only a durable write advances the sequence.
  ++next_seq_[session_id];
  if (kind == AuditKind::final_outcome) closed_.insert(session_id);
  return e.seq;
}

bool AuditLog::closed(std::uint64_t session_id) const {
  std::lock_guard lk(mu_);
  return closed_.count(session_id) != 0;
}

ParsedLog read_log(std::istream& in) {
  ParsedLog log;
  std::map<std::uint64_t, std::uint64_t> expected;
  std::set<std::uint64_t> closed;
  std::string line;
  std::size_t n = 0;
  bool have_header = false;
  bool have_summary = false;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) throw CorruptLog(n, "empty line");
    if (have_summary) throw CorruptLog(n, "record after summary");
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw CorruptLog(n, e.what());
    }
    if (!j.is_object() || !j.contains("record")) throw CorruptLog(n, "not an audit record");
    const auto rec = j["record"].get<std::string>();
    if (rec == "header") {
      if (have_header || n != 1) throw CorruptLog(n, "header must be the first record");
      have_header = true;
      log.header = std::move(j);
      continue;
    }
    if (!have_header) throw CorruptLog(n, "missing header");
    if (rec == "summary") {
      have_summary = true;
      log.summary = std::move(j);
      continue;
    }
    if (rec != "event") throw CorruptLog(n, "unknown record type '" + rec + "'");
    AuditEvent e;
    try {
      e = audit_event_from_json(j);
    } catch (const std::exception& ex) {
      throw CorruptLog(n, ex.what());
    }
    if (closed.count(e.session_id)) throw CorruptLog(n, "event after final_outcome");
    if (e.seq != expected[e.session_id]) throw CorruptLog(n, "sequence gap");
    ++expected[e.session_id];
    if (e.kind == AuditKind::final_outcome) closed.insert(e.session_id);
    log.events.push_back(std::move(e));
  }
  if (!have_header) throw CorruptLog(n + 1, "missing header");
  if (!have_summary) throw CorruptLog(n + 1, "truncated: no summary record");
  return log;
}

ParsedLog read_log_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open audit log " + path.string());
  return read_log(in);
}

}  // namespace capgov
