#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace capgov {

enum class AuditKind {
  proposal,
  admission_decision,
  policy_decision,
  launch,
  telemetry,
  watch_signal,
  intervention,
  recovery_step,
  human_event,
  state_change,
  final_outcome,
};

std::string_view to_string(AuditKind k);
AuditKind parse_audit_kind(std::string_view s);

struct AuditEvent {
  std::uint64_t seq = 0;
  std::uint64_t session_id = 0;
  std::uint64_t tick = 0;
  std::uint64_t wall_ns = 0;
  AuditKind kind = AuditKind::proposal;
  nlohmann::json payload;
  // Harness annotation. Governance code never reads it.
  std::optional<nlohmann::json> ground_truth;
};

nlohmann::json to_json(const AuditEvent& e);
AuditEvent audit_event_from_json(const nlohmann::json& j);

struct StorageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ClosedTrace : std::logic_error {
  using std::logic_error::logic_error;
};
struct CorruptLog : std::runtime_error {
  CorruptLog(std::size_t line, const std::string& what)
      : std::runtime_error("corrupt audit log at line " + std::to_string(line) + ": " + what), line(line) {}
  std::size_t line;
};

class AuditSink {
 public:
  virtual ~AuditSink() = default;
  virtual void write_line(const std::string& line) = 0;
};

class FileSink : public AuditSink {
 public:
  explicit FileSink(const std::filesystem::path& path);
  void write_line(const std::string& line) override;

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class MemorySink : public AuditSink {
 public:
  void write_line(const std::string& line) override { lines.push_back(line); }
  std::string text() const;
  std::vector<std::string> lines;
};

class NullSink : public AuditSink {
 public:
  void write_line(const std::string&) override {}
};

// Accepts a fixed number of writes, then fails every subsequent one.
class FailingSink : public AuditSink {
 public:
  explicit FailingSink(std::size_t accept) : remaining_(accept) {}
  void write_line(const std::string& line) override;
  std::vector<std::string> lines;

 private:
  std::size_t remaining_;
};

// Append-only trace. seq is gapless per session; a session's trace closes at final_outcome.
class AuditLog {
 public:
  explicit AuditLog(std::shared_ptr<AuditSink> sink) : sink_(std::move(sink)) {}

  void write_header(const nlohmann::json& header);
  void write_summary(const nlohmann::json& summary);

  std::uint64_t append(std::uint64_t session_id, AuditKind kind, std::uint64_t tick, nlohmann::json payload,
                       std::optional<nlohmann::json> ground_truth = std::nullopt);

  bool closed(std::uint64_t session_id) const;

 private:
  void write(const nlohmann::json& record);

  std::shared_ptr<AuditSink> sink_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, std::uint64_t> next_seq_;
  std::set<std::uint64_t> closed_;
};

struct ParsedLog {
  nlohmann::json header;
  std::vector<AuditEvent> events;
  nlohmann::json summary;
};

// Strict reader: every line must parse, seq must be gapless per session, a header must open the
// file and a summary must close it.
ParsedLog read_log(std::istream& in);
ParsedLog read_log_file(const std::filesystem::path& path);

}  // namespace capgov
