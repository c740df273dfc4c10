#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "capgov/enums.hpp"
#include "capgov/override.hpp"

namespace capgov {

// Operator console wire protocol. Each message is one JSON object on one line, tagged with
// "type" and "protocol_version".
//
//   server -> client: Ticket, SessionState, SnapshotEnd, Ack, Error
//   client -> server: Decision
//
// A Decision with ticket_id > 0 resolves that ticket. A Decision with ticket_id 0 (or absent)
// and a session_id is a session-level command: pause, stop, resume or takeover.
inline constexpr int kProtocolVersion = 1;

nlohmann::json ticket_message(const EscalationTicket& t);
nlohmann::json session_message(std::uint64_t session_id, const std::string& capability, SessionState state,
                               const std::string& cause);
nlohmann::json snapshot_end_message();
nlohmann::json ack_message(const HumanDecision& d);
nlohmann::json error_message(const std::string& code, const std::string& detail);
nlohmann::json decision_message(const HumanDecision& d);

// Throws MalformedCommand on anything that is not a well-formed Decision of this protocol version.
HumanDecision parse_decision(const std::string& line);

struct SessionView {
  std::uint64_t session_id = 0;
  std::string capability;
  AuthorityMode authority = AuthorityMode::review_only;
  SessionState state = SessionState::RUNNING;
  std::string cause;
};

// Validates and routes operator decisions. Ticket verdicts go to the gateway; session commands
// are queued for the owning session loop to apply at its next tick.
class CommandRouter {
 public:
  explicit CommandRouter(OverrideGateway& gateway) : gateway_(gateway) {}

  void on_launch(std::uint64_t session_id, const std::string& capability, AuthorityMode authority);
  void on_state(std::uint64_t session_id, const std::string& capability, SessionState state, const std::string& cause);

  // Throws UnauthorizedOperator, StaleTicket or MalformedCommand; nothing changes on a throw.
  void submit(const HumanDecision& d);
  std::optional<HumanDecision> poll(std::uint64_t session_id);

  std::vector<SessionView> sessions() const;
  OverrideGateway& gateway() { return gateway_; }

 private:
  OverrideGateway& gateway_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, SessionView> sessions_;
  std::map<std::uint64_t, std::deque<HumanDecision>> commands_;
};

// TCP endpoint speaking the console protocol. New clients get a snapshot of pending tickets and
// live sessions, then the stream.
class ConsoleServer {
 public:
  explicit ConsoleServer(CommandRouter& router);
  ~ConsoleServer();
  ConsoleServer(const ConsoleServer&) = delete;
  ConsoleServer& operator=(const ConsoleServer&) = delete;

  // bind is "host:port"; port 0 picks a free port.
  void start(const std::string& bind);
  void stop();
  int port() const { return port_; }

  // Called from session loops.
  void publish_state(std::uint64_t session_id, const std::string& capability, SessionState state,
                     const std::string& cause);

 private:
  struct Client {
    int fd = -1;
    std::thread reader;
    std::atomic<bool> open{true};
  };

  void accept_loop();
  void read_loop(Client* c);
  void send(Client* c, const nlohmann::json& msg);
  void broadcast(const nlohmann::json& msg);
  void handle_line(Client* c, const std::string& line);

  CommandRouter& router_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex clients_mu_;
  std::vector<std::unique_ptr<Client>> clients_;
  std::mutex send_mu_;
  std::size_t listener_id_ = 0;
  bool subscribed_ = false;
};

// Blocking line client for tests and scripted operators.
class ConsoleClient {
 public:
  ConsoleClient(const std::string& host, int port);
  ~ConsoleClient();
  ConsoleClient(const ConsoleClient&) = delete;
  ConsoleClient& operator=(const ConsoleClient&) = delete;

  void send_line(const std::string& line);
  void send(const nlohmann::json& msg) { send_line(msg.dump()); }
  // Next message, or nullopt when nothing arrived within the timeout.
  std::optional<nlohmann::json> receive(int timeout_ms = 2000);
  // Skips messages until one of the given type arrives.
  std::optional<nlohmann::json> receive_type(const std::string& type, int timeout_ms = 2000);

 private:
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace capgov
