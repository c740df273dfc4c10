#include "capgov/console.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "capgov/session.hpp"

namespace capgov {

using nlohmann::json;

namespace {

json tagged(const char* type) { return {{"type", type}, {"protocol_version", kProtocolVersion}}; }

std::uint64_t now_ms() {
  return static_cast<std::uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::system_clock::now().time_since_epoch())
                                        .count());
}

std::pair<std::string, int> split_bind(const std::string& bind) {
  auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw std::invalid_argument("bind address must be host:port, got '" + bind + "'");
  std::string host = bind.substr(0, colon);
  int port = std::stoi(bind.substr(colon + 1));
  if (port < 0 || port > 65535) throw std::invalid_argument("port out of range in '" + bind + "'");
  return {host.empty() ? "127.0.0.1" : host, port};
}

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    auto n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw std::runtime_error(std::string("socket write failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace

json ticket_message(const EscalationTicket& t) {
  json j = tagged("Ticket");
  j["ticket_id"] = t.ticket_id;
  j["session_id"] = t.session_id;
  j["capability"] = t.capability;
  j["risk"] = to_string(t.risk);
  j["reason"] = t.reason;
  j["status"] = to_string(t.status);
  j["authority"] = to_string(t.authority);
  return j;
}

json session_message(std::uint64_t session_id, const std::string& capability, SessionState state,
                     const std::string& cause) {
  json j = tagged("SessionState");
  j["session_id"] = session_id;
  j["capability"] = capability;
  j["state"] = to_string(state);
  j["cause"] = cause;
  return j;
}

json snapshot_end_message() { return tagged("SnapshotEnd"); }

json ack_message(const HumanDecision& d) {
  json j = tagged("Ack");
  j["ticket_id"] = d.ticket_id;
  if (d.session_id) j["session_id"] = *d.session_id;
  j["verdict"] = to_string(d.verdict);
  return j;
}

json error_message(const std::string& code, const std::string& detail) {
  json j = tagged("Error");
  j["code"] = code;
  j["detail"] = detail;
  return j;
}

json decision_message(const HumanDecision& d) {
  json j = tagged("Decision");
  j["ticket_id"] = d.ticket_id;
  if (d.session_id) j["session_id"] = *d.session_id;
  j["verdict"] = to_string(d.verdict);
  j["operator"] = d.operator_id;
  return j;
}

HumanDecision parse_decision(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw MalformedCommand(std::string("not JSON: ") + e.what());
  }
  if (!j.is_object()) throw MalformedCommand("message must be an object");
  if (j.value("type", "") != "Decision") throw MalformedCommand("expected type Decision");
  if (!j.contains("protocol_version") || !j["protocol_version"].is_number_integer() ||
      j["protocol_version"].get<int>() != kProtocolVersion)
    throw MalformedCommand("unsupported protocol_version");
  HumanDecision d;
  try {
    if (j.contains("ticket_id")) d.ticket_id = j.at("ticket_id").get<std::uint64_t>();
    if (j.contains("session_id") && !j.at("session_id").is_null()) d.session_id = j.at("session_id").get<std::uint64_t>();
    auto verdict = try_parse<HumanVerdict>(j.at("verdict").get<std::string>());
    if (!verdict) throw MalformedCommand("unknown verdict '" + j.at("verdict").get<std::string>() + "'");
    d.verdict = *verdict;
    d.operator_id = j.at("operator").get<std::string>();
  } catch (const json::exception& e) {
    throw MalformedCommand(std::string("bad Decision fields: ") + e.what());
  }
  if (d.operator_id.empty()) throw MalformedCommand("operator must be non-empty");
  if (d.ticket_id == 0 && !d.session_id) throw MalformedCommand("Decision needs a ticket_id or a session_id");
  d.timestamp = now_ms();
  return d;
}

// ---------------------------------------------------------------------------------------------

void CommandRouter::on_launch(std::uint64_t session_id, const std::string& capability, AuthorityMode authority) {
  std::lock_guard lk(mu_);
  sessions_[session_id] = {session_id, capability, authority, SessionState::RUNNING, "launch"};
  commands_[session_id].clear();
}

void CommandRouter::on_state(std::uint64_t session_id, const std::string& capability, SessionState state,
                             const std::string& cause) {
  std::lock_guard lk(mu_);
  auto& s = sessions_[session_id];
  s.session_id = session_id;
  s.capability = capability;
  s.state = state;
  s.cause = cause;
  if (is_terminal(state)) commands_.erase(session_id);
}

void CommandRouter::submit(const HumanDecision& d) {
  if (d.ticket_id != 0) {
    gateway_.resolve(d.ticket_id, d);
    return;
  }
  using V = HumanVerdict;
  std::lock_guard lk(mu_);
  auto it = sessions_.find(*d.session_id);
  if (it == sessions_.end()) throw StaleTicket("unknown session " + std::to_string(*d.session_id));
  const auto& s = it->second;
  if (is_terminal(s.state)) throw StaleTicket("session " + std::to_string(s.session_id) + " already ended");
  if (d.verdict == V::approve || d.verdict == V::deny)
    throw MalformedCommand("approve and deny answer tickets; send them with a ticket_id");
  if (!verdict_legal(s.authority, d.verdict))
    throw UnauthorizedOperator("verdict " + std::string(to_string(d.verdict)) + " not permitted under " +
                               std::string(to_string(s.authority)));
  if (d.verdict == V::pause && s.state != SessionState::RUNNING)
    throw StaleTicket("pause needs a RUNNING session, session is " + std::string(to_string(s.state)));
  if (d.verdict == V::resume && s.state != SessionState::PAUSED)
    throw StaleTicket("resume needs a PAUSED session, session is " + std::string(to_string(s.state)));
  commands_[s.session_id].push_back(d);
}

std::optional<HumanDecision> CommandRouter::poll(std::uint64_t session_id) {
  std::lock_guard lk(mu_);
  auto it = commands_.find(session_id);
  if (it == commands_.end() || it->second.empty()) return std::nullopt;
  auto d = it->second.front();
  it->second.pop_front();
  return d;
}

std::vector<SessionView> CommandRouter::sessions() const {
  std::lock_guard lk(mu_);
  std::vector<SessionView> out;
  for (const auto& [_, s] : sessions_) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------------------------

ConsoleServer::ConsoleServer(CommandRouter& router) : router_(router) {}

ConsoleServer::~ConsoleServer() { stop(); }

void ConsoleServer::start(const std::string& bind) {
  auto [host, port] = split_bind(bind);
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw std::invalid_argument("bind host must be an IPv4 address, got '" + host + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 8) < 0) {
    auto err = std::string(std::strerror(errno));
    ::close(listen_fd_);
    throw std::runtime_error("cannot listen on " + bind + ": " + err);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  listener_id_ = router_.gateway().subscribe([this](const EscalationTicket& t) { broadcast(ticket_message(t)); });
  subscribed_ = true;
  running_ = true;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void ConsoleServer::stop() {
  if (!running_.exchange(false)) return;
  if (subscribed_) router_.gateway().unsubscribe(listener_id_);
  subscribed_ = false;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  if (acceptor_.joinable()) acceptor_.join();
  std::lock_guard lk(clients_mu_);
  for (auto& c : clients_) {
    c->open = false;
    ::shutdown(c->fd, SHUT_RDWR);
  }
  for (auto& c : clients_) {
    if (c->reader.joinable()) c->reader.join();
    ::close(c->fd);
  }
  clients_.clear();
}

void ConsoleServer::accept_loop() {
  while (running_) {
    pollfd p{listen_fd_, POLLIN, 0};
    int r = ::poll(&p, 1, 100);
    if (r <= 0 || !(p.revents & POLLIN)) continue;
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    auto c = std::make_unique<Client>();
    c->fd = fd;
    Client* raw = c.get();
    {
      // Snapshot under the client lock so no broadcast interleaves with it.
      std::lock_guard lk(clients_mu_);
      try {
        for (const auto& t : router_.gateway().pending()) send(raw, ticket_message(t));
        for (const auto& s : router_.sessions())
          if (!is_terminal(s.state)) send(raw, session_message(s.session_id, s.capability, s.state, s.cause));
        send(raw, snapshot_end_message());
      } catch (const std::exception&) {
        raw->open = false;
      }
      clients_.push_back(std::move(c));
    }
    raw->reader = std::thread([this, raw] { read_loop(raw); });
  }
}

void ConsoleServer::read_loop(Client* c) {
  std::string buf;
  char chunk[4096];
  while (c->open) {
    pollfd p{c->fd, POLLIN, 0};
    int r = ::poll(&p, 1, 100);
    if (r <= 0) continue;
    auto n = ::recv(c->fd, chunk, sizeof chunk, 0);
    if (n <= 0) break;
    buf.append(chunk, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buf.find('\n')) != std::string::npos) {
      auto line = buf.substr(0, nl);
      buf.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) handle_line(c, line);
    }
  }
  c->open = false;
}

void ConsoleServer::handle_line(Client* c, const std::string& line) {
  json reply;
  try {
    auto d = parse_decision(line);
    router_.submit(d);
    reply = ack_message(d);
  } catch (const MalformedCommand& e) {
    reply = error_message("MalformedCommand", e.what());
  } catch (const UnauthorizedOperator& e) {
    reply = error_message("UnauthorizedOperator", e.what());
  } catch (const StaleTicket& e) {
    reply = error_message("StaleTicket", e.what());
  }
  try {
    send(c, reply);
  } catch (const std::exception&) {
    c->open = false;
  }
}

void ConsoleServer::send(Client* c, const json& msg) {
  if (!c->open) return;
  std::lock_guard lk(send_mu_);
  write_all(c->fd, msg.dump() + "\n");
}

void ConsoleServer::broadcast(const json& msg) {
  std::lock_guard lk(clients_mu_);
  for (auto& c : clients_) {
    try {
      send(c.get(), msg);
    } catch (const std::exception&) {
      c->open = false;
    }
  }
}

void ConsoleServer::publish_state(std::uint64_t session_id, const std::string& capability, SessionState state,
                                  const std::string& cause) {
  router_.on_state(session_id, capability, state, cause);
  broadcast(session_message(session_id, capability, state, cause));
}

// ---------------------------------------------------------------------------------------------

ConsoleClient::ConsoleClient(const std::string& host, int port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error(std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    auto err = std::string(std::strerror(errno));
    ::close(fd_);
    throw std::runtime_error("connect failed: " + err);
  }
}

ConsoleClient::~ConsoleClient() {
  if (fd_ >= 0) ::close(fd_);
}

void ConsoleClient::send_line(const std::string& line) { write_all(fd_, line + "\n"); }

std::optional<json> ConsoleClient::receive(int timeout_ms) {
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (true) {
    auto nl = buffer_.find('\n');
    if (nl != std::string::npos) {
      auto line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return json::parse(line);
    }
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
    if (left <= 0) return std::nullopt;
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(left)) <= 0) return std::nullopt;
    char chunk[4096];
    auto n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n <= 0) return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

std::optional<json> ConsoleClient::receive_type(const std::string& type, int timeout_ms) {
  auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (true) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now()).count();
    if (left <= 0) return std::nullopt;
    auto m = receive(static_cast<int>(left));
    if (!m) return std::nullopt;
    if (m->value("type", "") == type) return m;
  }
}

}  // namespace capgov
