#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "capgov/enums.hpp"
#include "capgov/params.hpp"
#include "capgov/rng.hpp"

namespace capgov {

struct AuthorityState {
  AuthorityMode mode = AuthorityMode::review_only;
  std::optional<std::string> active_operator;
};

// Verdicts an operator may issue under each authority mode.
bool verdict_legal(AuthorityMode mode, HumanVerdict v);
std::vector<HumanVerdict> legal_verdicts(AuthorityMode mode);

struct HumanDecision {
  std::uint64_t ticket_id = 0;  // 0 for session-level commands
  std::optional<std::uint64_t> session_id;
  HumanVerdict verdict = HumanVerdict::deny;
  std::string operator_id;
  std::uint64_t timestamp = 0;
};

struct EscalationTicket {
  std::uint64_t ticket_id = 0;
  std::uint64_t session_id = 0;  // 0 while the request is held before launch
  std::string capability;
  ParamMap params;
  Risk risk = Risk::low;
  std::string reason;
  ProfileId profile = ProfileId::sim_relaxed;
  AuthorityMode authority = AuthorityMode::review_only;
  TicketStatus status = TicketStatus::pending;
  std::optional<HumanDecision> resolution;
};

nlohmann::json to_json(const EscalationTicket& t);
nlohmann::json to_json(const HumanDecision& d);

struct StaleTicket : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnauthorizedOperator : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MalformedCommand : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Ticket queue shared by all sessions of a run. All mutation is serialized by one mutex;
// listeners are invoked with the lock released.
class OverrideGateway {
 public:
  using Listener = std::function<void(const EscalationTicket&)>;

  // Opens a pending ticket. Under review_only the ticket expires at once: nobody can answer it.
  EscalationTicket escalate(std::uint64_t session_id, const std::string& capability, const ParamMap& params, Risk risk,
                            const std::string& reason, ProfileId profile, AuthorityMode authority);

  EscalationTicket resolve(std::uint64_t ticket_id, const HumanDecision& decision);
  EscalationTicket expire(std::uint64_t ticket_id);

  std::optional<EscalationTicket> get(std::uint64_t ticket_id) const;
  std::vector<EscalationTicket> pending() const;  // FIFO order
  std::vector<EscalationTicket> all() const;

  // Blocks until the ticket leaves pending or the timeout passes; on timeout the ticket is
  // expired (deny-and-fail).
  EscalationTicket wait(std::uint64_t ticket_id, std::chrono::milliseconds timeout);
  void expire_all_pending();

  std::size_t subscribe(Listener l);
  void unsubscribe(std::size_t id);

 private:
  void notify(const EscalationTicket& t);

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t next_id_ = 0;
  std::map<std::uint64_t, EscalationTicket> tickets_;
  std::deque<std::uint64_t> queue_;
  std::map<std::size_t, Listener> listeners_;
  std::size_t next_listener_ = 0;
};

class SimulatedApprover {
 public:
  explicit SimulatedApprover(double approve_probability = 0.5) : p_(approve_probability) {}
  HumanDecision decide(const EscalationTicket& t, Rng& rng) const;

 private:
  double p_;
};

}  // namespace capgov
