#include "capgov/override.hpp"

#include <algorithm>

namespace capgov {

using nlohmann::json;

std::vector<HumanVerdict> legal_verdicts(AuthorityMode mode) {
  using V = HumanVerdict;
  switch (mode) {
    case AuthorityMode::approval_required:
    case AuthorityMode::approval_on_escalation: return {V::approve, V::deny};
    case AuthorityMode::interrupt_enabled: return {V::approve, V::deny, V::pause, V::stop, V::resume};
    case AuthorityMode::takeover_enabled: return {V::approve, V::deny, V::pause, V::stop, V::takeover, V::resume};
    case AuthorityMode::review_only: return {};
  }
  return {};
}

bool verdict_legal(AuthorityMode mode, HumanVerdict v) {
  auto legal = legal_verdicts(mode);
  return std::find(legal.begin(), legal.end(), v) != legal.end();
}

json to_json(const HumanDecision& d) {
  json j{{"ticket_id", d.ticket_id},
         {"verdict", to_string(d.verdict)},
         {"operator", d.operator_id},
         {"timestamp", d.timestamp}};
  if (d.session_id) j["session_id"] = *d.session_id;
  return j;
}

json to_json(const EscalationTicket& t) {
  json j{{"ticket_id", t.ticket_id},       {"session_id", t.session_id}, {"capability", t.capability},
         {"params", to_json(t.params)},    {"risk", to_string(t.risk)},  {"reason", t.reason},
         {"profile", to_string(t.profile)}, {"authority", to_string(t.authority)},
         {"status", to_string(t.status)}};
  if (t.resolution) j["resolution"] = to_json(*t.resolution);
  return j;
}

EscalationTicket OverrideGateway::escalate(std::uint64_t session_id, const std::string& capability,
                                           const ParamMap& params, Risk risk, const std::string& reason,
                                           ProfileId profile, AuthorityMode authority) {
  EscalationTicket t;
  {
    std::lock_guard lk(mu_);
    t.ticket_id = ++next_id_;
    t.session_id = session_id;
    t.capability = capability;
    t.params = params;
    t.risk = risk;
    t.reason = reason;
    t.profile = profile;
    t.authority = authority;
    if (authority == AuthorityMode::review_only) t.status = TicketStatus::expired;
    tickets_[t.ticket_id] = t;
    if (t.status == TicketStatus::pending) queue_.push_back(t.ticket_id);
  }
  notify(t);
  return t;
}

EscalationTicket OverrideGateway::resolve(std::uint64_t ticket_id, const HumanDecision& decision) {
  EscalationTicket t;
  {
    std::lock_guard lk(mu_);
    auto it = tickets_.find(ticket_id);
    if (it == tickets_.end()) throw StaleTicket("unknown ticket " + std::to_string(ticket_id));
    if (it->second.status != TicketStatus::pending)
      throw StaleTicket("ticket " + std::to_string(ticket_id) + " already " + std::string(to_string(it->second.status)));
    if (!verdict_legal(it->second.authority, decision.verdict))
      throw UnauthorizedOperator("verdict " + std::string(to_string(decision.verdict)) + " not permitted under " +
                                 std::string(to_string(it->second.authority)));
    // Approving continues the held action; every other verdict ends it.
    it->second.status = decision.verdict == HumanVerdict::approve || decision.verdict == HumanVerdict::resume
                            ? TicketStatus::approved
                            : TicketStatus::denied;
    it->second.resolution = decision;
    it->second.resolution->ticket_id = ticket_id;
    queue_.erase(std::remove(queue_.begin(), queue_.end(), ticket_id), queue_.end());
    t = it->second;
  }
  cv_.notify_all();
  notify(t);
  return t;
}

EscalationTicket OverrideGateway::expire(std::uint64_t ticket_id) {
  EscalationTicket t;
  {
    std::lock_guard lk(mu_);
    auto it = tickets_.find(ticket_id);
    if (it == tickets_.end()) throw StaleTicket("unknown ticket " + std::to_string(ticket_id));
    if (it->second.status != TicketStatus::pending) return it->second;
    it->second.status = TicketStatus::expired;
    queue_.erase(std::remove(queue_.begin(), queue_.end(), ticket_id), queue_.end());
    t = it->second;
  }
  cv_.notify_all();
  notify(t);
  return t;
}

void OverrideGateway::expire_all_pending() {
  std::vector<std::uint64_t> ids;
  {
    std::lock_guard lk(mu_);
    ids.assign(queue_.begin(), queue_.end());
  }
  for (auto id : ids) expire(id);
}

std::optional<EscalationTicket> OverrideGateway::get(std::uint64_t ticket_id) const {
  std::lock_guard lk(mu_);
  auto it = tickets_.find(ticket_id);
  if (it == tickets_.end()) return std::nullopt;
  return it->second;
}

std::vector<EscalationTicket> OverrideGateway::pending() const {
  std::lock_guard lk(mu_);
  std::vector<EscalationTicket> out;
  for (auto id : queue_) out.push_back(tickets_.at(id));
  return out;
}

std::vector<EscalationTicket> OverrideGateway::all() const {
  std::lock_guard lk(mu_);
  std::vector<EscalationTicket> out;
  for (const auto& [_, t] : tickets_) out.push_back(t);
  return out;
}

EscalationTicket OverrideGateway::wait(std::uint64_t ticket_id, std::chrono::milliseconds timeout) {
  {
    std::unique_lock lk(mu_);
    bool done = cv_.wait_for(lk, timeout, [&] { return tickets_.at(ticket_id).status != TicketStatus::pending; });
    if (done) return tickets_.at(ticket_id);
  }
  return expire(ticket_id);
}

std::size_t OverrideGateway::subscribe(Listener l) {
  std::lock_guard lk(mu_);
  listeners_[next_listener_] = std::move(l);
  return next_listener_++;
}

void OverrideGateway::unsubscribe(std::size_t id) {
  std::lock_guard lk(mu_);
  listeners_.erase(id);
}

void OverrideGateway::notify(const EscalationTicket& t) {
  std::vector<Listener> ls;
  {
    std::lock_guard lk(mu_);
    for (const auto& [_, l] : listeners_) ls.push_back(l);
  }
  for (const auto& l : ls) l(t);
}

HumanDecision SimulatedApprover::decide(const EscalationTicket& t, Rng& rng) const {
  HumanDecision d;
  d.ticket_id = t.ticket_id;
  d.verdict = rng.bernoulli(p_) ? HumanVerdict::approve : HumanVerdict::deny;
  d.operator_id = "simulated";
  return d;
}

}  // namespace capgov
