#include "capgov/session.hpp"

namespace capgov {

std::optional<SessionState> next_state(SessionState s, SessionEvent e) {
  using S = SessionState;
  using E = SessionEvent;
  switch (s) {
    case S::RUNNING:
      switch (e) {
        case E::pause: return S::PAUSED;
        case E::escalate: return S::ESCALATED;
        case E::anomaly:
        case E::recover_begin: return S::RECOVERING;
        case E::complete: return S::COMPLETED;
        case E::stop: return S::FAILED;
        default: return std::nullopt;
      }
    case S::PAUSED:
      switch (e) {
        case E::resume:
        case E::clearance: return S::RUNNING;
        case E::escalate: return S::ESCALATED;
        case E::stop: return S::FAILED;
        default: return std::nullopt;
      }
    case S::ESCALATED:
      switch (e) {
        case E::clearance:
        case E::resume: return S::RUNNING;
        case E::recover_begin: return S::RECOVERING;
        case E::stop: return S::FAILED;
        default: return std::nullopt;
      }
    case S::RECOVERING:
      switch (e) {
        case E::recover_done: return S::RUNNING;
        case E::complete: return S::COMPLETED;
        case E::recover_failed:
        case E::stop: return S::FAILED;
        default: return std::nullopt;
      }
    case S::COMPLETED:
    case S::FAILED: return std::nullopt;
  }
  return std::nullopt;
}

bool is_terminal(SessionState s) { return s == SessionState::COMPLETED || s == SessionState::FAILED; }

SessionState GovernedSession::transition(SessionEvent e, const std::string& cause, std::uint64_t tick) {
  auto to = next_state(state_, e);
  if (!to) throw IllegalTransition(state_, e);
  TransitionRecord rec{state_, *to, e, cause, tick};
  if (observer_) observer_(rec);
  history_.push_back(rec);
  state_ = *to;
  if (is_terminal(state_)) ended_at_ = tick;
  return state_;
}

void GovernedSession::finish(SessionEvent e, Outcome o, const std::string& cause, std::uint64_t tick) {
  auto to = next_state(state_, e);
  if (!to || !is_terminal(*to)) throw IllegalTransition(state_, e);
  transition(e, cause, tick);
  outcome_ = o;
}

void GovernedSession::fail_closed(Outcome o, std::uint64_t tick) {
  if (is_terminal(state_)) return;
  history_.push_back({state_, SessionState::FAILED, SessionEvent::stop, std::string(to_string(o)), tick});
  state_ = SessionState::FAILED;
  outcome_ = o;
  ended_at_ = tick;
}

GovernedSession launch(const LaunchAuthorization& auth, std::uint64_t session_id, std::uint64_t tick,
                       bool substrate_available) {
  GovernedSession s(auth, session_id, tick);
  if (!substrate_available) {
    s.state_ = SessionState::FAILED;
    s.outcome_ = Outcome::substrate_error;
    s.ended_at_ = tick;
  }
  return s;
}

}  // namespace capgov
