#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "capgov/enums.hpp"
#include "capgov/governance.hpp"

namespace capgov {

struct IllegalTransition : std::logic_error {
  IllegalTransition(SessionState s, SessionEvent e)
      : std::logic_error("illegal transition: " + std::string(to_string(e)) + " from " + std::string(to_string(s))),
        state(s),
        event(e) {}
  SessionState state;
  SessionEvent event;
};

// Target state for (state, event), or nullopt when the edge does not exist.
std::optional<SessionState> next_state(SessionState s, SessionEvent e);
bool is_terminal(SessionState s);

struct TransitionRecord {
  SessionState from;
  SessionState to;
  SessionEvent event;
  std::string cause;
  std::uint64_t tick;
};

struct SubstrateUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class GovernedSession {
 public:
  using Observer = std::function<void(const TransitionRecord&)>;

  std::uint64_t id() const { return id_; }
  const std::string& capability() const { return authorization_.request().capability; }
  const ParamMap& final_params() const { return authorization_.final_params(); }
  const InvocationRequest& request() const { return authorization_.request(); }
  ProfileId profile() const { return authorization_.request().profile; }
  SessionState state() const { return state_; }
  const std::optional<Outcome>& outcome() const { return outcome_; }
  std::uint64_t started_at() const { return started_at_; }
  std::optional<std::uint64_t> ended_at() const { return ended_at_; }
  int retry_count() const { return retry_count_; }
  void count_retry() { ++retry_count_; }
  const std::vector<TransitionRecord>& history() const { return history_; }

  // The observer runs before the new state takes effect, so an audit append that throws leaves
  // the session in its previous state for the caller to fail closed.
  void set_observer(Observer o) { observer_ = std::move(o); }

  SessionState transition(SessionEvent e, const std::string& cause, std::uint64_t tick);
  // Transition into a terminal state and record the outcome label.
  void finish(SessionEvent e, Outcome o, const std::string& cause, std::uint64_t tick);
  // Drive the session to FAILED without consulting the observer (audit storage is gone).
  void fail_closed(Outcome o, std::uint64_t tick);

 private:
  friend GovernedSession launch(const LaunchAuthorization&, std::uint64_t, std::uint64_t, bool);
  GovernedSession(const LaunchAuthorization& auth, std::uint64_t id, std::uint64_t tick)
      : authorization_(auth), id_(id), started_at_(tick) {}

  LaunchAuthorization authorization_;
  std::uint64_t id_;
  SessionState state_ = SessionState::RUNNING;
  std::optional<Outcome> outcome_;
  std::uint64_t started_at_;
  std::optional<std::uint64_t> ended_at_;
  int retry_count_ = 0;
  std::vector<TransitionRecord> history_;
  Observer observer_;
};

// Only a LaunchAuthorization, which only govern can mint, produces a session.
GovernedSession launch(const LaunchAuthorization& auth, std::uint64_t session_id, std::uint64_t tick,
                       bool substrate_available = true);

class SessionIds {
 public:
  std::uint64_t next() { return ++last_; }

 private:
  std::atomic<std::uint64_t> last_{0};
};

}  // namespace capgov
