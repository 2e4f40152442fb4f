#pragma once

// Token-level thinking intervention (TTI).
//
// A per-turn state machine that watches the fused stability signal M_t while
// the policy generates thinking tokens. Once the trailing-window mean of
// |M_t - M_{t-1}| drops below a tolerance (the non-hesitation event), or the
// thinking budget is exhausted, reasoning is force-terminated: the logits are
// overwritten so the reasoning terminator is emitted with probability 1, and
// a fixed token queue [</think>, \n, <action>] is injected to hand over to
// the action segment. The intervention may fire at most once per turn.

#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "t2po/signal.hpp"

namespace t2po {

using TokenId = int;

// Forced logit magnitude. Large enough that softmax puts probability 1 (to
// well under 1e-12) on the forced token, yet safe to divide by any sane
// sampling temperature without overflowing to infinity.
inline constexpr double kForceLogit = 1e9;

struct TtiConfig {
  int window_n = 20;       // trailing window size N
  int l_min = 21;          // minimum prefix length before checks begin
  int l_max = 450;         // thinking budget
  double epsilon = 1e-4;   // non-hesitation tolerance
  std::vector<TokenId> queue;  // [THINK_CLOSE, NEWLINE, ACTION_OPEN]
  bool enabled = true;     // disabled = budget-only hard stop (ablation arm)

  void validate() const {
    if (window_n < 1) throw std::invalid_argument("TtiConfig: window_n must be >= 1");
    if (l_min < window_n + 1)
      throw std::invalid_argument("TtiConfig: l_min must be >= window_n + 1");
    if (l_min >= l_max)
      throw std::invalid_argument("TtiConfig: l_min must be < l_max");
    if (!(epsilon > 0.0))
      throw std::invalid_argument("TtiConfig: epsilon must be > 0");
    if (queue.empty())
      throw std::invalid_argument("TtiConfig: forced-token queue must not be empty");
  }
};

enum class TriggerCause { None, Window, Budget };

struct TtiState {
  int t = 0;                // sampled thinking tokens observed this turn
  bool stop_fired = false;  // transitions false -> true at most once
  std::optional<std::size_t> queue_cursor;  // next queue entry, set only after firing
  std::optional<int> trigger_index;         // t* when the rule fired
  TriggerCause cause = TriggerCause::None;
};

struct ControlDecision {
  enum class Kind { Continue, ForceToken, Terminate };
  Kind kind = Kind::Continue;
  TokenId token = -1;  // valid only for ForceToken
};

inline TtiState reset_turn(const TtiState& = TtiState{}) { return TtiState{}; }

// Overwrites logits so the forced token receives probability 1: the forced
// entry is set to +kForceLogit and every other entry to -kForceLogit. The
// result is deterministic under any temperature / top-k / top-p setting.
inline std::vector<double> override_logits(const std::vector<double>& logits,
                                           TokenId forced_id) {
  if (forced_id < 0 || forced_id >= static_cast<int>(logits.size()))
    throw std::invalid_argument("override_logits: forced_id out of range");
  std::vector<double> out(logits.size(), -kForceLogit);
  out[static_cast<std::size_t>(forced_id)] = kForceLogit;
  return out;
}

// Called once per sampled thinking token, after the token's uncertainty
// sample has been appended to the trace. While the forced queue is active the
// call returns the next queue entry instead (and does not consume the trace).
//
// Trigger rule: stop has not fired, t > l_min, and the trailing-window mean
// delta is below epsilon -- or t >= l_max (budget), which fires even when the
// window rule is disabled.
inline ControlDecision observe_token(TtiState& state,
                                     const UncertaintyTrace& trace,
                                     const TtiConfig& cfg) {
  if (state.queue_cursor) {
    if (*state.queue_cursor < cfg.queue.size()) {
      TokenId next = cfg.queue[*state.queue_cursor];
      ++*state.queue_cursor;
      return {ControlDecision::Kind::ForceToken, next};
    }
    state.queue_cursor.reset();
    return {ControlDecision::Kind::Continue, -1};  // action tokens resume free sampling
  }

  ++state.t;
  if (!state.stop_fired) {
    const int last = static_cast<int>(trace.m_values().size()) - 1;
    bool window_hit = false;
    if (cfg.enabled && state.t > cfg.l_min && last >= cfg.window_n + 1)
      window_hit =
          window_mean_delta(trace.m_values(), last, cfg.window_n) < cfg.epsilon;
    const bool budget_hit = state.t >= cfg.l_max;
    if (window_hit || budget_hit) {
      state.stop_fired = true;
      state.trigger_index = state.t;
      state.cause = window_hit ? TriggerCause::Window : TriggerCause::Budget;
      state.queue_cursor = 1;  // queue[0] is returned right now
      return {ControlDecision::Kind::ForceToken, cfg.queue[0]};
    }
  }
  return {ControlDecision::Kind::Continue, -1};
}

}  // namespace t2po
