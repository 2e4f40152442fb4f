#pragma once

// Turn-level dynamical sampling (TDS).
//
// Token signals are aggregated per turn into Phi^k, the geometric mean of the
// fused stability values M_t over the turn. The variation between consecutive
// accepted turns, Gamma^k = |Phi^k - Phi^{k-1}|, measures how much the
// model's predictive state shifted. A turn whose Gamma falls below the
// tolerance eta is considered uninformative and is regenerated from the same
// environment state, up to a resampling budget. The first turn of a
// trajectory carries an infinite sentinel and is always accepted.

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>

#include "t2po/signal.hpp"

namespace t2po {

struct TdsConfig {
  double eta = 1e-3;  // turn-level tolerance
  int b_max = 3;      // resampling budget per turn
  bool enabled = true;

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("TdsConfig: eta must be > 0");
    if (b_max < 1) throw std::invalid_argument("TdsConfig: b_max must be >= 1");
  }
};

// Per-trajectory signal state. phi_prev tracks the last *accepted* turn's
// Phi; rejected candidates never update it. resample_count resets per turn.
struct TurnSignalState {
  std::optional<double> phi_prev;
  int resample_count = 0;

  void begin_turn() { resample_count = 0; }
};

enum class TdsDecision { Accept, Regenerate };

// Geometric mean of max(M_t, m_floor) over the turn, computed in log space.
// Result lies in (0, 1]. An empty trace means the turn produced no tokens
// and is an error (void turns are handled upstream).
inline double turn_signal(const UncertaintyTrace& trace, double m_floor) {
  if (trace.empty())
    throw std::invalid_argument("turn_signal: trace is empty (void turn)");
  if (!(m_floor > 0.0 && m_floor < 1.0))
    throw std::invalid_argument("turn_signal: m_floor must be in (0,1)");
  double log_sum = 0.0;
  for (double m : trace.m_values()) log_sum += std::log(std::max(m, m_floor));
  return std::exp(log_sum / static_cast<double>(trace.size()));
}

// |Phi^k - Phi^{k-1}|, or the +infinity sentinel for the first turn so it
// never regenerates.
inline double turn_delta(double phi_k, std::optional<double> phi_prev) {
  if (!phi_prev) return std::numeric_limits<double>::infinity();
  return std::abs(phi_k - *phi_prev);
}

// Regenerate iff enabled, gamma < eta and budget remains. Accept finalizes
// the turn: phi_prev is updated to the accepted candidate's Phi only here
// (the signal is recomputed only after regeneration completes).
inline TdsDecision decide(double gamma, double phi_k, TurnSignalState& state,
                          const TdsConfig& cfg) {
  if (cfg.enabled && gamma < cfg.eta && state.resample_count < cfg.b_max) {
    ++state.resample_count;
    return TdsDecision::Regenerate;
  }
  state.phi_prev = phi_k;
  return TdsDecision::Accept;
}

}  // namespace t2po
