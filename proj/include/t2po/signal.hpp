#pragma once

// Self-calibrated uncertainty signal over token distributions.
//
// Per decoding step the policy emits a categorical distribution p_t over the
// vocabulary. We track two complementary scalars:
//   entropy      H_t = -sum_i p_i ln p_i            (tail-mass sensitive)
//   confidence   C_t = -(1/j) sum_{top-j} ln p_i    (peak sensitive)
// Both are normalized across the decoding trajectory and fused into a single
// stability signal
//   M_t = alpha * H~_t + (1 - alpha) * (1 - C~_t),   M_t in [0,1],
// which downstream controllers monitor for saturation (tti.hpp, tds.hpp).
//
// Normalization uses running per-turn extrema by default: an online decoder
// cannot see future tokens, so the extrema grow as the turn progresses. A
// fixed-bounds mode is provided for reproducible tests ([0, ln V] for H,
// [0, -ln prob_floor] for C).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace t2po {

struct TokenDistribution {
  std::vector<double> probs;

  // all entries >= 0, sum within 1e-9 of 1, at least two entries
  void validate() const {
    if (probs.size() < 2)
      throw std::invalid_argument("TokenDistribution: vocabulary size must be >= 2");
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0))
        throw std::invalid_argument("TokenDistribution: negative or non-finite entry");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("TokenDistribution: entries do not sum to 1");
  }
};

struct SignalConfig {
  double alpha = 0.4;       // fusion weight between entropy and confidence
  int top_j = 20;           // confidence averages the top-j token log-probs
  double prob_floor = 1e-10;  // clamp before taking logs of tiny probabilities
  double m_floor = 1e-6;      // clamp for the turn-level geometric mean

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0))
      throw std::invalid_argument("SignalConfig: alpha must be in [0,1]");
    if (top_j < 1)
      throw std::invalid_argument("SignalConfig: top_j must be >= 1");
    if (!(prob_floor > 0.0 && prob_floor < 1.0))
      throw std::invalid_argument("SignalConfig: prob_floor must be in (0,1)");
    if (!(m_floor > 0.0 && m_floor < 1.0))
      throw std::invalid_argument("SignalConfig: m_floor must be in (0,1)");
  }
};

struct UncertaintySample {
  double h = 0.0;       // raw entropy, nats
  double c = 0.0;       // raw top-j confidence, nats
  double h_norm = 0.0;  // entropy normalized over the trajectory, in [0,1]
  double c_norm = 0.0;  // confidence normalized over the trajectory, in [0,1]
  double m = 0.0;       // fused stability signal, in [0,1]
};

// Explicit normalization bounds for the fixed-bounds mode.
struct NormalizationBounds {
  double h_lo = 0.0;
  double h_hi = 1.0;
  double c_lo = 0.0;
  double c_hi = 1.0;
};

// Per-turn sequence of uncertainty samples with running extrema. One trace is
// owned by exactly one decoding worker; there is no shared state.
class UncertaintyTrace {
 public:
  UncertaintyTrace() = default;

  explicit UncertaintyTrace(NormalizationBounds fixed) : fixed_(fixed) {}

  // Fixed bounds derived from the vocabulary: H in [0, ln V], C in
  // [0, -ln prob_floor].
  static UncertaintyTrace with_fixed_bounds(int vocab_size, double prob_floor) {
    if (vocab_size < 2)
      throw std::invalid_argument("UncertaintyTrace: vocab_size must be >= 2");
    NormalizationBounds b;
    b.h_lo = 0.0;
    b.h_hi = std::log(static_cast<double>(vocab_size));
    b.c_lo = 0.0;
    b.c_hi = -std::log(prob_floor);
    return UncertaintyTrace(b);
  }

  const std::vector<UncertaintySample>& samples() const { return samples_; }
  const std::vector<double>& m_values() const { return m_values_; }
  bool empty() const { return samples_.empty(); }
  std::size_t size() const { return samples_.size(); }

  // Raw extrema over samples emitted so far (tracked in both modes).
  double h_min() const { return h_min_; }
  double h_max() const { return h_max_; }
  double c_min() const { return c_min_; }
  double c_max() const { return c_max_; }

  bool fixed_bounds() const { return fixed_.has_value(); }

 private:
  friend UncertaintySample append_and_normalize(UncertaintyTrace&, double,
                                                double, const SignalConfig&);

  std::vector<UncertaintySample> samples_;
  std::vector<double> m_values_;
  double h_min_ = std::numeric_limits<double>::infinity();
  double h_max_ = -std::numeric_limits<double>::infinity();
  double c_min_ = std::numeric_limits<double>::infinity();
  double c_max_ = -std::numeric_limits<double>::infinity();
  std::optional<NormalizationBounds> fixed_;
};

// Shannon entropy in nats, with 0 ln 0 taken as 0. Result lies in [0, ln V].
inline double entropy(const TokenDistribution& dist) {
  dist.validate();
  double h = 0.0;
  for (double p : dist.probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

// Negative average log-probability of the top-j tokens. Probabilities are
// clamped at prob_floor before the log; ties sort by token index ascending.
inline double top_j_confidence(const TokenDistribution& dist,
                               const SignalConfig& cfg) {
  dist.validate();
  cfg.validate();
  const int v = static_cast<int>(dist.probs.size());
  if (cfg.top_j > v)
    throw std::invalid_argument("top_j_confidence: top_j exceeds vocabulary size");
  std::vector<int> order(dist.probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return dist.probs[a] > dist.probs[b];
  });
  double sum = 0.0;
  for (int i = 0; i < cfg.top_j; ++i)
    sum += std::log(std::max(dist.probs[order[i]], cfg.prob_floor));
  return -sum / static_cast<double>(cfg.top_j);
}

// Convex fusion of normalized entropy and inverted normalized confidence.
inline double fuse_signal(double h_norm, double c_norm, double alpha) {
  if (!(h_norm >= 0.0 && h_norm <= 1.0) || !(c_norm >= 0.0 && c_norm <= 1.0) ||
      !(alpha >= 0.0 && alpha <= 1.0))
    throw std::invalid_argument("fuse_signal: inputs must lie in [0,1]");
  return alpha * h_norm + (1.0 - alpha) * (1.0 - c_norm);
}

// Appends a raw (h, c) measurement to the trace: updates the running extrema
// first, then normalizes against the active bounds. A span below 1e-12 yields
// the neutral value 0.5, which avoids spurious delta spikes at trace start.
inline UncertaintySample append_and_normalize(UncertaintyTrace& trace, double h,
                                              double c,
                                              const SignalConfig& cfg) {
  if (!std::isfinite(h) || !std::isfinite(c) || h < 0.0 || c < 0.0)
    throw std::invalid_argument("append_and_normalize: h, c must be finite and >= 0");
  trace.h_min_ = std::min(trace.h_min_, h);
  trace.h_max_ = std::max(trace.h_max_, h);
  trace.c_min_ = std::min(trace.c_min_, c);
  trace.c_max_ = std::max(trace.c_max_, c);

  const double h_lo = trace.fixed_ ? trace.fixed_->h_lo : trace.h_min_;
  const double h_hi = trace.fixed_ ? trace.fixed_->h_hi : trace.h_max_;
  const double c_lo = trace.fixed_ ? trace.fixed_->c_lo : trace.c_min_;
  const double c_hi = trace.fixed_ ? trace.fixed_->c_hi : trace.c_max_;

  auto normalize = [](double x, double lo, double hi) {
    if (hi - lo < 1e-12) return 0.5;  // degenerate-span rule
    return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
  };

  UncertaintySample s;
  s.h = h;
  s.c = c;
  s.h_norm = normalize(h, h_lo, h_hi);
  s.c_norm = normalize(c, c_lo, c_hi);
  s.m = fuse_signal(s.h_norm, s.c_norm, cfg.alpha);
  trace.samples_.push_back(s);
  trace.m_values_.push_back(s.m);
  return s;
}

// Mean absolute variation over a trailing window: with delta_i = |M_i -
// M_{i-1}|, returns (1/(N+1)) * sum_{i=0..N} delta_{t-i}. Requires t >= N+1
// so that all N+1 deltas exist (callers gate on the minimum prefix length).
inline double window_mean_delta(const std::vector<double>& m_values, int t,
                                int n) {
  if (n < 0) throw std::invalid_argument("window_mean_delta: window size must be >= 0");
  if (t < n + 1 || t >= static_cast<int>(m_values.size()))
    throw std::invalid_argument("window_mean_delta: insufficient history for window");
  double sum = 0.0;
  for (int i = 0; i <= n; ++i)
    sum += std::abs(m_values[t - i] - m_values[t - i - 1]);
  return sum / static_cast<double>(n + 1);
}

}  // namespace t2po
