#pragma once

// Toy autoregressive softmax policy.
//
// The policy is a linear map from context features to vocabulary logits:
//   z = W^T f(state, prefix),   W in R^{feature_dim x V}.
// Features concatenate hashed state-key probes (hash_dim buckets) with a bag
// of the last four prefix tokens -- the smallest featurizer that gives the
// uncertainty signal non-trivial dynamics across a turn. Sampling supports
// temperature, top-k, top-p and a forced-token override; log-probabilities
// and the exact categorical KL to a frozen reference feed the optimizer.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "t2po/common.hpp"
#include "t2po/signal.hpp"
#include "t2po/tti.hpp"
#include "t2po/vocab.hpp"

namespace t2po {

struct SamplerConfig {
  double temperature = 0.6;  // 0 selects argmax mode
  int top_k = 20;
  double top_p = 0.95;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(temperature >= 0.0))
      throw std::invalid_argument("SamplerConfig: temperature must be >= 0");
    if (top_k < 1) throw std::invalid_argument("SamplerConfig: top_k must be >= 1");
    if (!(top_p > 0.0 && top_p <= 1.0))
      throw std::invalid_argument("SamplerConfig: top_p must be in (0,1]");
  }
};

// Context featurizer: hashed state-key probes followed by a bag of the last
// kPrefixWindow prefix tokens.
struct Featurizer {
  int hash_dim = 128;
  int vocab_size = 0;

  static constexpr int kPrefixWindow = 4;
  static constexpr int kHashProbes = 4;

  int feature_dim() const { return hash_dim + vocab_size; }

  Eigen::VectorXd state_features(const std::string& state_key) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(hash_dim);
    const std::uint64_t base = fnv1a64(state_key);
    for (int i = 0; i < kHashProbes; ++i) {
      const std::uint64_t probe = splitmix64(base + static_cast<std::uint64_t>(i));
      f[static_cast<Eigen::Index>(probe % static_cast<std::uint64_t>(hash_dim))] += 1.0;
    }
    return f;
  }

  Eigen::VectorXd features(const Eigen::VectorXd& state_feat,
                           std::span<const TokenId> prefix) const {
    if (state_feat.size() != hash_dim)
      throw std::invalid_argument("Featurizer: state feature dimension mismatch");
    Eigen::VectorXd f = Eigen::VectorXd::Zero(feature_dim());
    f.head(hash_dim) = state_feat;
    const std::size_t n = prefix.size();
    const std::size_t from = n > kPrefixWindow ? n - kPrefixWindow : 0;
    for (std::size_t i = from; i < n; ++i) {
      const TokenId id = prefix[i];
      if (id < 0 || id >= vocab_size)
        throw std::invalid_argument("Featurizer: prefix token out of range");
      f[hash_dim + id] += 1.0;
    }
    return f;
  }
};

struct PolicyParams {
  Eigen::MatrixXd weights;  // feature_dim x V

  int feature_dim() const { return static_cast<int>(weights.rows()); }
  int vocab_size() const { return static_cast<int>(weights.cols()); }

  void validate() const {
    if (!weights.allFinite())
      throw std::invalid_argument("PolicyParams: weights must be finite");
  }

  static PolicyParams zeros(int feature_dim, int vocab_size) {
    return {Eigen::MatrixXd::Zero(feature_dim, vocab_size)};
  }

  // Small random init, deterministic in the seed.
  static PolicyParams random(int feature_dim, int vocab_size,
                             std::uint64_t seed, double scale = 0.01) {
    RngStream rng(seed);
    Eigen::MatrixXd w(feature_dim, vocab_size);
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        w(i, j) = scale * (2.0 * rng.uniform() - 1.0);
    return {std::move(w)};
  }
};

inline Eigen::VectorXd logits(const PolicyParams& params,
                              const Featurizer& feat,
                              const Eigen::VectorXd& state_feat,
                              std::span<const TokenId> prefix) {
  return params.weights.transpose() * feat.features(state_feat, prefix);
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const double zmax = z.maxCoeff();
  Eigen::VectorXd p = (z.array() - zmax).exp();
  return p / p.sum();
}

inline Eigen::VectorXd log_softmax(const Eigen::VectorXd& z) {
  const double zmax = z.maxCoeff();
  const double lse = std::log((z.array() - zmax).exp().sum());
  return z.array() - zmax - lse;
}

// The model's belief at this context, before any sampling filters; this is
// what the uncertainty signal consumes.
inline TokenDistribution distribution_from_logits(const Eigen::VectorXd& z) {
  Eigen::VectorXd p = softmax(z);
  return TokenDistribution{std::vector<double>(p.data(), p.data() + p.size())};
}

namespace detail {

inline TokenId argmax_token(const Eigen::VectorXd& z) {
  TokenId best = 0;
  for (Eigen::Index i = 1; i < z.size(); ++i)
    if (z[i] > z[best]) best = static_cast<TokenId>(i);
  return best;
}

// Temperature, top-k and top-p filtering followed by a categorical draw from
// the caller's stream. Ties order by token index ascending.
inline TokenId sample_impl(const Eigen::VectorXd& z_in,
                           const SamplerConfig& cfg, RngStream& rng,
                           std::optional<TokenId> override_id) {
  const int v = static_cast<int>(z_in.size());
  Eigen::VectorXd z = z_in;
  if (override_id) {
    std::vector<double> zv(z.data(), z.data() + z.size());
    zv = override_logits(zv, *override_id);
    z = Eigen::Map<Eigen::VectorXd>(zv.data(), static_cast<Eigen::Index>(zv.size()));
  }
  if (cfg.temperature == 0.0) return argmax_token(z);
  z /= cfg.temperature;

  std::vector<int> order(static_cast<std::size_t>(v));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return z[a] > z[b]; });

  const int k = std::min(cfg.top_k, v);
  Eigen::VectorXd probs = Eigen::VectorXd::Zero(v);
  double zmax = z[order[0]];
  double denom = 0.0;
  for (int i = 0; i < k; ++i) denom += std::exp(z[order[i]] - zmax);
  for (int i = 0; i < k; ++i) probs[order[i]] = std::exp(z[order[i]] - zmax) / denom;

  // nucleus: keep the smallest prefix of the sorted candidates reaching top_p
  double cum = 0.0;
  int kept = 0;
  for (int i = 0; i < k; ++i) {
    cum += probs[order[i]];
    ++kept;
    if (cum >= cfg.top_p) break;
  }
  double mass = 0.0;
  for (int i = 0; i < kept; ++i) mass += probs[order[i]];

  const double u = rng.uniform() * mass;
  double acc = 0.0;
  for (int i = 0; i < kept; ++i) {
    acc += probs[order[i]];
    if (u < acc) return order[i];
  }
  return order[kept - 1];
}

}  // namespace detail

// Stateful sampler owning its seeded stream; one per concurrent generation.
class Sampler {
 public:
  explicit Sampler(const SamplerConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
  }

  TokenId sample(const Eigen::VectorXd& z,
                 std::optional<TokenId> override_id = std::nullopt) {
    return detail::sample_impl(z, cfg_, rng_, override_id);
  }

  const SamplerConfig& config() const { return cfg_; }

 private:
  SamplerConfig cfg_;
  RngStream rng_;
};

// One-shot draw with a fresh stream seeded from cfg.seed.
inline TokenId sample(const Eigen::VectorXd& z, const SamplerConfig& cfg,
                      std::optional<TokenId> override_id = std::nullopt) {
  cfg.validate();
  RngStream rng(cfg.seed);
  return detail::sample_impl(z, cfg, rng, override_id);
}

// Sum of per-position log softmax(logits)[token]. scaffold gives tokens that
// precede the scored sequence in the prefix without being scored themselves.
inline double sequence_log_prob(const PolicyParams& params,
                                const Featurizer& feat,
                                const Eigen::VectorXd& state_feat,
                                std::span<const TokenId> tokens,
                                std::span<const TokenId> scaffold = {}) {
  std::vector<TokenId> prefix(scaffold.begin(), scaffold.end());
  double lp = 0.0;
  for (TokenId tok : tokens) {
    if (tok < 0 || tok >= params.vocab_size())
      throw std::invalid_argument("sequence_log_prob: token out of range");
    Eigen::VectorXd z = logits(params, feat, state_feat, prefix);
    lp += log_softmax(z)[tok];
    prefix.push_back(tok);
  }
  return lp;
}

// Exact categorical KL(pi_theta || pi_ref) at one context. Nonnegative by
// Gibbs' inequality; zero when the parameters coincide.
inline double kl_to_reference(const PolicyParams& params,
                              const PolicyParams& ref_params,
                              const Featurizer& feat,
                              const Eigen::VectorXd& state_feat,
                              std::span<const TokenId> prefix) {
  if (params.vocab_size() != ref_params.vocab_size() ||
      params.feature_dim() != ref_params.feature_dim())
    throw std::invalid_argument("kl_to_reference: parameter shapes differ");
  const Eigen::VectorXd f = feat.features(state_feat, prefix);
  const Eigen::VectorXd lp = log_softmax(params.weights.transpose() * f);
  const Eigen::VectorXd lq = log_softmax(ref_params.weights.transpose() * f);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < lp.size(); ++i)
    kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return std::max(kl, 0.0);
}

// Supervised pair for rejective fine-tuning: NLL of the action tokens given
// the hashed state context (scaffold handled as in sequence_log_prob).
struct RftPair {
  std::string history;   // rendered memory context, kept for the dataset file
  std::string state_key;
  std::vector<TokenId> scaffold;
  std::vector<TokenId> tokens;
};

inline double rft_nll(const PolicyParams& params, const Featurizer& feat,
                      const std::vector<RftPair>& dataset) {
  if (dataset.empty()) throw std::invalid_argument("rft_nll: empty dataset");
  double nll = 0.0;
  for (const auto& pair : dataset)
    nll -= sequence_log_prob(params, feat, feat.state_features(pair.state_key),
                             pair.tokens, pair.scaffold);
  return nll / static_cast<double>(dataset.size());
}

// One gradient step on the mean sequence NLL; plain descent with step lr.
inline PolicyParams rft_update(const PolicyParams& params,
                               const Featurizer& feat,
                               const std::vector<RftPair>& dataset, double lr) {
  if (dataset.empty()) throw std::invalid_argument("rft_update: empty dataset");
  Eigen::MatrixXd grad =
      Eigen::MatrixXd::Zero(params.feature_dim(), params.vocab_size());
  for (const auto& pair : dataset) {
    const Eigen::VectorXd state_feat = feat.state_features(pair.state_key);
    std::vector<TokenId> prefix(pair.scaffold.begin(), pair.scaffold.end());
    for (TokenId tok : pair.tokens) {
      const Eigen::VectorXd f = feat.features(state_feat, prefix);
      Eigen::VectorXd p = softmax(params.weights.transpose() * f);
      p[tok] -= 1.0;                 // d NLL / d logits = p - onehot
      grad.noalias() += f * p.transpose();
      prefix.push_back(tok);
    }
  }
  grad /= static_cast<double>(dataset.size());
  PolicyParams out{params.weights - lr * grad};
  out.validate();
  return out;
}

// --- checkpoint io ---------------------------------------------------------
// Text format, hexfloat payload for exact round-trips:
//   t2po-policy 1
//   <vocab_size> <feature_dim>
//   one row per feature dimension, vocab_size hexfloat columns

inline void save_policy(const std::string& path, const PolicyParams& params) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_policy: cannot open " + path);
  out << "t2po-policy 1\n"
      << params.vocab_size() << ' ' << params.feature_dim() << '\n';
  out << std::hexfloat;
  for (Eigen::Index r = 0; r < params.weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < params.weights.cols(); ++c) {
      if (c) out << ' ';
      out << params.weights(r, c);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("save_policy: write failed for " + path);
}

inline PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_policy: cannot open " + path);
  std::string magic;
  int version = 0, v = 0, fd = 0;
  in >> magic >> version >> v >> fd;
  if (magic != "t2po-policy" || version != 1 || v <= 0 || fd <= 0)
    throw std::runtime_error("load_policy: bad header in " + path);
  Eigen::MatrixXd w(fd, v);
  std::string cell;
  for (int r = 0; r < fd; ++r)
    for (int c = 0; c < v; ++c) {
      if (!(in >> cell))
        throw std::runtime_error("load_policy: truncated payload in " + path);
      // streams do not reliably parse hexfloat; strtod does
      w(r, c) = std::strtod(cell.c_str(), nullptr);
    }
  return PolicyParams{std::move(w)};
}

}  // namespace t2po
