#pragma once

// Credit assignment and the clipped policy update.
//
// Per-turn discounted returns propagate sparse terminal rewards backwards.
// Two relative advantages are fused: the episode-level group advantage
// (returns normalized against the rollout group) and the turn-level anchor
// advantage (returns normalized among actions taken from the same
// environment state, matched by exact state key). The policy ascends the
// clipped surrogate objective with a KL penalty to a frozen reference:
//
//   J = E[min(rho * A', clip(rho, 1-eps, 1+eps) * A')] - kl_coeff * KL
//
// with one sequence-level ratio rho per turn action.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "t2po/policy.hpp"

namespace t2po {

enum class NormMode { MeanNorm, StdNorm };

inline const char* to_string(NormMode m) {
  return m == NormMode::MeanNorm ? "mean_norm" : "std_norm";
}

inline NormMode norm_mode_from_string(const std::string& s) {
  if (s == "mean_norm") return NormMode::MeanNorm;
  if (s == "std_norm") return NormMode::StdNorm;
  throw std::invalid_argument("unknown normalization mode: " + s);
}

struct CreditConfig {
  double discount = 0.95;  // turn-level discount
  double omega = 1.0;      // turn-advantage fusion weight
  NormMode f_norm = NormMode::MeanNorm;
  double clip_eps = 0.2;
  double kl_coeff = 0.01;
  int group_size = 8;

  void validate() const {
    if (!(discount > 0.0 && discount < 1.0))
      throw std::invalid_argument("CreditConfig: discount must be in (0,1)");
    if (omega < 0.0)
      throw std::invalid_argument("CreditConfig: omega must be >= 0");
    if (!(clip_eps > 0.0 && clip_eps < 1.0))
      throw std::invalid_argument("CreditConfig: clip_eps must be in (0,1)");
    if (kl_coeff < 0.0)
      throw std::invalid_argument("CreditConfig: kl_coeff must be >= 0");
    if (group_size < 2)
      throw std::invalid_argument("CreditConfig: group_size must be >= 2");
  }
};

struct ReturnRecord {
  std::vector<double> per_turn_returns;  // R(tau^k) for k = 1..K
};

struct AdvantageRecord {
  double episode_adv = 0.0;
  double turn_adv = 0.0;
  double fused = 0.0;  // episode_adv + omega * turn_adv
};

// Backward recursion R_k = r_k + discount * R_{k+1}.
inline ReturnRecord discounted_returns(const std::vector<double>& rewards,
                                       double discount) {
  if (rewards.empty())
    throw std::invalid_argument("discounted_returns: rewards must be non-empty");
  ReturnRecord rec;
  rec.per_turn_returns.resize(rewards.size());
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + discount * acc;
    rec.per_turn_returns[i] = acc;
  }
  return rec;
}

// Group-relative advantage. mean_norm subtracts the group mean; std_norm
// additionally divides by the population standard deviation (1e-8 floor;
// a fully degenerate group yields all-zero advantages).
inline std::vector<double> group_advantage(const std::vector<double>& returns,
                                           NormMode mode) {
  if (returns.size() < 2)
    throw std::invalid_argument("group_advantage: need at least 2 members");
  const double n = static_cast<double>(returns.size());
  double mean = 0.0;
  for (double r : returns) mean += r;
  mean /= n;
  std::vector<double> adv(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i) adv[i] = returns[i] - mean;
  if (mode == NormMode::StdNorm) {
    double var = 0.0;
    for (double a : adv) var += a * a;
    const double sd = std::sqrt(var / n);
    if (sd < 1e-8) {
      std::fill(adv.begin(), adv.end(), 0.0);
    } else {
      for (double& a : adv) a /= sd + 1e-8;
    }
  }
  return adv;
}

struct TurnSample {
  std::string state_key;
  std::string action;  // metadata; grouping is by state key only
  double discounted_return = 0.0;
};

// Anchor-state advantage: samples sharing an exact state key form a group and
// are normalized within it; singleton anchors get no relative signal (0).
// Output order matches the input order.
inline std::vector<double> turn_advantage(const std::vector<TurnSample>& samples,
                                          NormMode mode) {
  std::map<std::string, std::vector<std::size_t>> anchors;
  for (std::size_t i = 0; i < samples.size(); ++i)
    anchors[samples[i].state_key].push_back(i);
  std::vector<double> adv(samples.size(), 0.0);
  for (const auto& [key, members] : anchors) {
    if (members.size() < 2) continue;
    std::vector<double> returns;
    returns.reserve(members.size());
    for (std::size_t i : members)
      returns.push_back(samples[i].discounted_return);
    const std::vector<double> group = group_advantage(returns, mode);
    for (std::size_t j = 0; j < members.size(); ++j) adv[members[j]] = group[j];
  }
  return adv;
}

inline double fuse_advantage(double episode_adv, double turn_adv, double omega) {
  if (!std::isfinite(episode_adv) || !std::isfinite(turn_adv) ||
      !std::isfinite(omega))
    throw std::invalid_argument("fuse_advantage: inputs must be finite");
  return episode_adv + omega * turn_adv;
}

// Clipped surrogate with KL penalty, evaluated on precomputed ratios. This is
// the objective to maximize.
inline double clipped_objective(const std::vector<double>& ratios,
                                const std::vector<double>& advantages,
                                double clip_eps, double mean_kl,
                                double kl_coeff) {
  if (ratios.size() != advantages.size() || ratios.empty())
    throw std::invalid_argument("clipped_objective: size mismatch or empty batch");
  double sum = 0.0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (!(ratios[i] > 0.0))
      throw std::invalid_argument("clipped_objective: ratios must be > 0");
    const double clipped =
        std::clamp(ratios[i], 1.0 - clip_eps, 1.0 + clip_eps);
    sum += std::min(ratios[i] * advantages[i], clipped * advantages[i]);
  }
  return sum / static_cast<double>(ratios.size()) - kl_coeff * mean_kl;
}

// One optimization sample: a turn action with its rollout-time log-prob.
struct OptimSample {
  std::string state_key;
  std::vector<TokenId> scaffold;  // context tokens preceding the scored ones
  std::vector<TokenId> tokens;    // scored action tokens
  double old_log_prob = 0.0;      // sequence_log_prob under theta_old
  double advantage = 0.0;         // fused A'
};

struct ObjectiveStats {
  double objective = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;  // samples on the clipped branch
  double mean_ratio = 0.0;
};

namespace detail {

struct SampleEval {
  double log_prob;
  Eigen::MatrixXd grad_log_prob;  // d log pi(a|s) / d W
};

inline SampleEval eval_sequence(const PolicyParams& params,
                                const Featurizer& feat,
                                const OptimSample& s, bool with_grad) {
  SampleEval ev;
  ev.log_prob = 0.0;
  if (with_grad)
    ev.grad_log_prob =
        Eigen::MatrixXd::Zero(params.feature_dim(), params.vocab_size());
  const Eigen::VectorXd state_feat = feat.state_features(s.state_key);
  std::vector<TokenId> prefix(s.scaffold.begin(), s.scaffold.end());
  for (TokenId tok : s.tokens) {
    const Eigen::VectorXd f = feat.features(state_feat, prefix);
    const Eigen::VectorXd lp = log_softmax(params.weights.transpose() * f);
    ev.log_prob += lp[tok];
    if (with_grad) {
      Eigen::VectorXd g = -lp.array().exp();  // -p
      g[tok] += 1.0;                          // onehot - p
      ev.grad_log_prob.noalias() += f * g.transpose();
    }
    prefix.push_back(tok);
  }
  return ev;
}

}  // namespace detail

// Objective value at the given parameters (used by the gradient check's
// finite-difference oracle). The KL term averages the exact per-token KL to
// the reference over every scored position in the batch.
inline double clipped_kl_objective_value(const PolicyParams& params,
                                         const PolicyParams& ref_params,
                                         const Featurizer& feat,
                                         const std::vector<OptimSample>& batch,
                                         const CreditConfig& cfg,
                                         ObjectiveStats* stats = nullptr) {
  if (batch.empty())
    throw std::invalid_argument("clipped_kl_objective_value: empty batch");
  double surrogate = 0.0;
  double kl_sum = 0.0;
  std::size_t positions = 0;
  double ratio_sum = 0.0;
  std::size_t clipped_count = 0;
  for (const auto& s : batch) {
    const auto ev = detail::eval_sequence(params, feat, s, false);
    const double rho = std::exp(ev.log_prob - s.old_log_prob);
    const double clipped = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    surrogate += std::min(rho * s.advantage, clipped * s.advantage);
    ratio_sum += rho;
    if (rho * s.advantage > clipped * s.advantage) ++clipped_count;

    const Eigen::VectorXd state_feat = feat.state_features(s.state_key);
    std::vector<TokenId> prefix(s.scaffold.begin(), s.scaffold.end());
    for (TokenId tok : s.tokens) {
      kl_sum += kl_to_reference(params, ref_params, feat, state_feat, prefix);
      prefix.push_back(tok);
      ++positions;
    }
  }
  const double mean_kl = positions ? kl_sum / static_cast<double>(positions) : 0.0;
  const double obj =
      surrogate / static_cast<double>(batch.size()) - cfg.kl_coeff * mean_kl;
  if (stats) {
    stats->objective = obj;
    stats->mean_kl = mean_kl;
    stats->clip_fraction =
        static_cast<double>(clipped_count) / static_cast<double>(batch.size());
    stats->mean_ratio = ratio_sum / static_cast<double>(batch.size());
  }
  return obj;
}

// Analytic gradient of the clipped-KL objective with respect to the weights.
// On the clipped branch the surrogate is locally constant in theta, so the
// sample contributes no policy-gradient term.
inline Eigen::MatrixXd clipped_kl_objective_gradient(
    const PolicyParams& params, const PolicyParams& ref_params,
    const Featurizer& feat, const std::vector<OptimSample>& batch,
    const CreditConfig& cfg) {
  if (batch.empty())
    throw std::invalid_argument("clipped_kl_objective_gradient: empty batch");
  Eigen::MatrixXd grad =
      Eigen::MatrixXd::Zero(params.feature_dim(), params.vocab_size());
  Eigen::MatrixXd kl_grad =
      Eigen::MatrixXd::Zero(params.feature_dim(), params.vocab_size());
  std::size_t positions = 0;
  for (const auto& s : batch) {
    const auto ev = detail::eval_sequence(params, feat, s, true);
    const double rho = std::exp(ev.log_prob - s.old_log_prob);
    const double clipped = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    if (rho * s.advantage <= clipped * s.advantage)
      grad.noalias() += (s.advantage * rho) * ev.grad_log_prob;

    if (cfg.kl_coeff > 0.0) {
      const Eigen::VectorXd state_feat = feat.state_features(s.state_key);
      std::vector<TokenId> prefix(s.scaffold.begin(), s.scaffold.end());
      for (TokenId tok : s.tokens) {
        const Eigen::VectorXd f = feat.features(state_feat, prefix);
        const Eigen::VectorXd lp = log_softmax(params.weights.transpose() * f);
        const Eigen::VectorXd lq =
            log_softmax(ref_params.weights.transpose() * f);
        double kl = 0.0;
        for (Eigen::Index i = 0; i < lp.size(); ++i)
          kl += std::exp(lp[i]) * (lp[i] - lq[i]);
        // d KL / d z_u = p_u * ((lp_u - lq_u) - KL)
        Eigen::VectorXd g(lp.size());
        for (Eigen::Index i = 0; i < lp.size(); ++i)
          g[i] = std::exp(lp[i]) * ((lp[i] - lq[i]) - kl);
        kl_grad.noalias() += f * g.transpose();
        prefix.push_back(tok);
        ++positions;
      }
    } else {
      positions += s.tokens.size();
    }
  }
  grad /= static_cast<double>(batch.size());
  if (positions > 0 && cfg.kl_coeff > 0.0)
    grad.noalias() -= (cfg.kl_coeff / static_cast<double>(positions)) * kl_grad;
  return grad;
}

// Ascends the objective by one step. Throws on non-finite gradients.
inline PolicyParams policy_gradient_step(const PolicyParams& params,
                                         const PolicyParams& ref_params,
                                         const Featurizer& feat,
                                         const std::vector<OptimSample>& batch,
                                         const CreditConfig& cfg, double lr,
                                         ObjectiveStats* stats = nullptr) {
  cfg.validate();
  const Eigen::MatrixXd grad =
      clipped_kl_objective_gradient(params, ref_params, feat, batch, cfg);
  if (!grad.allFinite())
    throw std::runtime_error(
        "policy_gradient_step: non-finite gradient (batch of " +
        std::to_string(batch.size()) + " samples)");
  if (stats)
    clipped_kl_objective_value(params, ref_params, feat, batch, cfg, stats);
  PolicyParams out{params.weights + lr * grad};
  out.validate();
  return out;
}

}  // namespace t2po
