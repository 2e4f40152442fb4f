#pragma once

// Multi-turn trajectory collection with the uncertainty controllers in the
// decode loop.
//
// Per turn: the policy samples thinking tokens behind a <think> scaffold
// while TTI watches the fused signal; on a non-hesitation event (or budget
// exhaustion) the forced queue closes the reasoning segment and opens the
// action segment, whose tokens are sampled freely until </action> / <end> /
// the response budget. The finished candidate's turn signal Phi is compared
// against the last accepted turn's and TDS either accepts (environment steps)
// or discards and regenerates under fresh randomness -- rejected candidates
// never step the environment and are excluded from optimization.
//
// Trajectories within a rollout group share the task and the initial
// environment state; sampler seeds derive from (seed, group, turn, attempt),
// which makes collection reproducible and regeneration genuinely fresh.

#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "t2po/common.hpp"
#include "t2po/format.hpp"
#include "t2po/policy.hpp"
#include "t2po/shop.hpp"
#include "t2po/signal.hpp"
#include "t2po/tds.hpp"
#include "t2po/tti.hpp"
#include "t2po/vocab.hpp"

namespace t2po {

struct OrchestratorConfig {
  int memory_window = 2;      // P: rendered (observation, action) pairs
  int group_size = 8;         // G: trajectories per rollout group
  int max_turns = 15;         // K_max
  int target_samples = 4096;  // cap on accepted turn samples per wave
  int rollout_batch = 16;     // B_rollout (tasks per training iteration)
  int update_batch = 128;     // B_update (optimizer minibatch)
  int prompt_group = 8;       // n (staleness accounting)
  int response_budget = 500;  // sampled tokens per turn, thinking included

  void validate() const {
    if (memory_window < 1 || group_size < 1 || max_turns < 1 ||
        target_samples < 1 || rollout_batch < 1 || update_batch < 1 ||
        prompt_group < 1 || response_budget < 8)
      throw std::invalid_argument("OrchestratorConfig: all fields must be positive");
  }
};

struct Controllers {
  SignalConfig signal;
  TtiConfig tti;
  TdsConfig tds;
  double lambda_fmt = kDefaultFormatPenalty;
};

struct PolicyBundle {
  PolicyParams params;
  Featurizer featurizer;
  SamplerConfig sampler;  // sampler.seed is the stream base
};

struct Turn {
  int turn_index = 0;  // 1-based
  int attempt = 0;
  Observation obs;           // observation the action was taken from
  std::string context;       // rendered memory context
  std::string state_key;
  std::vector<TokenId> tokens;  // scaffold <think> at [0], then emitted tokens
  UncertaintyTrace trace;
  ParsedAction parsed;
  bool tti_fired = false;
  TriggerCause tti_cause = TriggerCause::None;
  int tti_trigger_index = -1;
  int tds_attempts = 0;
  double phi = 0.0;
  std::optional<double> gamma;  // nullopt = first-turn sentinel
  double env_reward = 0.0;
  double reward = 0.0;  // env reward after the format penalty
  bool invalid_action = false;
  bool is_void = false;
  bool done = false;
  double old_log_prob = 0.0;
  bool rejected = false;
};

struct Trajectory {
  std::string task_id;
  int group_index = 0;
  std::vector<Turn> turns;  // accepted turns, monotone turn indices
  std::vector<Turn> rejected_candidates;
  double total_reward = 0.0;
  bool success = false;  // terminal env reward of exactly 1
  int env_steps = 0;
};

struct RolloutGroup {
  std::string task_id;
  std::vector<Trajectory> trajectories;
};

struct StalenessReport {
  double k_hat = 0.0;
  double delta = 0.0;
  double rho_stale = 0.0;  // delta / (1 + delta)
};

// Expected policy lag in learner update steps and the induced staleness
// ratio: delta = B_rollout * n * K_hat / B_update, rho = delta / (1 + delta).
inline StalenessReport staleness(const OrchestratorConfig& cfg, double k_hat) {
  cfg.validate();
  if (k_hat < 0.0)
    throw std::invalid_argument("staleness: k_hat must be >= 0");
  StalenessReport rep;
  rep.k_hat = k_hat;
  rep.delta = static_cast<double>(cfg.rollout_batch) *
              static_cast<double>(cfg.prompt_group) * k_hat /
              static_cast<double>(cfg.update_batch);
  rep.rho_stale = rep.delta / (1.0 + rep.delta);
  return rep;
}

// Running mean of accepted turns per trajectory over the last 100
// trajectories; feeds the staleness report.
class KHatTracker {
 public:
  void push(int accepted_turns) {
    window_.push_back(accepted_turns);
    if (window_.size() > 100) window_.pop_front();
  }

  double mean() const {
    if (window_.empty()) return 0.0;
    double s = 0.0;
    for (int v : window_) s += v;
    return s / static_cast<double>(window_.size());
  }

 private:
  std::deque<int> window_;
};

// Renders the fixed prompt template: task header, the most recent p
// (observation, action) pairs, the current observation plus its admissible
// actions, and the instruction block. Length is bounded by a function of p.
inline std::string build_memory_context(
    const std::string& prompt,
    const std::vector<std::pair<Observation, ParsedAction>>& history,
    const Observation& current, int p) {
  if (p < 1) throw std::invalid_argument("build_memory_context: p must be >= 1");
  const int n = static_cast<int>(history.size());
  std::string out;
  out += "you are an autonomous agent operating in a multi-turn text environment.\n";
  out += "your task is to: " + prompt + ". prior to this step, you have already taken " +
         std::to_string(n) + " step(s).\n";
  out += "================= memory context =================\n";
  const int from = n > p ? n - p : 0;
  if (from == n) {
    out += "(no history yet)\n";
  } else {
    out += "below are the most recent " + std::to_string(n - from) +
           " observations and the corresponding actions you took:\n";
    for (int i = from; i < n; ++i) {
      const auto& [obs, act] = history[static_cast<std::size_t>(i)];
      out += "[observation " + std::to_string(i + 1) + ": '" + obs.text +
             "', action " + std::to_string(i + 1) + ": '" + act.command + "']\n";
    }
  }
  out += "================= current observation =================\n";
  out += "you are now at step " + std::to_string(n + 1) +
         " and your current observation is: " + current.text +
         ". your admissible actions of the current situation are: ";
  for (std::size_t i = 0; i < current.admissible_actions.size(); ++i)
    out += (i ? ", '" : "'") + current.admissible_actions[i] + "'";
  out += ".\n================= instruction =================\n";
  out += "reason step-by-step inside <think> </think> tags, then present one "
         "admissible action inside <action> </action> tags.\n";
  return out;
}

namespace detail {

// Generates one candidate turn. The <think> scaffold opens the sequence;
// sampled tokens contribute uncertainty samples, injected queue tokens do
// not (they are enforced, not drawn).
inline Turn generate_turn(const PolicyBundle& policy, const Vocabulary& vocab,
                          const Controllers& ctl, const Observation& obs,
                          const std::string& context, int turn_index,
                          int attempt, int response_budget,
                          std::uint64_t sampler_seed) {
  Turn turn;
  turn.turn_index = turn_index;
  turn.attempt = attempt;
  turn.obs = obs;
  turn.context = context;
  turn.state_key = obs.state_key;

  SamplerConfig scfg = policy.sampler;
  scfg.seed = sampler_seed;
  Sampler sampler(scfg);

  const Eigen::VectorXd state_feat =
      policy.featurizer.state_features(obs.state_key);
  auto& tokens = turn.tokens;
  tokens.push_back(vocab.think_open());

  TtiState tti = reset_turn();
  int sampled = 0;

  auto draw = [&]() {
    const Eigen::VectorXd z =
        logits(policy.params, policy.featurizer, state_feat, tokens);
    const TokenId tok = sampler.sample(z);
    const TokenDistribution dist = distribution_from_logits(z);
    const double h = entropy(dist);
    const double c = top_j_confidence(dist, ctl.signal);
    append_and_normalize(turn.trace, h, c, ctl.signal);
    tokens.push_back(tok);
    ++sampled;
    return tok;
  };

  enum class Phase { Thinking, Bridge, Action, Finished };
  Phase phase = Phase::Thinking;

  while (phase == Phase::Thinking) {
    const TokenId tok = draw();
    if (tok == vocab.think_close()) {
      phase = Phase::Bridge;  // natural close; policy must open the action itself
      break;
    }
    ControlDecision dec = observe_token(tti, turn.trace, ctl.tti);
    if (dec.kind == ControlDecision::Kind::ForceToken) {
      // Inject the deterministic queue without sampling.
      while (dec.kind == ControlDecision::Kind::ForceToken) {
        tokens.push_back(dec.token);
        dec = observe_token(tti, turn.trace, ctl.tti);
      }
      phase = Phase::Action;  // queue ends with <action>
    }
  }

  while (phase == Phase::Bridge && sampled < response_budget) {
    const TokenId tok = draw();
    if (tok == vocab.action_open())
      phase = Phase::Action;
    else if (tok == vocab.end())
      phase = Phase::Finished;
  }

  while (phase == Phase::Action && sampled < response_budget) {
    const TokenId tok = draw();
    if (tok == vocab.action_close()) {
      tokens.push_back(vocab.end());  // canonical suffix </action><end>
      phase = Phase::Finished;
    } else if (tok == vocab.end()) {
      phase = Phase::Finished;
    }
  }

  turn.tti_fired = tti.stop_fired;
  turn.tti_cause = tti.cause;
  turn.tti_trigger_index = tti.trigger_index.value_or(-1);
  turn.parsed = validate_relaxed(vocab.render(tokens));
  turn.is_void = turn.parsed.command == kFallbackCommand;
  // Model log-probability of everything emitted after the scaffold, under
  // the parameters active right now (theta_old for later ratios).
  const std::vector<TokenId> scaffold = {vocab.think_open()};
  turn.old_log_prob = sequence_log_prob(
      policy.params, policy.featurizer, state_feat,
      std::span<const TokenId>(tokens.data() + 1, tokens.size() - 1), scaffold);
  return turn;
}

}  // namespace detail

// Collects G trajectories for one task from the identical initial state.
// TTI runs inside the decode loop; TDS decides accept/regenerate per turn;
// the environment is stepped only on accepted turns.
template <class Env>
RolloutGroup collect_group(const Env& env_proto, const typename Env::Task& task,
                           const OrchestratorConfig& cfg, const Controllers& ctl,
                           const PolicyBundle& policy, std::uint64_t seed_base) {
  cfg.validate();
  ctl.signal.validate();
  ctl.tti.validate();
  ctl.tds.validate();
  const Vocabulary& vocab = Env::vocabulary();

  RolloutGroup group;
  group.task_id = task.id;
  for (int g = 0; g < cfg.group_size; ++g) {
    Env env = env_proto;
    Trajectory traj;
    traj.task_id = task.id;
    traj.group_index = g;
    Observation obs = env.reset(task);
    std::vector<std::pair<Observation, ParsedAction>> history;
    TurnSignalState tds_state;

    for (int k = 1; k <= task.max_turns; ++k) {
      const std::string context =
          build_memory_context(task.prompt, history, obs, cfg.memory_window);
      tds_state.begin_turn();
      Turn accepted;
      for (int attempt = 0;; ++attempt) {
        const std::uint64_t seed = derive_seed(
            seed_base, {static_cast<std::uint64_t>(g),
                        static_cast<std::uint64_t>(k),
                        static_cast<std::uint64_t>(attempt)});
        Turn cand = detail::generate_turn(policy, vocab, ctl, obs, context, k,
                                          attempt, cfg.response_budget, seed);
        cand.phi = turn_signal(cand.trace, ctl.signal.m_floor);
        const double gamma = turn_delta(cand.phi, tds_state.phi_prev);
        cand.gamma = tds_state.phi_prev ? std::optional<double>(gamma)
                                        : std::nullopt;
        cand.tds_attempts = attempt;
        if (decide(gamma, cand.phi, tds_state, ctl.tds) ==
            TdsDecision::Regenerate) {
          cand.rejected = true;
          traj.rejected_candidates.push_back(std::move(cand));
          continue;
        }
        accepted = std::move(cand);
        break;
      }

      StepResult sr = env.step(accepted.parsed.command);
      ++traj.env_steps;
      accepted.env_reward = sr.reward;
      accepted.reward = apply_format_penalty(sr.reward,
                                             accepted.parsed.strict_valid,
                                             ctl.lambda_fmt);
      accepted.invalid_action = sr.invalid_action;
      accepted.done = sr.done;
      traj.total_reward += accepted.reward;
      if (sr.done && sr.reward == 1.0) traj.success = true;
      history.emplace_back(obs, accepted.parsed);
      obs = sr.obs;
      traj.turns.push_back(std::move(accepted));
      if (sr.done) break;
    }
    group.trajectories.push_back(std::move(traj));
  }
  return group;
}

// One optimization sample per accepted turn; TDS-rejected candidates are
// already excluded by construction.
struct DecomposedSample {
  std::string context;
  std::string state_key;
  std::vector<TokenId> scaffold;
  std::vector<TokenId> tokens;
  double old_log_prob = 0.0;
  double reward = 0.0;
  bool is_void = false;
};

inline std::vector<DecomposedSample> decompose(const Trajectory& traj,
                                               const Vocabulary& vocab) {
  std::vector<DecomposedSample> out;
  out.reserve(traj.turns.size());
  for (const auto& turn : traj.turns) {
    DecomposedSample s;
    s.context = turn.context;
    s.state_key = turn.state_key;
    s.scaffold = {vocab.think_open()};
    s.tokens.assign(turn.tokens.begin() + 1, turn.tokens.end());
    s.old_log_prob = turn.old_log_prob;
    s.reward = turn.reward;
    s.is_void = turn.is_void;
    out.push_back(std::move(s));
  }
  return out;
}

// Keeps (history, action) pairs from trajectories whose total reward clears
// the threshold. Void turns carry no parseable action and are skipped, so
// every retained pair has a relaxed-parseable format.
inline std::vector<RftPair> rft_filter(const std::vector<Trajectory>& trajectories,
                                       double score_threshold,
                                       const Vocabulary& vocab) {
  std::vector<RftPair> out;
  for (const auto& traj : trajectories) {
    if (!(traj.total_reward > score_threshold)) continue;
    for (const auto& turn : traj.turns) {
      if (turn.is_void) continue;
      RftPair pair;
      pair.history = turn.context;
      pair.state_key = turn.state_key;
      pair.scaffold = {vocab.think_open()};
      pair.tokens.assign(turn.tokens.begin() + 1, turn.tokens.end());
      out.push_back(std::move(pair));
    }
  }
  return out;
}

}  // namespace t2po
