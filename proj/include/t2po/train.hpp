#pragma once

// Training engine behind the CLI: rejective fine-tuning, the RL iteration
// loop (collect groups -> decompose -> group-in-group advantages -> clipped
// update), per-iteration metrics and trajectory logging. All randomness
// derives from the run seed; identical configs produce byte-identical
// artifacts.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "t2po/analysis.hpp"
#include "t2po/chain.hpp"
#include "t2po/config.hpp"
#include "t2po/credit.hpp"
#include "t2po/log.hpp"
#include "t2po/policy.hpp"
#include "t2po/rollout.hpp"
#include "t2po/shop.hpp"

namespace t2po {

struct IterationMetrics {
  int iteration = 0;
  int trajectories = 0;
  int successes = 0;
  double success_rate = 0.0;
  std::optional<double> mean_tokens_per_success;
  std::optional<double> mean_turns_per_success;
  double truncation_fraction = 0.0;
  double tti_trigger_rate = 0.0;
  double tds_regen_rate = 0.0;
  double mean_total_reward = 0.0;
  double strict_valid_rate = 0.0;
  int samples = 0;
  double objective = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double k_hat = 0.0;
  double rho_stale = 0.0;
};

struct TrainArtifacts {
  std::vector<IterationMetrics> metrics;
  PolicyParams params{Eigen::MatrixXd()};
  std::string trajectory_log_path;
  std::string metrics_path;
  std::string checkpoint_path;
};

struct RftArtifacts {
  PolicyParams params{Eigen::MatrixXd()};
  int dataset_size = 0;
  int epochs_run = 0;
  double pre_nll = 0.0;
  double post_nll = 0.0;
  std::string checkpoint_path;
  std::string dataset_path;
};

namespace detail {

template <class Env>
struct EnvTraits;

template <>
struct EnvTraits<ShopEnv> {
  static ShopEnv make(const EnvConfig& cfg) {
    return ShopEnv(cfg.r_mismatch, cfg.page_size);
  }
  static EpisodeTask make_task(const EnvConfig& cfg, std::uint64_t seed) {
    ShopTaskOptions opt;
    opt.catalog_size = cfg.catalog_size;
    opt.max_turns = cfg.max_turns;
    opt.min_required_attributes = cfg.min_required_attributes;
    opt.max_required_attributes = cfg.max_required_attributes;
    opt.max_required_options = cfg.max_required_options;
    return make_shop_task(seed, opt);
  }
};

template <>
struct EnvTraits<ChainEnv> {
  static ChainEnv make(const EnvConfig&) { return ChainEnv(); }
  static ChainTask make_task(const EnvConfig& cfg, std::uint64_t seed) {
    return make_chain_task(seed, cfg.chain_goal_len, cfg.max_turns);
  }
};

inline Controllers controllers_from(const RunConfig& cfg,
                                    const Vocabulary& vocab) {
  Controllers ctl;
  ctl.signal = cfg.signal;
  ctl.signal.top_j = std::min(ctl.signal.top_j, vocab.size());
  ctl.tti = cfg.tti;
  ctl.tti.queue = vocab.tti_queue();
  ctl.tds = cfg.tds;
  ctl.lambda_fmt = cfg.env.lambda_fmt;
  return ctl;
}

inline PolicyBundle bundle_from(const RunConfig& cfg, const Vocabulary& vocab,
                                PolicyParams params) {
  PolicyBundle b{std::move(params),
                 Featurizer{cfg.policy.hash_dim, vocab.size()},
                 SamplerConfig{cfg.policy.temperature, cfg.policy.top_k,
                               cfg.policy.top_p, 0}};
  return b;
}

inline PolicyParams initial_params(const RunConfig& cfg,
                                   const Vocabulary& vocab) {
  const Featurizer feat{cfg.policy.hash_dim, vocab.size()};
  if (!cfg.init_checkpoint.empty()) {
    PolicyParams p = load_policy(cfg.init_checkpoint);
    if (p.vocab_size() != vocab.size() || p.feature_dim() != feat.feature_dim())
      throw std::runtime_error("init_checkpoint: shape does not match this run");
    return p;
  }
  return PolicyParams::random(feat.feature_dim(), vocab.size(),
                              derive_seed(cfg.seed, {0x1417u}),
                              cfg.policy.init_scale);
}

inline TurnLogRecord record_from_turn(const Turn& turn, const std::string& run_id,
                                      int iteration, const std::string& task_id,
                                      int group_index, bool traj_success) {
  TurnLogRecord r;
  r.run_id = run_id;
  r.iteration = iteration;
  r.task_id = task_id;
  r.group_index = group_index;
  r.turn_index = turn.turn_index;
  r.attempt = turn.attempt;
  r.rejected = turn.rejected;
  r.state_key = turn.state_key;
  r.tokens = turn.tokens;
  for (const auto& s : turn.trace.samples()) {
    r.h.push_back(s.h);
    r.c.push_back(s.c);
    r.m.push_back(s.m);
  }
  r.tti_fired = turn.tti_fired;
  r.tti_cause = turn.tti_cause == TriggerCause::Window   ? "window"
                : turn.tti_cause == TriggerCause::Budget ? "budget"
                                                         : "none";
  r.tti_trigger_index = turn.tti_trigger_index;
  r.tds_attempts = turn.tds_attempts;
  r.gamma = turn.gamma;
  r.phi = turn.phi;
  r.command = turn.parsed.command;
  r.strict_valid = turn.parsed.strict_valid;
  r.relaxed_valid = turn.parsed.relaxed_valid;
  r.is_void = turn.is_void;
  r.invalid_action = turn.invalid_action;
  r.env_reward = turn.env_reward;
  r.reward = turn.reward;
  r.old_log_prob = turn.old_log_prob;
  r.done = turn.done;
  r.success = turn.done && traj_success;
  return r;
}

inline std::string fmt_opt_metric(const std::optional<double>& v) {
  if (!v) return "na";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", *v);
  return buf;
}

inline std::string fmt_metric(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline void write_metrics_file(const std::string& path,
                               const std::vector<IterationMetrics>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open metrics file " + path);
  out << "iteration\ttrajectories\tsuccesses\tsuccess_rate\t"
         "mean_tokens_per_success\tmean_turns_per_success\t"
         "truncation_fraction\ttti_trigger_rate\ttds_regen_rate\t"
         "mean_total_reward\tstrict_valid_rate\tsamples\tobjective\tmean_kl\t"
         "clip_fraction\tk_hat\trho_stale\n";
  for (const auto& m : rows) {
    out << m.iteration << '\t' << m.trajectories << '\t' << m.successes << '\t'
        << fmt_metric(m.success_rate) << '\t'
        << fmt_opt_metric(m.mean_tokens_per_success) << '\t'
        << fmt_opt_metric(m.mean_turns_per_success) << '\t'
        << fmt_metric(m.truncation_fraction) << '\t'
        << fmt_metric(m.tti_trigger_rate) << '\t'
        << fmt_metric(m.tds_regen_rate) << '\t'
        << fmt_metric(m.mean_total_reward) << '\t'
        << fmt_metric(m.strict_valid_rate) << '\t' << m.samples << '\t'
        << fmt_metric(m.objective) << '\t' << fmt_metric(m.mean_kl) << '\t'
        << fmt_metric(m.clip_fraction) << '\t' << fmt_metric(m.k_hat) << '\t'
        << fmt_metric(m.rho_stale) << '\n';
  }
}

// Group-in-group advantages for one rollout group: per-turn discounted
// returns feed an episode-level group statistic at each turn index, and an
// anchor-state turn-level statistic pooled across the group. Void turns are
// excluded from the emitted batch.
template <class Env>
void append_group_samples(const RolloutGroup& group, const Vocabulary& vocab,
                          const CreditConfig& credit,
                          std::vector<OptimSample>* out) {
  const std::size_t n_traj = group.trajectories.size();
  std::vector<ReturnRecord> returns(n_traj);
  std::size_t max_turns = 0;
  for (std::size_t i = 0; i < n_traj; ++i) {
    const auto& traj = group.trajectories[i];
    if (traj.turns.empty()) continue;
    std::vector<double> rewards;
    rewards.reserve(traj.turns.size());
    for (const auto& t : traj.turns) rewards.push_back(t.reward);
    returns[i] = discounted_returns(rewards, credit.discount);
    max_turns = std::max(max_turns, traj.turns.size());
  }

  // episode-level: group statistic over trajectories alive at each turn index
  std::vector<std::vector<double>> episode_adv(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i)
    episode_adv[i].assign(returns[i].per_turn_returns.size(), 0.0);
  for (std::size_t k = 0; k < max_turns; ++k) {
    std::vector<std::size_t> alive;
    std::vector<double> rk;
    for (std::size_t i = 0; i < n_traj; ++i) {
      if (k < returns[i].per_turn_returns.size()) {
        alive.push_back(i);
        rk.push_back(returns[i].per_turn_returns[k]);
      }
    }
    if (alive.size() < 2) continue;  // no relative signal for a lone survivor
    const std::vector<double> adv = group_advantage(rk, credit.f_norm);
    for (std::size_t j = 0; j < alive.size(); ++j)
      episode_adv[alive[j]][k] = adv[j];
  }

  // turn-level: anchor-state grouping pooled across the whole group
  std::vector<TurnSample> pooled;
  std::vector<std::pair<std::size_t, std::size_t>> owner;  // (traj, turn)
  for (std::size_t i = 0; i < n_traj; ++i) {
    const auto& traj = group.trajectories[i];
    for (std::size_t k = 0; k < traj.turns.size(); ++k) {
      pooled.push_back(TurnSample{traj.turns[k].state_key,
                                  traj.turns[k].parsed.command,
                                  returns[i].per_turn_returns[k]});
      owner.emplace_back(i, k);
    }
  }
  const std::vector<double> turn_adv_pooled =
      turn_advantage(pooled, credit.f_norm);

  std::vector<std::vector<double>> turn_adv(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i)
    turn_adv[i].assign(returns[i].per_turn_returns.size(), 0.0);
  for (std::size_t p = 0; p < owner.size(); ++p)
    turn_adv[owner[p].first][owner[p].second] = turn_adv_pooled[p];

  for (std::size_t i = 0; i < n_traj; ++i) {
    const auto& traj = group.trajectories[i];
    for (std::size_t k = 0; k < traj.turns.size(); ++k) {
      const auto& turn = traj.turns[k];
      if (turn.is_void) continue;
      OptimSample s;
      s.state_key = turn.state_key;
      s.scaffold = {vocab.think_open()};
      s.tokens.assign(turn.tokens.begin() + 1, turn.tokens.end());
      s.old_log_prob = turn.old_log_prob;
      s.advantage = fuse_advantage(episode_adv[i][k], turn_adv[i][k],
                                   credit.omega);
      out->push_back(std::move(s));
    }
  }
}

// Shared RFT stage: collect with the base parameters (token-level window rule
// off, TDS off -- the plain budget-terminated sampling regime), filter by
// score, then take NLL steps.
template <class Env>
RftArtifacts rft_stage(const RunConfig& cfg, const PolicyParams& base,
                       const std::string& out_dir, bool write_files) {
  const Vocabulary& vocab = Env::vocabulary();
  const Featurizer feat{cfg.policy.hash_dim, vocab.size()};
  Controllers ctl = controllers_from(cfg, vocab);
  ctl.tti.enabled = false;
  ctl.tds.enabled = false;
  const Env env_proto = EnvTraits<Env>::make(cfg.env);

  std::vector<Trajectory> trajectories;
  for (int t = 0; t < cfg.rft.rollout_tasks; ++t) {
    const auto task = EnvTraits<Env>::make_task(
        cfg.env, derive_seed(cfg.seed, {0x5f7u, static_cast<std::uint64_t>(
                                                    t % cfg.env.task_pool)}));
    PolicyBundle bundle = bundle_from(cfg, vocab, base);
    RolloutGroup group = collect_group(
        env_proto, task, cfg.orch, ctl, bundle,
        derive_seed(cfg.seed, {0xf7a2u, static_cast<std::uint64_t>(t)}));
    for (auto& traj : group.trajectories)
      trajectories.push_back(std::move(traj));
  }

  RftArtifacts art;
  std::vector<RftPair> dataset =
      rft_filter(trajectories, cfg.rft.threshold, vocab);
  art.dataset_size = static_cast<int>(dataset.size());
  if (dataset.empty())
    throw std::runtime_error(
        "rft: no trajectory cleared the score threshold " +
        std::to_string(cfg.rft.threshold) +
        "; lower rft.threshold or collect more rollouts");

  PolicyParams params = base;
  art.pre_nll = rft_nll(params, feat, dataset);
  for (int e = 0; e < cfg.rft.epochs; ++e) {
    params = rft_update(params, feat, dataset, cfg.rft.lr);
    ++art.epochs_run;
  }
  art.post_nll = rft_nll(params, feat, dataset);
  art.params = std::move(params);

  if (write_files) {
    std::filesystem::create_directories(out_dir);
    art.checkpoint_path = out_dir + "/policy_rft.ckpt";
    save_policy(art.checkpoint_path, art.params);
    art.dataset_path = out_dir + "/rft_dataset.jsonl";
    std::ofstream ds(art.dataset_path, std::ios::trunc);
    if (!ds) throw std::runtime_error("cannot open " + art.dataset_path);
    for (const auto& pair : dataset) {
      nlohmann::json j;
      j["history"] = pair.history;
      j["state_key"] = pair.state_key;
      j["tokens"] = pair.tokens;
      ds << j.dump() << '\n';
    }
  }
  return art;
}

template <class Env>
TrainArtifacts run_training_impl(RunConfig cfg) {
  cfg.finalize();
  const Vocabulary& vocab = Env::vocabulary();
  const Featurizer feat{cfg.policy.hash_dim, vocab.size()};
  const Controllers ctl = controllers_from(cfg, vocab);
  const Env env_proto = EnvTraits<Env>::make(cfg.env);
  const std::string run_id = cfg.resolved_run_id();

  std::filesystem::create_directories(cfg.out_dir);
  TrainArtifacts art;
  art.trajectory_log_path = cfg.out_dir + "/trajectories.jsonl";
  art.metrics_path = cfg.out_dir + "/metrics.tsv";
  art.checkpoint_path = cfg.out_dir + "/policy_final.ckpt";

  PolicyParams params = initial_params(cfg, vocab);
  if (cfg.rft.enabled)
    params = rft_stage<Env>(cfg, params, cfg.out_dir, false).params;
  const PolicyParams ref_params = params;  // frozen KL reference

  std::vector<typename Env::Task> pool;
  for (int i = 0; i < cfg.env.task_pool; ++i)
    pool.push_back(EnvTraits<Env>::make_task(
        cfg.env, derive_seed(cfg.seed, {0x7a51u, static_cast<std::uint64_t>(i)})));

  TrajectoryLogWriter writer(art.trajectory_log_path);
  KHatTracker k_hat;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<OptimSample> batch;
    IterationMetrics m;
    m.iteration = iter;
    long tokens_success = 0, turns_success = 0;
    long accepted = 0, rejected = 0, window_fired = 0, budget_fired = 0;
    long strict_ok = 0;

    for (int slot = 0; slot < cfg.orch.rollout_batch; ++slot) {
      const auto& task = pool[static_cast<std::size_t>(
          (static_cast<long>(iter) * cfg.orch.rollout_batch + slot) %
          cfg.env.task_pool)];
      PolicyBundle bundle = bundle_from(cfg, vocab, params);
      const std::uint64_t seed_base = derive_seed(
          cfg.seed, {0xc011u, static_cast<std::uint64_t>(iter),
                     static_cast<std::uint64_t>(slot)});
      RolloutGroup group =
          collect_group(env_proto, task, cfg.orch, ctl, bundle, seed_base);

      for (const auto& traj : group.trajectories) {
        for (const auto& turn : traj.rejected_candidates)
          writer.write(record_from_turn(turn, run_id, iter, traj.task_id,
                                        traj.group_index, false));
        long traj_tokens = 0;
        for (const auto& turn : traj.turns) {
          writer.write(record_from_turn(turn, run_id, iter, traj.task_id,
                                        traj.group_index, traj.success));
          ++accepted;
          traj_tokens += static_cast<long>(turn.tokens.size());
          if (turn.tti_cause == TriggerCause::Window) ++window_fired;
          if (turn.tti_cause == TriggerCause::Budget) ++budget_fired;
          if (turn.parsed.strict_valid) ++strict_ok;
        }
        rejected += static_cast<long>(traj.rejected_candidates.size());
        ++m.trajectories;
        if (traj.success) {
          ++m.successes;
          tokens_success += traj_tokens;
          turns_success += static_cast<long>(traj.turns.size());
        }
        m.mean_total_reward += traj.total_reward;
        k_hat.push(static_cast<int>(traj.turns.size()));
      }
      append_group_samples<Env>(group, vocab, cfg.credit, &batch);
      if (static_cast<int>(batch.size()) >= cfg.orch.target_samples) break;
    }

    m.success_rate = m.trajectories
                         ? static_cast<double>(m.successes) / m.trajectories
                         : 0.0;
    if (m.successes > 0) {
      m.mean_tokens_per_success =
          static_cast<double>(tokens_success) / m.successes;
      m.mean_turns_per_success =
          static_cast<double>(turns_success) / m.successes;
    }
    if (accepted > 0) {
      m.truncation_fraction = static_cast<double>(budget_fired) / accepted;
      m.tti_trigger_rate = static_cast<double>(window_fired) / accepted;
      m.tds_regen_rate = static_cast<double>(rejected) / accepted;
      m.strict_valid_rate = static_cast<double>(strict_ok) / accepted;
    }
    if (m.trajectories) m.mean_total_reward /= m.trajectories;
    m.samples = static_cast<int>(batch.size());
    m.k_hat = k_hat.mean();
    m.rho_stale = staleness(cfg.orch, m.k_hat).rho_stale;

    // minibatched ascent; later chunks run against drifting parameters with
    // rollout-time log-probs, which is what the clipped ratios are for
    ObjectiveStats stats;
    double obj_sum = 0.0, kl_sum = 0.0, clip_sum = 0.0;
    int chunks = 0;
    for (std::size_t from = 0; from < batch.size();
         from += static_cast<std::size_t>(cfg.orch.update_batch)) {
      const std::size_t to = std::min(
          batch.size(), from + static_cast<std::size_t>(cfg.orch.update_batch));
      std::vector<OptimSample> chunk(batch.begin() + static_cast<std::ptrdiff_t>(from),
                                     batch.begin() + static_cast<std::ptrdiff_t>(to));
      params = policy_gradient_step(params, ref_params, feat, chunk, cfg.credit,
                                    cfg.lr, &stats);
      obj_sum += stats.objective;
      kl_sum += stats.mean_kl;
      clip_sum += stats.clip_fraction;
      ++chunks;
    }
    if (chunks > 0) {
      m.objective = obj_sum / chunks;
      m.mean_kl = kl_sum / chunks;
      m.clip_fraction = clip_sum / chunks;
    }
    art.metrics.push_back(m);
  }

  writer.flush();
  write_metrics_file(art.metrics_path, art.metrics);
  save_policy(art.checkpoint_path, params);
  art.params = std::move(params);
  return art;
}

}  // namespace detail

inline TrainArtifacts run_training(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.finalize();
  if (c.env.kind == "chain")
    return detail::run_training_impl<ChainEnv>(c);
  return detail::run_training_impl<ShopEnv>(c);
}

inline RftArtifacts run_rft(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.finalize();
  const auto base = [&]() -> PolicyParams {
    if (c.env.kind == "chain")
      return detail::initial_params(c, ChainEnv::vocabulary());
    return detail::initial_params(c, ShopEnv::vocabulary());
  }();
  if (c.env.kind == "chain")
    return detail::rft_stage<ChainEnv>(c, base, c.out_dir, true);
  return detail::rft_stage<ShopEnv>(c, base, c.out_dir, true);
}

// Strict-format validity rate over freshly collected trajectories; used to
// compare a base policy against its fine-tuned successor.
inline double measure_strict_validity(const RunConfig& cfg,
                                      const PolicyParams& params,
                                      int n_trajectories,
                                      std::uint64_t seed_label) {
  RunConfig c = cfg;
  c.finalize();
  if (c.env.kind != "shop")
    throw std::invalid_argument("measure_strict_validity: shop environment only");
  const Vocabulary& vocab = ShopEnv::vocabulary();
  Controllers ctl = detail::controllers_from(c, vocab);
  ctl.tti.enabled = false;
  ctl.tds.enabled = false;
  const ShopEnv env_proto = detail::EnvTraits<ShopEnv>::make(c.env);

  long turns = 0, strict_ok = 0;
  int collected = 0;
  for (int t = 0; collected < n_trajectories; ++t) {
    const auto task = detail::EnvTraits<ShopEnv>::make_task(
        c.env, derive_seed(c.seed, {0x3e1u, seed_label,
                                    static_cast<std::uint64_t>(t % c.env.task_pool)}));
    PolicyBundle bundle = detail::bundle_from(c, vocab, params);
    RolloutGroup group = collect_group(
        env_proto, task, c.orch, ctl, bundle,
        derive_seed(c.seed, {0x9b3u, seed_label, static_cast<std::uint64_t>(t)}));
    for (const auto& traj : group.trajectories) {
      if (collected >= n_trajectories) break;
      ++collected;
      for (const auto& turn : traj.turns) {
        ++turns;
        if (turn.parsed.strict_valid) ++strict_ok;
      }
    }
  }
  return turns ? static_cast<double>(strict_ok) / static_cast<double>(turns)
               : 0.0;
}

}  // namespace t2po
