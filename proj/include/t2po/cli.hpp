#pragma once

// Command-line driver: subcommands train, rft, analyze, rollout.
//
// Every configuration knob is addressable three ways with the usual
// precedence (command line > T2PO_<SECTION>_<KEY> environment variable >
// config file > built-in default). Config files are flat INI-style sections,
// e.g.
//
//   [tti]
//   epsilon = 1e-4
//   l_max = 450
//
// Unknown keys are rejected. Exit codes: 0 success, 2 configuration error,
// 3 runtime error.

#include <algorithm>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "t2po/analysis.hpp"
#include "t2po/config.hpp"
#include "t2po/train.hpp"

namespace t2po::cli {

namespace detail {

inline std::string env_name(const std::string& section, const std::string& key) {
  std::string out = "T2PO_" + section + "_" + key;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return c == '.' ? '_' : static_cast<char>(std::toupper(c));
  });
  return out;
}

// Minimal INI reader for the sectioned config files:
//   [section]
//   key = value        # comment
// Returns "section.key" -> value in file order.
inline std::vector<std::pair<std::string, std::string>> read_config_file(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line, section;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config: bad section header at line " +
                                    std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected key = value at line " +
                                  std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: empty key at line " +
                                  std::to_string(lineno));
    out.emplace_back(section.empty() ? key : section + "." + key, value);
  }
  return out;
}

// Applies config-file values to options the command line and environment
// left untouched (precedence: flags > T2PO_* env vars > config > defaults).
// Unknown keys are rejected.
inline void apply_config_file(CLI::App* cmd, const std::string& path) {
  for (const auto& [key, value] : read_config_file(path)) {
    CLI::Option* op = cmd->get_option_no_throw("--" + key);
    if (op == nullptr)
      throw std::invalid_argument("config: unknown key '" + key + "' in " + path);
    if (op->count() > 0) continue;  // already set by flag or env var
    op->add_result(value);
    op->run_callback();
  }
}

struct ArmFlags {
  std::string tti;  // "", "on", "off"
  std::string tds;
  std::string f_norm = "mean_norm";
  std::string config_path;
};

// Binds every RunConfig field to --section.key options (config-file sections
// map onto the same names).
inline void bind_options(CLI::App* cmd, RunConfig& cfg, ArmFlags& arms) {
  auto opt = [&](const std::string& section, const std::string& key,
                 auto& field, const std::string& desc) {
    return cmd->add_option("--" + section + "." + key, field, desc)
        ->envname(env_name(section, key));
  };

  cmd->add_option("--run.seed,--seed", cfg.seed, "master seed for the whole run")
      ->envname(env_name("run", "seed"));
  cmd->add_option("--run.iterations,--iterations", cfg.iterations,
                  "training iterations")
      ->envname(env_name("run", "iterations"));
  cmd->add_option("--run.out,--out", cfg.out_dir, "output directory")
      ->envname(env_name("run", "out"));
  opt("run", "id", cfg.run_id, "run identifier stamped into logs");
  opt("run", "init_checkpoint", cfg.init_checkpoint,
      "start from this policy checkpoint");
  opt("run", "lr", cfg.lr, "policy-update learning rate");

  opt("env", "kind", cfg.env.kind, "environment: shop | chain");
  opt("env", "catalog_size", cfg.env.catalog_size, "products per catalog");
  opt("env", "max_turns", cfg.env.max_turns, "turn budget K per episode");
  opt("env", "task_pool", cfg.env.task_pool, "distinct tasks cycled in training");
  opt("env", "page_size", cfg.env.page_size, "products per results page");
  opt("env", "r_mismatch", cfg.env.r_mismatch, "category-mismatch reward factor");
  opt("env", "lambda_fmt", cfg.env.lambda_fmt, "format penalty");
  opt("env", "min_required_attributes", cfg.env.min_required_attributes,
      "instruction attribute minimum");
  opt("env", "max_required_attributes", cfg.env.max_required_attributes,
      "instruction attribute maximum");
  opt("env", "max_required_options", cfg.env.max_required_options,
      "instruction option maximum");
  opt("env", "chain_goal_len", cfg.env.chain_goal_len, "chain goal length");

  opt("signal", "alpha", cfg.signal.alpha, "entropy/confidence fusion weight");
  opt("signal", "top_j", cfg.signal.top_j, "confidence top-j");
  opt("signal", "prob_floor", cfg.signal.prob_floor, "log clamp floor");
  opt("signal", "m_floor", cfg.signal.m_floor, "geometric-mean clamp floor");

  opt("tti", "window_n", cfg.tti.window_n, "monitoring window size N");
  opt("tti", "l_min", cfg.tti.l_min, "minimum prefix length (0 = window_n + 1)");
  opt("tti", "l_max", cfg.tti.l_max, "thinking budget");
  opt("tti", "epsilon", cfg.tti.epsilon, "token-level tolerance");
  opt("tti", "enabled", cfg.tti.enabled, "token-level intervention on/off");

  opt("tds", "eta", cfg.tds.eta, "turn-level tolerance");
  opt("tds", "b_max", cfg.tds.b_max, "resampling budget per turn");
  opt("tds", "enabled", cfg.tds.enabled, "turn-level resampling on/off");

  opt("policy", "hash_dim", cfg.policy.hash_dim, "state-key hash features");
  opt("policy", "init_scale", cfg.policy.init_scale, "random init scale");
  opt("policy", "temperature", cfg.policy.temperature, "sampling temperature");
  opt("policy", "top_k", cfg.policy.top_k, "sampling top-k");
  opt("policy", "top_p", cfg.policy.top_p, "sampling top-p");

  opt("optimizer", "discount", cfg.credit.discount, "turn-level discount");
  opt("optimizer", "omega", cfg.credit.omega, "turn-advantage fusion weight");
  cmd->add_option("--optimizer.f_norm", arms.f_norm,
                  "group normalization: mean_norm | std_norm")
      ->envname(env_name("optimizer", "f_norm"))
      ->check(CLI::IsMember({"mean_norm", "std_norm"}));
  opt("optimizer", "clip_eps", cfg.credit.clip_eps, "surrogate clip range");
  opt("optimizer", "kl_coeff", cfg.credit.kl_coeff, "KL penalty coefficient");
  opt("optimizer", "group_size", cfg.credit.group_size, "rollout group size G");

  opt("orchestrator", "memory_window", cfg.orch.memory_window,
      "memory context window P");
  opt("orchestrator", "group_size", cfg.orch.group_size,
      "rollout group size G");
  opt("orchestrator", "target_samples", cfg.orch.target_samples,
      "sample cap per iteration");
  opt("orchestrator", "rollout_batch", cfg.orch.rollout_batch,
      "tasks per iteration");
  opt("orchestrator", "update_batch", cfg.orch.update_batch,
      "optimizer minibatch size");
  opt("orchestrator", "prompt_group", cfg.orch.prompt_group,
      "prompt group size n (staleness accounting)");
  opt("orchestrator", "response_budget", cfg.orch.response_budget,
      "sampled tokens per turn");

  opt("rft", "enabled", cfg.rft.enabled, "run RFT before RL in train");
  opt("rft", "threshold", cfg.rft.threshold, "trajectory score threshold");
  opt("rft", "epochs", cfg.rft.epochs, "NLL epochs (paper cap: 5)");
  opt("rft", "lr", cfg.rft.lr, "RFT learning rate");
  opt("rft", "rollout_tasks", cfg.rft.rollout_tasks, "tasks for RFT rollouts");

  // arm toggles (flag > env > config precedence is handled by the caller)
  cmd->add_option("--tti", arms.tti, "token-level intervention: on | off")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--tds", arms.tds, "turn-level resampling: on | off")
      ->check(CLI::IsMember({"on", "off"}));

  cmd->add_option("--config", arms.config_path,
                  "configuration file (INI sections)");
}

inline void apply_arm_flags(RunConfig& cfg, const ArmFlags& arms) {
  if (arms.tti == "on") cfg.tti.enabled = true;
  if (arms.tti == "off") cfg.tti.enabled = false;
  if (arms.tds == "on") cfg.tds.enabled = true;
  if (arms.tds == "off") cfg.tds.enabled = false;
  cfg.credit.f_norm = norm_mode_from_string(arms.f_norm);
}

inline int cmd_train(RunConfig cfg, std::ostream& out) {
  const TrainArtifacts art = run_training(cfg);
  const auto& last = art.metrics.back();
  out << "train: " << art.metrics.size() << " iterations, final success rate "
      << last.success_rate << ", strict-valid rate " << last.strict_valid_rate
      << "\n";
  out << "train: metrics " << art.metrics_path << "\n";
  out << "train: trajectories " << art.trajectory_log_path << "\n";
  out << "train: checkpoint " << art.checkpoint_path << "\n";
  return 0;
}

inline int cmd_rft(RunConfig cfg, const std::vector<double>& sweep,
                   std::ostream& out) {
  if (!sweep.empty()) {
    // dataset-size sweep only; no parameters are written
    cfg.finalize();
    for (double threshold : sweep) {
      RunConfig probe = cfg;
      probe.rft.threshold = threshold;
      try {
        RunConfig c = probe;
        c.rft.epochs = 0;
        const RftArtifacts art = run_rft(c);
        out << "rft-sweep: threshold " << threshold << " -> " << art.dataset_size
            << " pairs\n";
      } catch (const std::runtime_error&) {
        out << "rft-sweep: threshold " << threshold << " -> 0 pairs\n";
      }
    }
    return 0;
  }
  const RftArtifacts art = run_rft(cfg);
  out << "rft: " << art.dataset_size << " pairs, " << art.epochs_run
      << " epochs, nll " << art.pre_nll << " -> " << art.post_nll << "\n";
  out << "rft: checkpoint " << art.checkpoint_path << "\n";
  out << "rft: dataset " << art.dataset_path << "\n";
  return 0;
}

inline int cmd_analyze(const std::vector<std::string>& log_paths,
                       const std::string& out_dir, int bin_width,
                       std::ostream& out) {
  std::filesystem::create_directories(out_dir);
  std::vector<EfficiencyReport> reports;
  for (std::size_t i = 0; i < log_paths.size(); ++i) {
    const auto records = read_trajectory_log(log_paths[i]);
    EfficiencyReport rep = report_from_records(records, bin_width);
    const std::string label = "log" + std::to_string(i);
    write_report(rep, out_dir, label);
    out << "analyze: " << log_paths[i] << " -> " << label << "_*.tsv ("
        << rep.trajectories << " trajectories, success rate "
        << rep.overall_success_rate << ")\n";
    reports.push_back(std::move(rep));
  }
  if (reports.size() >= 2) {
    // first log is the reference (baseline) arm
    write_comparison(reports[0], reports[1], out_dir + "/comparison.tsv");
    out << "analyze: comparison " << out_dir << "/comparison.tsv\n";
  }
  return 0;
}

inline int cmd_rollout(RunConfig cfg, std::uint64_t task_seed,
                       std::ostream& out) {
  cfg.finalize();
  if (cfg.env.kind != "shop")
    throw std::invalid_argument("rollout: only the shop environment is supported");
  const Vocabulary& vocab = ShopEnv::vocabulary();
  Controllers c = t2po::detail::controllers_from(cfg, vocab);
  ShopEnv env(cfg.env.r_mismatch, cfg.env.page_size);
  const EpisodeTask task =
      make_shop_task(derive_seed(cfg.seed, {0x7a51u, task_seed}),
                     ShopTaskOptions{cfg.env.catalog_size, cfg.env.max_turns,
                                     cfg.env.min_required_attributes,
                                     cfg.env.max_required_attributes,
                                     cfg.env.max_required_options});
  OrchestratorConfig orch = cfg.orch;
  orch.group_size = 1;
  PolicyBundle bundle{t2po::detail::initial_params(cfg, vocab),
                      Featurizer{cfg.policy.hash_dim, vocab.size()},
                      SamplerConfig{cfg.policy.temperature, cfg.policy.top_k,
                                    cfg.policy.top_p, 0}};
  const RolloutGroup group = collect_group(
      env, task, orch, c, bundle, derive_seed(cfg.seed, {0xde8u, task_seed}));
  const Trajectory& traj = group.trajectories.front();

  out << "task: " << task.prompt << "\n";
  for (const auto& turn : traj.turns) {
    out << "-- turn " << turn.turn_index << " (attempts " << turn.tds_attempts + 1
        << ", phi " << turn.phi << ", gamma "
        << (turn.gamma ? std::to_string(*turn.gamma) : std::string("inf"))
        << ")\n";
    const auto& samples = turn.trace.samples();
    std::size_t si = 0;
    for (std::size_t i = 1; i < turn.tokens.size(); ++i) {
      const std::string& surf = vocab.surface(turn.tokens[i]);
      out << "   tok " << i << " '" << (surf == "\n" ? "\\n" : surf) << "'";
      if (si < samples.size()) {
        // forced queue tokens carry no sample
        const bool forced = turn.tti_fired && turn.tti_trigger_index >= 0 &&
                            static_cast<int>(i) > turn.tti_trigger_index &&
                            static_cast<int>(i) <=
                                turn.tti_trigger_index + 3;
        if (!forced) {
          const auto& s = samples[si++];
          char buf[64];
          std::snprintf(buf, sizeof(buf), " h=%.4f c=%.4f m=%.4f", s.h, s.c,
                        s.m);
          out << buf;
        } else {
          out << " (forced)";
        }
      }
      out << "\n";
    }
    if (turn.tti_fired)
      out << "   tti fired at t*=" << turn.tti_trigger_index << " ("
          << (turn.tti_cause == TriggerCause::Window ? "window" : "budget")
          << ")\n";
    out << "   command '" << turn.parsed.command << "' strict="
        << turn.parsed.strict_valid << " reward " << turn.reward << "\n";
  }
  out << "total reward " << traj.total_reward << ", success " << traj.success
      << "\n";
  return 0;
}

}  // namespace detail

// Returns the process exit code. Output goes to `out` so tests can run the
// CLI in-process.
inline int run(std::vector<std::string> args, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"uncertainty-guided exploration control for multi-turn RL"};
  app.require_subcommand(1);

  RunConfig train_cfg, rft_cfg, rollout_cfg;
  detail::ArmFlags train_arms, rft_arms, rollout_arms;

  CLI::App* train = app.add_subcommand("train", "run the RL training loop");
  detail::bind_options(train, train_cfg, train_arms);

  CLI::App* rft = app.add_subcommand("rft", "rejective fine-tuning cold start");
  detail::bind_options(rft, rft_cfg, rft_arms);
  std::vector<double> sweep;
  rft->add_option("--sweep", sweep,
                  "emit dataset sizes for these thresholds, no training");

  CLI::App* analyze =
      app.add_subcommand("analyze", "efficiency report from trajectory logs");
  std::vector<std::string> log_paths;
  std::string analyze_out = "analysis";
  int bin_width = 25;
  analyze->add_option("logs", log_paths, "trajectory log paths (baseline first)")
      ->required()
      ->expected(-1);
  analyze->add_option("--out", analyze_out, "report output directory");
  analyze->add_option("--bin-width", bin_width, "tokens-per-success bin width")
      ->check(CLI::PositiveNumber);

  CLI::App* rollout =
      app.add_subcommand("rollout", "single-episode debug with signal dump");
  detail::bind_options(rollout, rollout_cfg, rollout_arms);
  std::uint64_t task_seed = 0;
  rollout->add_option("--task-seed", task_seed, "task selector");

  // CLI11 wants argv-style reversed args
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      out << app.help();
      return 0;
    }
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) {
      if (!train_arms.config_path.empty())
        detail::apply_config_file(train, train_arms.config_path);
      detail::apply_arm_flags(train_cfg, train_arms);
      train_cfg.finalize();
      return detail::cmd_train(train_cfg, out);
    }
    if (rft->parsed()) {
      if (!rft_arms.config_path.empty())
        detail::apply_config_file(rft, rft_arms.config_path);
      detail::apply_arm_flags(rft_cfg, rft_arms);
      rft_cfg.finalize();
      return detail::cmd_rft(rft_cfg, sweep, out);
    }
    if (analyze->parsed())
      return detail::cmd_analyze(log_paths, analyze_out, bin_width, out);
    if (rollout->parsed()) {
      if (!rollout_arms.config_path.empty())
        detail::apply_config_file(rollout, rollout_arms.config_path);
      detail::apply_arm_flags(rollout_cfg, rollout_arms);
      rollout_cfg.finalize();
      return detail::cmd_rollout(rollout_cfg, task_seed, out);
    }
  } catch (const CLI::ParseError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return 3;
  }
  err << "config error: no subcommand given\n";
  return 2;
}

}  // namespace t2po::cli
