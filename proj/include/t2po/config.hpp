#pragma once

// Run configuration: one nested struct covering every module plus run
// metadata. The CLI binds these fields to flat, human-editable config file
// sections (see cli.hpp); validation happens here before any run starts and
// reports the offending field by name.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "t2po/credit.hpp"
#include "t2po/policy.hpp"
#include "t2po/rollout.hpp"
#include "t2po/shop.hpp"
#include "t2po/signal.hpp"
#include "t2po/tds.hpp"
#include "t2po/tti.hpp"

namespace t2po {

struct EnvConfig {
  std::string kind = "shop";  // shop | chain
  int catalog_size = 50;
  int max_turns = 15;
  int task_pool = 6;   // distinct tasks cycled during training
  int page_size = 10;
  double r_mismatch = kDefaultCategoryMismatch;
  double lambda_fmt = kDefaultFormatPenalty;
  int min_required_attributes = 1;
  int max_required_attributes = 2;
  int max_required_options = 1;
  int chain_goal_len = 2;

  void validate() const {
    if (kind != "shop" && kind != "chain")
      throw std::invalid_argument("env.kind: must be 'shop' or 'chain'");
    if (catalog_size < 2 || catalog_size > 100)
      throw std::invalid_argument("env.catalog_size: must be in [2,100]");
    if (max_turns < 1) throw std::invalid_argument("env.max_turns: must be >= 1");
    if (task_pool < 1) throw std::invalid_argument("env.task_pool: must be >= 1");
    if (page_size < 1) throw std::invalid_argument("env.page_size: must be >= 1");
    if (!(r_mismatch >= 0.0 && r_mismatch <= 1.0))
      throw std::invalid_argument("env.r_mismatch: must be in [0,1]");
    if (lambda_fmt < 0.0)
      throw std::invalid_argument("env.lambda_fmt: must be >= 0");
    if (min_required_attributes < 1 ||
        max_required_attributes < min_required_attributes)
      throw std::invalid_argument("env.required_attributes: bad range");
    if (max_required_options < 0)
      throw std::invalid_argument("env.max_required_options: must be >= 0");
    if (chain_goal_len < 1)
      throw std::invalid_argument("env.chain_goal_len: must be >= 1");
  }
};

struct PolicyConfig {
  int hash_dim = 128;
  double init_scale = 0.01;
  double temperature = 0.6;
  int top_k = 20;
  double top_p = 0.95;

  void validate() const {
    if (hash_dim < 8) throw std::invalid_argument("policy.hash_dim: must be >= 8");
    if (!(init_scale >= 0.0))
      throw std::invalid_argument("policy.init_scale: must be >= 0");
    SamplerConfig s{temperature, top_k, top_p, 0};
    try {
      s.validate();
    } catch (const std::exception& e) {
      throw std::invalid_argument(std::string("policy sampler: ") + e.what());
    }
  }
};

struct RftConfig {
  bool enabled = false;       // run RFT before RL inside cmd_train
  double threshold = -0.25;   // keep trajectories with total reward above this
  int epochs = 5;             // one full-batch NLL step per epoch, cap per config
  double lr = 0.05;
  int rollout_tasks = 16;     // tasks collected for the RFT dataset

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("rft.epochs: must be >= 0");
    if (!(lr >= 0.0)) throw std::invalid_argument("rft.lr: must be >= 0");
    if (rollout_tasks < 1)
      throw std::invalid_argument("rft.rollout_tasks: must be >= 1");
  }
};

struct RunConfig {
  // run metadata
  std::uint64_t seed = 1;
  int iterations = 200;
  std::string out_dir = "out";
  std::string run_id;  // defaults to "run-<seed>"
  std::string init_checkpoint;  // optional starting parameters
  double lr = 0.1;              // policy-update learning rate

  EnvConfig env;
  SignalConfig signal;
  TtiConfig tti;  // tti.l_min == 0 requests the auto value window_n + 1
  TdsConfig tds;
  PolicyConfig policy;
  CreditConfig credit;
  OrchestratorConfig orch;
  RftConfig rft;

  std::string resolved_run_id() const {
    return run_id.empty() ? "run-" + std::to_string(seed) : run_id;
  }

  // Resolves derived defaults, then validates every section; throws
  // std::invalid_argument naming the offending field.
  void finalize() {
    if (tti.l_min == 0) tti.l_min = tti.window_n + 1;
    if (iterations < 1) throw std::invalid_argument("run.iterations: must be >= 1");
    if (!(lr >= 0.0)) throw std::invalid_argument("run.lr: must be >= 0");
    env.validate();
    signal.validate();
    // queue ids are attached per vocabulary at run time; validate the rest
    TtiConfig probe = tti;
    probe.queue = {0, 1, 2};
    probe.validate();
    tds.validate();
    policy.validate();
    credit.validate();
    orch.validate();
    rft.validate();
    if (tti.l_max + 8 > orch.response_budget)
      throw std::invalid_argument(
          "tti.l_max: must leave room for the action segment within "
          "orchestrator.response_budget");
    if (credit.group_size != orch.group_size)
      throw std::invalid_argument(
          "credit.group_size and orchestrator.group_size must agree");
  }
};

}  // namespace t2po
