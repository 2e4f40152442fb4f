#pragma once

// Minimal multi-turn environment for fast property tests: reach a goal
// command sequence within the turn budget. Each turn the agent must issue the
// next goal command ("go[x]"); wrong or invalid commands waste the turn.
// Terminal reward 1 on completing the sequence, 0 otherwise.

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "t2po/common.hpp"
#include "t2po/shop.hpp"
#include "t2po/vocab.hpp"

namespace t2po {

struct ChainTask {
  std::string id;
  std::string prompt;
  std::vector<std::string> goal;  // commands, e.g. {"go[a]", "go[c]"}
  int max_turns = 6;
  std::uint64_t seed = 0;
};

inline ChainTask make_chain_task(std::uint64_t seed, int goal_len = 2,
                                 int max_turns = 6) {
  RngStream rng(derive_seed(seed, {0xc4a1u}));
  ChainTask task;
  task.seed = seed;
  task.max_turns = max_turns;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "chain-%016llx",
                  static_cast<unsigned long long>(seed));
    task.id = buf;
  }
  std::string letters;
  for (int i = 0; i < goal_len; ++i) {
    const char c = static_cast<char>('a' + rng.below(6));
    task.goal.push_back(std::string("go[") + c + "]");
    letters += c;
  }
  task.prompt = "walk the chain " + letters + " one step per turn";
  return task;
}

class ChainEnv {
 public:
  using Task = ChainTask;

  static const Vocabulary& vocabulary() { return Vocabulary::chain(); }

  Observation reset(const Task& task) {
    task_ = task;
    progress_ = 0;
    turn_ = 0;
    done_ = false;
    return observe();
  }

  StepResult step(const std::string& command) {
    if (done_) throw std::logic_error("ChainEnv::step called after episode end");
    ++turn_;
    StepResult res;
    if (command.rfind("go[", 0) == 0 && command.back() == ']') {
      if (command == task_.goal[static_cast<std::size_t>(progress_)]) {
        ++progress_;
        if (progress_ == static_cast<int>(task_.goal.size())) {
          res.reward = 1.0;
          done_ = true;
        }
      }
    } else {
      res.invalid_action = true;
    }
    if (!done_ && turn_ >= task_.max_turns) done_ = true;
    res.done = done_;
    res.obs = observe();
    return res;
  }

 private:
  Observation observe() const {
    Observation obs;
    obs.text = "chain step " + std::to_string(progress_) + " of " +
               std::to_string(task_.goal.size());
    obs.state_key = task_.id + "|i=" + std::to_string(progress_);
    for (char c = 'a'; c <= 'f'; ++c)
      obs.admissible_actions.push_back(std::string("go[") + c + "]");
    return obs;
  }

  Task task_;
  int progress_ = 0;
  int turn_ = 0;
  bool done_ = false;
};

}  // namespace t2po
