#pragma once

// Trajectory logs: one line-delimited JSON record per generated turn
// (accepted or TDS-rejected candidates alike). The schema is versioned; every
// analysis number is recomputable from these records alone.
//
// Schema v1 fields:
//   schema, run_id, iteration, task_id, group_index, turn_index, attempt,
//   rejected, state_key, tokens (ids), h, c, m (per sampled token),
//   tti_fired, tti_cause ("window"|"budget"|"none"), tti_trigger_index,
//   tds_attempts, gamma (null = first-turn sentinel, +inf), phi,
//   command, strict_valid, relaxed_valid, void, invalid_action,
//   env_reward, reward, old_log_prob, done, success
//
// Infinities are not representable in JSON, hence the null sentinel.

#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace t2po {

inline constexpr int kLogSchemaVersion = 1;

struct TurnLogRecord {
  std::string run_id;
  int iteration = 0;
  std::string task_id;
  int group_index = 0;
  int turn_index = 0;  // 1-based
  int attempt = 0;     // TDS attempt counter, 0 = first generation
  bool rejected = false;
  std::string state_key;
  std::vector<int> tokens;
  std::vector<double> h, c, m;
  bool tti_fired = false;
  std::string tti_cause = "none";
  int tti_trigger_index = -1;
  int tds_attempts = 0;
  std::optional<double> gamma;  // nullopt = first-turn +inf sentinel
  double phi = 0.0;
  std::string command;
  bool strict_valid = false;
  bool relaxed_valid = false;
  bool is_void = false;
  bool invalid_action = false;
  double env_reward = 0.0;
  double reward = 0.0;
  double old_log_prob = 0.0;
  bool done = false;
  bool success = false;
};

inline nlohmann::json to_json(const TurnLogRecord& r) {
  nlohmann::json j;
  j["schema"] = kLogSchemaVersion;
  j["run_id"] = r.run_id;
  j["iteration"] = r.iteration;
  j["task_id"] = r.task_id;
  j["group_index"] = r.group_index;
  j["turn_index"] = r.turn_index;
  j["attempt"] = r.attempt;
  j["rejected"] = r.rejected;
  j["state_key"] = r.state_key;
  j["tokens"] = r.tokens;
  j["h"] = r.h;
  j["c"] = r.c;
  j["m"] = r.m;
  j["tti_fired"] = r.tti_fired;
  j["tti_cause"] = r.tti_cause;
  j["tti_trigger_index"] = r.tti_trigger_index;
  j["tds_attempts"] = r.tds_attempts;
  if (r.gamma)
    j["gamma"] = *r.gamma;
  else
    j["gamma"] = nullptr;
  j["phi"] = r.phi;
  j["command"] = r.command;
  j["strict_valid"] = r.strict_valid;
  j["relaxed_valid"] = r.relaxed_valid;
  j["void"] = r.is_void;
  j["invalid_action"] = r.invalid_action;
  j["env_reward"] = r.env_reward;
  j["reward"] = r.reward;
  j["old_log_prob"] = r.old_log_prob;
  j["done"] = r.done;
  j["success"] = r.success;
  return j;
}

inline TurnLogRecord record_from_json(const nlohmann::json& j) {
  if (!j.contains("schema") || j.at("schema").get<int>() != kLogSchemaVersion)
    throw std::runtime_error("trajectory log: unsupported schema version");
  TurnLogRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.iteration = j.at("iteration").get<int>();
  r.task_id = j.at("task_id").get<std::string>();
  r.group_index = j.at("group_index").get<int>();
  r.turn_index = j.at("turn_index").get<int>();
  r.attempt = j.at("attempt").get<int>();
  r.rejected = j.at("rejected").get<bool>();
  r.state_key = j.at("state_key").get<std::string>();
  r.tokens = j.at("tokens").get<std::vector<int>>();
  r.h = j.at("h").get<std::vector<double>>();
  r.c = j.at("c").get<std::vector<double>>();
  r.m = j.at("m").get<std::vector<double>>();
  r.tti_fired = j.at("tti_fired").get<bool>();
  r.tti_cause = j.at("tti_cause").get<std::string>();
  r.tti_trigger_index = j.at("tti_trigger_index").get<int>();
  r.tds_attempts = j.at("tds_attempts").get<int>();
  if (j.at("gamma").is_null())
    r.gamma = std::nullopt;
  else
    r.gamma = j.at("gamma").get<double>();
  r.phi = j.at("phi").get<double>();
  r.command = j.at("command").get<std::string>();
  r.strict_valid = j.at("strict_valid").get<bool>();
  r.relaxed_valid = j.at("relaxed_valid").get<bool>();
  r.is_void = j.at("void").get<bool>();
  r.invalid_action = j.at("invalid_action").get<bool>();
  r.env_reward = j.at("env_reward").get<double>();
  r.reward = j.at("reward").get<double>();
  r.old_log_prob = j.at("old_log_prob").get<double>();
  r.done = j.at("done").get<bool>();
  r.success = j.at("success").get<bool>();
  return r;
}

// Append-only serialized sink; records are written in collection order.
class TrajectoryLogWriter {
 public:
  explicit TrajectoryLogWriter(const std::string& path)
      : out_(path, std::ios::trunc) {
    if (!out_)
      throw std::runtime_error("TrajectoryLogWriter: cannot open " + path);
  }

  void write(const TurnLogRecord& r) { out_ << to_json(r).dump() << '\n'; }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

inline std::vector<TurnLogRecord> read_trajectory_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_trajectory_log: cannot open " + path);
  std::vector<TurnLogRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("trajectory log " + path + ": bad record at line " +
                               std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace t2po
