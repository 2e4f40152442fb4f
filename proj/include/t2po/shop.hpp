#pragma once

// Synthetic shopping environment with sparse terminal rewards.
//
// A deterministic pseudo-random catalog of products (category, attributes,
// option fields, price) is generated per task seed, together with an
// instruction that some exact-match target product is guaranteed to satisfy,
// so full reward is always reachable. The agent searches, browses paginated
// results, opens product pages, selects options and buys. Non-terminal
// rewards are 0; buying scores the selected product against the instruction:
//
//   r = r_type * (matched attributes + matched options + price ok)
//              / (|required attributes| + |required options| + 1)
//
// with r_type = 1 on category match and a small mismatch value otherwise.
// Unknown commands are no-ops flagged invalid; the environment never throws
// on agent input.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "t2po/common.hpp"
#include "t2po/vocab.hpp"

namespace t2po {

struct ShopProduct {
  std::string id;  // unique within a catalog, two digits
  std::string category;
  std::set<std::string> attributes;
  std::map<std::string, std::string> options;  // field -> value
  double price = 0.0;
};

struct ShopInstruction {
  std::set<std::string> required_attributes;              // non-empty
  std::map<std::string, std::string> required_options;    // may be empty
  double price_cap = 0.0;
  std::string target_category;

  void validate() const {
    if (required_attributes.empty())
      throw std::invalid_argument("ShopInstruction: required_attributes must be non-empty");
    if (!(price_cap > 0.0))
      throw std::invalid_argument("ShopInstruction: price_cap must be > 0");
  }
};

struct EpisodeTask {
  std::string id;
  std::string prompt;
  ShopInstruction instruction;
  std::vector<ShopProduct> catalog;
  int max_turns = 15;
  std::uint64_t seed = 0;
};

struct Observation {
  std::string text;
  std::string state_key;  // canonical hash input for anchor-state matching
  std::vector<std::string> admissible_actions;
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  bool invalid_action = false;
};

inline constexpr double kDefaultCategoryMismatch = 0.1;

// Instruction-match reward; exact arithmetic over set intersections.
inline double shop_reward(const ShopProduct& selected,
                          const std::map<std::string, std::string>& chosen_options,
                          const ShopInstruction& instr,
                          double r_mismatch = kDefaultCategoryMismatch) {
  const double r_type =
      selected.category == instr.target_category ? 1.0 : r_mismatch;
  int matched = 0;
  for (const auto& a : instr.required_attributes)
    if (selected.attributes.count(a)) ++matched;
  for (const auto& [field, value] : instr.required_options) {
    auto it = chosen_options.find(field);
    if (it != chosen_options.end() && it->second == value) ++matched;
  }
  if (selected.price <= instr.price_cap) ++matched;
  const int denom = static_cast<int>(instr.required_attributes.size()) +
                    static_cast<int>(instr.required_options.size()) + 1;
  return r_type * static_cast<double>(matched) / static_cast<double>(denom);
}

namespace detail {

inline std::string format_price(double p) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", p);
  return buf;
}

inline double round_cents(double p) { return std::round(p * 100.0) / 100.0; }

template <typename T>
inline std::vector<T> sample_distinct(RngStream& rng, std::vector<T> pool,
                                      std::size_t n) {
  std::vector<T> out;
  for (std::size_t i = 0; i < n && !pool.empty(); ++i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(pool.size()));
    out.push_back(pool[j]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return out;
}

inline std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string w;
  while (iss >> w) out.push_back(w);
  return out;
}

}  // namespace detail

struct ShopTaskOptions {
  int catalog_size = 50;
  int max_turns = 15;
  int min_required_attributes = 1;
  int max_required_attributes = 2;
  int max_required_options = 1;
};

// Deterministic task generator. The instruction is derived from a designated
// target product, so an exact match always exists in the catalog.
inline EpisodeTask make_shop_task(std::uint64_t seed,
                                  const ShopTaskOptions& opt = {}) {
  if (opt.catalog_size < 2 || opt.catalog_size > 100)
    throw std::invalid_argument("make_shop_task: catalog_size must be in [2,100]");
  RngStream rng(derive_seed(seed, {0x5107u}));
  const auto& cats = Vocabulary::shop_categories();
  const auto& attrs = Vocabulary::shop_attributes();
  const auto& fields = Vocabulary::shop_option_fields();

  EpisodeTask task;
  task.seed = seed;
  task.max_turns = opt.max_turns;
  {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "task-%016llx",
                  static_cast<unsigned long long>(seed));
    task.id = buf;
  }

  for (int i = 0; i < opt.catalog_size; ++i) {
    ShopProduct p;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "%02d", i);
    p.id = idbuf;
    p.category = cats[rng.below(cats.size())];
    const std::size_t n_attr = 3 + rng.below(4);  // 3..6
    for (const auto& a : detail::sample_distinct(rng, attrs, n_attr))
      p.attributes.insert(a);
    // 1..3 option fields, each with one value
    std::vector<std::string> field_names;
    for (const auto& [f, _] : fields) field_names.push_back(f);
    const std::size_t n_fields = 1 + rng.below(field_names.size());
    for (const auto& f : detail::sample_distinct(rng, field_names, n_fields)) {
      const auto& values = fields.at(f);
      p.options[f] = values[rng.below(values.size())];
    }
    p.price = detail::round_cents(5.0 + rng.uniform() * 55.0);
    task.catalog.push_back(std::move(p));
  }

  const auto& target = task.catalog[rng.below(task.catalog.size())];
  ShopInstruction instr;
  instr.target_category = target.category;
  {
    std::vector<std::string> pool(target.attributes.begin(),
                                  target.attributes.end());
    const int span = opt.max_required_attributes - opt.min_required_attributes;
    std::size_t want = static_cast<std::size_t>(
        opt.min_required_attributes +
        (span > 0 ? static_cast<int>(rng.below(span + 1)) : 0));
    want = std::min(want, pool.size());
    for (const auto& a : detail::sample_distinct(rng, pool, want))
      instr.required_attributes.insert(a);
  }
  if (opt.max_required_options > 0 && !target.options.empty()) {
    const std::size_t want = rng.below(opt.max_required_options + 1);
    std::vector<std::pair<std::string, std::string>> pool(
        target.options.begin(), target.options.end());
    for (const auto& [f, v] : detail::sample_distinct(rng, pool, want))
      instr.required_options[f] = v;
  }
  instr.price_cap = detail::round_cents(target.price + 1.0 + rng.uniform() * 14.0);
  instr.validate();
  task.instruction = instr;

  std::string prompt = "find me a " + instr.target_category + " with";
  for (const auto& a : instr.required_attributes) prompt += " " + a + ",";
  for (const auto& [f, v] : instr.required_options)
    prompt += " " + f + ": " + v + ",";
  prompt += " and price lower than " + detail::format_price(instr.price_cap) +
            " dollars";
  task.prompt = prompt;
  return task;
}

class ShopEnv {
 public:
  using Task = EpisodeTask;

  static const Vocabulary& vocabulary() { return Vocabulary::shop(); }

  explicit ShopEnv(double r_mismatch = kDefaultCategoryMismatch,
                   int page_size = 10)
      : r_mismatch_(r_mismatch), page_size_(page_size) {}

  Observation reset(const Task& task) {
    task_ = task;
    task_.instruction.validate();
    page_ = Page::Search;
    query_.clear();
    ranking_.clear();
    page_index_ = 0;
    product_ = -1;
    chosen_.clear();
    turn_ = 0;
    done_ = false;
    return observe();
  }

  StepResult step(const std::string& command) {
    if (done_) throw std::logic_error("ShopEnv::step called after episode end");
    ++turn_;
    StepResult res;
    res.reward = 0.0;

    if (command.rfind("search[", 0) == 0 && command.back() == ']' &&
        page_ == Page::Search) {
      query_ = detail::split_words(
          command.substr(7, command.size() - 8));
      rank_results();
      page_ = Page::Results;
      page_index_ = 0;
    } else if (command.rfind("click[", 0) == 0 && command.back() == ']') {
      const std::string target = command.substr(6, command.size() - 7);
      res.invalid_action = !handle_click(target, res);
    } else {
      res.invalid_action = true;  // unknown command: no-op
    }

    if (!done_ && turn_ >= task_.max_turns) done_ = true;  // budget exhausted
    res.done = done_;
    res.obs = observe();
    return res;
  }

  int turns_taken() const { return turn_; }

 private:
  enum class Page { Search, Results, Product, Terminal };

  void rank_results() {
    std::set<std::string> kw(query_.begin(), query_.end());
    std::vector<std::pair<int, int>> scored;  // (-score, index)
    for (std::size_t i = 0; i < task_.catalog.size(); ++i) {
      const auto& p = task_.catalog[i];
      int score = 0;
      for (const auto& w : kw) {
        if (p.attributes.count(w) || p.category == w) {
          ++score;
          continue;
        }
        for (const auto& [f, v] : p.options)
          if (v == w) {
            ++score;
            break;
          }
      }
      scored.emplace_back(-score, static_cast<int>(i));
    }
    std::sort(scored.begin(), scored.end());
    ranking_.clear();
    for (const auto& [neg, idx] : scored) ranking_.push_back(idx);
  }

  bool handle_click(const std::string& target, StepResult& res) {
    if (page_ == Page::Results) {
      if (target == "back to search") {
        page_ = Page::Search;
        return true;
      }
      if (target == "next >" && has_next_page()) {
        ++page_index_;
        return true;
      }
      if (target == "< prev" && page_index_ > 0) {
        --page_index_;
        return true;
      }
      for (int idx : visible()) {
        if (task_.catalog[static_cast<std::size_t>(idx)].id == target) {
          product_ = idx;
          chosen_.clear();
          page_ = Page::Product;
          return true;
        }
      }
      return false;
    }
    if (page_ == Page::Product) {
      const auto& prod = task_.catalog[static_cast<std::size_t>(product_)];
      if (target == "back to search") {
        page_ = Page::Search;
        product_ = -1;
        chosen_.clear();
        return true;
      }
      if (target == "< prev") {
        page_ = Page::Results;
        product_ = -1;
        chosen_.clear();
        return true;
      }
      if (target == "buy") {
        res.reward = shop_reward(prod, chosen_, task_.instruction, r_mismatch_);
        done_ = true;
        page_ = Page::Terminal;
        return true;
      }
      for (const auto& [field, value] : prod.options) {
        if (value == target) {
          chosen_[field] = value;
          return true;
        }
      }
      return false;
    }
    return false;  // clicks are meaningless on the search page
  }

  bool has_next_page() const {
    return (page_index_ + 1) * page_size_ < static_cast<int>(ranking_.size());
  }

  std::vector<int> visible() const {
    std::vector<int> out;
    const int from = page_index_ * page_size_;
    for (int i = from;
         i < std::min(from + page_size_, static_cast<int>(ranking_.size())); ++i)
      out.push_back(ranking_[static_cast<std::size_t>(i)]);
    return out;
  }

  static std::string title(const ShopProduct& p) {
    std::string t;
    for (const auto& a : p.attributes) t += a + " ";
    t += p.category;
    return t;
  }

  std::string join_query() const {
    std::string q;
    for (std::size_t i = 0; i < query_.size(); ++i)
      q += (i ? " " : "") + query_[i];
    return q;
  }

  Observation observe() const {
    Observation obs;
    const std::string fp = task_.id;
    switch (page_) {
      case Page::Search: {
        obs.text = "'search' [SEP] instruction: " + task_.prompt;
        obs.state_key = fp + "|search";
        obs.admissible_actions = {"search[<keywords>]"};
        break;
      }
      case Page::Results: {
        std::string t = "'back to search' [SEP] 'page " +
                        std::to_string(page_index_ + 1) + " (total results: " +
                        std::to_string(ranking_.size()) + ")'";
        obs.admissible_actions = {"click[back to search]"};
        if (has_next_page()) {
          t += " [SEP] 'next >'";
          obs.admissible_actions.push_back("click[next >]");
        }
        if (page_index_ > 0) {
          t += " [SEP] '< prev'";
          obs.admissible_actions.push_back("click[< prev]");
        }
        for (int idx : visible()) {
          const auto& p = task_.catalog[static_cast<std::size_t>(idx)];
          t += " [SEP] '" + p.id + "' [SEP] '" + title(p) + "' [SEP] '$" +
               detail::format_price(p.price) + "'";
          obs.admissible_actions.push_back("click[" + p.id + "]");
        }
        obs.text = t;
        obs.state_key = fp + "|results|q=" + join_query() + "|p=" +
                        std::to_string(page_index_);
        break;
      }
      case Page::Product: {
        const auto& p = task_.catalog[static_cast<std::size_t>(product_)];
        std::string t = "'" + title(p) + "' [SEP] '$" +
                        detail::format_price(p.price) + "' [SEP] 'category: " +
                        p.category + "'";
        obs.admissible_actions = {"click[buy]", "click[< prev]",
                                  "click[back to search]"};
        for (const auto& [field, value] : p.options) {
          t += " [SEP] '" + field + ": " + value + "'";
          obs.admissible_actions.push_back("click[" + value + "]");
        }
        std::string chosen_str;
        for (const auto& [f, v] : chosen_) chosen_str += f + ":" + v + ",";
        t += " [SEP] 'selected: " + (chosen_str.empty() ? "none" : chosen_str) +
             "' [SEP] 'buy'";
        obs.text = t;
        obs.state_key = fp + "|prod=" + p.id + "|opt=" + chosen_str;
        break;
      }
      case Page::Terminal: {
        obs.text = "'episode complete'";
        obs.state_key = fp + "|done";
        break;
      }
    }
    return obs;
  }

  double r_mismatch_;
  int page_size_;
  Task task_;
  Page page_ = Page::Search;
  std::vector<std::string> query_;
  std::vector<int> ranking_;
  int page_index_ = 0;
  int product_ = -1;
  std::map<std::string, std::string> chosen_;
  int turn_ = 0;
  bool done_ = false;
};

}  // namespace t2po
