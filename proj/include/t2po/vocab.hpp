#pragma once

// Token vocabulary for the toy policy and its text rendering.
//
// Tokens are plain strings. The structural tags (<think>, </think>, <action>,
// </action>), the newline and the end-of-turn token must each be present
// exactly once. Rendering joins token surfaces with a small spacing rule so
// that command text comes out canonical: "search[red cotton]", "click[07]".

#include <cctype>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace t2po {

namespace tag {
inline constexpr const char* kThinkOpen = "<think>";
inline constexpr const char* kThinkClose = "</think>";
inline constexpr const char* kActionOpen = "<action>";
inline constexpr const char* kActionClose = "</action>";
inline constexpr const char* kNewline = "\n";
inline constexpr const char* kEnd = "<end>";
}  // namespace tag

class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens)
      : tokens_(std::move(tokens)) {
    for (int i = 0; i < size(); ++i) {
      if (!index_.emplace(tokens_[static_cast<std::size_t>(i)], i).second)
        throw std::invalid_argument("Vocabulary: duplicate token '" +
                                    tokens_[static_cast<std::size_t>(i)] + "'");
    }
    think_open_ = require(tag::kThinkOpen);
    think_close_ = require(tag::kThinkClose);
    action_open_ = require(tag::kActionOpen);
    action_close_ = require(tag::kActionClose);
    newline_ = require(tag::kNewline);
    end_ = require(tag::kEnd);
    if (size() < 8) throw std::invalid_argument("Vocabulary: size must be >= 8");
  }

  int size() const { return static_cast<int>(tokens_.size()); }

  const std::string& surface(int id) const {
    return tokens_.at(static_cast<std::size_t>(id));
  }

  int id_of(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end())
      throw std::invalid_argument("Vocabulary: unknown token '" + s + "'");
    return it->second;
  }

  bool contains(const std::string& s) const { return index_.count(s) > 0; }

  int think_open() const { return think_open_; }
  int think_close() const { return think_close_; }
  int action_open() const { return action_open_; }
  int action_close() const { return action_close_; }
  int newline() const { return newline_; }
  int end() const { return end_; }

  // Deterministic forced queue injected by TTI: </think>, \n, <action>.
  std::vector<int> tti_queue() const {
    return {think_close_, newline_, action_open_};
  }

  // Renders token ids to text. A single space separates two word tokens;
  // nothing is inserted after a token ending in '[', before "]", around tags
  // or the newline, or between consecutive digit tokens (so product ids like
  // "07" stay glued).
  std::string render(std::span<const int> ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::string& cur = surface(ids[i]);
      if (!out.empty() && i > 0 && needs_space(surface(ids[i - 1]), cur))
        out += ' ';
      out += cur;
    }
    return out;
  }

  // Default vocabulary for the synthetic shop environment (~64 tokens).
  static const Vocabulary& shop();
  // Minimal vocabulary for the chain environment used by fast tests.
  static const Vocabulary& chain();

  static const std::vector<std::string>& shop_categories();
  static const std::vector<std::string>& shop_attributes();
  static const std::map<std::string, std::vector<std::string>>& shop_option_fields();

 private:
  int require(const std::string& s) const {
    auto it = index_.find(s);
    if (it == index_.end())
      throw std::invalid_argument("Vocabulary: missing special token '" + s + "'");
    return it->second;
  }

  static bool is_digit_token(const std::string& s) {
    return s.size() == 1 && std::isdigit(static_cast<unsigned char>(s[0]));
  }

  static bool is_tagish(const std::string& s) {
    return !s.empty() && (s[0] == '<' || s == tag::kNewline);
  }

  static bool needs_space(const std::string& prev, const std::string& cur) {
    if (is_tagish(prev) || is_tagish(cur)) return false;
    if (!prev.empty() && prev.back() == '[') return false;
    if (cur == "]") return false;
    if (is_digit_token(prev) && is_digit_token(cur)) return false;
    return true;
  }

  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
  int think_open_ = -1, think_close_ = -1, action_open_ = -1,
      action_close_ = -1, newline_ = -1, end_ = -1;
};

inline const std::vector<std::string>& Vocabulary::shop_categories() {
  static const std::vector<std::string> v = {"shirt", "shoe", "lamp", "mug",
                                             "pillow"};
  return v;
}

inline const std::vector<std::string>& Vocabulary::shop_attributes() {
  static const std::vector<std::string> v = {
      "cotton",  "wool",     "leather",  "ceramic",  "modern",
      "vintage", "soft",     "washable", "handmade", "foldable",
      "portable", "classic", "sturdy",   "light"};
  return v;
}

inline const std::map<std::string, std::vector<std::string>>&
Vocabulary::shop_option_fields() {
  static const std::map<std::string, std::vector<std::string>> v = {
      {"color", {"red", "blue", "green", "black"}},
      {"size", {"small", "medium", "large"}},
      {"style", {"slim", "wide", "round"}}};
  return v;
}

inline const Vocabulary& Vocabulary::shop() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> t = {tag::kThinkOpen, tag::kThinkClose,
                                  tag::kNewline,   tag::kActionOpen,
                                  tag::kActionClose, tag::kEnd};
    t.insert(t.end(), {"search[", "click[", "]"});
    t.insert(t.end(), {"buy", "next >", "< prev", "back to search"});
    for (char d = '0'; d <= '9'; ++d) t.push_back(std::string(1, d));
    for (const auto& c : shop_categories()) t.push_back(c);
    for (const auto& a : shop_attributes()) t.push_back(a);
    for (const auto& [field, values] : shop_option_fields())
      for (const auto& val : values) t.push_back(val);
    // filler thinking words
    t.insert(t.end(), {"hmm", "check", "price", "page", "match", "option",
                       "target", "wait"});
    return Vocabulary(std::move(t));
  }();
  return vocab;
}

inline const Vocabulary& Vocabulary::chain() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> t = {tag::kThinkOpen, tag::kThinkClose,
                                  tag::kNewline,   tag::kActionOpen,
                                  tag::kActionClose, tag::kEnd};
    t.insert(t.end(), {"go[", "]"});
    for (char c = 'a'; c <= 'f'; ++c) t.push_back(std::string(1, c));
    t.insert(t.end(), {"hmm", "next"});
    return Vocabulary(std::move(t));
  }();
  return vocab;
}

}  // namespace t2po
