#pragma once

// Structured-output validation and the format penalty.
//
// Agents must emit <think> ... </think> followed by <action> ... </action>.
// The strict validator requires exactly one of each tag, in order, with no
// stray tag occurrences. The relaxed parser salvages a command from the first
// <action> field when strict validation fails; when even that is missing, the
// fallback placeholder "invalid" is stored (a no-op in every environment).
// Strict failures cost a fixed reward deduction lambda_fmt.

#include <cstddef>
#include <string>
#include <vector>

#include "t2po/vocab.hpp"

namespace t2po {

inline constexpr const char* kFallbackCommand = "invalid";
inline constexpr double kDefaultFormatPenalty = 0.1;

struct ParsedAction {
  std::string raw;       // full turn text
  std::string thinking;  // content between the think tags, best effort
  std::string command;   // executable command, or the fallback placeholder
  bool strict_valid = false;
  bool relaxed_valid = false;
};

namespace detail {

inline std::size_t count_occurrences(const std::string& text,
                                     const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\n\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\n\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

// Exactly one of each structural tag, in the order <think> ... </think> ...
// <action> ... </action>.
inline bool validate_strict(const std::string& text) {
  for (const char* t : {tag::kThinkOpen, tag::kThinkClose, tag::kActionOpen,
                        tag::kActionClose})
    if (detail::count_occurrences(text, t) != 1) return false;
  const std::size_t to = text.find(tag::kThinkOpen);
  const std::size_t tc = text.find(tag::kThinkClose);
  const std::size_t ao = text.find(tag::kActionOpen);
  const std::size_t ac = text.find(tag::kActionClose);
  return to < tc && tc < ao && ao < ac;
}

// Strict extraction when possible, otherwise the first <action> span (up to
// the next tag or end of text). Empty spans fall back to the placeholder.
inline ParsedAction validate_relaxed(const std::string& text) {
  ParsedAction out;
  out.raw = text;

  const std::size_t to = text.find(tag::kThinkOpen);
  const std::size_t tc = text.find(tag::kThinkClose);
  if (to != std::string::npos && tc != std::string::npos && to < tc) {
    const std::size_t start = to + std::string(tag::kThinkOpen).size();
    out.thinking = text.substr(start, tc - start);
  }

  const std::size_t ao = text.find(tag::kActionOpen);
  if (ao == std::string::npos) {
    out.command = kFallbackCommand;
    return out;
  }
  out.relaxed_valid = true;
  out.strict_valid = validate_strict(text);

  const std::size_t span_begin = ao + std::string(tag::kActionOpen).size();
  std::size_t span_end = text.find('<', span_begin);  // next tag or end
  if (span_end == std::string::npos) span_end = text.size();
  out.command = detail::trim(text.substr(span_begin, span_end - span_begin));
  if (out.command.empty()) out.command = kFallbackCommand;
  return out;
}

// Subtracts the fixed penalty from the task reward when the strict format
// constraint failed. Rewards may go negative.
inline double apply_format_penalty(double reward, bool strict_valid,
                                   double lambda_fmt) {
  if (lambda_fmt < 0.0)
    throw std::invalid_argument("apply_format_penalty: lambda_fmt must be >= 0");
  return strict_valid ? reward : reward - lambda_fmt;
}

}  // namespace t2po
