#pragma once

// Post-hoc efficiency reporting. Every number here is recomputed from
// trajectory logs alone; rerunning the analysis on the same logs is
// byte-identical. Curves carry one entry per training iteration with an
// explicit null marker ("na") when a metric is undefined for that iteration.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "t2po/log.hpp"

namespace t2po {

struct HistogramBin {
  int lo = 0;  // inclusive
  int hi = 0;  // exclusive
  int count = 0;
};

struct EfficiencyReport {
  int iterations = 0;
  std::vector<HistogramBin> tokens_per_success_histogram;
  std::vector<std::optional<double>> success_rate_curve;
  std::vector<std::optional<double>> tokens_per_success_curve;
  std::vector<std::optional<double>> turns_per_success_curve;
  std::vector<std::optional<double>> truncation_fraction_curve;
  double tti_trigger_rate = 0.0;  // window-cause triggers / accepted turns
  double tds_regen_rate = 0.0;    // rejected candidates / accepted turns
  double truncation_fraction = 0.0;
  double overall_success_rate = 0.0;
  std::optional<double> mean_tokens_per_success;
  std::optional<double> mean_turns_per_success;
  int trajectories = 0;
  int successes = 0;
};

namespace detail {

struct TrajAgg {
  int iteration = 0;
  int accepted_turns = 0;
  long tokens = 0;
  bool success = false;
};

}  // namespace detail

inline EfficiencyReport report_from_records(
    const std::vector<TurnLogRecord>& records, int histogram_bin_width = 25) {
  if (histogram_bin_width < 1)
    throw std::invalid_argument("report_from_records: bin width must be >= 1");
  EfficiencyReport rep;
  if (records.empty()) return rep;

  std::map<std::tuple<int, std::string, int>, detail::TrajAgg> trajs;
  long accepted = 0, rejected = 0, window_fired = 0, budget_fired = 0;
  std::map<int, std::pair<long, long>> per_iter_trunc;  // iter -> (budget, accepted)
  int max_iteration = 0;

  for (const auto& r : records) {
    max_iteration = std::max(max_iteration, r.iteration);
    if (r.rejected) {
      ++rejected;
      continue;
    }
    ++accepted;
    if (r.tti_cause == "window") ++window_fired;
    if (r.tti_cause == "budget") ++budget_fired;
    auto& pt = per_iter_trunc[r.iteration];
    pt.first += r.tti_cause == "budget" ? 1 : 0;
    pt.second += 1;
    auto& agg = trajs[{r.iteration, r.task_id, r.group_index}];
    agg.iteration = r.iteration;
    agg.accepted_turns += 1;
    agg.tokens += static_cast<long>(r.tokens.size());
    if (r.success) agg.success = true;
  }

  rep.iterations = max_iteration + 1;
  rep.success_rate_curve.assign(rep.iterations, std::nullopt);
  rep.tokens_per_success_curve.assign(rep.iterations, std::nullopt);
  rep.turns_per_success_curve.assign(rep.iterations, std::nullopt);
  rep.truncation_fraction_curve.assign(rep.iterations, std::nullopt);

  std::map<int, std::tuple<int, int, long, long>> per_iter;  // trajs, succ, tok, turns
  long succ_tokens = 0, succ_turns = 0;
  for (const auto& [key, agg] : trajs) {
    auto& [n, s, tok, turns] = per_iter[agg.iteration];
    ++n;
    ++rep.trajectories;
    if (agg.success) {
      ++s;
      ++rep.successes;
      tok += agg.tokens;
      turns += agg.accepted_turns;
      succ_tokens += agg.tokens;
      succ_turns += agg.accepted_turns;
      const int bin = static_cast<int>(agg.tokens) / histogram_bin_width;
      if (static_cast<int>(rep.tokens_per_success_histogram.size()) <= bin)
        rep.tokens_per_success_histogram.resize(
            static_cast<std::size_t>(bin) + 1);
      auto& b = rep.tokens_per_success_histogram[static_cast<std::size_t>(bin)];
      b.lo = bin * histogram_bin_width;
      b.hi = (bin + 1) * histogram_bin_width;
      b.count += 1;
    }
  }
  // fill bin bounds for empty bins so the histogram is contiguous
  for (std::size_t i = 0; i < rep.tokens_per_success_histogram.size(); ++i) {
    rep.tokens_per_success_histogram[i].lo =
        static_cast<int>(i) * histogram_bin_width;
    rep.tokens_per_success_histogram[i].hi =
        (static_cast<int>(i) + 1) * histogram_bin_width;
  }

  for (const auto& [iter, stats] : per_iter) {
    const auto& [n, s, tok, turns] = stats;
    if (n > 0)
      rep.success_rate_curve[static_cast<std::size_t>(iter)] =
          static_cast<double>(s) / n;
    if (s > 0) {
      rep.tokens_per_success_curve[static_cast<std::size_t>(iter)] =
          static_cast<double>(tok) / s;
      rep.turns_per_success_curve[static_cast<std::size_t>(iter)] =
          static_cast<double>(turns) / s;
    }
  }
  for (const auto& [iter, pt] : per_iter_trunc) {
    if (pt.second > 0)
      rep.truncation_fraction_curve[static_cast<std::size_t>(iter)] =
          static_cast<double>(pt.first) / static_cast<double>(pt.second);
  }

  if (accepted > 0) {
    rep.tti_trigger_rate = static_cast<double>(window_fired) / accepted;
    rep.tds_regen_rate = static_cast<double>(rejected) / accepted;
    rep.truncation_fraction = static_cast<double>(budget_fired) / accepted;
  }
  if (rep.trajectories > 0)
    rep.overall_success_rate =
        static_cast<double>(rep.successes) / rep.trajectories;
  if (rep.successes > 0) {
    rep.mean_tokens_per_success =
        static_cast<double>(succ_tokens) / rep.successes;
    rep.mean_turns_per_success =
        static_cast<double>(succ_turns) / rep.successes;
  }
  return rep;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) {
  return v ? fmt_double(*v) : "na";
}

}  // namespace detail

// Plot-ready delimited outputs, one file per curve family.
inline void write_report(const EfficiencyReport& rep, const std::string& dir,
                         const std::string& label) {
  auto open = [&](const std::string& name) {
    std::ofstream out(dir + "/" + label + "_" + name);
    if (!out)
      throw std::runtime_error("write_report: cannot open " + dir + "/" + label +
                               "_" + name);
    return out;
  };
  {
    auto out = open("curves.tsv");
    out << "iteration\tsuccess_rate\ttokens_per_success\tturns_per_success\t"
           "truncation_fraction\n";
    for (int i = 0; i < rep.iterations; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      out << i << '\t' << detail::fmt_opt(rep.success_rate_curve[idx]) << '\t'
          << detail::fmt_opt(rep.tokens_per_success_curve[idx]) << '\t'
          << detail::fmt_opt(rep.turns_per_success_curve[idx]) << '\t'
          << detail::fmt_opt(rep.truncation_fraction_curve[idx]) << '\n';
    }
  }
  {
    auto out = open("tokens_histogram.tsv");
    out << "tokens_lo\ttokens_hi\tcount\n";
    for (const auto& b : rep.tokens_per_success_histogram)
      out << b.lo << '\t' << b.hi << '\t' << b.count << '\n';
  }
  {
    auto out = open("rates.tsv");
    out << "metric\tvalue\n";
    out << "trajectories\t" << rep.trajectories << '\n';
    out << "successes\t" << rep.successes << '\n';
    out << "overall_success_rate\t" << detail::fmt_double(rep.overall_success_rate)
        << '\n';
    out << "mean_tokens_per_success\t"
        << detail::fmt_opt(rep.mean_tokens_per_success) << '\n';
    out << "mean_turns_per_success\t"
        << detail::fmt_opt(rep.mean_turns_per_success) << '\n';
    out << "tti_trigger_rate\t" << detail::fmt_double(rep.tti_trigger_rate) << '\n';
    out << "tds_regen_rate\t" << detail::fmt_double(rep.tds_regen_rate) << '\n';
    out << "truncation_fraction\t" << detail::fmt_double(rep.truncation_fraction)
        << '\n';
  }
}

// Baseline-vs-controlled comparison (first report is the reference).
inline void write_comparison(const EfficiencyReport& baseline,
                             const EfficiencyReport& controlled,
                             const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_comparison: cannot open " + path);
  out << "metric\tbaseline\tcontrolled\trelative_change_pct\n";
  auto row = [&](const char* name, std::optional<double> b,
                 std::optional<double> c) {
    out << name << '\t' << detail::fmt_opt(b) << '\t' << detail::fmt_opt(c)
        << '\t';
    if (b && c && *b != 0.0)
      out << detail::fmt_double((*c - *b) / *b * 100.0);
    else
      out << "na";
    out << '\n';
  };
  row("overall_success_rate", baseline.overall_success_rate,
      controlled.overall_success_rate);
  row("mean_tokens_per_success", baseline.mean_tokens_per_success,
      controlled.mean_tokens_per_success);
  row("mean_turns_per_success", baseline.mean_turns_per_success,
      controlled.mean_turns_per_success);
}

}  // namespace t2po
