#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/trace.hpp"

namespace smoe {

// Which routing choices an analysis counts: the router's first choice, its
// second choice, or any selected rank.
enum class ChoiceMode { first, second, either };

inline const char* to_string(ChoiceMode mode) {
  switch (mode) {
    case ChoiceMode::first: return "first";
    case ChoiceMode::second: return "second";
    case ChoiceMode::either: return "either";
  }
  return "?";
}

inline ChoiceMode parse_choice_mode(const std::string& s) {
  if (s == "first") return ChoiceMode::first;
  if (s == "second") return ChoiceMode::second;
  if (s == "either") return ChoiceMode::either;
  throw ConfigError("unknown choice mode '" + s + "' (want first|second|either)");
}

// Exact binomial coefficient; n small enough that uint64 never overflows here.
inline std::uint64_t binomial(unsigned n, unsigned k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  std::uint64_t c = 1;
  for (unsigned i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return c;
}

// Expected repetition rate under uniformly random assignment:
// 1/n for the first choice, 1 - C(n-k,k)/C(n,k) for set intersection.
inline double random_baseline(int n, int k, ChoiceMode mode) {
  if (n < 1 || k < 1 || k > n) throw ConfigError("random_baseline: need 1 <= k <= n");
  if (mode == ChoiceMode::first) return 1.0 / static_cast<double>(n);
  if (mode == ChoiceMode::either) {
    const std::uint64_t all = binomial(static_cast<unsigned>(n), static_cast<unsigned>(k));
    const std::uint64_t disjoint =
        binomial(static_cast<unsigned>(n - k), static_cast<unsigned>(k));
    return static_cast<double>(all - disjoint) / static_cast<double>(all);
  }
  throw ConfigError("random_baseline: mode must be first or either");
}

// Proportion of assignment events landing on each expert at one layer,
// normalized over events of the given mode, so entries sum to 1 and the
// uniform reference is 1/num_experts.
inline std::vector<double> expert_distribution(const RoutingTrace& trace, int layer,
                                               ChoiceMode mode) {
  if (layer < 0 || layer >= trace.n_layers)
    throw ConfigError("expert_distribution: layer out of range");
  if (mode == ChoiceMode::second && trace.top_k < 2)
    throw ConfigError("expert_distribution: second choice needs top_k >= 2");
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(trace.num_experts), 0);
  std::uint64_t total = 0;
  for (const auto& doc : trace.docs) {
    for (const auto& per_layer : doc.decisions) {
      const GateDecision& d = per_layer[static_cast<std::size_t>(layer)];
      if (mode == ChoiceMode::either) {
        for (const auto& c : d.choices) {
          ++counts[static_cast<std::size_t>(c.expert)];
          ++total;
        }
      } else {
        const std::size_t rank = mode == ChoiceMode::first ? 0 : 1;
        ++counts[static_cast<std::size_t>(d.choices[rank].expert)];
        ++total;
      }
    }
  }
  if (total == 0) throw DataError("expert_distribution: no data");
  std::vector<double> out(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i)
    out[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return out;
}

// Proportion of consecutive token pairs whose assignments repeat at one
// layer. Pairs never straddle document boundaries. mode=first compares the
// rank-1 expert; mode=either asks whether the choice sets intersect.
inline double repetition_rate(const RoutingTrace& trace, int layer, ChoiceMode mode) {
  if (layer < 0 || layer >= trace.n_layers)
    throw ConfigError("repetition_rate: layer out of range");
  if (mode == ChoiceMode::second)
    throw ConfigError("repetition_rate: mode must be first or either");
  std::uint64_t pairs = 0, repeats = 0;
  for (const auto& doc : trace.docs) {
    for (std::size_t t = 0; t + 1 < doc.decisions.size(); ++t) {
      const GateDecision& a = doc.decisions[t][static_cast<std::size_t>(layer)];
      const GateDecision& b = doc.decisions[t + 1][static_cast<std::size_t>(layer)];
      ++pairs;
      if (mode == ChoiceMode::first) {
        if (a.first() == b.first()) ++repeats;
      } else {
        bool hit = false;
        for (const auto& ca : a.choices) {
          if (b.contains(ca.expert)) {
            hit = true;
            break;
          }
        }
        if (hit) ++repeats;
      }
    }
  }
  if (pairs == 0) throw DataError("repetition_rate: no data");
  return static_cast<double>(repeats) / static_cast<double>(pairs);
}

// Per-layer repetition table with the random baselines as reference columns.
struct LayerProfile {
  struct Row {
    int layer;
    double first_rate;
    double either_rate;
  };
  std::vector<Row> rows;
  double baseline_first = 0.0;
  double baseline_either = 0.0;
};

inline LayerProfile layer_profile(const RoutingTrace& trace) {
  if (trace.empty()) throw DataError("layer_profile: no data");
  LayerProfile profile;
  profile.baseline_first = random_baseline(trace.num_experts, trace.top_k, ChoiceMode::first);
  profile.baseline_either = random_baseline(trace.num_experts, trace.top_k, ChoiceMode::either);
  for (int layer = 0; layer < trace.n_layers; ++layer) {
    profile.rows.push_back({layer, repetition_rate(trace, layer, ChoiceMode::first),
                            repetition_rate(trace, layer, ChoiceMode::either)});
  }
  return profile;
}

inline void write_layer_profile(const LayerProfile& p, std::ostream& out) {
  out << "layer\tfirst\teither\tbaseline_first\tbaseline_either\n";
  char buf[160];
  for (const auto& r : p.rows) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\t%.6f\t%.6f\n", r.layer, r.first_rate,
                  r.either_rate, p.baseline_first, p.baseline_either);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Colored-token export

enum class ColorFormat { ansi, html };

namespace detail {

inline int ansi_color(int expert) {
  static const int palette[16] = {196, 46,  21,  226, 201, 51,  208, 93,
                                  28,  124, 19,  130, 90,  167, 105, 240};
  return palette[expert % 16];
}

inline const char* html_color(int expert) {
  static const char* palette[16] = {"#e6194b", "#3cb44b", "#4363d8", "#ffe119",
                                    "#f032e6", "#42d4f4", "#f58231", "#911eb4",
                                    "#bfef45", "#800000", "#000075", "#9a6324",
                                    "#dcbeff", "#fabed4", "#aaffc3", "#a9a9a9"};
  return palette[expert % 16];
}

inline std::string html_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out.push_back(c);
  }
  return out;
}

}  // namespace detail

// Wraps each token in a marker colored by its rank-1 expert at the given
// layer; adjacent tokens with the same expert merge into one span. Stripping
// the markup returns the original text untouched.
inline std::string colorize_tokens(const RoutingTrace& trace, int layer,
                                   const std::vector<std::string>& tokens, ColorFormat format,
                                   std::size_t doc_index = 0) {
  if (layer < 0 || layer >= trace.n_layers)
    throw ConfigError("colorize_tokens: layer out of range");
  if (doc_index >= trace.docs.size()) throw DataError("colorize_tokens: doc index out of range");
  const auto& doc = trace.docs[doc_index];
  if (tokens.size() != doc.decisions.size())
    throw DataError("colorize_tokens: token count does not match trace extent");

  std::string out;
  if (format == ColorFormat::html)
    out += "<!DOCTYPE html>\n<html><body><pre>";
  std::size_t t = 0;
  while (t < tokens.size()) {
    const int expert = doc.decisions[t][static_cast<std::size_t>(layer)].first();
    std::string span;
    std::size_t end = t;
    while (end < tokens.size() &&
           doc.decisions[end][static_cast<std::size_t>(layer)].first() == expert) {
      span += tokens[end];
      ++end;
    }
    if (format == ColorFormat::ansi) {
      out += "\x1b[48;5;" + std::to_string(detail::ansi_color(expert)) + "m" + span + "\x1b[0m";
    } else {
      out += "<span style=\"background-color:";
      out += detail::html_color(expert);
      out += "\">" + detail::html_escape(span) + "</span>";
    }
    t = end;
  }
  if (format == ColorFormat::html) out += "</pre></body></html>\n";
  return out;
}

}  // namespace smoe
