#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/moe.hpp"

namespace smoe {

// Ordered routing decisions over a token stream, grouped by document.
// decisions[token][layer] holds the GateDecision for that (token, layer);
// token indices are contiguous within a document.
struct RoutingTrace {
  int n_layers = 0;
  int num_experts = 0;
  int top_k = 0;

  struct Doc {
    std::string label;  // optional domain label
    std::vector<std::vector<GateDecision>> decisions;

    std::size_t tokens() const { return decisions.size(); }
  };
  std::vector<Doc> docs;

  std::size_t total_tokens() const {
    std::size_t t = 0;
    for (const auto& d : docs) t += d.tokens();
    return t;
  }

  bool empty() const { return total_tokens() == 0; }

  void validate() const {
    if (n_layers <= 0 || num_experts <= 0 || top_k <= 0 || top_k > num_experts)
      throw ConfigError("RoutingTrace: bad header");
    for (const auto& doc : docs) {
      for (const auto& per_layer : doc.decisions) {
        if (per_layer.size() != static_cast<std::size_t>(n_layers))
          throw DataError("RoutingTrace: token missing layers");
        for (const auto& d : per_layer) {
          if (d.top_k() != top_k) throw DataError("RoutingTrace: decision has wrong K");
          for (const auto& c : d.choices)
            if (c.expert < 0 || c.expert >= num_experts)
              throw DataError("RoutingTrace: expert id out of range");
        }
      }
    }
  }
};

namespace detail {

// Shortest text form that parses back to the same float (9 significant
// digits round-trip for binary32), so write(parse(write(x))) is stable.
inline std::string format_weight(float w) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(w));
  return buf;
}

}  // namespace detail

// One record line per (doc, token, layer, rank). The single header line
// carries the layer/expert/K summary; optional "doc" lines carry labels.
inline void write_trace(const RoutingTrace& trace, std::ostream& out) {
  trace.validate();
  out << "trace v1 n_layers=" << trace.n_layers << " num_experts=" << trace.num_experts
      << " top_k=" << trace.top_k << "\n";
  for (std::size_t di = 0; di < trace.docs.size(); ++di) {
    const auto& doc = trace.docs[di];
    if (!doc.label.empty()) out << "doc " << di << " " << doc.label << "\n";
    for (std::size_t t = 0; t < doc.decisions.size(); ++t) {
      for (int layer = 0; layer < trace.n_layers; ++layer) {
        const GateDecision& d = doc.decisions[t][static_cast<std::size_t>(layer)];
        for (std::size_t r = 0; r < d.choices.size(); ++r) {
          out << di << " " << t << " " << layer << " " << (r + 1) << " " << d.choices[r].expert
              << " " << detail::format_weight(d.choices[r].weight) << "\n";
        }
      }
    }
  }
}

inline void save_trace(const RoutingTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open trace file for writing: " + path);
  write_trace(trace, out);
}

inline RoutingTrace read_trace(std::istream& in) {
  RoutingTrace trace;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (!have_header) {
      std::string tag, version;
      if (!(ls >> tag >> version) || tag != "trace" || version != "v1")
        throw IoError("trace line " + std::to_string(line_no) + ": expected 'trace v1' header");
      std::string kv;
      while (ls >> kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
          throw IoError("trace header: expected key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const int value = std::stoi(kv.substr(eq + 1));
        if (key == "n_layers") trace.n_layers = value;
        else if (key == "num_experts") trace.num_experts = value;
        else if (key == "top_k") trace.top_k = value;
        else throw IoError("trace header: unknown key '" + key + "'");
      }
      have_header = true;
      continue;
    }
    if (line.rfind("doc ", 0) == 0) {
      std::string tag;
      std::size_t di;
      ls >> tag >> di;
      std::string label;
      std::getline(ls, label);
      if (!label.empty() && label.front() == ' ') label.erase(label.begin());
      if (di >= trace.docs.size()) trace.docs.resize(di + 1);
      trace.docs[di].label = label;
      continue;
    }
    std::size_t di, token;
    int layer, rank, expert;
    float weight;
    if (!(ls >> di >> token >> layer >> rank >> expert >> weight))
      throw IoError("trace line " + std::to_string(line_no) + ": bad record");
    if (di >= trace.docs.size()) trace.docs.resize(di + 1);
    auto& doc = trace.docs[di];
    if (token >= doc.decisions.size())
      doc.decisions.resize(token + 1,
                           std::vector<GateDecision>(static_cast<std::size_t>(trace.n_layers)));
    if (layer < 0 || layer >= trace.n_layers)
      throw IoError("trace line " + std::to_string(line_no) + ": layer out of range");
    auto& decision = doc.decisions[token][static_cast<std::size_t>(layer)];
    if (rank < 1 || rank > trace.top_k)
      throw IoError("trace line " + std::to_string(line_no) + ": rank out of range");
    if (decision.choices.size() < static_cast<std::size_t>(rank))
      decision.choices.resize(static_cast<std::size_t>(rank));
    decision.choices[static_cast<std::size_t>(rank - 1)] = {expert, weight};
  }
  if (!have_header) throw DataError("trace: no data");
  if (trace.empty()) throw DataError("trace: no data");
  trace.validate();
  return trace;
}

inline RoutingTrace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file: " + path);
  return read_trace(in);
}

}  // namespace smoe
