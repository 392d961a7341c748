#pragma once

// Shared helpers for building synthetic routing traces with known ground
// truth. These generators are independent oracles: statistics planted here
// are recovered by the analytics under test.

#include <vector>

#include "smoe/rng.hpp"
#include "smoe/trace.hpp"

namespace smoe_test {

// Uniformly random routing: every (token, layer) draws a uniform k-subset of
// experts in uniform rank order.
inline smoe::RoutingTrace make_uniform_random_trace(int n_layers, int num_experts, int top_k,
                                                    std::size_t tokens_per_doc,
                                                    std::size_t n_docs, std::uint64_t seed) {
  smoe::RoutingTrace trace;
  trace.n_layers = n_layers;
  trace.num_experts = num_experts;
  trace.top_k = top_k;
  trace.docs.resize(n_docs);
  smoe::Rng root(seed);
  for (std::size_t di = 0; di < n_docs; ++di) {
    smoe::Rng rng = root.split(di);
    auto& doc = trace.docs[di];
    doc.decisions.assign(tokens_per_doc,
                         std::vector<smoe::GateDecision>(static_cast<std::size_t>(n_layers)));
    for (std::size_t t = 0; t < tokens_per_doc; ++t) {
      for (int l = 0; l < n_layers; ++l) {
        smoe::GateDecision d;
        std::vector<int> pool(static_cast<std::size_t>(num_experts));
        for (int e = 0; e < num_experts; ++e) pool[static_cast<std::size_t>(e)] = e;
        float remaining = 1.0f;
        for (int r = 0; r < top_k; ++r) {
          const std::size_t pick = static_cast<std::size_t>(rng.next_below(pool.size()));
          const float w = r + 1 == top_k ? remaining : remaining * 0.6f;
          d.choices.push_back({pool[pick], w});
          remaining -= w;
          pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        doc.decisions[t][static_cast<std::size_t>(l)] = std::move(d);
      }
    }
  }
  return trace;
}

// Markov-planted first-choice repetition: with probability rate[l] the next
// token keeps the previous first choice, otherwise it draws uniformly among
// the other experts, so the expected first-choice repetition rate at layer l
// is exactly rate[l]. Second choices are uniform among the rest.
inline smoe::RoutingTrace make_planted_trace(const std::vector<double>& first_repeat_rate,
                                             int num_experts, int top_k, std::size_t tokens,
                                             std::uint64_t seed) {
  const int n_layers = static_cast<int>(first_repeat_rate.size());
  smoe::RoutingTrace trace;
  trace.n_layers = n_layers;
  trace.num_experts = num_experts;
  trace.top_k = top_k;
  trace.docs.resize(1);
  auto& doc = trace.docs[0];
  doc.decisions.assign(tokens, std::vector<smoe::GateDecision>(static_cast<std::size_t>(n_layers)));
  smoe::Rng root(seed);
  for (int l = 0; l < n_layers; ++l) {
    smoe::Rng rng = root.split(static_cast<std::uint64_t>(l) + 1);
    int prev_first = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_experts)));
    for (std::size_t t = 0; t < tokens; ++t) {
      int first = prev_first;
      if (t == 0 || rng.next_double() >= first_repeat_rate[static_cast<std::size_t>(l)]) {
        int other = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(num_experts - 1)));
        if (other >= prev_first) ++other;
        first = t == 0 ? prev_first : other;
      }
      smoe::GateDecision d;
      d.choices.push_back({first, 0.6f});
      std::vector<int> pool;
      for (int e = 0; e < num_experts; ++e)
        if (e != first) pool.push_back(e);
      float remaining = 0.4f;
      for (int r = 1; r < top_k; ++r) {
        const std::size_t pick = static_cast<std::size_t>(rng.next_below(pool.size()));
        const float w = r + 1 == top_k ? remaining : remaining * 0.5f;
        d.choices.push_back({pool[pick], w});
        remaining -= w;
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      }
      doc.decisions[t][static_cast<std::size_t>(l)] = std::move(d);
      prev_first = first;
    }
  }
  return trace;
}

// Deterministic zig-zag stream with long single-expert runs: tokens come in
// runs of `run_len` per expert, cycling over experts. K=1.
inline smoe::RoutingTrace make_run_trace(int num_experts, std::size_t run_len,
                                         std::size_t total_tokens) {
  smoe::RoutingTrace trace;
  trace.n_layers = 1;
  trace.num_experts = num_experts;
  trace.top_k = 1;
  trace.docs.resize(1);
  auto& doc = trace.docs[0];
  doc.decisions.assign(total_tokens, std::vector<smoe::GateDecision>(1));
  for (std::size_t t = 0; t < total_tokens; ++t) {
    const int expert = static_cast<int>((t / run_len) % static_cast<std::size_t>(num_experts));
    doc.decisions[t][0].choices = {{expert, 1.0f}};
  }
  return trace;
}

}  // namespace smoe_test
