#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/tensor.hpp"

namespace smoe {

// One ranked routing decision for one token at one layer. Rank 1 is the
// router's first choice; weights are the renormalized softmax over the
// selected logits and sum to 1.
struct GateChoice {
  int expert = 0;
  float weight = 0.0f;
};

struct GateDecision {
  std::vector<GateChoice> choices;  // rank order: choices[0] is rank 1

  int top_k() const { return static_cast<int>(choices.size()); }
  int first() const { return choices.front().expert; }
  bool contains(int expert) const {
    for (const auto& c : choices)
      if (c.expert == expert) return true;
    return false;
  }
};

template <typename S>
struct RouterWeights {
  Tensor<S> w_g;  // [dim x num_experts]
};

// SwiGLU expert: (silu(x*w1) .* (x*w3)) * w2.
template <typename S>
struct ExpertWeights {
  Tensor<S> w1;  // [dim x hidden_dim]
  Tensor<S> w3;  // [dim x hidden_dim]
  Tensor<S> w2;  // [hidden_dim x dim]
};

template <typename S>
struct MoELayer {
  RouterWeights<S> router;
  std::vector<ExpertWeights<S>> experts;
  int top_k = 1;

  int num_experts() const { return static_cast<int>(experts.size()); }
  std::size_t dim() const { return router.w_g.size(0); }
  std::size_t hidden_dim() const { return experts.front().w1.size(1); }

  void validate() const {
    const int n = num_experts();
    if (n == 0) throw ConfigError("MoELayer: no experts");
    if (top_k < 1 || top_k > n) throw ConfigError("MoELayer: top_k out of range");
    if (router.w_g.rank() != 2 || router.w_g.size(1) != static_cast<std::size_t>(n))
      throw ShapeError("MoELayer: router shape does not match expert count");
    const std::size_t d = dim(), h = hidden_dim();
    for (const auto& e : experts) {
      if (e.w1.shape() != std::vector<std::size_t>{d, h} ||
          e.w3.shape() != std::vector<std::size_t>{d, h} ||
          e.w2.shape() != std::vector<std::size_t>{h, d})
        throw ShapeError("MoELayer: inconsistent expert shapes");
    }
  }
};

// Indices of the k largest entries, ties broken toward the lowest index.
// Returned in rank order (descending value, ascending index on ties).
template <typename S>
std::vector<int> top_k_indices(const S* logits, std::size_t n, int k) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

// Keeps the top-k logits and masks the rest to -inf, so a following softmax
// assigns them weight exactly 0.
template <typename S>
Tensor<S> top_k_mask(const Tensor<S>& logits, int k) {
  if (logits.rank() != 1) throw ShapeError("top_k_mask: expected rank-1 logits");
  const std::size_t n = logits.numel();
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw ConfigError("top_k_mask: k out of range [1, n]");
  ensure_finite(logits, "top_k_mask");
  Tensor<S> out = Tensor<S>::full({n}, neg_inf<S>());
  for (int i : top_k_indices(logits.data(), n, k)) out[static_cast<std::size_t>(i)] = logits[static_cast<std::size_t>(i)];
  return out;
}

// Full-precision gate result used inside forward/backward paths; the public
// GateDecision record narrows weights to float.
template <typename S>
struct GateResult {
  std::vector<int> experts;  // rank order
  std::vector<S> weights;    // softmax over the selected logits, sums to 1

  GateDecision to_decision() const {
    GateDecision d;
    d.choices.reserve(experts.size());
    for (std::size_t i = 0; i < experts.size(); ++i)
      d.choices.push_back({experts[i], static_cast<float>(weights[i])});
    return d;
  }
};

// Softmax restricted to the k selected coordinates:
// weight_i = exp(l_i) / sum_{j in TopK} exp(l_j), in rank order.
template <typename S>
GateResult<S> gate_select(const S* logits, std::size_t n, int k) {
  GateResult<S> g;
  g.experts = top_k_indices(logits, n, k);
  S mx = logits[static_cast<std::size_t>(g.experts[0])];
  S sum = S(0);
  g.weights.resize(g.experts.size());
  for (std::size_t i = 0; i < g.experts.size(); ++i) {
    g.weights[i] = std::exp(logits[static_cast<std::size_t>(g.experts[i])] - mx);
    sum += g.weights[i];
  }
  for (S& w : g.weights) w /= sum;
  return g;
}

// G(x): route one token. Equals softmax(top_k_mask(x*w_g, k)) restricted to
// its k finite coordinates.
template <typename S>
GateDecision gate(const Tensor<S>& x, const RouterWeights<S>& router, int k) {
  if (x.rank() != 1 || x.numel() != router.w_g.size(0))
    throw ShapeError("gate: input does not match router");
  const std::size_t n = router.w_g.size(1);
  if (k < 1 || static_cast<std::size_t>(k) > n) throw ConfigError("gate: k out of range");
  Tensor<S> xm(std::vector<std::size_t>{1, x.numel()}, x.raw());
  Tensor<S> logits = matmul(xm, router.w_g);  // throws NumericError if non-finite
  return gate_select(logits.data(), n, k).to_decision();
}

// SwiGLU expert applied to a single token [dim] or a batch [tokens x dim].
template <typename S>
Tensor<S> swiglu_expert(const Tensor<S>& x, const ExpertWeights<S>& e) {
  const bool vector_in = x.rank() == 1;
  Tensor<S> xm = vector_in ? Tensor<S>(std::vector<std::size_t>{1, x.numel()}, x.raw()) : x;
  if (xm.rank() != 2 || xm.size(1) != e.w1.size(0))
    throw ShapeError("swiglu_expert: input does not match expert weights");
  Tensor<S> h1 = matmul(xm, e.w1);
  Tensor<S> h3 = matmul(xm, e.w3);
  Tensor<S> u = silu(h1);
  for (std::size_t i = 0; i < u.numel(); ++i) u[i] *= h3[i];
  Tensor<S> y = matmul(u, e.w2);
  if (vector_in) return Tensor<S>(std::vector<std::size_t>{y.numel()}, y.raw());
  return y;
}

// Per-expert token assignment lists for grouped execution and EP placement.
struct DispatchPlan {
  struct Assignment {
    std::size_t token = 0;
    int rank = 0;  // 1-based choice rank
    float weight = 0.0f;
  };
  std::vector<std::vector<Assignment>> per_expert;

  std::size_t total_assignments() const {
    std::size_t t = 0;
    for (const auto& v : per_expert) t += v.size();
    return t;
  }
};

inline DispatchPlan build_dispatch_plan(const std::vector<GateDecision>& decisions, int n) {
  DispatchPlan plan;
  plan.per_expert.resize(static_cast<std::size_t>(n));
  for (std::size_t t = 0; t < decisions.size(); ++t) {
    const auto& d = decisions[t];
    for (std::size_t r = 0; r < d.choices.size(); ++r) {
      const int e = d.choices[r].expert;
      if (e < 0 || e >= n) throw DataError("build_dispatch_plan: expert id out of range");
      plan.per_expert[static_cast<std::size_t>(e)].push_back(
          {t, static_cast<int>(r) + 1, d.choices[r].weight});
    }
  }
  return plan;
}

// Reference path: evaluates every expert for every token and weights by the
// sparse gate (zero for unselected experts).
template <typename S>
std::pair<Tensor<S>, std::vector<GateDecision>> moe_forward_dense(const Tensor<S>& x,
                                                                  const MoELayer<S>& layer) {
  if (x.rank() != 2 || x.size(1) != layer.dim())
    throw ShapeError("moe_forward_dense: input does not match layer dim");
  const std::size_t tokens = x.size(0);
  const int n = layer.num_experts();
  Tensor<S> logits = matmul(x, layer.router.w_g);
  Tensor<S> y({tokens, x.size(1)});
  std::vector<GateDecision> decisions(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    GateResult<S> g = gate_select(logits.row(t), static_cast<std::size_t>(n), layer.top_k);
    decisions[t] = g.to_decision();
    Tensor<S> xt(std::vector<std::size_t>{x.size(1)});
    std::copy(x.row(t), x.row(t) + x.size(1), xt.data());
    for (int e = 0; e < n; ++e) {
      S w = S(0);
      for (std::size_t r = 0; r < g.experts.size(); ++r)
        if (g.experts[r] == e) w = g.weights[r];
      if (w == S(0)) continue;
      Tensor<S> oe = swiglu_expert(xt, layer.experts[static_cast<std::size_t>(e)]);
      S* yr = y.row(t);
      for (std::size_t i = 0; i < oe.numel(); ++i) yr[i] += w * oe[i];
    }
  }
  ensure_finite(y, "moe_forward_dense");
  return {std::move(y), std::move(decisions)};
}

// Intermediates kept by the grouped path so a backward pass can reuse them.
template <typename S>
struct MoeForwardCache {
  Tensor<S> router_logits;               // [tokens x n]
  std::vector<GateResult<S>> gates;      // per token
  DispatchPlan plan;
  std::vector<Tensor<S>> expert_h1;      // per expert, pre-silu [m_e x hidden]
  std::vector<Tensor<S>> expert_h3;      // per expert [m_e x hidden]
  std::vector<Tensor<S>> expert_out;     // per expert, unweighted [m_e x dim]
};

// Grouped execution: gather each expert's assigned rows into one contiguous
// block, run one batched SwiGLU per expert, scatter weighted results back.
// Scatter runs in ascending expert order, which matches the dense path's
// accumulation order exactly.
template <typename S>
Tensor<S> moe_forward_grouped(const Tensor<S>& x, const MoELayer<S>& layer,
                              MoeForwardCache<S>* cache = nullptr,
                              std::vector<GateDecision>* decisions_out = nullptr) {
  if (x.rank() != 2 || x.size(1) != layer.dim())
    throw ShapeError("moe_forward_grouped: input does not match layer dim");
  const std::size_t tokens = x.size(0);
  const std::size_t d = x.size(1);
  const int n = layer.num_experts();

  Tensor<S> logits = matmul(x, layer.router.w_g);
  std::vector<GateResult<S>> gates(tokens);
  std::vector<GateDecision> decisions(tokens);
  for (std::size_t t = 0; t < tokens; ++t) {
    gates[t] = gate_select(logits.row(t), static_cast<std::size_t>(n), layer.top_k);
    decisions[t] = gates[t].to_decision();
  }
  DispatchPlan plan = build_dispatch_plan(decisions, n);

  Tensor<S> y({tokens, d});
  if (cache) {
    cache->router_logits = logits;
    cache->gates = gates;
    cache->plan = plan;
    cache->expert_h1.assign(static_cast<std::size_t>(n), Tensor<S>());
    cache->expert_h3.assign(static_cast<std::size_t>(n), Tensor<S>());
    cache->expert_out.assign(static_cast<std::size_t>(n), Tensor<S>());
  }
  for (int e = 0; e < n; ++e) {
    const auto& rows = plan.per_expert[static_cast<std::size_t>(e)];
    if (rows.empty()) continue;
    Tensor<S> gathered({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r)
      std::copy(x.row(rows[r].token), x.row(rows[r].token) + d, gathered.row(r));
    const auto& ew = layer.experts[static_cast<std::size_t>(e)];
    Tensor<S> h1 = matmul(gathered, ew.w1);
    Tensor<S> h3 = matmul(gathered, ew.w3);
    Tensor<S> u = silu(h1);
    for (std::size_t i = 0; i < u.numel(); ++i) u[i] *= h3[i];
    Tensor<S> oe = matmul(u, ew.w2);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t t = rows[r].token;
      // Rank lookup keeps the weight in full precision.
      const S w = gates[t].weights[static_cast<std::size_t>(rows[r].rank - 1)];
      S* yr = y.row(t);
      const S* orow = oe.row(r);
      for (std::size_t i = 0; i < d; ++i) yr[i] += w * orow[i];
    }
    if (cache) {
      cache->expert_h1[static_cast<std::size_t>(e)] = std::move(h1);
      cache->expert_h3[static_cast<std::size_t>(e)] = std::move(h3);
      cache->expert_out[static_cast<std::size_t>(e)] = std::move(oe);
    }
  }
  ensure_finite(y, "moe_forward_grouped");
  if (decisions_out) *decisions_out = std::move(decisions);
  return y;
}

}  // namespace smoe
