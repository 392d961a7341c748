#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/model_config.hpp"
#include "smoe/moe.hpp"
#include "smoe/rng.hpp"
#include "smoe/tensor.hpp"
#include "smoe/trace.hpp"

namespace smoe {

inline constexpr double kNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

template <typename S>
struct LayerWeights {
  Tensor<S> norm1_gain;  // [dim]
  Tensor<S> wq;          // [dim x n_heads*head_dim]
  Tensor<S> wk;          // [dim x n_kv_heads*head_dim]
  Tensor<S> wv;          // [dim x n_kv_heads*head_dim]
  Tensor<S> wo;          // [n_heads*head_dim x dim]
  Tensor<S> norm2_gain;  // [dim]
  MoELayer<S> moe;
};

// Decoder-only model: pre-norm residual blocks, grouped-query attention over
// a fully dense causal context, and an MoE layer in every FFN slot.
template <typename S>
struct TransformerModel {
  ModelConfig config;
  Tensor<S> embedding;    // [vocab x dim]
  std::vector<LayerWeights<S>> layers;
  Tensor<S> final_gain;   // [dim]
  Tensor<S> output_head;  // [dim x vocab]

  // Matrices ~ normal(0, 0.02), norm gains 1. A fixed fill order makes the
  // result a pure function of (config, seed).
  static TransformerModel random_init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    TransformerModel m;
    m.config = cfg;
    Rng rng = Rng(seed).split(0x6d6f64656cULL);  // "model"
    const S std_dev = static_cast<S>(kInitStd);
    m.embedding = Tensor<S>::randn({cfg.vocab_size, cfg.dim}, rng, std_dev);
    m.layers.resize(cfg.n_layers);
    for (auto& lw : m.layers) {
      lw.norm1_gain = Tensor<S>::full({cfg.dim}, S(1));
      lw.wq = Tensor<S>::randn({cfg.dim, cfg.q_width()}, rng, std_dev);
      lw.wk = Tensor<S>::randn({cfg.dim, cfg.kv_width()}, rng, std_dev);
      lw.wv = Tensor<S>::randn({cfg.dim, cfg.kv_width()}, rng, std_dev);
      lw.wo = Tensor<S>::randn({cfg.q_width(), cfg.dim}, rng, std_dev);
      lw.norm2_gain = Tensor<S>::full({cfg.dim}, S(1));
      lw.moe.top_k = static_cast<int>(cfg.top_k_experts);
      lw.moe.router.w_g = Tensor<S>::randn({cfg.dim, cfg.num_experts}, rng, std_dev);
      lw.moe.experts.resize(cfg.num_experts);
      for (auto& e : lw.moe.experts) {
        e.w1 = Tensor<S>::randn({cfg.dim, cfg.hidden_dim}, rng, std_dev);
        e.w3 = Tensor<S>::randn({cfg.dim, cfg.hidden_dim}, rng, std_dev);
        e.w2 = Tensor<S>::randn({cfg.hidden_dim, cfg.dim}, rng, std_dev);
      }
    }
    m.final_gain = Tensor<S>::full({cfg.dim}, S(1));
    m.output_head = Tensor<S>::randn({cfg.dim, cfg.vocab_size}, rng, std_dev);
    return m;
  }

  // Flat parameter list in serialization order: embedding, then per layer
  // (norm1, wq, wk, wv, wo, norm2, router, then per expert w1, w3, w2),
  // final norm gain, output head. Checkpoints, gradients and Adam state all
  // follow this order.
  std::vector<Tensor<S>*> parameters() {
    std::vector<Tensor<S>*> ps;
    ps.push_back(&embedding);
    for (auto& lw : layers) {
      ps.push_back(&lw.norm1_gain);
      ps.push_back(&lw.wq);
      ps.push_back(&lw.wk);
      ps.push_back(&lw.wv);
      ps.push_back(&lw.wo);
      ps.push_back(&lw.norm2_gain);
      ps.push_back(&lw.moe.router.w_g);
      for (auto& e : lw.moe.experts) {
        ps.push_back(&e.w1);
        ps.push_back(&e.w3);
        ps.push_back(&e.w2);
      }
    }
    ps.push_back(&final_gain);
    ps.push_back(&output_head);
    return ps;
  }

  std::vector<const Tensor<S>*> parameters() const {
    auto ps = const_cast<TransformerModel*>(this)->parameters();
    return std::vector<const Tensor<S>*>(ps.begin(), ps.end());
  }

  std::vector<std::string> parameter_names() const {
    std::vector<std::string> names;
    names.push_back("embedding");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      names.push_back(p + "norm1_gain");
      names.push_back(p + "wq");
      names.push_back(p + "wk");
      names.push_back(p + "wv");
      names.push_back(p + "wo");
      names.push_back(p + "norm2_gain");
      names.push_back(p + "router");
      for (std::size_t e = 0; e < layers[l].moe.experts.size(); ++e) {
        const std::string ep = p + "expert" + std::to_string(e) + ".";
        names.push_back(ep + "w1");
        names.push_back(ep + "w3");
        names.push_back(ep + "w2");
      }
    }
    names.push_back("final_gain");
    names.push_back("output_head");
    return names;
  }

  template <typename T>
  TransformerModel<T> cast() const {
    TransformerModel<T> out;
    out.config = config;
    out.embedding = embedding.template cast<T>();
    out.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& a = layers[l];
      auto& b = out.layers[l];
      b.norm1_gain = a.norm1_gain.template cast<T>();
      b.wq = a.wq.template cast<T>();
      b.wk = a.wk.template cast<T>();
      b.wv = a.wv.template cast<T>();
      b.wo = a.wo.template cast<T>();
      b.norm2_gain = a.norm2_gain.template cast<T>();
      b.moe.top_k = a.moe.top_k;
      b.moe.router.w_g = a.moe.router.w_g.template cast<T>();
      b.moe.experts.resize(a.moe.experts.size());
      for (std::size_t e = 0; e < a.moe.experts.size(); ++e) {
        b.moe.experts[e].w1 = a.moe.experts[e].w1.template cast<T>();
        b.moe.experts[e].w3 = a.moe.experts[e].w3.template cast<T>();
        b.moe.experts[e].w2 = a.moe.experts[e].w2.template cast<T>();
      }
    }
    out.final_gain = final_gain.template cast<T>();
    out.output_head = output_head.template cast<T>();
    return out;
  }
};

// ---------------------------------------------------------------------------
// Parameter accounting

enum class ParamMode { sparse, active };

// Sparse counts every expert; active counts only the top_k_experts evaluated
// per token. Embeddings, output head, attention, router and norms are counted
// identically in both modes. moe_only restricts the tally to router + experts.
inline std::uint64_t count_parameters(const ModelConfig& cfg, ParamMode mode,
                                      bool moe_only = false) {
  cfg.validate();
  const std::uint64_t experts =
      mode == ParamMode::sparse ? cfg.num_experts : cfg.top_k_experts;
  const std::uint64_t expert_block = 3 * cfg.dim * cfg.hidden_dim;
  const std::uint64_t router = cfg.dim * cfg.num_experts;
  const std::uint64_t moe_per_layer = router + experts * expert_block;
  if (moe_only) return cfg.n_layers * moe_per_layer;

  const std::uint64_t attn_per_layer =
      cfg.dim * cfg.q_width() + 2 * cfg.dim * cfg.kv_width() + cfg.q_width() * cfg.dim;
  const std::uint64_t norms_per_layer = 2 * cfg.dim;
  const std::uint64_t per_layer = attn_per_layer + norms_per_layer + moe_per_layer;
  const std::uint64_t embeddings = cfg.vocab_size * cfg.dim;  // untied
  const std::uint64_t head = cfg.dim * cfg.vocab_size;
  return cfg.n_layers * per_layer + embeddings + head + cfg.dim;
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename S>
struct AttentionCache {
  Tensor<S> q;                        // post-rope [T x H*hd]
  Tensor<S> k;                        // post-rope [T x Hkv*hd]
  Tensor<S> v;                        // [T x Hkv*hd]
  std::vector<Tensor<S>> probs;       // per query head, [T x T] lower-triangular
  Tensor<S> concat;                   // pre-Wo head outputs [T x H*hd]
};

template <typename S>
struct LayerCache {
  Tensor<S> norm1_out, norm1_rinv;
  AttentionCache<S> attn;
  Tensor<S> x_after_attn;
  Tensor<S> norm2_out, norm2_rinv;
  MoeForwardCache<S> moe;
  Tensor<S> x_after_moe;
};

template <typename S>
struct ModelCache {
  std::vector<int> ids;
  Tensor<S> embedded;  // [T x dim]
  std::vector<LayerCache<S>> layers;
  Tensor<S> final_out, final_rinv;
  Tensor<S> logits;
};

// Grouped-query attention over the causal prefix with rotary positions and
// 1/sqrt(head_dim) score scaling. x is the already-normalized block input.
template <typename S>
Tensor<S> attention_block(const Tensor<S>& x, const LayerWeights<S>& lw, const ModelConfig& cfg,
                          const std::vector<std::int64_t>& positions,
                          AttentionCache<S>* cache = nullptr) {
  const std::size_t seq = x.size(0);
  if (seq > cfg.context_len) throw DataError("attention_block: sequence exceeds context_len");
  if (x.size(1) != cfg.dim) throw ShapeError("attention_block: input dim mismatch");
  if (positions.size() != seq) throw ShapeError("attention_block: positions length mismatch");

  const std::size_t H = cfg.n_heads;
  const std::size_t Hkv = cfg.n_kv_heads;
  const std::size_t hd = cfg.head_dim;
  const std::size_t group = H / Hkv;
  const S inv_scale = S(1) / std::sqrt(static_cast<S>(hd));

  Tensor<S> q = matmul(x, lw.wq);
  Tensor<S> k = matmul(x, lw.wk);
  Tensor<S> v = matmul(x, lw.wv);
  q = rope_rotate(Tensor<S>({seq, H, hd}, std::move(q.raw())), positions);
  k = rope_rotate(Tensor<S>({seq, Hkv, hd}, std::move(k.raw())), positions);
  q = Tensor<S>({seq, H * hd}, std::move(q.raw()));
  k = Tensor<S>({seq, Hkv * hd}, std::move(k.raw()));

  Tensor<S> concat({seq, H * hd});
  if (cache) {
    cache->probs.assign(H, Tensor<S>());
    for (std::size_t h = 0; h < H; ++h) cache->probs[h] = Tensor<S>({seq, seq});
  }
  std::vector<S> row(seq);
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t g = h / group;
    for (std::size_t i = 0; i < seq; ++i) {
      const S* qi = q.row(i) + h * hd;
      // Scores over the causal prefix j <= i, then a stable row softmax.
      S mx = neg_inf<S>();
      for (std::size_t j = 0; j <= i; ++j) {
        const S* kj = k.row(j) + g * hd;
        S dot = S(0);
        for (std::size_t c = 0; c < hd; ++c) dot += qi[c] * kj[c];
        row[j] = dot * inv_scale;
        mx = std::max(mx, row[j]);
      }
      S sum = S(0);
      for (std::size_t j = 0; j <= i; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      S* out = concat.row(i) + h * hd;
      for (std::size_t c = 0; c < hd; ++c) out[c] = S(0);
      for (std::size_t j = 0; j <= i; ++j) {
        const S p = row[j] / sum;
        if (cache) cache->probs[h](i, j) = p;
        const S* vj = v.row(j) + g * hd;
        for (std::size_t c = 0; c < hd; ++c) out[c] += p * vj[c];
      }
    }
  }
  Tensor<S> y = matmul(concat, lw.wo);
  if (cache) {
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->concat = std::move(concat);
  }
  return y;
}

template <typename S>
struct ForwardResult {
  Tensor<S> logits;  // [seq x vocab]
  RoutingTrace trace;
};

// Full forward pass. The trace records one GateDecision per (layer, token);
// passing a cache keeps every intermediate needed by the backward pass.
template <typename S>
ForwardResult<S> forward(const TransformerModel<S>& model, const std::vector<int>& ids,
                         ModelCache<S>* cache = nullptr) {
  const ModelConfig& cfg = model.config;
  if (ids.empty()) throw DataError("forward: empty input");
  if (ids.size() > cfg.context_len) throw DataError("forward: input exceeds context_len");
  for (int id : ids)
    if (id < 0 || static_cast<std::uint64_t>(id) >= cfg.vocab_size)
      throw DataError("forward: token id out of range");

  const std::size_t T = ids.size();
  Tensor<S> x({T, cfg.dim});
  for (std::size_t t = 0; t < T; ++t)
    std::copy(model.embedding.row(static_cast<std::size_t>(ids[t])),
              model.embedding.row(static_cast<std::size_t>(ids[t])) + cfg.dim, x.row(t));

  std::vector<std::int64_t> positions(T);
  for (std::size_t t = 0; t < T; ++t) positions[t] = static_cast<std::int64_t>(t);

  ForwardResult<S> result;
  result.trace.n_layers = static_cast<int>(cfg.n_layers);
  result.trace.num_experts = static_cast<int>(cfg.num_experts);
  result.trace.top_k = static_cast<int>(cfg.top_k_experts);
  result.trace.docs.resize(1);
  auto& decisions = result.trace.docs[0].decisions;
  decisions.assign(T, std::vector<GateDecision>(cfg.n_layers));

  if (cache) {
    cache->ids = ids;
    cache->embedded = x;
    cache->layers.assign(cfg.n_layers, LayerCache<S>());
  }

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights<S>& lw = model.layers[l];
    LayerCache<S>* lc = cache ? &cache->layers[l] : nullptr;

    Tensor<S> normed = rmsnorm(x, lw.norm1_gain, static_cast<S>(kNormEps),
                               lc ? &lc->norm1_rinv : nullptr);
    Tensor<S> attn = attention_block(normed, lw, cfg, positions, lc ? &lc->attn : nullptr);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += attn[i];
    if (lc) {
      lc->norm1_out = std::move(normed);
      lc->x_after_attn = x;
    }

    Tensor<S> normed2 = rmsnorm(x, lw.norm2_gain, static_cast<S>(kNormEps),
                                lc ? &lc->norm2_rinv : nullptr);
    std::vector<GateDecision> layer_decisions;
    Tensor<S> moe_out =
        moe_forward_grouped(normed2, lw.moe, lc ? &lc->moe : nullptr, &layer_decisions);
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] += moe_out[i];
    for (std::size_t t = 0; t < T; ++t) decisions[t][l] = std::move(layer_decisions[t]);
    if (lc) {
      lc->norm2_out = std::move(normed2);
      lc->x_after_moe = x;
    }
  }

  Tensor<S> final_out =
      rmsnorm(x, model.final_gain, static_cast<S>(kNormEps), cache ? &cache->final_rinv : nullptr);
  result.logits = matmul(final_out, model.output_head);
  if (cache) {
    cache->final_out = std::move(final_out);
    cache->logits = result.logits;
  }
  return result;
}

// Deterministic greedy decoding: appends argmax tokens (ties resolve to the
// lowest id). No KV cache; each step recomputes the full prefix.
template <typename S>
std::vector<int> decode_greedy(const TransformerModel<S>& model, const std::vector<int>& prompt,
                               std::size_t max_new) {
  if (prompt.empty()) throw DataError("decode_greedy: empty prompt");
  if (prompt.size() > model.config.context_len)
    throw DataError("decode_greedy: prompt exceeds context_len");
  std::vector<int> out = prompt;
  for (std::size_t step = 0; step < max_new; ++step) {
    if (out.size() > model.config.context_len)
      throw DataError("decode_greedy: context overflow during generation (output truncated)");
    ForwardResult<S> r = forward(model, out);
    const S* last = r.logits.row(out.size() - 1);
    std::size_t best = 0;
    for (std::size_t v = 1; v < model.config.vocab_size; ++v)
      if (last[v] > last[best]) best = v;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

}  // namespace smoe
