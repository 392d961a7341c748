#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/moe.hpp"
#include "smoe/rng.hpp"
#include "smoe/tensor.hpp"
#include "smoe/threading.hpp"
#include "smoe/transformer.hpp"

namespace smoe {

// Mean negative log softmax probability of the targets. logits rows beyond
// targets.size() are ignored, so callers may pass full-sequence logits with
// next-token targets.
template <typename S>
S cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets,
                Tensor<S>* dlogits = nullptr) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: expected [seq x vocab] logits");
  const std::size_t V = logits.size(1);
  const std::size_t P = targets.size();
  if (P == 0) throw DataError("cross_entropy: no targets");
  if (P > logits.size(0)) throw ShapeError("cross_entropy: more targets than logit rows");
  if (dlogits) *dlogits = Tensor<S>(logits.shape());
  S total = S(0);
  std::vector<S> probs(V);
  for (std::size_t t = 0; t < P; ++t) {
    const int target = targets[t];
    if (target < 0 || static_cast<std::size_t>(target) >= V)
      throw DataError("cross_entropy: target id out of range");
    const S* row = logits.row(t);
    S mx = row[0];
    for (std::size_t v = 1; v < V; ++v) mx = std::max(mx, row[v]);
    S sum = S(0);
    for (std::size_t v = 0; v < V; ++v) {
      probs[v] = std::exp(row[v] - mx);
      sum += probs[v];
    }
    total += -(row[static_cast<std::size_t>(target)] - mx - std::log(sum));
    if (dlogits) {
      S* drow = dlogits->row(t);
      const S inv = S(1) / (sum * static_cast<S>(P));
      for (std::size_t v = 0; v < V; ++v) drow[v] = probs[v] * inv;
      drow[static_cast<std::size_t>(target)] -= S(1) / static_cast<S>(P);
    }
  }
  return total / static_cast<S>(P);
}

// ---------------------------------------------------------------------------
// Gradient containers

template <typename S>
struct ExpertGrads {
  Tensor<S> w1, w3, w2;
};

template <typename S>
struct LayerGrads {
  Tensor<S> norm1_gain, wq, wk, wv, wo, norm2_gain, router;
  std::vector<ExpertGrads<S>> experts;
};

// One gradient tensor per model parameter, shape-matched, in the same order
// as TransformerModel::parameters().
template <typename S>
struct GradientSet {
  Tensor<S> embedding;
  std::vector<LayerGrads<S>> layers;
  Tensor<S> final_gain, output_head;

  static GradientSet zeros_like(const TransformerModel<S>& m) {
    GradientSet g;
    g.embedding = Tensor<S>(m.embedding.shape());
    g.layers.resize(m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const auto& lw = m.layers[l];
      auto& lg = g.layers[l];
      lg.norm1_gain = Tensor<S>(lw.norm1_gain.shape());
      lg.wq = Tensor<S>(lw.wq.shape());
      lg.wk = Tensor<S>(lw.wk.shape());
      lg.wv = Tensor<S>(lw.wv.shape());
      lg.wo = Tensor<S>(lw.wo.shape());
      lg.norm2_gain = Tensor<S>(lw.norm2_gain.shape());
      lg.router = Tensor<S>(lw.moe.router.w_g.shape());
      lg.experts.resize(lw.moe.experts.size());
      for (std::size_t e = 0; e < lw.moe.experts.size(); ++e) {
        lg.experts[e].w1 = Tensor<S>(lw.moe.experts[e].w1.shape());
        lg.experts[e].w3 = Tensor<S>(lw.moe.experts[e].w3.shape());
        lg.experts[e].w2 = Tensor<S>(lw.moe.experts[e].w2.shape());
      }
    }
    g.final_gain = Tensor<S>(m.final_gain.shape());
    g.output_head = Tensor<S>(m.output_head.shape());
    return g;
  }

  std::vector<Tensor<S>*> entries() {
    std::vector<Tensor<S>*> ps;
    ps.push_back(&embedding);
    for (auto& lg : layers) {
      ps.push_back(&lg.norm1_gain);
      ps.push_back(&lg.wq);
      ps.push_back(&lg.wk);
      ps.push_back(&lg.wv);
      ps.push_back(&lg.wo);
      ps.push_back(&lg.norm2_gain);
      ps.push_back(&lg.router);
      for (auto& e : lg.experts) {
        ps.push_back(&e.w1);
        ps.push_back(&e.w3);
        ps.push_back(&e.w2);
      }
    }
    ps.push_back(&final_gain);
    ps.push_back(&output_head);
    return ps;
  }

  void add_scaled(GradientSet& other, S scale) {
    auto a = entries();
    auto b = other.entries();
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i]->numel(); ++j) (*a[i])[j] += scale * (*b[i])[j];
  }
};

// ---------------------------------------------------------------------------
// Backward pass

namespace detail {

// dx for y = x/rms(x) * gain, given dy and the cached 1/rms per row.
template <typename S>
Tensor<S> rmsnorm_backward(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& rinv,
                           const Tensor<S>& dy, Tensor<S>& dgain) {
  const std::size_t d = gain.numel();
  const std::size_t rows = x.numel() / d;
  Tensor<S> dx(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = x.data() + r * d;
    const S* dyr = dy.data() + r * d;
    S* dxr = dx.data() + r * d;
    const S ri = rinv[r];
    S sum_gdx = S(0);
    for (std::size_t i = 0; i < d; ++i) sum_gdx += dyr[i] * gain[i] * xr[i];
    const S k = ri * ri * ri * sum_gdx / static_cast<S>(d);
    for (std::size_t i = 0; i < d; ++i) {
      dxr[i] = ri * gain[i] * dyr[i] - xr[i] * k;
      dgain[i] += dyr[i] * xr[i] * ri;
    }
  }
  return dx;
}

template <typename S>
void add_inplace(Tensor<S>& a, const Tensor<S>& b) {
  for (std::size_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

template <typename S>
void accumulate_matmul_at_b(const Tensor<S>& a, const Tensor<S>& b, Tensor<S>& out) {
  // out += a^T * b, a [m x k] viewed as [k x m] against b [m x n]
  Tensor<S> prod = matmul(transpose(a), b);
  add_inplace(out, prod);
}

template <typename S>
S silu_derivative(S z) {
  const S s = sigmoid_scalar(z);
  return s * (S(1) + z * (S(1) - s));
}

// Gradient through one MoE layer. dy is the grad of the layer output; writes
// the grad wrt the normalized input and accumulates parameter grads. Only the
// K selected logits per token receive gradient; with aux_coeff > 0 a dense
// load-balance term is added on top.
template <typename S>
Tensor<S> moe_backward(const Tensor<S>& normed_in, const MoELayer<S>& layer,
                       const MoeForwardCache<S>& mc, const Tensor<S>& dy, S aux_coeff,
                       LayerGrads<S>& lg) {
  const std::size_t T = normed_in.size(0);
  const std::size_t d = normed_in.size(1);
  const int n = layer.num_experts();
  Tensor<S> din({T, d});

  // Per-(token, rank) gate weight gradients, filled during expert backward.
  std::vector<std::vector<S>> gate_weight_grad(T);
  for (std::size_t t = 0; t < T; ++t)
    gate_weight_grad[t].assign(mc.gates[t].weights.size(), S(0));

  for (int e = 0; e < n; ++e) {
    const auto& rows = mc.plan.per_expert[static_cast<std::size_t>(e)];
    if (rows.empty()) continue;
    const std::size_t m = rows.size();
    const auto& ew = layer.experts[static_cast<std::size_t>(e)];
    const Tensor<S>& h1 = mc.expert_h1[static_cast<std::size_t>(e)];
    const Tensor<S>& h3 = mc.expert_h3[static_cast<std::size_t>(e)];
    const Tensor<S>& oe = mc.expert_out[static_cast<std::size_t>(e)];
    const std::size_t hidden = h1.size(1);

    Tensor<S> gathered({m, d});
    Tensor<S> doe({m, d});
    for (std::size_t r = 0; r < m; ++r) {
      const std::size_t t = rows[r].token;
      const S w = mc.gates[t].weights[static_cast<std::size_t>(rows[r].rank - 1)];
      std::copy(normed_in.row(t), normed_in.row(t) + d, gathered.row(r));
      const S* dyr = dy.row(t);
      const S* orow = oe.row(r);
      S* drow = doe.row(r);
      S gw = S(0);
      for (std::size_t i = 0; i < d; ++i) {
        gw += dyr[i] * orow[i];
        drow[i] = w * dyr[i];
      }
      gate_weight_grad[t][static_cast<std::size_t>(rows[r].rank - 1)] += gw;
    }

    // u = silu(h1) .* h3 ; oe = u * w2
    Tensor<S> u({m, hidden});
    for (std::size_t i = 0; i < u.numel(); ++i) u[i] = h1[i] * sigmoid_scalar(h1[i]) * h3[i];
    auto& eg = lg.experts[static_cast<std::size_t>(e)];
    accumulate_matmul_at_b(u, doe, eg.w2);
    Tensor<S> du = matmul(doe, transpose(ew.w2));
    Tensor<S> dh1({m, hidden}), dh3({m, hidden});
    for (std::size_t i = 0; i < du.numel(); ++i) {
      const S s = h1[i] * sigmoid_scalar(h1[i]);
      dh3[i] = du[i] * s;
      dh1[i] = du[i] * h3[i] * silu_derivative(h1[i]);
    }
    accumulate_matmul_at_b(gathered, dh1, eg.w1);
    accumulate_matmul_at_b(gathered, dh3, eg.w3);
    Tensor<S> dgathered = matmul(dh1, transpose(ew.w1));
    add_inplace(dgathered, matmul(dh3, transpose(ew.w3)));
    for (std::size_t r = 0; r < m; ++r) {
      S* dt = din.row(rows[r].token);
      const S* src = dgathered.row(r);
      for (std::size_t i = 0; i < d; ++i) dt[i] += src[i];
    }
  }

  // Restricted softmax Jacobian: gradient reaches only the selected logits.
  Tensor<S> dlogits({T, static_cast<std::size_t>(n)});
  for (std::size_t t = 0; t < T; ++t) {
    const auto& g = mc.gates[t];
    S dot = S(0);
    for (std::size_t r = 0; r < g.weights.size(); ++r) dot += gate_weight_grad[t][r] * g.weights[r];
    for (std::size_t r = 0; r < g.weights.size(); ++r) {
      const S dl = g.weights[r] * (gate_weight_grad[t][r] - dot);
      dlogits(t, static_cast<std::size_t>(g.experts[r])) += dl;
    }
  }

  if (aux_coeff != S(0)) {
    // n * sum_i f_i p_i with f_i the routed fraction (constant under the
    // local selection) and p_i the mean full-softmax router probability.
    Tensor<S> pi = softmax(mc.router_logits, 1);
    std::vector<S> f(static_cast<std::size_t>(n));
    const S total = static_cast<S>(T) * static_cast<S>(layer.top_k);
    for (int e = 0; e < n; ++e)
      f[static_cast<std::size_t>(e)] =
          static_cast<S>(mc.plan.per_expert[static_cast<std::size_t>(e)].size()) / total;
    const S scale = aux_coeff * static_cast<S>(n) / static_cast<S>(T);
    for (std::size_t t = 0; t < T; ++t) {
      S fp = S(0);
      for (int e = 0; e < n; ++e)
        fp += f[static_cast<std::size_t>(e)] * pi(t, static_cast<std::size_t>(e));
      for (int e = 0; e < n; ++e)
        dlogits(t, static_cast<std::size_t>(e)) +=
            scale * pi(t, static_cast<std::size_t>(e)) * (f[static_cast<std::size_t>(e)] - fp);
    }
  }

  accumulate_matmul_at_b(normed_in, dlogits, lg.router);
  add_inplace(din, matmul(dlogits, transpose(layer.router.w_g)));
  return din;
}

// Auxiliary load-balance value for one layer (forward side).
template <typename S>
S aux_loss_value(const MoeForwardCache<S>& mc, int n, int top_k) {
  const std::size_t T = mc.gates.size();
  Tensor<S> pi = softmax(mc.router_logits, 1);
  S aux = S(0);
  const S total = static_cast<S>(T) * static_cast<S>(top_k);
  for (int e = 0; e < n; ++e) {
    S p_mean = S(0);
    for (std::size_t t = 0; t < T; ++t) p_mean += pi(t, static_cast<std::size_t>(e));
    p_mean /= static_cast<S>(T);
    const S f = static_cast<S>(mc.plan.per_expert[static_cast<std::size_t>(e)].size()) / total;
    aux += f * p_mean;
  }
  return static_cast<S>(n) * aux;
}

template <typename S>
Tensor<S> attention_backward(const Tensor<S>& normed_in, const LayerWeights<S>& lw,
                             const ModelConfig& cfg, const AttentionCache<S>& ac,
                             const std::vector<std::int64_t>& positions, const Tensor<S>& dy,
                             LayerGrads<S>& lg) {
  const std::size_t T = normed_in.size(0);
  const std::size_t H = cfg.n_heads;
  const std::size_t Hkv = cfg.n_kv_heads;
  const std::size_t hd = cfg.head_dim;
  const std::size_t group = H / Hkv;
  const S inv_scale = S(1) / std::sqrt(static_cast<S>(hd));

  accumulate_matmul_at_b(ac.concat, dy, lg.wo);
  Tensor<S> dconcat = matmul(dy, transpose(lw.wo));

  Tensor<S> dq({T, H * hd}), dk({T, Hkv * hd}), dv({T, Hkv * hd});
  std::vector<S> dp(T);
  for (std::size_t h = 0; h < H; ++h) {
    const std::size_t g = h / group;
    const Tensor<S>& probs = ac.probs[h];
    for (std::size_t i = 0; i < T; ++i) {
      const S* doi = dconcat.row(i) + h * hd;
      S sum_pd = S(0);
      for (std::size_t j = 0; j <= i; ++j) {
        const S* vj = ac.v.row(j) + g * hd;
        S dot = S(0);
        for (std::size_t c = 0; c < hd; ++c) dot += doi[c] * vj[c];
        dp[j] = dot;
        sum_pd += probs(i, j) * dot;
      }
      const S* qi = ac.q.row(i) + h * hd;
      S* dqi = dq.row(i) + h * hd;
      for (std::size_t j = 0; j <= i; ++j) {
        const S p = probs(i, j);
        const S ds = p * (dp[j] - sum_pd) * inv_scale;
        const S* kj = ac.k.row(j) + g * hd;
        S* dkj = dk.row(j) + g * hd;
        S* dvj = dv.row(j) + g * hd;
        for (std::size_t c = 0; c < hd; ++c) {
          dqi[c] += ds * kj[c];
          dkj[c] += ds * qi[c];
          dvj[c] += p * doi[c];
        }
      }
    }
  }

  // Rotations are linear in the angle's sign: rotating gradients by -theta
  // is the exact adjoint of the forward rotation.
  std::vector<std::int64_t> neg(positions.size());
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -positions[i];
  Tensor<S> dq_pre = rope_rotate(Tensor<S>({T, H, hd}, std::move(dq.raw())), neg);
  Tensor<S> dk_pre = rope_rotate(Tensor<S>({T, Hkv, hd}, std::move(dk.raw())), neg);
  dq_pre = Tensor<S>({T, H * hd}, std::move(dq_pre.raw()));
  dk_pre = Tensor<S>({T, Hkv * hd}, std::move(dk_pre.raw()));

  accumulate_matmul_at_b(normed_in, dq_pre, lg.wq);
  accumulate_matmul_at_b(normed_in, dk_pre, lg.wk);
  accumulate_matmul_at_b(normed_in, dv, lg.wv);
  Tensor<S> din = matmul(dq_pre, transpose(lw.wq));
  add_inplace(din, matmul(dk_pre, transpose(lw.wk)));
  add_inplace(din, matmul(dv, transpose(lw.wv)));
  return din;
}

}  // namespace detail

// Loss of one document: next-token cross-entropy over positions 0..T-2, plus
// the optional auxiliary load-balance term averaged over layers.
template <typename S>
S document_loss(const TransformerModel<S>& model, const std::vector<int>& doc, S aux_coeff,
                ModelCache<S>* cache_out = nullptr) {
  if (doc.size() < 2) throw DataError("document_loss: need at least 2 tokens");
  ModelCache<S> local;
  ModelCache<S>& cache = cache_out ? *cache_out : local;
  forward(model, doc, &cache);
  std::vector<int> targets(doc.begin() + 1, doc.end());
  S loss = cross_entropy(cache.logits, targets);
  if (aux_coeff != S(0)) {
    S aux = S(0);
    for (const auto& lc : cache.layers)
      aux += detail::aux_loss_value(lc.moe, static_cast<int>(model.config.num_experts),
                                    static_cast<int>(model.config.top_k_experts));
    loss += aux_coeff * aux / static_cast<S>(model.config.n_layers);
  }
  return loss;
}

// Analytic gradients of document_loss wrt every parameter, accumulated into
// grads. Returns the loss.
template <typename S>
S backward_document(const TransformerModel<S>& model, const std::vector<int>& doc, S aux_coeff,
                    GradientSet<S>& grads) {
  if (doc.size() < 2) throw DataError("backward_document: need at least 2 tokens");
  const ModelConfig& cfg = model.config;
  ModelCache<S> cache;
  forward(model, doc, &cache);
  const std::size_t T = doc.size();

  std::vector<int> targets(doc.begin() + 1, doc.end());
  Tensor<S> dlogits;
  S loss = cross_entropy(cache.logits, targets, &dlogits);
  const S layer_aux_scale = aux_coeff / static_cast<S>(cfg.n_layers);
  if (aux_coeff != S(0)) {
    S aux = S(0);
    for (const auto& lc : cache.layers)
      aux += detail::aux_loss_value(lc.moe, static_cast<int>(cfg.num_experts),
                                    static_cast<int>(cfg.top_k_experts));
    loss += layer_aux_scale * aux;
  }

  GradientSet<S> g = GradientSet<S>::zeros_like(model);

  detail::accumulate_matmul_at_b(cache.final_out, dlogits, g.output_head);
  Tensor<S> dfinal = matmul(dlogits, transpose(model.output_head));
  const Tensor<S>& last_x =
      cfg.n_layers > 0 ? cache.layers.back().x_after_moe : cache.embedded;
  Tensor<S> dx =
      detail::rmsnorm_backward(last_x, model.final_gain, cache.final_rinv, dfinal, g.final_gain);

  std::vector<std::int64_t> positions(T);
  for (std::size_t t = 0; t < T; ++t) positions[t] = static_cast<std::int64_t>(t);

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const LayerWeights<S>& lw = model.layers[li];
    const LayerCache<S>& lc = cache.layers[li];
    LayerGrads<S>& lg = g.layers[li];
    const Tensor<S>& x_in = li == 0 ? cache.embedded : cache.layers[li - 1].x_after_moe;

    // x3 = x2 + moe(norm2(x2))
    Tensor<S> dnormed2 =
        detail::moe_backward(lc.norm2_out, lw.moe, lc.moe, dx, layer_aux_scale, lg);
    Tensor<S> dx2 = detail::rmsnorm_backward(lc.x_after_attn, lw.norm2_gain, lc.norm2_rinv,
                                             dnormed2, lg.norm2_gain);
    detail::add_inplace(dx2, dx);

    // x2 = x + attn(norm1(x))
    Tensor<S> dnormed1 =
        detail::attention_backward(lc.norm1_out, lw, cfg, lc.attn, positions, dx2, lg);
    dx = detail::rmsnorm_backward(x_in, lw.norm1_gain, lc.norm1_rinv, dnormed1, lg.norm1_gain);
    detail::add_inplace(dx, dx2);
  }

  for (std::size_t t = 0; t < T; ++t) {
    S* erow = g.embedding.row(static_cast<std::size_t>(doc[t]));
    const S* dxr = dx.row(t);
    for (std::size_t i = 0; i < cfg.dim; ++i) erow[i] += dxr[i];
  }

  grads.add_scaled(g, S(1));
  return loss;
}

// Mean loss and mean gradients over a batch of documents. Per-document
// gradients may be computed in parallel; the reduction always runs in
// document order, so results do not depend on the worker count.
template <typename S>
std::pair<S, GradientSet<S>> backward(const TransformerModel<S>& model,
                                      const std::vector<std::vector<int>>& batch,
                                      S aux_coeff = S(0)) {
  if (batch.empty()) throw DataError("backward: empty batch");
  const std::size_t B = batch.size();
  std::vector<GradientSet<S>> per_doc(B);
  std::vector<S> losses(B, S(0));
  parallel_for(B, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      per_doc[i] = GradientSet<S>::zeros_like(model);
      losses[i] = backward_document(model, batch[i], aux_coeff, per_doc[i]);
    }
  });
  GradientSet<S> total = GradientSet<S>::zeros_like(model);
  S loss = S(0);
  const S inv = S(1) / static_cast<S>(B);
  for (std::size_t i = 0; i < B; ++i) {
    total.add_scaled(per_doc[i], inv);
    loss += losses[i] * inv;
  }
  return {loss, std::move(total)};
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Element-level update shared by the model-level wrapper and tests.
template <typename S>
void adam_update(S* param, const S* grad, S* m, S* v, std::size_t n, std::int64_t t,
                 const AdamConfig& cfg) {
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S lr = static_cast<S>(cfg.learning_rate), eps = static_cast<S>(cfg.eps);
  const S bc1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(t)));
  const S bc2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(t)));
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (S(1) - b1) * grad[i];
    v[i] = b2 * v[i] + (S(1) - b2) * grad[i] * grad[i];
    const S mhat = m[i] / bc1;
    const S vhat = v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m, v;
  std::int64_t t = 0;

  static AdamState init(TransformerModel<S>& model) {
    AdamState st;
    for (Tensor<S>* p : model.parameters()) {
      st.m.emplace_back(p->shape());
      st.v.emplace_back(p->shape());
    }
    return st;
  }
};

// Standard bias-corrected Adam step over all model parameters.
template <typename S>
void adam_step(TransformerModel<S>& model, GradientSet<S>& grads, AdamState<S>& state,
               const AdamConfig& cfg) {
  auto params = model.parameters();
  auto gs = grads.entries();
  if (params.size() != gs.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: state does not match model");
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*gs[i]) || !params[i]->same_shape(state.m[i]))
      throw ShapeError("adam_step: tensor shape mismatch");
    adam_update(params[i]->data(), gs[i]->data(), state.m[i].data(), state.v[i].data(),
                params[i]->numel(), state.t, cfg);
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t steps = 100;
  std::uint64_t seed = 0;
  double aux_load_balance = 0.0;  // 0 disables the auxiliary loss
  std::size_t max_window = 0;     // 0 = cap windows at context_len

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("TrainConfig: learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("TrainConfig: batch_size must be positive");
  }
};

struct LossPoint {
  std::size_t step;
  double loss;
};

// Seeded SGD-with-Adam over a document corpus. Long documents contribute a
// random window per draw. The seed fully determines sampling and therefore
// the final model.
template <typename S>
std::vector<LossPoint> train(TransformerModel<S>& model,
                             const std::vector<std::vector<int>>& corpus,
                             const TrainConfig& tc) {
  tc.validate();
  if (corpus.empty()) throw DataError("train: empty corpus");
  for (const auto& doc : corpus) {
    if (doc.size() < 2) throw DataError("train: documents need at least 2 tokens");
    for (int id : doc)
      if (id < 0 || static_cast<std::uint64_t>(id) >= model.config.vocab_size)
        throw DataError("train: corpus token id out of range");
  }
  const std::size_t window_cap = tc.max_window == 0
                                     ? model.config.context_len
                                     : std::min<std::size_t>(tc.max_window, model.config.context_len);

  AdamConfig ac{tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps};
  AdamState<S> state = AdamState<S>::init(model);
  Rng root(tc.seed);
  std::vector<LossPoint> curve;
  curve.reserve(tc.steps);

  for (std::size_t step = 0; step < tc.steps; ++step) {
    Rng rng = root.split(step + 1);
    std::vector<std::vector<int>> batch;
    batch.reserve(tc.batch_size);
    for (std::size_t b = 0; b < tc.batch_size; ++b) {
      const auto& doc = corpus[static_cast<std::size_t>(rng.next_below(corpus.size()))];
      if (doc.size() <= window_cap) {
        batch.push_back(doc);
      } else {
        const std::size_t offset =
            static_cast<std::size_t>(rng.next_below(doc.size() - window_cap + 1));
        batch.emplace_back(doc.begin() + static_cast<std::ptrdiff_t>(offset),
                           doc.begin() + static_cast<std::ptrdiff_t>(offset + window_cap));
      }
    }
    try {
      auto [loss, grads] = backward(model, batch, static_cast<S>(tc.aux_load_balance));
      if (!std::isfinite(static_cast<double>(loss)))
        throw NumericError("non-finite loss");
      adam_step(model, grads, state, ac);
      curve.push_back({step, static_cast<double>(loss)});
    } catch (const NumericError& e) {
      throw TrainingError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
  }
  return curve;
}

inline void write_loss_curve(const std::vector<LossPoint>& curve, std::ostream& out) {
  for (const auto& p : curve) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu %.9g\n", p.step, p.loss);
    out << buf;
  }
}

}  // namespace smoe
