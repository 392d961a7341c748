#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "smoe/moe.hpp"

using namespace smoe;

namespace {

MoELayer<float> random_layer(std::size_t dim, std::size_t hidden, int n, int k, Rng& rng) {
  MoELayer<float> layer;
  layer.top_k = k;
  layer.router.w_g = Tensor<float>::randn({dim, static_cast<std::size_t>(n)}, rng, 0.5f);
  layer.experts.resize(static_cast<std::size_t>(n));
  for (auto& e : layer.experts) {
    e.w1 = Tensor<float>::randn({dim, hidden}, rng, 0.3f);
    e.w3 = Tensor<float>::randn({dim, hidden}, rng, 0.3f);
    e.w2 = Tensor<float>::randn({hidden, dim}, rng, 0.3f);
  }
  return layer;
}

}  // namespace

TEST_CASE("top_k_mask keeps the largest entries and masks the rest") {
  Tensor<float> l({4}, {1, 2, 3, 0});
  Tensor<float> m = top_k_mask(l, 2);
  CHECK(m[0] == neg_inf<float>());
  CHECK(m[1] == 2.0f);
  CHECK(m[2] == 3.0f);
  CHECK(m[3] == neg_inf<float>());

  Tensor<float> full = top_k_mask(l, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(full[i] == l[i]);
}

TEST_CASE("top_k_mask ties break toward the lowest index") {
  Tensor<float> l({3}, {7, 7, 7});
  Tensor<float> m = top_k_mask(l, 1);
  CHECK(m[0] == 7.0f);
  CHECK(m[1] == neg_inf<float>());
  CHECK(m[2] == neg_inf<float>());
}

TEST_CASE("top_k_mask validates k") {
  Tensor<float> l({3}, {1, 2, 3});
  CHECK_THROWS_AS(top_k_mask(l, 0), ConfigError);
  CHECK_THROWS_AS(top_k_mask(l, 4), ConfigError);
}

TEST_CASE("gate matches the renormalized softmax by hand") {
  // Identity router turns the input into the logits directly.
  RouterWeights<float> router{Tensor<float>::identity(4)};
  Tensor<float> x({4}, {1, 2, 3, 0});
  GateDecision d = gate(x, router, 2);
  REQUIRE(d.top_k() == 2);
  CHECK(d.choices[0].expert == 2);
  CHECK(d.choices[0].weight == Catch::Approx(0.7311).margin(1e-4));
  CHECK(d.choices[1].expert == 1);
  CHECK(d.choices[1].weight == Catch::Approx(0.2689).margin(1e-4));
}

TEST_CASE("gate splits ties evenly and k=n reduces to the full softmax") {
  RouterWeights<float> router{Tensor<float>::identity(3)};
  Tensor<float> tied({3}, {4, 4, 0});
  GateDecision d = gate(tied, router, 2);
  CHECK(d.choices[0].expert == 0);
  CHECK(d.choices[1].expert == 1);
  CHECK(d.choices[0].weight == Catch::Approx(0.5).margin(1e-6));
  CHECK(d.choices[1].weight == Catch::Approx(0.5).margin(1e-6));

  Tensor<float> l({3}, {0.3f, -1.2f, 0.9f});
  GateDecision full = gate(l, router, 3);
  Tensor<float> ref = softmax(top_k_mask(l, 3), 0);
  for (const auto& c : full.choices)
    CHECK(c.weight == Catch::Approx(ref[static_cast<std::size_t>(c.expert)]).margin(1e-6));
}

TEST_CASE("gate weights equal the restricted softmax over many random draws") {
  Rng rng(31);
  const std::size_t dim = 16;
  const int n = 8, k = 2;
  for (int trial = 0; trial < 300; ++trial) {
    RouterWeights<float> router{Tensor<float>::randn({dim, 8}, rng)};
    Tensor<float> x = Tensor<float>::randn({dim}, rng);
    GateDecision d = gate(x, router, k);

    Tensor<float> xm({1, dim}, x.raw());
    Tensor<float> logits = matmul(xm, router.w_g);
    Tensor<float> row({8}, logits.raw());
    Tensor<float> ref = softmax(top_k_mask(row, k), 0);

    REQUIRE(d.top_k() == k);
    double sum = 0;
    CHECK(d.choices[0].expert != d.choices[1].expert);
    for (const auto& c : d.choices) {
      CHECK(c.weight > 0.0f);
      CHECK(c.weight <= 1.0f);
      CHECK(std::abs(c.weight - ref[static_cast<std::size_t>(c.expert)]) <= 1e-6);
      // identity: exp(l_i) / sum over selected
      sum += c.weight;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("gate selection and weights are shift invariant") {
  Rng rng(37);
  const std::size_t dim = 8;
  for (int trial = 0; trial < 50; ++trial) {
    RouterWeights<float> router{Tensor<float>::randn({dim, 6}, rng)};
    Tensor<float> x = Tensor<float>::randn({dim}, rng);
    float xx = 0;
    for (std::size_t i = 0; i < dim; ++i) xx += x[i] * x[i];
    // Rank-one change aligned with x adds the same constant to every logit.
    const float c = 3.25f;
    RouterWeights<float> shifted = router;
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < 6; ++j) shifted.w_g(i, j) += x[i] * c / xx;
    GateDecision a = gate(x, router, 2);
    GateDecision b = gate(x, shifted, 2);
    REQUIRE(a.top_k() == b.top_k());
    for (int r = 0; r < a.top_k(); ++r) {
      CHECK(a.choices[r].expert == b.choices[r].expert);
      CHECK(std::abs(a.choices[r].weight - b.choices[r].weight) <= 1e-6f);
    }
  }
}

TEST_CASE("swiglu expert hand evaluation") {
  ExpertWeights<float> e;
  e.w1 = Tensor<float>::full({2, 2}, 1.0f);
  e.w3 = Tensor<float>::full({2, 2}, 1.0f);
  e.w2 = Tensor<float>::full({2, 2}, 1.0f);

  Tensor<float> zero({2});
  Tensor<float> out0 = swiglu_expert(zero, e);
  CHECK(out0[0] == 0.0f);
  CHECK(out0[1] == 0.0f);

  Tensor<float> x({2}, {1.0f, 0.0f});
  Tensor<float> out = swiglu_expert(x, e);
  // both hidden pre-activations are 1; output = 2*silu(1)
  CHECK(out[0] == Catch::Approx(1.4621).margin(1e-3));
  CHECK(out[1] == Catch::Approx(1.4621).margin(1e-3));

  e.w2 = Tensor<float>::zeros({2, 2});
  Tensor<float> outz = swiglu_expert(x, e);
  CHECK(outz[0] == 0.0f);
  CHECK(outz[1] == 0.0f);

  Tensor<float> bad({3});
  CHECK_THROWS_AS(swiglu_expert(bad, e), ShapeError);
}

TEST_CASE("dense forward with identical experts ignores the router") {
  Rng rng(41);
  MoELayer<float> layer = random_layer(6, 12, 4, 2, rng);
  for (auto& e : layer.experts) e = layer.experts[0];
  Tensor<float> x = Tensor<float>::randn({5, 6}, rng);
  auto [y, decisions] = moe_forward_dense(x, layer);
  Tensor<float> expected = swiglu_expert(x, layer.experts[0]);
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y[i] == Catch::Approx(expected[i]).margin(1e-5));
  CHECK(decisions.size() == 5);
}

TEST_CASE("dense forward with a symmetric router averages two experts") {
  Rng rng(43);
  MoELayer<float> layer = random_layer(6, 12, 2, 2, rng);
  layer.router.w_g = Tensor<float>::zeros({6, 2});  // all logits 0: weights 0.5/0.5
  Tensor<float> x = Tensor<float>::randn({3, 6}, rng);
  auto [y, decisions] = moe_forward_dense(x, layer);
  Tensor<float> e0 = swiglu_expert(x, layer.experts[0]);
  Tensor<float> e1 = swiglu_expert(x, layer.experts[1]);
  for (std::size_t i = 0; i < y.numel(); ++i)
    CHECK(y[i] == Catch::Approx(0.5f * (e0[i] + e1[i])).margin(1e-5));
}

TEST_CASE("dense forward composes gate and expert oracles") {
  Rng rng(47);
  MoELayer<float> layer = random_layer(8, 16, 4, 2, rng);
  Tensor<float> x = Tensor<float>::randn({1, 8}, rng);
  auto [y, decisions] = moe_forward_dense(x, layer);

  Tensor<float> xt({8}, x.raw());
  GateDecision d = gate(xt, layer.router, 2);
  Tensor<float> expected({8});
  for (const auto& c : d.choices) {
    Tensor<float> oe = swiglu_expert(xt, layer.experts[static_cast<std::size_t>(c.expert)]);
    for (std::size_t i = 0; i < 8; ++i) expected[i] += c.weight * oe[i];
  }
  for (std::size_t i = 0; i < 8; ++i) CHECK(y[i] == Catch::Approx(expected[i]).margin(1e-5));
}

TEST_CASE("dispatch plan covers every (token, rank) exactly once") {
  GateDecision d01{{{0, 0.6f}, {1, 0.4f}}};
  DispatchPlan plan = build_dispatch_plan({d01}, 4);
  REQUIRE(plan.per_expert.size() == 4);
  REQUIRE(plan.per_expert[0].size() == 1);
  CHECK(plan.per_expert[0][0].token == 0);
  CHECK(plan.per_expert[0][0].rank == 1);
  REQUIRE(plan.per_expert[1].size() == 1);
  CHECK(plan.per_expert[1][0].rank == 2);
  CHECK(plan.per_expert[2].empty());
  CHECK(plan.per_expert[3].empty());

  // all tokens to expert 3 first
  std::vector<GateDecision> all3(17, GateDecision{{{3, 0.7f}, {0, 0.3f}}});
  DispatchPlan p3 = build_dispatch_plan(all3, 4);
  CHECK(p3.per_expert[3].size() == 17);

  Rng rng(53);
  std::vector<GateDecision> random_ds;
  for (int t = 0; t < 1000; ++t) {
    int a = static_cast<int>(rng.next_below(8));
    int b = static_cast<int>(rng.next_below(7));
    if (b >= a) ++b;
    random_ds.push_back(GateDecision{{{a, 0.5f}, {b, 0.5f}}});
  }
  DispatchPlan pr = build_dispatch_plan(random_ds, 8);
  CHECK(pr.total_assignments() == 2000);

  std::vector<GateDecision> bad{GateDecision{{{9, 1.0f}}}};
  CHECK_THROWS_AS(build_dispatch_plan(bad, 4), DataError);
}

TEST_CASE("grouped forward equals the dense reference") {
  Rng rng(59);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t dim = 4 + rng.next_below(12);
    const std::size_t hidden = 8 + rng.next_below(24);
    const int n = 2 + static_cast<int>(rng.next_below(7));
    const int k = 1 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n)));
    const std::size_t tokens = 1 + rng.next_below(96);
    MoELayer<float> layer = random_layer(dim, hidden, n, k, rng);
    Tensor<float> x = Tensor<float>::randn({tokens, dim}, rng);
    auto [dense, decisions] = moe_forward_dense(x, layer);
    Tensor<float> grouped = moe_forward_grouped(x, layer);
    float max_abs = 0;
    for (std::size_t i = 0; i < dense.numel(); ++i)
      max_abs = std::max(max_abs, std::abs(dense[i] - grouped[i]));
    CHECK(max_abs <= 1e-5f);
  }
}

TEST_CASE("grouped forward is permutation equivariant") {
  Rng rng(61);
  MoELayer<float> layer = random_layer(8, 16, 4, 2, rng);
  const std::size_t tokens = 20;
  Tensor<float> x = Tensor<float>::randn({tokens, 8}, rng);
  std::vector<std::size_t> perm(tokens);
  for (std::size_t i = 0; i < tokens; ++i) perm[i] = i;
  Rng shuffler(62);
  shuffler.shuffle(perm);
  Tensor<float> xp({tokens, 8});
  for (std::size_t i = 0; i < tokens; ++i)
    std::copy(x.row(perm[i]), x.row(perm[i]) + 8, xp.row(i));
  Tensor<float> y = moe_forward_grouped(x, layer);
  Tensor<float> yp = moe_forward_grouped(xp, layer);
  for (std::size_t i = 0; i < tokens; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(yp(i, j) == y(perm[i], j));
}

TEST_CASE("K=n behaves as a softmax ensemble and K=1 as hard routing") {
  Rng rng(67);
  MoELayer<float> layer = random_layer(6, 12, 3, 3, rng);
  Tensor<float> x = Tensor<float>::randn({4, 6}, rng);
  auto [y, decisions] = moe_forward_dense(x, layer);
  for (std::size_t t = 0; t < 4; ++t) {
    // weights are the full softmax; reconstruct the ensemble by hand
    Tensor<float> xt({6});
    std::copy(x.row(t), x.row(t) + 6, xt.data());
    Tensor<float> expected({6});
    for (const auto& c : decisions[t].choices) {
      Tensor<float> oe = swiglu_expert(xt, layer.experts[static_cast<std::size_t>(c.expert)]);
      for (std::size_t i = 0; i < 6; ++i) expected[i] += c.weight * oe[i];
    }
    for (std::size_t i = 0; i < 6; ++i)
      CHECK(y(t, i) == Catch::Approx(expected[i]).margin(1e-5));
  }

  layer.top_k = 1;
  auto [y1, d1] = moe_forward_dense(x, layer);
  for (const auto& d : d1) {
    REQUIRE(d.top_k() == 1);
    CHECK(d.choices[0].weight == 1.0f);
  }
}
