#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "smoe/tensor.hpp"

using namespace smoe;

TEST_CASE("matmul identity and hand-checked products") {
  Rng rng(7);
  Tensor<float> a = Tensor<float>::randn({3, 3}, rng);
  Tensor<float> r = matmul(Tensor<float>::identity(3), a);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(r[i] == a[i]);

  Tensor<float> m({2, 2}, {1, 2, 3, 4});
  Tensor<float> ones({2, 1}, {1, 1});
  Tensor<float> p = matmul(m, ones);
  CHECK(p(0, 0) == 3.0f);
  CHECK(p(1, 0) == 7.0f);

  Tensor<float> z = Tensor<float>::zeros({2, 3});
  Tensor<float> b = Tensor<float>::randn({3, 4}, rng);
  Tensor<float> zp = matmul(z, b);
  for (std::size_t i = 0; i < zp.numel(); ++i) CHECK(zp[i] == 0.0f);
}

TEST_CASE("matmul rejects mismatched shapes") {
  Tensor<float> a({2, 3});
  Tensor<float> b({4, 2});
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("matmul associativity on random single-precision inputs") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<float> a = Tensor<float>::randn({16, 16}, rng, 0.1f);
    Tensor<float> b = Tensor<float>::randn({16, 16}, rng, 0.1f);
    Tensor<float> c = Tensor<float>::randn({16, 16}, rng, 0.1f);
    Tensor<float> left = matmul(matmul(a, b), c);
    Tensor<float> right = matmul(a, matmul(b, c));
    float max_abs = 0.0f;
    for (std::size_t i = 0; i < left.numel(); ++i)
      max_abs = std::max(max_abs, std::abs(left[i] - right[i]));
    CHECK(max_abs <= 1e-5f);
  }
}

TEST_CASE("softmax basics") {
  Tensor<float> t({2}, {0.0f, 0.0f});
  Tensor<float> s = softmax(t, 0);
  CHECK(s[0] == Catch::Approx(0.5).margin(1e-7));
  CHECK(s[1] == Catch::Approx(0.5).margin(1e-7));

  // exp(1..3)/sum, by hand calculator
  Tensor<float> t2({3}, {1.0f, 2.0f, 3.0f});
  Tensor<float> s2 = softmax(t2, 0);
  CHECK(s2[0] == Catch::Approx(0.0900).margin(1e-4));
  CHECK(s2[1] == Catch::Approx(0.2447).margin(1e-4));
  CHECK(s2[2] == Catch::Approx(0.6652).margin(1e-4));

  Tensor<float> t3({2}, {5.0f, neg_inf<float>()});
  Tensor<float> s3 = softmax(t3, 0);
  CHECK(s3[0] == 1.0f);
  CHECK(s3[1] == 0.0f);
}

TEST_CASE("softmax errors") {
  Tensor<float> allinf({2, 2}, {neg_inf<float>(), neg_inf<float>(), 1.0f, 2.0f});
  CHECK_THROWS_AS(softmax(allinf, 1), NumericError);  // row 0 fully masked
  Tensor<float> nan({2}, {std::nanf(""), 0.0f});
  CHECK_THROWS_AS(softmax(nan, 0), NumericError);
  Tensor<float> posinf({2}, {std::numeric_limits<float>::infinity(), 0.0f});
  CHECK_THROWS_AS(softmax(posinf, 0), NumericError);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> t = Tensor<float>::randn({4, 7}, rng, 3.0f);
    const std::size_t axis = trial % 2;
    Tensor<float> s = softmax(t, axis);
    const std::size_t outer = axis == 0 ? 7 : 4;
    const std::size_t n = t.size(axis);
    for (std::size_t o = 0; o < outer; ++o) {
      double sum = 0;
      for (std::size_t i = 0; i < n; ++i)
        sum += axis == 0 ? s(i, o) : s(o, i);
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
    Tensor<float> shifted = t;
    for (std::size_t i = 0; i < shifted.numel(); ++i) shifted[i] += 7.5f;
    Tensor<float> s2 = softmax(shifted, axis);
    for (std::size_t i = 0; i < s.numel(); ++i) CHECK(std::abs(s[i] - s2[i]) <= 1e-6f);
  }
}

TEST_CASE("silu values") {
  Tensor<float> t({3}, {0.0f, 1.0f, 30.0f});
  Tensor<float> s = silu(t);
  CHECK(s[0] == 0.0f);
  CHECK(s[1] == Catch::Approx(0.7311).margin(1e-4));
  CHECK(s[2] == Catch::Approx(30.0).margin(1e-4));  // sigmoid saturates to 1
}

TEST_CASE("silu equals x times sigmoid(x) by construction") {
  Rng rng(17);
  Tensor<float> t = Tensor<float>::randn({64}, rng, 2.0f);
  Tensor<float> s = silu(t);
  for (std::size_t i = 0; i < t.numel(); ++i)
    CHECK(s[i] == t[i] * sigmoid_scalar(t[i]));
}

TEST_CASE("rmsnorm values") {
  Tensor<float> gain = Tensor<float>::full({4}, 1.0f);
  Tensor<float> ones = Tensor<float>::full({4}, 1.0f);
  Tensor<float> r = rmsnorm(ones, gain, 0.0f);
  for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == Catch::Approx(1.0).margin(1e-6));

  Tensor<float> zeros({4});
  Tensor<float> rz = rmsnorm(zeros, gain, 1e-5f);
  for (std::size_t i = 0; i < 4; ++i) CHECK(rz[i] == 0.0f);

  // rms([3,4]) = sqrt(12.5)
  Tensor<float> g2 = Tensor<float>::full({2}, 1.0f);
  Tensor<float> v({2}, {3.0f, 4.0f});
  Tensor<float> rv = rmsnorm(v, g2, 0.0f);
  CHECK(rv[0] == Catch::Approx(0.8485).margin(1e-4));
  CHECK(rv[1] == Catch::Approx(1.1314).margin(1e-4));
}

TEST_CASE("rope position zero is the identity") {
  Rng rng(19);
  Tensor<float> x = Tensor<float>::randn({1, 3, 8}, rng);
  Tensor<float> r = rope_rotate(x, {0});
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(r[i] == Catch::Approx(x[i]).margin(1e-7));
}

TEST_CASE("rope preserves pair norms") {
  Rng rng(23);
  Tensor<float> x = Tensor<float>::randn({5, 2, 6}, rng);
  Tensor<float> r = rope_rotate(x, {0, 3, 11, 100, 4096});
  for (std::size_t t = 0; t < 5; ++t) {
    for (std::size_t h = 0; h < 2; ++h) {
      for (std::size_t p = 0; p < 3; ++p) {
        const double n0 = std::hypot(x(t, h, 2 * p), x(t, h, 2 * p + 1));
        const double n1 = std::hypot(r(t, h, 2 * p), r(t, h, 2 * p + 1));
        CHECK(std::abs(n0 - n1) <= 1e-5);
      }
    }
  }
}

TEST_CASE("rope first frequency rotates by exactly the position in radians") {
  Tensor<float> x({1, 1, 2}, {1.0f, 0.0f});
  Tensor<float> r = rope_rotate(x, {1});
  CHECK(r[0] == Catch::Approx(std::cos(1.0)).margin(1e-6));
  CHECK(r[1] == Catch::Approx(std::sin(1.0)).margin(1e-6));
}

TEST_CASE("rope rejects odd head_dim") {
  Tensor<float> x({1, 1, 3});
  CHECK_THROWS_AS(rope_rotate(x, {0}), ConfigError);
}
