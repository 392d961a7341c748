#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "smoe/error.hpp"
#include "smoe/rng.hpp"

namespace smoe {

// Dense row-major tensor of real scalars. float is the working precision;
// the double instantiation exists for verification runs (gradient checks).
template <typename S>
class Tensor {
  static_assert(std::is_floating_point_v<S>, "Tensor requires a real scalar type");

 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("Tensor: zero dimension");
      n *= d;
    }
    data_.assign(n, S(0));
  }

  Tensor(std::vector<std::size_t> shape, std::vector<S> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) n *= d;
    if (n != data_.size()) throw ShapeError("Tensor: shape does not match data length");
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, S value) {
    Tensor t(std::move(shape));
    for (S& v : t.data_) v = value;
    return t;
  }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = S(1);
    return t;
  }

  // Gaussian init; iteration order is fixed, so a given rng state always
  // produces the same tensor.
  static Tensor randn(std::vector<std::size_t> shape, Rng& rng, S stddev = S(1)) {
    Tensor t(std::move(shape));
    for (S& v : t.data_) v = static_cast<S>(rng.next_normal()) * stddev;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  std::vector<S>& raw() { return data_; }
  const std::vector<S>& raw() const { return data_; }

  S& operator[](std::size_t i) { return data_[i]; }
  S operator[](std::size_t i) const { return data_[i]; }

  S& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  S operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  S& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  S operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  S* row(std::size_t i) { return data_.data() + i * row_stride(); }
  const S* row(std::size_t i) const { return data_.data() + i * row_stride(); }
  std::size_t row_stride() const { return numel() / shape_.front(); }

  void fill(S value) {
    for (S& v : data_) v = value;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  std::string shape_string() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
    os << "]";
    return os.str();
  }

  // Lossless widen / narrowing cast between precisions.
  template <typename T>
  Tensor<T> cast() const {
    std::vector<T> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<T>(data_[i]);
    return Tensor<T>(shape_, std::move(out));
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<S> data_;
};

template <typename S>
constexpr S neg_inf() {
  return -std::numeric_limits<S>::infinity();
}

// NaN or Inf anywhere is an error, never a silent value.
template <typename S>
void ensure_finite(const Tensor<S>& t, const char* what) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i]))
      throw NumericError(std::string(what) + ": non-finite value at flat index " +
                         std::to_string(i));
  }
}

// Standard matrix product a[m x k] * b[k x n]. The k loop runs in ascending
// order for every output element, so accumulation order is fixed and results
// are reproducible for a given build.
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: expected rank-2 operands, got " + a.shape_string() + " and " +
                     b.shape_string());
  if (a.size(1) != b.size(0))
    throw ShapeError("matmul: inner dimensions disagree: " + a.shape_string() + " vs " +
                     b.shape_string());
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  Tensor<S> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    S* __restrict__ crow = c.row(i);
    const S* arow = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const S aik = arow[p];
      const S* __restrict__ brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  ensure_finite(c, "matmul");
  return c;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank-2 tensor");
  const std::size_t m = a.size(0), n = a.size(1);
  Tensor<S> t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

// Numerically stable softmax along `axis`. -inf entries are legal and map to
// weight exactly 0; a fully -inf slice has no distribution to normalize.
template <typename S>
Tensor<S> softmax(const Tensor<S>& t, std::size_t axis) {
  if (axis >= t.rank()) throw ShapeError("softmax: axis out of range");
  const std::size_t n = t.size(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.size(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.size(i);

  for (std::size_t i = 0; i < t.numel(); ++i) {
    const S v = t[i];
    if (std::isnan(v) || v == std::numeric_limits<S>::infinity())
      throw NumericError("softmax: input must be finite or -inf");
  }

  Tensor<S> out(t.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      S mx = neg_inf<S>();
      for (std::size_t i = 0; i < n; ++i) mx = std::max(mx, t[base + i * inner]);
      if (mx == neg_inf<S>())
        throw NumericError("softmax: degenerate distribution (all entries -inf)");
      S sum = S(0);
      for (std::size_t i = 0; i < n; ++i) {
        const S e = std::exp(t[base + i * inner] - mx);
        out[base + i * inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= sum;
    }
  }
  return out;
}

template <typename S>
S sigmoid_scalar(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

// Elementwise x * sigmoid(x).
template <typename S>
Tensor<S> silu(const Tensor<S>& t) {
  Tensor<S> out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = t[i] * sigmoid_scalar(t[i]);
  ensure_finite(out, "silu");
  return out;
}

// Root-mean-square norm over the last axis: x / sqrt(mean(x^2) + eps) * gain.
// When rinv_out is given it receives the per-row 1/rms factor (one entry per
// normalized row), which the backward pass reuses.
template <typename S>
Tensor<S> rmsnorm(const Tensor<S>& x, const Tensor<S>& gain, S eps,
                  Tensor<S>* rinv_out = nullptr) {
  if (gain.rank() != 1) throw ShapeError("rmsnorm: gain must be rank-1");
  const std::size_t d = gain.numel();
  if (x.rank() == 0 || x.shape().back() != d)
    throw ShapeError("rmsnorm: trailing dimension " + x.shape_string() + " does not match gain");
  const std::size_t rows = x.numel() / d;
  Tensor<S> out(x.shape());
  if (rinv_out) *rinv_out = Tensor<S>({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    const S* xr = x.data() + r * d;
    S* yr = out.data() + r * d;
    S ss = S(0);
    for (std::size_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
    const S rinv = S(1) / std::sqrt(ss / static_cast<S>(d) + eps);
    if (rinv_out) (*rinv_out)[r] = rinv;
    for (std::size_t i = 0; i < d; ++i) yr[i] = xr[i] * rinv * gain[i];
  }
  ensure_finite(out, "rmsnorm");
  return out;
}

inline constexpr double kRopeBase = 10000.0;

// Rotary position embedding over adjacent scalar pairs of each head vector.
// Pair p of a token at position t rotates by t * base^(-2p/head_dim); every
// rotation is an isometry of its 2-component pair.
template <typename S>
Tensor<S> rope_rotate(const Tensor<S>& x, const std::vector<std::int64_t>& positions,
                      double base = kRopeBase) {
  if (x.rank() != 3) throw ShapeError("rope_rotate: expected [seq x heads x head_dim]");
  const std::size_t seq = x.size(0), heads = x.size(1), hd = x.size(2);
  if (hd % 2 != 0) throw ConfigError("rope_rotate: head_dim must be even");
  if (positions.size() != seq) throw ShapeError("rope_rotate: positions length != seq");
  Tensor<S> out(x.shape());
  const std::size_t pairs = hd / 2;
  for (std::size_t t = 0; t < seq; ++t) {
    const double pos = static_cast<double>(positions[t]);
    for (std::size_t p = 0; p < pairs; ++p) {
      const double theta = pos * std::pow(base, -2.0 * static_cast<double>(p) /
                                                    static_cast<double>(hd));
      const S c = static_cast<S>(std::cos(theta));
      const S s = static_cast<S>(std::sin(theta));
      for (std::size_t h = 0; h < heads; ++h) {
        const S x0 = x(t, h, 2 * p);
        const S x1 = x(t, h, 2 * p + 1);
        out(t, h, 2 * p) = x0 * c - x1 * s;
        out(t, h, 2 * p + 1) = x0 * s + x1 * c;
      }
    }
  }
  ensure_finite(out, "rope_rotate");
  return out;
}

}  // namespace smoe
