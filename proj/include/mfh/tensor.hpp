#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mfh/errors.hpp"
#include "mfh/rng.hpp"

namespace mfh {

// Dense row-major tensor of doubles. Shapes are fixed at construction;
// every op below is a pure function with a deterministic accumulation order.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive");
      n *= d;
    }
    data_.assign(n, fill);
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
    Tensor t(std::move(shape));
    if (values.size() != t.size())
      throw DimensionError("value count does not match shape product");
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at2(std::size_t i, std::size_t j) {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  double at2(std::size_t i, std::size_t j) const {
    assert(rank() == 2);
    return data_[i * shape_[1] + j];
  }
  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    assert(rank() == 3);
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    assert(rank() == 4);
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    assert(rank() == 4);
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool operator==(const Tensor& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "[";
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (i) s += "x";
    s += std::to_string(t.dim(i));
  }
  return s + "]";
}

// --- scalar activations -----------------------------------------------------

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

// exact (erf-based) GELU and its derivative
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double gelu_grad(double x) {
  constexpr double inv_sqrt_2pi = 0.3989422804014326779;
  double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  return phi + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

// --- elementwise helpers ----------------------------------------------------

inline bool all_finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

inline double sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

inline double sum_squares(const Tensor& t) {
  double s = 0.0;
  for (double v : t.values()) s += v * v;
  return s;
}

inline double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("max_abs_diff: shape mismatch " + shape_string(a) +
                         " vs " + shape_string(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("add: shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("add_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

inline void axpy_inplace(Tensor& a, double alpha, const Tensor& b) {
  if (!a.same_shape(b))
    throw DimensionError("axpy_inplace: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += alpha * b[i];
}

inline Tensor scale(const Tensor& a, double alpha) {
  Tensor out = a;
  for (double& v : out.values()) v *= alpha;
  return out;
}

template <class F>
inline Tensor map(const Tensor& a, F f) {
  Tensor out = a;
  for (double& v : out.values()) v = f(v);
  return out;
}

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (double& v : t.values()) v = rng.uniform(lo, hi);
}

// seeded uniform(-s, s) with s = sqrt(1/fan_in); the standard weight init here
inline Tensor init_weight(std::vector<std::size_t> shape, std::size_t fan_in,
                          std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  double s = std::sqrt(1.0 / static_cast<double>(fan_in));
  fill_uniform(t, rng, -s, s);
  return t;
}

// --- core linear algebra ----------------------------------------------------

// c[i,j] = sum_k a[i,k] * b[k,j]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("matmul: expects rank-2 tensors");
  if (a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner dimensions disagree " +
                         shape_string(a) + " vs " + shape_string(b));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = pa[i * k + kk];
      const double* brow = pb + kk * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// y = W x + b for W[out x in], x[in]; returns [out]
inline Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b) {
  if (w.rank() != 2 || x.rank() != 1 || b.rank() != 1)
    throw DimensionError("linear: expects W rank 2, x and b rank 1");
  if (w.dim(1) != x.dim(0) || w.dim(0) != b.dim(0))
    throw DimensionError("linear: shape mismatch");
  const std::size_t out = w.dim(0), in = w.dim(1);
  Tensor y({out});
  for (std::size_t o = 0; o < out; ++o) {
    double acc = b[o];
    const double* wrow = w.data() + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * x[i];
    y[o] = acc;
  }
  return y;
}

namespace detail {

// zero-padded [C, h+2p, w+2p] copy of a rank-3 tensor
inline void pad3(const Tensor& x, std::size_t padding, std::vector<double>& out) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t hp = h + 2 * padding, wp = w + 2 * padding;
  out.assign(c * hp * wp, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h; ++i) {
      const double* src = x.data() + (ch * h + i) * w;
      double* dst = out.data() + (ch * hp + i + padding) * wp + padding;
      for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
    }
}

// One output cell of a cross-correlation, bias excluded. px is the padded
// input, wbase the kernel block for this output channel, (iy, jx) the
// top-left corner of the window. Kernel rows rotate over three accumulators
// so the add chains overlap; the order is fixed, so results are
// reproducible, and every caller sharing this kernel agrees bit for bit.
inline double conv_cell(const double* px, const double* wbase, std::size_t cin,
                        std::size_t k, std::size_t hp, std::size_t wp,
                        std::size_t iy, std::size_t jx) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  const double* wk = wbase;
  const std::size_t kk = k * k;
  for (std::size_t c = 0; c < cin; ++c) {
    const double* iwin = px + (c * hp + iy) * wp + jx;
    for (std::size_t a = 0; a < k; ++a) {
      const double* irow = iwin + a * wp;
      const double* wrow = wk + a * k;
      double r = 0.0;
      for (std::size_t b = 0; b < k; ++b) {
        const double wv = wrow[b];
        if (wv != 0.0) r += wv * irow[b];
      }
      switch (a % 3) {
        case 0: s0 += r; break;
        case 1: s1 += r; break;
        default: s2 += r; break;
      }
    }
    wk += kk;
  }
  return (s0 + s1) + s2;
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero padding.
// x[Cin,H,W], w[Cout,Cin,k,k], bias[Cout] -> [Cout,H',W']
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
                     std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || w.rank() != 4 || bias.rank() != 1)
    throw DimensionError("conv2d: expects x rank 3, w rank 4, bias rank 1");
  if (w.dim(2) != w.dim(3))
    throw DimensionError("conv2d: kernel must be square");
  if (x.dim(0) != w.dim(1))
    throw DimensionError("conv2d: input channels disagree " + shape_string(x) +
                         " vs " + shape_string(w));
  if (bias.dim(0) != w.dim(0))
    throw DimensionError("conv2d: bias size disagrees with output channels");
  if (stride < 1) throw ParameterError("conv2d: stride must be >= 1");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (k < 1) throw ParameterError("conv2d: kernel must be >= 1");
  if (h + 2 * padding < k || wd + 2 * padding < k)
    throw DimensionError("conv2d: kernel larger than padded input");
  const std::size_t ho = (h + 2 * padding - k) / stride + 1;
  const std::size_t wo = (wd + 2 * padding - k) / stride + 1;

  // padded copy so inner loops are branch-free
  const std::size_t hp = h + 2 * padding, wp = wd + 2 * padding;
  std::vector<double> pad;
  const double* px;
  if (padding == 0) {
    px = x.data();
  } else {
    detail::pad3(x, padding, pad);
    px = pad.data();
  }

  Tensor out({cout, ho, wo});
  double* po = out.data();
  for (std::size_t o = 0; o < cout; ++o) {
    const double* wbase = w.data() + o * cin * k * k;
    double* ochan = po + o * ho * wo;
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        ochan[i * wo + j] = bias[o] + detail::conv_cell(px, wbase, cin, k, hp,
                                                        wp, i * stride,
                                                        j * stride);
  }
  return out;
}

// out[c] = mean over spatial positions of x[c,:,:]
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw DimensionError("global_avg_pool: expects rank 3");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    const double* p = x.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    out[ch] = acc / static_cast<double>(hw);
  }
  return out;
}

// Per-token normalization over the last axis (biased variance):
// (x - mean)/sqrt(var + eps) * gamma + beta
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5) {
  if (x.rank() < 1) throw DimensionError("layer_norm: expects rank >= 1");
  const std::size_t c = x.dim(x.rank() - 1);
  if (c == 0) throw DimensionError("layer_norm: channel axis is empty");
  if (gamma.size() != c || beta.size() != c)
    throw DimensionError("layer_norm: gamma/beta size must equal channel dim");
  if (eps <= 0.0) throw ParameterError("layer_norm: eps must be positive");
  Tensor out = x;
  const std::size_t tokens = x.size() / c;
  for (std::size_t t = 0; t < tokens; ++t) {
    double* p = out.data() + t * c;
    double mean = 0.0;
    for (std::size_t i = 0; i < c; ++i) mean += p[i];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
      const double d = p[i] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < c; ++i)
      p[i] = (p[i] - mean) * inv * gamma[i] + beta[i];
  }
  return out;
}

}  // namespace mfh
