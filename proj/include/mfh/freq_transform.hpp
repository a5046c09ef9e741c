#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mfh/errors.hpp"
#include "mfh/tensor.hpp"

namespace mfh {

// n x n table of block DCT coefficients; (0,0) is the DC term, larger (u,v)
// are higher frequencies.
using CoeffTable = Tensor;

// Precomputed orthonormal DCT-II basis for block size n.
// basis(u,x) = sqrt(2/n) * C(u) * cos((2x+1) u pi / (2n)), C(0) = 1/sqrt(2).
struct DctPlan {
  int n = 0;
  Tensor basis;  // n x n

  static DctPlan make(int n) {
    if (n < 2) throw ParameterError("DctPlan: block size must be >= 2");
    DctPlan plan;
    plan.n = n;
    plan.basis = Tensor({static_cast<std::size_t>(n), static_cast<std::size_t>(n)});
    const double pi = 3.14159265358979323846;
    const double norm = std::sqrt(2.0 / n);
    const double c0 = 1.0 / std::sqrt(2.0);
    for (int u = 0; u < n; ++u) {
      const double cu = (u == 0) ? c0 : 1.0;
      for (int x = 0; x < n; ++x) {
        plan.basis.at2(static_cast<std::size_t>(u), static_cast<std::size_t>(x)) =
            norm * cu * std::cos((2 * x + 1) * u * pi / (2.0 * n));
      }
    }
    return plan;
  }
};

// Bottom-right m x m retention window: the kept index set is
// {(u,v) : u >= n-m and v >= n-m}, exactly m^2 positions.
struct MaskSpec {
  int n = 0;
  int m = 0;

  MaskSpec(int n_, int m_) : n(n_), m(m_) {
    if (n < 2) throw ParameterError("MaskSpec: block size must be >= 2");
    if (m < 1 || m > n)
      throw ParameterError("MaskSpec: retention m must be in [1, n]");
  }

  bool retained(int u, int v) const { return u >= n - m && v >= n - m; }
};

enum class FreqMode { CoefficientDomain, ReconstructedSpatial };

// Masked coefficient blocks reassembled to the padded image size; the
// extractor's input.
struct FreqImage {
  Tensor data;  // 1 x H' x W', H'/W' multiples of the block size
  FreqMode mode = FreqMode::CoefficientDomain;
};

// Zero padding on the bottom/right edges up to the next multiple of n.
inline Tensor pad_to_multiple(const Tensor& image, int n) {
  if (n < 2) throw ParameterError("pad_to_multiple: n must be >= 2");
  if (image.rank() != 3 || image.dim(0) != 1)
    throw DimensionError("pad_to_multiple: expects 1xHxW image");
  const std::size_t h = image.dim(1), w = image.dim(2);
  const std::size_t nn = static_cast<std::size_t>(n);
  const std::size_t hp = (h + nn - 1) / nn * nn;
  const std::size_t wp = (w + nn - 1) / nn * nn;
  if (hp == h && wp == w) return image;
  Tensor out({1, hp, wp});
  for (std::size_t i = 0; i < h; ++i) {
    const double* src = image.data() + i * w;
    double* dst = out.data() + i * wp;
    for (std::size_t j = 0; j < w; ++j) dst[j] = src[j];
  }
  return out;
}

// 1xH'xW' -> (H'/n * W'/n) x n x n in row-major patch order.
inline Tensor patchify(const Tensor& image, int n) {
  if (n < 2) throw ParameterError("patchify: n must be >= 2");
  if (image.rank() != 3 || image.dim(0) != 1)
    throw DimensionError("patchify: expects 1xHxW image");
  const std::size_t nn = static_cast<std::size_t>(n);
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h % nn != 0 || w % nn != 0)
    throw DimensionError("patchify: image dims must be divisible by n");
  const std::size_t ph = h / nn, pw = w / nn;
  Tensor out({ph * pw, nn, nn});
  for (std::size_t pi = 0; pi < ph; ++pi)
    for (std::size_t pj = 0; pj < pw; ++pj) {
      double* dst = out.data() + (pi * pw + pj) * nn * nn;
      for (std::size_t r = 0; r < nn; ++r) {
        const double* src = image.data() + (pi * nn + r) * w + pj * nn;
        for (std::size_t c = 0; c < nn; ++c) dst[r * nn + c] = src[c];
      }
    }
  return out;
}

// Exact inverse of patchify for a ph x pw patch grid.
inline Tensor unpatchify(const Tensor& patches, std::size_t ph, std::size_t pw) {
  if (patches.rank() != 3 || patches.dim(1) != patches.dim(2))
    throw DimensionError("unpatchify: expects P x n x n patches");
  if (patches.dim(0) != ph * pw)
    throw DimensionError("unpatchify: patch count does not match grid");
  const std::size_t nn = patches.dim(1);
  Tensor out({1, ph * nn, pw * nn});
  const std::size_t w = pw * nn;
  for (std::size_t pi = 0; pi < ph; ++pi)
    for (std::size_t pj = 0; pj < pw; ++pj) {
      const double* src = patches.data() + (pi * pw + pj) * nn * nn;
      for (std::size_t r = 0; r < nn; ++r) {
        double* dst = out.data() + (pi * nn + r) * w + pj * nn;
        for (std::size_t c = 0; c < nn; ++c) dst[c] = src[r * nn + c];
      }
    }
  return out;
}

// Direct evaluation of the 2D DCT-II double sum,
// F(u,v) = (2/n) C(u) C(v) sum_x sum_y f(x,y) cos[(2x+1)u pi / 2n] cos[(2y+1)v pi / 2n].
// The reference path; the separable dct2 below must agree with it.
inline CoeffTable dct2_naive(const Tensor& patch) {
  if (patch.rank() != 2 || patch.dim(0) != patch.dim(1))
    throw DimensionError("dct2_naive: expects a square patch");
  const int n = static_cast<int>(patch.dim(0));
  const double pi = 3.14159265358979323846;
  const double c0 = 1.0 / std::sqrt(2.0);
  CoeffTable out({patch.dim(0), patch.dim(1)});
  for (int u = 0; u < n; ++u) {
    const double cu = (u == 0) ? c0 : 1.0;
    for (int v = 0; v < n; ++v) {
      const double cv = (v == 0) ? c0 : 1.0;
      double acc = 0.0;
      for (int x = 0; x < n; ++x)
        for (int y = 0; y < n; ++y)
          acc += patch.at2(static_cast<std::size_t>(x), static_cast<std::size_t>(y)) *
                 std::cos((2 * x + 1) * u * pi / (2.0 * n)) *
                 std::cos((2 * y + 1) * v * pi / (2.0 * n));
      out.at2(static_cast<std::size_t>(u), static_cast<std::size_t>(v)) =
          (2.0 / n) * cu * cv * acc;
    }
  }
  return out;
}

// Separable factorization: F = B f B^T.
inline CoeffTable dct2(const Tensor& patch, const DctPlan& plan) {
  if (patch.rank() != 2 || patch.dim(0) != patch.dim(1))
    throw DimensionError("dct2: expects a square patch");
  if (static_cast<int>(patch.dim(0)) != plan.n)
    throw DimensionError("dct2: patch size does not match plan");
  Tensor tmp = matmul(plan.basis, patch);
  // tmp * B^T without materializing the transpose
  const std::size_t n = patch.dim(0);
  CoeffTable out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* trow = tmp.data() + i * n;
      const double* brow = plan.basis.data() + j * n;
      for (std::size_t k = 0; k < n; ++k) acc += trow[k] * brow[k];
      out.at2(i, j) = acc;
    }
  return out;
}

// Inverse transform: f = B^T F B.
inline Tensor idct2(const CoeffTable& coeffs, const DctPlan& plan) {
  if (coeffs.rank() != 2 || coeffs.dim(0) != coeffs.dim(1))
    throw DimensionError("idct2: expects a square coefficient table");
  if (static_cast<int>(coeffs.dim(0)) != plan.n)
    throw DimensionError("idct2: table size does not match plan");
  const std::size_t n = coeffs.dim(0);
  // B^T F
  Tensor tmp({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) {
      const double bv = plan.basis.at2(k, i);
      if (bv == 0.0) continue;
      const double* frow = coeffs.data() + k * n;
      double* trow = tmp.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) trow[j] += bv * frow[j];
    }
  return matmul(tmp, plan.basis);
}

// Keeps the bottom-right m x m coefficients, zeroes the rest. Idempotent,
// never increases energy.
inline CoeffTable retain_high_freq(const CoeffTable& coeffs, const MaskSpec& mask) {
  if (coeffs.rank() != 2 || coeffs.dim(0) != coeffs.dim(1))
    throw DimensionError("retain_high_freq: expects a square table");
  if (static_cast<int>(coeffs.dim(0)) != mask.n)
    throw DimensionError("retain_high_freq: table size does not match mask");
  const int n = mask.n;
  CoeffTable out({coeffs.dim(0), coeffs.dim(1)});
  const int lo = n - mask.m;
  for (int u = lo; u < n; ++u)
    for (int v = lo; v < n; ++v)
      out.at2(static_cast<std::size_t>(u), static_cast<std::size_t>(v)) =
          coeffs.at2(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
  return out;
}

// pad -> patchify -> dct2 -> retain_high_freq -> reassemble. The default
// coefficient-domain mode feeds masked tables straight to the extractor;
// reconstructed-spatial applies idct2 first (visualization / ablation).
inline FreqImage preprocess(const Tensor& image, int n, int m,
                            FreqMode mode = FreqMode::CoefficientDomain) {
  MaskSpec mask(n, m);
  const DctPlan plan = DctPlan::make(n);
  const Tensor padded = pad_to_multiple(image, n);
  const std::size_t nn = static_cast<std::size_t>(n);
  const std::size_t ph = padded.dim(1) / nn, pw = padded.dim(2) / nn;
  Tensor patches = patchify(padded, n);
  Tensor out_patches({patches.dim(0), nn, nn});
  Tensor patch({nn, nn});
  for (std::size_t p = 0; p < patches.dim(0); ++p) {
    std::copy(patches.data() + p * nn * nn, patches.data() + (p + 1) * nn * nn,
              patch.data());
    CoeffTable masked = retain_high_freq(dct2(patch, plan), mask);
    if (mode == FreqMode::ReconstructedSpatial) masked = idct2(masked, plan);
    std::copy(masked.data(), masked.data() + nn * nn,
              out_patches.data() + p * nn * nn);
  }
  FreqImage freq;
  freq.data = unpatchify(out_patches, ph, pw);
  freq.mode = mode;
  return freq;
}

// Fraction of coefficient energy kept by the mask, aggregated over all blocks.
// Orthonormality makes the denominator equal the padded pixel energy.
inline double retained_energy_fraction(const Tensor& image, int n, int m) {
  MaskSpec mask(n, m);
  const DctPlan plan = DctPlan::make(n);
  const Tensor padded = pad_to_multiple(image, n);
  Tensor patches = patchify(padded, n);
  const std::size_t nn = static_cast<std::size_t>(n);
  Tensor patch({nn, nn});
  double total = 0.0, kept = 0.0;
  for (std::size_t p = 0; p < patches.dim(0); ++p) {
    std::copy(patches.data() + p * nn * nn, patches.data() + (p + 1) * nn * nn,
              patch.data());
    CoeffTable coeffs = dct2(patch, plan);
    for (int u = 0; u < n; ++u)
      for (int v = 0; v < n; ++v) {
        const double c = coeffs.at2(static_cast<std::size_t>(u),
                                    static_cast<std::size_t>(v));
        total += c * c;
        if (mask.retained(u, v)) kept += c * c;
      }
  }
  if (total == 0.0) return 1.0;  // nothing to discard
  return kept / total;
}

}  // namespace mfh
