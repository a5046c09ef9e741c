#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "mfh/errors.hpp"
#include "mfh/rng.hpp"
#include "mfh/tensor.hpp"

namespace mfh {

// How the two streams enter the attention conv: stacked channelwise, or
// summed first (halving the conv input width).
enum class FabAttention { Concat, Add };

// Whether the per-channel rescale vectors are trainable or pinned to 1.
enum class FabVectors { Learnable, Unit };

struct FabParams {
  FabAttention attention = FabAttention::Concat;
  FabVectors vectors = FabVectors::Learnable;
  Tensor conv_w;  // 2 x (2C or C) x 3 x 3
  Tensor conv_b;  // 2
  Tensor v_k;     // C
  Tensor v_t;     // C

  static FabParams init(int channels, std::uint64_t seed,
                        FabAttention attention = FabAttention::Concat,
                        FabVectors vectors = FabVectors::Learnable) {
    if (channels < 1) throw ParameterError("fab: channels must be positive");
    const auto C = static_cast<std::size_t>(channels);
    const std::size_t cin =
        (attention == FabAttention::Concat) ? 2 * C : C;
    FabParams p;
    p.attention = attention;
    p.vectors = vectors;
    // zero weights make both attention maps spatially flat, and the bias
    // starts them open: fusion begins as a faithful pass-through of both
    // streams and commits only when the loss asks it to
    p.conv_w = Tensor({2, cin, 3, 3});
    p.conv_b = Tensor({2}, 2.0);
    p.v_k = Tensor({C}, 1.0);
    p.v_t = Tensor({C}, 1.0);
    return p;
  }
};

namespace detail {

inline Tensor fab_conv_input(const Tensor& k, const Tensor& t,
                             FabAttention attention) {
  const std::size_t C = k.dim(0), h = k.dim(1), w = k.dim(2);
  if (attention == FabAttention::Concat) {
    Tensor in({2 * C, h, w});
    std::copy(k.data(), k.data() + k.size(), in.data());
    std::copy(t.data(), t.data() + t.size(), in.data() + k.size());
    return in;
  }
  if (attention == FabAttention::Add) return add(k, t);
  throw ParameterError("fab: unknown attention variant");
}

}  // namespace detail

// Two-channel spatial attention map over the joined streams.
inline Tensor fab_attention_map(const Tensor& k, const Tensor& t,
                                const FabParams& params) {
  if (!k.same_shape(t))
    throw DimensionError("fab: K and T shapes disagree " + shape_string(k) +
                         " vs " + shape_string(t));
  if (k.rank() != 3) throw DimensionError("fab: expects C x h x w streams");
  const Tensor in = detail::fab_conv_input(k, t, params.attention);
  if (params.conv_w.dim(1) != in.dim(0))
    throw DimensionError("fab: conv input channels disagree with variant");
  Tensor a = conv2d(in, params.conv_w, params.conv_b, 1, 1);
  for (double& v : a.values()) v = sigmoid(v);
  return a;  // 2 x h x w, entries in (0,1)
}

// out[c,i,j] = A[0,i,j] * K[c,i,j] * v_k[c] + A[1,i,j] * T[c,i,j] * v_t[c]
inline Tensor fab_forward(const Tensor& k, const Tensor& t,
                          const FabParams& params) {
  if (params.vectors != FabVectors::Learnable &&
      params.vectors != FabVectors::Unit)
    throw ParameterError("fab: unknown vectors variant");
  const Tensor a = fab_attention_map(k, t, params);
  const std::size_t C = k.dim(0), hw = k.dim(1) * k.dim(2);
  if (params.v_k.size() != C || params.v_t.size() != C)
    throw DimensionError("fab: vector length disagrees with channel count");
  const bool unit = params.vectors == FabVectors::Unit;
  Tensor out(k.shape());
  const double* a0 = a.data();
  const double* a1 = a.data() + hw;
  for (std::size_t c = 0; c < C; ++c) {
    const double vk = unit ? 1.0 : params.v_k[c];
    const double vt = unit ? 1.0 : params.v_t[c];
    const double* kc = k.data() + c * hw;
    const double* tc = t.data() + c * hw;
    double* oc = out.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i)
      oc[i] = a0[i] * kc[i] * vk + a1[i] * tc[i] * vt;
  }
  return out;
}

// Same computation routed through an explicit variant check, so every cell of
// the {concat,add} x {learnable,unit} grid is callable by name.
inline Tensor fab_variants(const Tensor& k, const Tensor& t,
                           const FabParams& params) {
  if (params.attention != FabAttention::Concat &&
      params.attention != FabAttention::Add)
    throw ParameterError("fab: unknown attention variant");
  return fab_forward(k, t, params);
}

inline FabAttention parse_fab_attention(std::string_view s) {
  if (s == "concat") return FabAttention::Concat;
  if (s == "add") return FabAttention::Add;
  throw ParameterError("fab attention must be 'concat' or 'add', got '" +
                       std::string(s) + "'");
}

inline FabVectors parse_fab_vectors(std::string_view s) {
  if (s == "learnable") return FabVectors::Learnable;
  if (s == "unit") return FabVectors::Unit;
  throw ParameterError("fab vectors must be 'learnable' or 'unit', got '" +
                       std::string(s) + "'");
}

inline std::string to_string(FabAttention a) {
  return a == FabAttention::Concat ? "concat" : "add";
}

inline std::string to_string(FabVectors v) {
  return v == FabVectors::Learnable ? "learnable" : "unit";
}

}  // namespace mfh
