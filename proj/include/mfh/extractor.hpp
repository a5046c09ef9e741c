#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mfh/errors.hpp"
#include "mfh/freq_transform.hpp"
#include "mfh/rng.hpp"
#include "mfh/tensor.hpp"

namespace mfh {

// Token grid layout throughout this module: C x h x w, channel-first, with
// one token per spatial location.

// Largest of {16,8,4,2} dividing C while keeping a bottleneck of at least 2;
// falls back to 1 for tiny channel counts. 256 -> 16, 8 -> 4.
inline int derive_reduction(int channels) {
  for (int r : {16, 8, 4, 2})
    if (channels % r == 0 && channels / r >= 2) return r;
  return 1;
}

struct ExtractorConfig {
  int channels = 256;     // C
  int patch_size = 8;     // n
  int retain = 5;         // m
  int mlp_layers = 6;
  int expansion = 2;      // MLP hidden = expansion * C
  int reduction = 16;     // channel-attention bottleneck = C / reduction
  double dropout = 0.3;
  double pe_scale = 1.0;
  FreqMode freq_mode = FreqMode::CoefficientDomain;

  void validate() const {
    if (patch_size != 2 && patch_size != 4 && patch_size != 8 && patch_size != 16)
      throw ParameterError("patch_size must be one of {2,4,8,16}");
    if (retain < 1 || retain > patch_size)
      throw ParameterError("retain must be in [1, patch_size]");
    if (channels < 4 || channels % 4 != 0)
      throw ParameterError("channels must be a positive multiple of 4");
    if (mlp_layers < 1) throw ParameterError("mlp_layers must be >= 1");
    if (expansion < 1) throw ParameterError("expansion must be >= 1");
    if (reduction < 1 || channels % reduction != 0)
      throw ParameterError("reduction must divide channels");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ParameterError("dropout must be in [0, 1)");
  }
};

struct MlpBlockParams {
  Tensor ln_gamma, ln_beta;  // C
  Tensor fc1_w, fc1_b;       // rC x C, rC
  Tensor fc2_w, fc2_b;       // C x rC, C
};

struct ChannelAttentionParams {
  Tensor w1, b1;  // C/r' x C, C/r'
  Tensor w2, b2;  // C x C/r', C
};

struct ExtractorParams {
  ExtractorConfig cfg;
  Tensor embed_w, embed_b;  // C x 1 x n x n, C
  std::vector<MlpBlockParams> blocks;
  ChannelAttentionParams ca;

  static ExtractorParams init(const ExtractorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto C = static_cast<std::size_t>(cfg.channels);
    const auto n = static_cast<std::size_t>(cfg.patch_size);
    const auto hidden = C * static_cast<std::size_t>(cfg.expansion);
    const auto squeeze = C / static_cast<std::size_t>(cfg.reduction);
    ExtractorParams p;
    p.cfg = cfg;
    // fan-in counts the coefficients the retention mask can pass; the rest
    // of each patch is structurally zero and would only shrink the scale
    const auto live = static_cast<std::size_t>(cfg.retain) *
                      static_cast<std::size_t>(cfg.retain);
    p.embed_w = init_weight({C, 1, n, n}, live, derive_seed(seed, "embed.w"));
    p.embed_b = Tensor({C});
    for (int k = 0; k < cfg.mlp_layers; ++k) {
      const std::string prefix = "mlp" + std::to_string(k);
      MlpBlockParams b;
      b.ln_gamma = Tensor({C}, 1.0);
      b.ln_beta = Tensor({C});
      b.fc1_w = init_weight({hidden, C}, C, derive_seed(seed, prefix + ".fc1.w"));
      b.fc1_b = Tensor({hidden});
      // the residual branch starts silent: each block is the identity until
      // training opens it, so early logits carry only the embedded signal
      b.fc2_w = Tensor({C, hidden});
      b.fc2_b = Tensor({C});
      p.blocks.push_back(std::move(b));
    }
    p.ca.w1 = init_weight({squeeze, C}, C, derive_seed(seed, "ca.w1"));
    p.ca.b1 = Tensor({squeeze});
    p.ca.w2 = init_weight({C, squeeze}, squeeze, derive_seed(seed, "ca.w2"));
    // gates start open so the stream passes at close to full strength
    // until the squeeze path earns an opinion
    p.ca.b2 = Tensor({C}, 2.0);
    return p;
  }
};

struct ExtractorFlags {
  bool channel_attention = true;
  bool positional_encoding = true;
};

// Dropout is off in deterministic mode; training mode draws a named seeded
// mask and scales surviving units by 1/(1-p).
struct Dropout {
  bool training = false;
  std::uint64_t seed = 0;

  static Dropout off() { return {}; }
  static Dropout seeded(std::uint64_t s) { return {true, s}; }
};

namespace detail {

inline void apply_dropout(Tensor& t, double rate, Rng& rng) {
  if (rate <= 0.0) return;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (double& v : t.values()) v = (rng.next_unit() >= rate) ? v * keep_scale : 0.0;
}

}  // namespace detail

// Kernel-n stride-n convolution: each n x n block becomes one C-dim token.
inline Tensor patch_embed(const FreqImage& freq, const ExtractorParams& params) {
  const auto n = static_cast<std::size_t>(params.cfg.patch_size);
  if (freq.data.rank() != 3 || freq.data.dim(0) != 1)
    throw DimensionError("patch_embed: expects 1xHxW input");
  if (freq.data.dim(1) % n != 0 || freq.data.dim(2) % n != 0)
    throw DimensionError("patch_embed: input dims must be divisible by patch size");
  return conv2d(freq.data, params.embed_w, params.embed_b, n, 0);
}

// tokens + Drop(fc2(Drop(gelu(fc1(LN(tokens)))))), applied per spatial location.
inline Tensor mlp_block(const Tensor& tokens, const MlpBlockParams& block,
                        double dropout_rate, Dropout mode = Dropout::off()) {
  if (tokens.rank() != 3) throw DimensionError("mlp_block: expects C x h x w");
  const std::size_t C = tokens.dim(0), hw = tokens.dim(1) * tokens.dim(2);
  if (block.ln_gamma.size() != C || block.fc1_w.dim(1) != C)
    throw DimensionError("mlp_block: channel dim does not match params");
  const std::size_t hidden = block.fc1_w.dim(0);

  Rng rng(derive_seed(mode.seed, "dropout"));
  Tensor out = tokens;
  Tensor x({C}), h({hidden});
  for (std::size_t t = 0; t < hw; ++t) {
    for (std::size_t c = 0; c < C; ++c) x[c] = tokens[c * hw + t];
    Tensor normed = layer_norm(x, block.ln_gamma, block.ln_beta);
    h = linear(block.fc1_w, normed, block.fc1_b);
    for (double& v : h.values()) v = gelu(v);
    if (mode.training) detail::apply_dropout(h, dropout_rate, rng);
    Tensor u = linear(block.fc2_w, h, block.fc2_b);
    if (mode.training) detail::apply_dropout(u, dropout_rate, rng);
    for (std::size_t c = 0; c < C; ++c) out[c * hw + t] += u[c];
  }
  return out;
}

// Squeeze-excitation gate: v = ReLU(W1 GAP(x) + b1), gate = Sigmoid(W2 v + b2),
// out[c,i,j] = x[c,i,j] * gate[c].
inline Tensor channel_attention(const Tensor& tokens,
                                const ChannelAttentionParams& params) {
  if (tokens.rank() != 3)
    throw DimensionError("channel_attention: expects C x h x w");
  const std::size_t C = tokens.dim(0), hw = tokens.dim(1) * tokens.dim(2);
  if (params.w1.dim(1) != C || params.w2.dim(0) != C)
    throw DimensionError("channel_attention: channel dim does not match params");
  Tensor squeezed = global_avg_pool(tokens);
  Tensor v = linear(params.w1, squeezed, params.b1);
  for (double& x : v.values()) x = relu(x);
  Tensor gate = linear(params.w2, v, params.b2);
  for (double& x : gate.values()) x = sigmoid(x);
  Tensor out = tokens;
  for (std::size_t c = 0; c < C; ++c) {
    double* row = out.data() + c * hw;
    for (std::size_t i = 0; i < hw; ++i) row[i] *= gate[c];
  }
  return out;
}

// 1D sinusoid pattern for a scalar position p:
// out[2i] = sin(p / 10000^(2i/d)), out[2i+1] = cos(p / 10000^(2i/d)).
inline std::vector<double> sinusoid_vector(double p, int d) {
  if (d < 2 || d % 2 != 0)
    throw ParameterError("sinusoid_vector: dimension must be even and >= 2");
  std::vector<double> out(static_cast<std::size_t>(d));
  for (int i = 0; 2 * i < d; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / d);
    out[static_cast<std::size_t>(2 * i)] = std::sin(p * freq);
    out[static_cast<std::size_t>(2 * i + 1)] = std::cos(p * freq);
  }
  return out;
}

// Two concatenated 1D encodings over normalized coordinates:
// at (x,y) the first d/2 channels encode x/h, the last d/2 encode y/w.
inline Tensor positional_encoding_2d(int h, int w, int d, double scale) {
  if (d < 4 || d % 4 != 0)
    throw ParameterError("positional_encoding_2d: d must be divisible by 4");
  if (h < 1 || w < 1)
    throw ParameterError("positional_encoding_2d: grid dims must be positive");
  const int half = d / 2;
  Tensor out({static_cast<std::size_t>(d), static_cast<std::size_t>(h),
              static_cast<std::size_t>(w)});
  const std::size_t hw = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  for (int x = 0; x < h; ++x) {
    const auto px = sinusoid_vector(scale * x / h, half);
    for (int c = 0; c < half; ++c) {
      double* row = out.data() + static_cast<std::size_t>(c) * hw +
                    static_cast<std::size_t>(x) * static_cast<std::size_t>(w);
      for (int y = 0; y < w; ++y) row[y] = px[static_cast<std::size_t>(c)];
    }
  }
  for (int y = 0; y < w; ++y) {
    const auto py = sinusoid_vector(scale * y / w, half);
    for (int c = 0; c < half; ++c) {
      double* plane = out.data() + static_cast<std::size_t>(half + c) * hw;
      for (int x = 0; x < h; ++x)
        plane[static_cast<std::size_t>(x) * static_cast<std::size_t>(w) +
              static_cast<std::size_t>(y)] = py[static_cast<std::size_t>(c)];
    }
  }
  return out;
}

// 2x2 average pooling, stride 2, ceil mode; edge windows average only the
// in-bounds cells.
inline Tensor downsample_to_match(const Tensor& tokens) {
  if (tokens.rank() != 3)
    throw DimensionError("downsample_to_match: expects C x h x w");
  const std::size_t C = tokens.dim(0), h = tokens.dim(1), w = tokens.dim(2);
  const std::size_t ho = (h + 1) / 2, wo = (w + 1) / 2;
  Tensor out({C, ho, wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        double acc = 0.0;
        int count = 0;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t y = 2 * i + di, x = 2 * j + dj;
            if (y < h && x < w) {
              acc += tokens.at3(c, y, x);
              ++count;
            }
          }
        out.at3(c, i, j) = acc / count;
      }
  return out;
}

// Full frequency stream: preprocess -> patch_embed -> MLP blocks ->
// channel attention -> positional encoding -> pool down to the /16 fusion
// resolution. Produces K.
inline Tensor extractor_forward(const Tensor& image, const ExtractorParams& params,
                                ExtractorFlags flags = {},
                                Dropout mode = Dropout::off()) {
  params.cfg.validate();
  const FreqImage freq = preprocess(image, params.cfg.patch_size,
                                    params.cfg.retain, params.cfg.freq_mode);
  Tensor tokens = patch_embed(freq, params);
  for (std::size_t k = 0; k < params.blocks.size(); ++k) {
    Dropout block_mode = mode;
    if (mode.training) block_mode.seed = derive_seed(mode.seed, "mlp" + std::to_string(k));
    tokens = mlp_block(tokens, params.blocks[k], params.cfg.dropout, block_mode);
  }
  if (flags.channel_attention) tokens = channel_attention(tokens, params.ca);
  if (flags.positional_encoding) {
    const Tensor pe = positional_encoding_2d(static_cast<int>(tokens.dim(1)),
                                             static_cast<int>(tokens.dim(2)),
                                             params.cfg.channels,
                                             params.cfg.pe_scale);
    add_inplace(tokens, pe);
  }
  // patch embedding downsamples by n; pool the rest of the way to /16
  for (int stride = params.cfg.patch_size; stride < 16; stride *= 2)
    tokens = downsample_to_match(tokens);
  return tokens;
}

}  // namespace mfh
