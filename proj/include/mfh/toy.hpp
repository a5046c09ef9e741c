#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mfh/autograd.hpp"
#include "mfh/errors.hpp"
#include "mfh/extractor.hpp"
#include "mfh/fab.hpp"
#include "mfh/freq_transform.hpp"
#include "mfh/pipeline.hpp"
#include "mfh/rng.hpp"
#include "mfh/tensor.hpp"

namespace mfh {

// Synthetic binary task at desk scale: every image carries one large smooth
// blob; class 1 adds a small hard-edged blob offset to the upper right, a
// superscript-like layout whose edges live in the high-frequency bands.

struct ToySample {
  Tensor image;  // 1 x 64 x 64, values in [0,1]
  int label = 0;
};

inline ToySample make_toy_sample(std::uint64_t seed, int label) {
  Rng rng(seed);
  ToySample s;
  s.label = label;
  s.image = Tensor({1, 64, 64});
  const double cy = rng.uniform(34.0, 42.0);
  const double cx = rng.uniform(22.0, 34.0);
  const double sigma = rng.uniform(7.0, 10.0);
  const double amp = rng.uniform(0.7, 1.0);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const double dy = y - cy, dx = x - cx;
      s.image.at3(0, y, x) =
          amp * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
    }
  if (label == 1) {
    const double sy = cy - rng.uniform(16.0, 22.0);
    const double sx = cx + rng.uniform(14.0, 20.0);
    const double r = rng.uniform(5.0, 7.0);
    const double a2 = rng.uniform(0.8, 1.0);
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        const double dy = y - sy, dx = x - sx;
        if (dy * dy + dx * dx <= r * r) s.image.at3(0, y, x) += a2;
      }
  }
  for (double& v : s.image.values()) v = std::min(1.0, std::max(0.0, v));
  return s;
}

// Fixed balanced batch of 8: samples 0-3 are class 0, samples 4-7 class 1.
inline std::vector<ToySample> make_toy_batch(std::uint64_t dataset_seed) {
  std::vector<ToySample> batch;
  for (int i = 0; i < 8; ++i) {
    const int label = i < 4 ? 0 : 1;
    batch.push_back(
        make_toy_sample(derive_seed(dataset_seed, "sample" + std::to_string(i)),
                        label));
  }
  return batch;
}

struct ToyConfig {
  std::uint64_t dataset_seed = 0;
  std::uint64_t init_seed = 0;
  int steps = 300;
  double lr = 0.4;
  int channels = 8;
  int mlp_layers = 2;
  // 16-pixel patches keep the lit region from drowning in the global pool:
  // the marker covers about one token in sixteen instead of one in sixty-four
  int patch_size = 16;
  int retain = 12;
  double pe_scale = 1.0;
  FreqMode freq_mode = FreqMode::CoefficientDomain;
  PipelineFlags flags;
  FabAttention fab_attention = FabAttention::Concat;
  FabVectors fab_vectors = FabVectors::Learnable;

  ExtractorConfig extractor() const {
    ExtractorConfig cfg;
    cfg.channels = channels;
    cfg.patch_size = patch_size;
    cfg.retain = retain;
    cfg.mlp_layers = mlp_layers;
    cfg.reduction = derive_reduction(channels);
    cfg.dropout = 0.0;  // training stays deterministic
    cfg.pe_scale = pe_scale;
    cfg.freq_mode = freq_mode;
    return cfg;
  }
};

// --- whole-pipeline gradients ------------------------------------------------

struct PipelineGrads {
  Tensor embed_w, embed_b;
  std::vector<MlpBlockGrads> blocks;
  CaGrads ca;
  StubGrads stub;
  FabGrads fab;
  Tensor head_w, head_b;

  static PipelineGrads zero_like(const PipelineParams& p) {
    PipelineGrads g;
    g.embed_w = Tensor(p.extractor.embed_w.shape());
    g.embed_b = Tensor(p.extractor.embed_b.shape());
    for (const auto& b : p.extractor.blocks)
      g.blocks.push_back(MlpBlockGrads::zero_like(b));
    g.ca = CaGrads::zero_like(p.extractor.ca);
    g.stub = StubGrads::zero_like(p.stub);
    g.fab = FabGrads::zero_like(p.fab);
    g.head_w = Tensor(p.head.w.shape());
    g.head_b = Tensor(p.head.b.shape());
    return g;
  }
};

// Everything the backward pass needs from one sample's forward pass.
struct SampleTape {
  Tensor freq;  // preprocessed frequency image (fixed across steps)
  std::vector<MlpBlockCache> blocks;
  bool ca_used = false;
  CaCache ca;
  std::vector<std::array<std::size_t, 2>> pool_shapes;  // (h, w) before each pool
  std::size_t k_h = 0, k_w = 0;
  StubCache stub;
  bool fab_used = false;
  FabCache fab;
  Tensor k, t, fused, pooled;
  double logit = 0.0;
};

// Forward through frequency stream + stub + fusion + head, recording the tape.
inline double pipeline_forward_taped(const Tensor& freq_data,
                                     const Tensor& padded_image,
                                     const Tensor* pe,
                                     const PipelineParams& params,
                                     PipelineFlags flags, SampleTape& tape) {
  const auto n = static_cast<std::size_t>(params.extractor.cfg.patch_size);
  tape.freq = freq_data;
  Tensor tokens = conv2d(freq_data, params.extractor.embed_w,
                         params.extractor.embed_b, n, 0);
  tape.blocks.assign(params.extractor.blocks.size(), MlpBlockCache{});
  for (std::size_t i = 0; i < params.extractor.blocks.size(); ++i)
    tokens = mlp_block_cached(tokens, params.extractor.blocks[i], tape.blocks[i]);
  tape.ca_used = flags.channel_attention;
  if (flags.channel_attention)
    tokens = channel_attention_cached(tokens, params.extractor.ca, tape.ca);
  if (flags.positional_encoding && pe) add_inplace(tokens, *pe);
  tape.pool_shapes.clear();
  for (int stride = params.extractor.cfg.patch_size; stride < 16; stride *= 2) {
    tape.pool_shapes.push_back({tokens.dim(1), tokens.dim(2)});
    tokens = downsample_to_match(tokens);
  }
  tape.k = tokens;
  tape.k_h = tokens.dim(1);
  tape.k_w = tokens.dim(2);
  tape.t = stub_forward_cached(padded_image, params.stub, tape.stub);
  tape.fab_used = flags.fab;
  if (flags.fab)
    tape.fused = fab_forward_cached(tape.k, tape.t, params.fab, tape.fab);
  else
    tape.fused = add(tape.k, tape.t);
  tape.pooled = global_avg_pool(tape.fused);
  tape.logit = params.head.b[0];
  for (std::size_t c = 0; c < tape.pooled.size(); ++c)
    tape.logit += params.head.w[c] * tape.pooled[c];
  return tape.logit;
}

inline void pipeline_backward_taped(const PipelineParams& params,
                                    PipelineFlags flags, const SampleTape& tape,
                                    double glogit, PipelineGrads& grads) {
  // head
  Tensor gpooled(tape.pooled.shape());
  for (std::size_t c = 0; c < tape.pooled.size(); ++c) {
    grads.head_w[c] += glogit * tape.pooled[c];
    gpooled[c] = glogit * params.head.w[c];
  }
  grads.head_b[0] += glogit;
  Tensor gfused = global_avg_pool_backward(gpooled, tape.fused.dim(1),
                                           tape.fused.dim(2));
  // fusion
  Tensor gk, gt;
  if (tape.fab_used) {
    FabInputGrads in = fab_backward(params.fab, tape.fab, gfused, grads.fab);
    gk = std::move(in.gk);
    gt = std::move(in.gt);
  } else {
    gk = gfused;
    gt = gfused;
  }
  // spatial stub
  stub_backward(params.stub, tape.stub, gt, grads.stub);
  // frequency stream, poolings in reverse
  Tensor g = std::move(gk);
  for (auto it = tape.pool_shapes.rbegin(); it != tape.pool_shapes.rend(); ++it)
    g = downsample_backward(g, (*it)[0], (*it)[1]);
  // positional encoding is a constant offset: gradient passes through
  if (tape.ca_used)
    g = channel_attention_backward(params.extractor.ca, tape.ca, g, grads.ca);
  for (std::size_t i = params.extractor.blocks.size(); i-- > 0;)
    g = mlp_block_backward(params.extractor.blocks[i], tape.blocks[i], g,
                           grads.blocks[i]);
  const auto n = static_cast<std::size_t>(params.extractor.cfg.patch_size);
  ConvGrads eg = conv2d_backward(tape.freq, params.extractor.embed_w, n, 0, g);
  add_inplace(grads.embed_w, eg.gw);
  add_inplace(grads.embed_b, eg.gb);
}

inline void apply_sgd(PipelineParams& p, const PipelineGrads& g, double lr) {
  axpy_inplace(p.extractor.embed_w, -lr, g.embed_w);
  axpy_inplace(p.extractor.embed_b, -lr, g.embed_b);
  for (std::size_t i = 0; i < p.extractor.blocks.size(); ++i) {
    auto& b = p.extractor.blocks[i];
    const auto& gb = g.blocks[i];
    axpy_inplace(b.ln_gamma, -lr, gb.ln_gamma);
    axpy_inplace(b.ln_beta, -lr, gb.ln_beta);
    axpy_inplace(b.fc1_w, -lr, gb.fc1_w);
    axpy_inplace(b.fc1_b, -lr, gb.fc1_b);
    axpy_inplace(b.fc2_w, -lr, gb.fc2_w);
    axpy_inplace(b.fc2_b, -lr, gb.fc2_b);
  }
  axpy_inplace(p.extractor.ca.w1, -lr, g.ca.w1);
  axpy_inplace(p.extractor.ca.b1, -lr, g.ca.b1);
  axpy_inplace(p.extractor.ca.w2, -lr, g.ca.w2);
  axpy_inplace(p.extractor.ca.b2, -lr, g.ca.b2);
  for (std::size_t k = 0; k < 4; ++k) {
    axpy_inplace(p.stub.conv_w[k], -lr, g.stub.conv_w[k]);
    axpy_inplace(p.stub.conv_b[k], -lr, g.stub.conv_b[k]);
  }
  axpy_inplace(p.fab.conv_w, -lr, g.fab.conv_w);
  axpy_inplace(p.fab.conv_b, -lr, g.fab.conv_b);
  axpy_inplace(p.fab.v_k, -lr, g.fab.v_k);
  axpy_inplace(p.fab.v_t, -lr, g.fab.v_t);
  axpy_inplace(p.head.w, -lr, g.head_w);
  axpy_inplace(p.head.b, -lr, g.head_b);
}

// numerically stable log(1 + exp(z)) - y*z
inline double logistic_loss(double logit, int label) {
  const double softplus =
      std::max(logit, 0.0) + std::log1p(std::exp(-std::abs(logit)));
  return softplus - label * logit;
}

// Full-batch gradient descent on the fused pipeline. Returns the per-step
// loss trace (loss measured before each update, so row 0 is the initial
// loss). Optionally hands back the trained parameters.
inline std::vector<double> train_toy(const ToyConfig& cfg,
                                     PipelineParams* trained = nullptr) {
  if (cfg.steps < 1) throw ParameterError("train_toy: steps must be >= 1");
  const ExtractorConfig ext_cfg = cfg.extractor();
  ext_cfg.validate();

  const std::vector<ToySample> batch = make_toy_batch(cfg.dataset_seed);
  const std::size_t B = batch.size();

  // fixed per-sample inputs: shared padded canvas + frequency image
  std::vector<Tensor> padded, freq;
  for (const auto& s : batch) {
    Tensor p = pad_for_fusion(s.image);
    freq.push_back(
        preprocess(p, cfg.patch_size, cfg.retain, cfg.freq_mode).data);
    padded.push_back(std::move(p));
  }
  // positional encoding is a constant for the fixed token grid
  const std::size_t grid_h = padded[0].dim(1) / cfg.patch_size;
  const std::size_t grid_w = padded[0].dim(2) / cfg.patch_size;
  Tensor pe;
  if (cfg.flags.positional_encoding)
    pe = positional_encoding_2d(static_cast<int>(grid_h),
                                static_cast<int>(grid_w), cfg.channels,
                                cfg.pe_scale);

  PipelineParams params = PipelineParams::init(ext_cfg, cfg.init_seed,
                                               cfg.fab_attention, cfg.fab_vectors);
  std::vector<double> trace;
  trace.reserve(static_cast<std::size_t>(cfg.steps));
  std::vector<SampleTape> tapes(B);
  for (int step = 0; step < cfg.steps; ++step) {
    PipelineGrads grads = PipelineGrads::zero_like(params);
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
      const double z = pipeline_forward_taped(
          freq[i], padded[i], cfg.flags.positional_encoding ? &pe : nullptr,
          params, cfg.flags, tapes[i]);
      loss += logistic_loss(z, batch[i].label);
      const double glogit =
          (sigmoid(z) - batch[i].label) / static_cast<double>(B);
      pipeline_backward_taped(params, cfg.flags, tapes[i], glogit, grads);
    }
    loss /= static_cast<double>(B);
    if (!std::isfinite(loss))
      throw NumericError("toy training diverged at step " + std::to_string(step));
    trace.push_back(loss);
    apply_sgd(params, grads, cfg.lr);
  }
  if (trained) *trained = std::move(params);
  return trace;
}

inline void write_trace_csv(std::ostream& os, const std::vector<double>& trace) {
  os << "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < trace.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, trace[i]);
    os << buf;
  }
}

}  // namespace mfh
