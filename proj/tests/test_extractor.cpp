#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mfh/extractor.hpp"

using namespace mfh;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  fill_uniform(t, rng, lo, hi);
  return t;
}

ExtractorConfig small_config() {
  ExtractorConfig cfg;
  cfg.channels = 8;
  cfg.patch_size = 4;
  cfg.retain = 3;
  cfg.mlp_layers = 2;
  cfg.reduction = 4;
  cfg.dropout = 0.0;
  return cfg;
}

// straight-line per-token evaluation, no shared buffers
Tensor mlp_block_ref(const Tensor& tokens, const MlpBlockParams& p) {
  const std::size_t C = tokens.dim(0), hw = tokens.dim(1) * tokens.dim(2);
  const std::size_t hidden = p.fc1_w.dim(0);
  Tensor out = tokens;
  for (std::size_t t = 0; t < hw; ++t) {
    std::vector<double> x(C);
    for (std::size_t c = 0; c < C; ++c) x[c] = tokens[c * hw + t];
    double mean = 0.0, var = 0.0;
    for (double v : x) mean += v;
    mean /= C;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= C;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    std::vector<double> ln(C);
    for (std::size_t c = 0; c < C; ++c)
      ln[c] = (x[c] - mean) * inv * p.ln_gamma[c] + p.ln_beta[c];
    std::vector<double> h(hidden);
    for (std::size_t o = 0; o < hidden; ++o) {
      double acc = p.fc1_b[o];
      for (std::size_t c = 0; c < C; ++c) acc += p.fc1_w.at2(o, c) * ln[c];
      h[o] = gelu(acc);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double acc = p.fc2_b[c];
      for (std::size_t o = 0; o < hidden; ++o) acc += p.fc2_w.at2(c, o) * h[o];
      out[c * hw + t] += acc;
    }
  }
  return out;
}

Tensor channel_attention_ref(const Tensor& tokens,
                             const ChannelAttentionParams& p) {
  const std::size_t C = tokens.dim(0), hw = tokens.dim(1) * tokens.dim(2);
  const std::size_t S = p.w1.dim(0);
  std::vector<double> s(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t i = 0; i < hw; ++i) s[c] += tokens[c * hw + i];
    s[c] /= hw;
  }
  std::vector<double> v(S);
  for (std::size_t o = 0; o < S; ++o) {
    double acc = p.b1[o];
    for (std::size_t c = 0; c < C; ++c) acc += p.w1.at2(o, c) * s[c];
    v[o] = std::max(acc, 0.0);
  }
  Tensor out = tokens;
  for (std::size_t c = 0; c < C; ++c) {
    double acc = p.b2[c];
    for (std::size_t o = 0; o < S; ++o) acc += p.w2.at2(c, o) * v[o];
    const double gate = 1.0 / (1.0 + std::exp(-acc));
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] *= gate;
  }
  return out;
}

}  // namespace

TEST_CASE("config validation") {
  ExtractorConfig cfg = small_config();
  CHECK_NOTHROW(cfg.validate());
  cfg.patch_size = 5;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = small_config();
  cfg.retain = 5;  // above patch_size 4
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = small_config();
  cfg.channels = 6;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = small_config();
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = small_config();
  cfg.reduction = 3;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("reduction derivation keeps a usable bottleneck") {
  CHECK(derive_reduction(256) == 16);
  CHECK(derive_reduction(64) == 16);
  CHECK(derive_reduction(32) == 16);
  CHECK(derive_reduction(8) == 4);
  CHECK(derive_reduction(4) == 2);
}

TEST_CASE("patch_embed is a summing kernel when weights are ones") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 0);
  for (double& v : params.embed_w.values()) v = 0.0;
  // channel 0 sums its patch
  for (std::size_t i = 0; i < 16; ++i) params.embed_w[i] = 1.0;
  FreqImage freq{random_tensor({1, 8, 8}, 5), FreqMode::CoefficientDomain};
  const Tensor tokens = patch_embed(freq, params);
  CHECK(tokens.dim(0) == 8);
  CHECK(tokens.dim(1) == 2);
  CHECK(tokens.dim(2) == 2);
  double expect = 0.0;
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) expect += freq.data.at3(0, y, x);
  CHECK(tokens.at3(0, 0, 0) == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("patch_embed of a zero image broadcasts the bias") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 1);
  for (std::size_t c = 0; c < 8; ++c) params.embed_b[c] = 0.5 + c;
  FreqImage freq{Tensor({1, 8, 8}), FreqMode::CoefficientDomain};
  const Tensor tokens = patch_embed(freq, params);
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t i = 0; i < 4; ++i)
      CHECK(tokens[c * 4 + i] == 0.5 + c);
  CHECK_THROWS_AS(
      patch_embed(FreqImage{Tensor({1, 7, 8}), FreqMode::CoefficientDomain},
                  params),
      DimensionError);
}

TEST_CASE("mlp_block with zeroed second layer is the identity") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 2);
  MlpBlockParams& blk = params.blocks[0];
  for (double& v : blk.fc2_w.values()) v = 0.0;
  const Tensor tokens = random_tensor({8, 3, 5}, 6);
  CHECK(mlp_block(tokens, blk, 0.0) == tokens);
}

TEST_CASE("mlp_block matches the per-token reference") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 3);
  MlpBlockParams& blk = params.blocks[1];
  Rng rng(9);
  fill_uniform(blk.ln_gamma, rng, 0.5, 1.5);
  fill_uniform(blk.ln_beta, rng, -0.5, 0.5);
  fill_uniform(blk.fc1_b, rng, -0.3, 0.3);
  fill_uniform(blk.fc2_b, rng, -0.3, 0.3);
  const Tensor tokens = random_tensor({8, 4, 4}, 10);
  CHECK(max_abs_diff(mlp_block(tokens, blk, 0.0), mlp_block_ref(tokens, blk)) <
        1e-10);
}

TEST_CASE("deterministic mlp_block ignores the dropout seed") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 4);
  // the branch starts silent; dropout is only visible once fc2 is live
  MlpBlockParams& blk = params.blocks[0];
  blk.fc2_w = random_tensor(blk.fc2_w.shape(), 19, -0.5, 0.5);
  const Tensor tokens = random_tensor({8, 2, 2}, 11);
  const Tensor a = mlp_block(tokens, blk, 0.3, Dropout::off());
  const Tensor b = mlp_block(tokens, blk, 0.3, Dropout::off());
  CHECK(a == b);
  // training mode with positive rate actually drops
  const Tensor c = mlp_block(tokens, blk, 0.5, Dropout::seeded(1));
  CHECK_FALSE(a == c);
}

TEST_CASE("channel_attention halves everything when the gate is neutral") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 5);
  for (double& v : params.ca.w2.values()) v = 0.0;
  for (double& v : params.ca.b2.values()) v = 0.0;
  const Tensor tokens = random_tensor({8, 4, 4}, 12);
  const Tensor out = channel_attention(tokens, params.ca);
  CHECK(max_abs_diff(out, scale(tokens, 0.5)) == 0.0);
}

TEST_CASE("channel_attention matches the loop reference") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 6);
  Rng rng(13);
  fill_uniform(params.ca.b1, rng, -0.3, 0.3);
  fill_uniform(params.ca.b2, rng, -0.3, 0.3);
  const Tensor tokens = random_tensor({8, 5, 3}, 14);
  CHECK(max_abs_diff(channel_attention(tokens, params.ca),
                     channel_attention_ref(tokens, params.ca)) < 1e-10);
}

TEST_CASE("channel_attention never amplifies") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 7);
  const Tensor tokens = random_tensor({8, 4, 4}, 15);
  const Tensor out = channel_attention(tokens, params.ca);
  CHECK(max_abs(out) <= max_abs(tokens));
}

TEST_CASE("positional encoding basics") {
  const Tensor pe = positional_encoding_2d(4, 6, 8, 1.0);
  CHECK(pe.dim(0) == 8);
  CHECK(pe.dim(1) == 4);
  CHECK(pe.dim(2) == 6);
  // position (0,0): sin slots 0, cos slots 1
  for (std::size_t c = 0; c < 8; ++c)
    CHECK(pe.at3(c, 0, 0) == (c % 2 == 0 ? 0.0 : 1.0));
  // bounded
  for (double v : pe.values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  // first half depends only on x, second only on y
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t x = 0; x < 4; ++x)
      for (std::size_t y = 1; y < 6; ++y)
        CHECK(pe.at3(c, x, y) == pe.at3(c, x, 0));
  for (std::size_t c = 4; c < 8; ++c)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 1; x < 4; ++x)
        CHECK(pe.at3(c, x, y) == pe.at3(c, 0, y));
  CHECK_THROWS_AS(positional_encoding_2d(4, 4, 6, 1.0), ParameterError);
}

TEST_CASE("sinusoid pattern evaluates the textbook values") {
  const auto v = sinusoid_vector(1.0, 4);
  CHECK(v[0] == Catch::Approx(std::sin(1.0)).margin(1e-12));
  CHECK(v[1] == Catch::Approx(std::cos(1.0)).margin(1e-12));
  // second pair uses the 10000^(2i/d) divisor
  CHECK(v[2] == Catch::Approx(std::sin(1.0 / 100.0)).margin(1e-12));
  CHECK(v[3] == Catch::Approx(std::cos(1.0 / 100.0)).margin(1e-12));
}

TEST_CASE("downsample averages 2x2 windows") {
  const Tensor x = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = downsample_to_match(x);
  CHECK(y.dim(1) == 1);
  CHECK(y.at3(0, 0, 0) == 2.5);
  // constant grids stay constant, odd dims included
  const Tensor c({3, 5, 7}, 4.2);
  const Tensor cd = downsample_to_match(c);
  CHECK(cd.dim(1) == 3);
  CHECK(cd.dim(2) == 4);
  for (double v : cd.values()) CHECK(v == Catch::Approx(4.2).margin(1e-12));
  // shape rule
  const Tensor big({2, 8, 8});
  CHECK(downsample_to_match(big).dim(1) == 4);
}

TEST_CASE("extractor_forward shape contract at full scale") {
  ExtractorConfig cfg;  // C=256, n=8, m=5, 6 blocks
  ExtractorParams params = ExtractorParams::init(cfg, 0);
  Tensor image({1, 64, 64});
  Rng rng(20);
  fill_uniform(image, rng, 0.0, 1.0);
  const Tensor k = extractor_forward(image, params);
  CHECK(k.dim(0) == 256);
  CHECK(k.dim(1) == 4);
  CHECK(k.dim(2) == 4);
}

TEST_CASE("extractor_forward is deterministic and flag-sensitive") {
  ExtractorConfig cfg = small_config();
  ExtractorParams params = ExtractorParams::init(cfg, 8);
  Tensor image({1, 20, 28});
  Rng rng(21);
  fill_uniform(image, rng, 0.0, 1.0);
  const Tensor a = extractor_forward(image, params);
  const Tensor b = extractor_forward(image, params);
  CHECK(a == b);
  const Tensor no_ca = extractor_forward(image, params, {false, true});
  const Tensor no_pe = extractor_forward(image, params, {true, false});
  const Tensor bare = extractor_forward(image, params, {false, false});
  CHECK_FALSE(a == no_ca);
  CHECK_FALSE(a == no_pe);
  CHECK_FALSE(no_ca == bare);
  // shape contract holds for awkward sizes: 20x28 -> padded 20x28 (n=4) -> /16
  CHECK(a.dim(1) == 2);
  CHECK(a.dim(2) == 2);
}

TEST_CASE("extractor patch sizes land on the same /16 grid") {
  for (int n : {2, 4, 8, 16}) {
    ExtractorConfig cfg = small_config();
    cfg.patch_size = n;
    cfg.retain = std::min(cfg.retain, n);
    ExtractorParams params = ExtractorParams::init(cfg, 30 + n);
    Tensor image({1, 48, 80});
    Rng rng(static_cast<std::uint64_t>(n));
    fill_uniform(image, rng, 0.0, 1.0);
    const Tensor k = extractor_forward(image, params);
    CHECK(k.dim(0) == 8);
    CHECK(k.dim(1) == 3);
    CHECK(k.dim(2) == 5);
  }
}
