#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "mfh/autograd.hpp"

using namespace mfh;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  fill_uniform(t, rng, lo, hi);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("finite differences recover a quadratic derivative") {
  Tensor theta({1}, 3.0);
  const Tensor g = finite_diff_grad([&] { return theta[0] * theta[0]; }, theta);
  CHECK(std::abs(g[0] - 6.0) < 1e-8);
  CHECK(theta[0] == 3.0);  // probing must restore the parameter
}

TEST_CASE("finite differences are exact on a linear loss") {
  Tensor theta = random_tensor({7}, 1);
  const Tensor coef = random_tensor({7}, 2);
  const Tensor g = finite_diff_grad([&] { return dot(coef, theta); }, theta);
  CHECK(max_abs_diff(g, coef) < 1e-9);
}

TEST_CASE("finite differences reject bad eps and non-finite losses") {
  Tensor theta({1}, 1.0);
  CHECK_THROWS_AS(finite_diff_grad([&] { return theta[0]; }, theta, 0.0),
                  ParameterError);
  CHECK_THROWS_AS(finite_diff_grad(
                      [&] { return std::numeric_limits<double>::quiet_NaN(); },
                      theta),
                  NumericError);
}

TEST_CASE("linear_backward matches finite differences") {
  Tensor w = random_tensor({3, 5}, 3);
  Tensor x = random_tensor({5}, 4);
  const Tensor up = random_tensor({3}, 5);
  const LinearGrads g = linear_backward(w, x, up);
  const Tensor ngw = finite_diff_grad(
      [&] { return dot(up, linear(w, x, Tensor({3}))); }, w);
  const Tensor ngx = finite_diff_grad(
      [&] { return dot(up, linear(w, x, Tensor({3}))); }, x);
  CHECK(max_abs_diff(g.gw, ngw) < 1e-7);
  CHECK(max_abs_diff(g.gx, ngx) < 1e-7);
  CHECK(g.gb == up);
}

TEST_CASE("conv2d_backward matches finite differences at stride 2") {
  Tensor x = random_tensor({2, 5, 5}, 6);
  Tensor w = random_tensor({3, 2, 3, 3}, 7);
  Tensor b = random_tensor({3}, 8);
  const Tensor out = conv2d(x, w, b, 2, 1);
  const Tensor up = random_tensor(out.shape(), 9);
  const ConvGrads g = conv2d_backward(x, w, 2, 1, up);

  const auto loss = [&] { return dot(up, conv2d(x, w, b, 2, 1)); };
  CHECK(max_abs_diff(g.gx, finite_diff_grad(loss, x)) < 1e-6);
  CHECK(max_abs_diff(g.gw, finite_diff_grad(loss, w)) < 1e-6);
  CHECK(max_abs_diff(g.gb, finite_diff_grad(loss, b)) < 1e-6);
}

TEST_CASE("global_avg_pool_backward spreads uniformly") {
  Tensor gp({3});
  gp[0] = 6.0;
  gp[1] = -12.0;
  gp[2] = 0.0;
  const Tensor gx = global_avg_pool_backward(gp, 2, 3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(gx[i] == 1.0);
  for (std::size_t i = 6; i < 12; ++i) CHECK(gx[i] == -2.0);
  for (std::size_t i = 12; i < 18; ++i) CHECK(gx[i] == 0.0);
}

TEST_CASE("downsample_backward divides by the live cell count") {
  // 3x3 input: windows hold 4, 2, 2, 1 cells
  Tensor gout({1, 2, 2}, 1.0);
  const Tensor gx = downsample_backward(gout, 3, 3);
  CHECK(gx.at3(0, 0, 0) == 0.25);
  CHECK(gx.at3(0, 1, 1) == 0.25);
  CHECK(gx.at3(0, 0, 2) == 0.5);
  CHECK(gx.at3(0, 2, 0) == 0.5);
  CHECK(gx.at3(0, 2, 2) == 1.0);
}

TEST_CASE("zero upstream produces zero gradients everywhere") {
  ExtractorConfig cfg;
  cfg.channels = 8;
  cfg.patch_size = 4;
  cfg.retain = 2;
  cfg.mlp_layers = 1;
  cfg.reduction = 4;
  cfg.dropout = 0.0;
  const ExtractorParams p = ExtractorParams::init(cfg, 0);
  const Tensor tokens = random_tensor({8, 3, 3}, 1);

  MlpBlockCache cache;
  mlp_block_cached(tokens, p.blocks[0], cache);
  MlpBlockGrads g = MlpBlockGrads::zero_like(p.blocks[0]);
  const Tensor gx = mlp_block_backward(p.blocks[0], cache, Tensor({8, 3, 3}), g);
  CHECK(max_abs(gx) == 0.0);
  CHECK(max_abs(g.fc1_w) == 0.0);
  CHECK(max_abs(g.ln_gamma) == 0.0);

  CaCache cc;
  channel_attention_cached(tokens, p.ca, cc);
  CaGrads cg = CaGrads::zero_like(p.ca);
  const Tensor cgx = channel_attention_backward(p.ca, cc, Tensor({8, 3, 3}), cg);
  CHECK(max_abs(cgx) == 0.0);
  CHECK(max_abs(cg.w2) == 0.0);
}

TEST_CASE("channel attention with zero excite weights gates at exactly half") {
  ChannelAttentionParams p;
  p.w1 = random_tensor({2, 8}, 10);
  p.b1 = Tensor({2}, 0.5);
  p.w2 = Tensor({8, 2});  // zero: gate is sigmoid(0) for every channel
  p.b2 = Tensor({8});
  const Tensor tokens = random_tensor({8, 3, 3}, 11, 0.5, 1.5);
  const Tensor up = random_tensor({8, 3, 3}, 12);

  CaCache cache;
  const Tensor out = channel_attention_cached(tokens, p, cache);
  CHECK(max_abs_diff(out, scale(tokens, 0.5)) == 0.0);

  CaGrads g = CaGrads::zero_like(p);
  const Tensor gx = channel_attention_backward(p, cache, up, g);
  // squeeze output can't reach x through a zero W2, so gx is exactly gate*up
  CHECK(max_abs_diff(gx, scale(up, 0.5)) == 0.0);
  // but W2 itself still learns
  CHECK(max_abs(g.w2) > 0.0);
}

TEST_CASE("fab vector gradient matches its bilinear form") {
  FabParams p = FabParams::init(8, 13);
  Rng rng(14);
  fill_uniform(p.v_k, rng, 0.5, 1.5);
  fill_uniform(p.v_t, rng, 0.5, 1.5);
  const Tensor k = random_tensor({8, 4, 4}, 15);
  const Tensor t = random_tensor({8, 4, 4}, 16);
  const Tensor up = random_tensor({8, 4, 4}, 17);

  FabCache cache;
  fab_forward_cached(k, t, p, cache);
  FabGrads g = FabGrads::zero_like(p);
  fab_backward(p, cache, up, g);

  const std::size_t hw = 16;
  for (std::size_t c = 0; c < 8; ++c) {
    double want = 0.0;
    for (std::size_t i = 0; i < hw; ++i)
      want += up[c * hw + i] * cache.amap[i] * k[c * hw + i];
    CHECK(std::abs(g.v_k[c] - want) < 1e-12);
  }
}

TEST_CASE("unit-vector fab reports no vector gradient") {
  FabParams p = FabParams::init(8, 18, FabAttention::Concat, FabVectors::Unit);
  const Tensor k = random_tensor({8, 4, 4}, 19);
  const Tensor t = random_tensor({8, 4, 4}, 20);
  FabCache cache;
  fab_forward_cached(k, t, p, cache);
  FabGrads g = FabGrads::zero_like(p);
  fab_backward(p, cache, random_tensor({8, 4, 4}, 21), g);
  CHECK(max_abs(g.v_k) == 0.0);
  CHECK(max_abs(g.v_t) == 0.0);
  CHECK(max_abs(g.conv_w) > 0.0);  // attention conv still trains
}

TEST_CASE("gradcheck passes for every registered block") {
  for (const std::string& block : gradcheck_blocks()) {
    const GradReport rep = gradcheck_block(block, 0);
    INFO("block " << block);
    for (const TensorCheck& t : rep.tensors) {
      INFO(t.name << " rel err " << t.max_rel_err);
      CHECK(t.pass);
    }
    CHECK(rep.pass);
    CHECK_FALSE(rep.tensors.empty());
  }
}

TEST_CASE("gradcheck is clean on a second seed for the light blocks") {
  for (const std::string& block :
       {"patch_embed", "mlp_block", "channel_attention", "fab_forward",
        "linear_head"}) {
    const GradReport rep = gradcheck_block(block, 1);
    INFO("block " << block);
    CHECK(rep.pass);
  }
}

TEST_CASE("gradcheck rejects unknown blocks") {
  CHECK_THROWS_AS(gradcheck_block("attention_is_all", 0), ParameterError);
}

TEST_CASE("gradcheck report serializes with stable fields") {
  const GradReport rep = gradcheck_block("linear_head", 3);
  const auto j = rep.to_json();
  CHECK(j["block"] == "linear_head");
  CHECK(j["seed"] == 3);
  CHECK(j["pass"] == rep.pass);
  CHECK(j["tensors"].is_array());
  CHECK(j["tensors"].size() == rep.tensors.size());
}
