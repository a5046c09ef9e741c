#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfh/mfh.hpp"

namespace {

struct CliOptions {
  mfh::RunConfig cfg;
  std::string freq_mode_str = "coeff";
  std::string fab_attention_str = "concat";
  std::string fab_vectors_str = "learnable";

  void resolve() {
    cfg.freq_mode = mfh::parse_freq_mode(freq_mode_str);
    cfg.fab_attention = mfh::parse_fab_attention(fab_attention_str);
    cfg.fab_vectors = mfh::parse_fab_vectors(fab_vectors_str);
    cfg.validate();
  }
};

// Shared flag set; every command accepts the same names. Commands that train
// at desk scale get smaller channel/depth defaults.
void add_shared_flags(CLI::App* cmd, CliOptions& opt, bool desk_scale) {
  if (desk_scale) {
    opt.cfg.channels = 8;
    opt.cfg.mlp_layers = 2;
    opt.cfg.dropout = 0.0;
  }
  cmd->add_option("--patch-size", opt.cfg.patch_size,
                  "DCT block / patch size n (2, 4, 8 or 16)")
      ->capture_default_str();
  cmd->add_option("--retain", opt.cfg.retain,
                  "high-frequency retention count m, 1..n")
      ->capture_default_str();
  cmd->add_option("--channels", opt.cfg.channels, "feature channels C")
      ->capture_default_str();
  cmd->add_option("--mlp-layers", opt.cfg.mlp_layers, "MLP block count")
      ->capture_default_str();
  cmd->add_option("--dropout", opt.cfg.dropout, "MLP dropout rate")
      ->capture_default_str();
  cmd->add_option("--pe-scale", opt.cfg.pe_scale,
                  "positional encoding coordinate scale")
      ->capture_default_str();
  cmd->add_option("--seed", opt.cfg.seed, "base RNG seed")
      ->capture_default_str();
  cmd->add_flag("--invert", opt.cfg.invert, "map pixel v to 1-v on read");
  cmd->add_option("--freq-mode", opt.freq_mode_str,
                  "frequency representation: coeff or spatial")
      ->check(CLI::IsMember({"coeff", "spatial"}))
      ->capture_default_str();
  cmd->add_flag_callback(
      "--no-channel-att", [&opt] { opt.cfg.channel_attention = false; },
      "disable channel attention");
  cmd->add_flag_callback(
      "--no-pos-enc", [&opt] { opt.cfg.positional_encoding = false; },
      "disable positional encoding");
  cmd->add_flag_callback(
      "--no-fab", [&opt] { opt.cfg.fab = false; },
      "fuse streams by plain addition");
  cmd->add_option("--fab-attention", opt.fab_attention_str,
                  "FAB attention input: concat or add")
      ->check(CLI::IsMember({"concat", "add"}))
      ->capture_default_str();
  cmd->add_option("--fab-vectors", opt.fab_vectors_str,
                  "FAB channel vectors: learnable or unit")
      ->check(CLI::IsMember({"learnable", "unit"}))
      ->capture_default_str();
}

std::vector<mfh::Tensor> load_pgm_dir(const std::string& dir, bool invert) {
  std::vector<std::filesystem::path> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".pgm")
      paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  std::vector<mfh::Tensor> images;
  for (const auto& p : paths) images.push_back(mfh::read_pgm(p.string(), invert));
  return images;
}

int cmd_preprocess(const CliOptions& opt, const std::string& in,
                   const std::string& out) {
  const mfh::Tensor image = mfh::read_pgm(in, opt.cfg.invert);
  const mfh::FreqImage freq = mfh::preprocess(
      image, opt.cfg.patch_size, opt.cfg.retain, opt.cfg.freq_mode);
  mfh::write_mfht(out, freq.data);
  std::cout << "wrote " << out << " " << mfh::shape_string(freq.data) << "\n";
  return 0;
}

int cmd_viz(const CliOptions& opt, const std::string& in,
            const std::string& out) {
  const mfh::Tensor image = mfh::read_pgm(in, opt.cfg.invert);
  const mfh::FreqImage freq =
      mfh::preprocess(image, opt.cfg.patch_size, opt.cfg.retain,
                      mfh::FreqMode::ReconstructedSpatial);
  mfh::write_pgm(freq.data, out);
  std::cout << "wrote " << out << " " << mfh::shape_string(freq.data) << "\n";
  return 0;
}

int cmd_sweep(const CliOptions& opt, const std::string& images_dir,
              int sweep_steps, double lr, const std::string& out) {
  std::vector<mfh::Tensor> images;
  if (!images_dir.empty()) images = load_pgm_dir(images_dir, opt.cfg.invert);
  mfh::ToyConfig toy = opt.cfg.toy_config();
  toy.lr = lr;
  const std::vector<mfh::SweepRow> rows =
      mfh::sweep_retention(images, toy, sweep_steps);
  std::ofstream os(out, std::ios::binary);
  if (!os) throw mfh::Error("cannot open for writing: " + out);
  mfh::write_sweep_csv(os, rows);
  std::cout << "wrote " << out << " (" << rows.size() << " rows)\n";
  return 0;
}

int cmd_forward(const CliOptions& opt, const std::string& in,
                const std::string& weights, const std::string& dump,
                const std::string& out) {
  const mfh::Tensor image = mfh::read_pgm(in, opt.cfg.invert);
  mfh::PipelineParams params =
      mfh::PipelineParams::init(opt.cfg.extractor_config(), opt.cfg.seed,
                                opt.cfg.fab_attention, opt.cfg.fab_vectors);
  if (!weights.empty()) {
    const mfh::WeightMap w = mfh::read_mfhw(weights);
    mfh::bind_weights(w, params.extractor, &params.fab, &params.stub);
  }
  const mfh::PipelineFlags flags = opt.cfg.pipeline_flags();
  mfh::Tensor result;
  if (dump == "fused") {
    result = mfh::fused_forward(image, params, flags);
  } else {
    const mfh::Tensor padded = mfh::pad_for_fusion(image);
    if (dump == "k")
      result = mfh::extractor_forward(padded, params.extractor, flags.extractor());
    else
      result = mfh::stub_forward(padded, params.stub);
  }
  mfh::write_mfht(out, result);
  std::cout << "wrote " << out << " " << mfh::shape_string(result) << "\n";
  return 0;
}

int cmd_gradcheck(const CliOptions& opt, int seeds, double eps,
                  double threshold, const std::string& out) {
  nlohmann::ordered_json j;
  j["eps"] = eps;
  j["threshold"] = threshold;
  j["seeds"] = seeds;
  j["reports"] = nlohmann::ordered_json::array();
  bool pass = true;
  for (const std::string& block : mfh::gradcheck_blocks())
    for (int s = 0; s < seeds; ++s) {
      const mfh::GradReport rep = mfh::gradcheck_block(
          block, opt.cfg.seed + static_cast<std::uint64_t>(s), eps, threshold);
      pass = pass && rep.pass;
      j["reports"].push_back(rep.to_json());
    }
  j["pass"] = pass;
  const std::string text = j.dump(2);
  if (out.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream os(out, std::ios::binary);
    if (!os) throw mfh::Error("cannot open for writing: " + out);
    os << text << "\n";
    std::cout << "wrote " << out << (pass ? " (pass)" : " (FAIL)") << "\n";
  }
  return pass ? 0 : 1;
}

int cmd_train_toy(const CliOptions& opt, int steps, double lr,
                  const std::string& save_weights, const std::string& out) {
  mfh::ToyConfig toy = opt.cfg.toy_config();
  toy.steps = steps;
  toy.lr = lr;
  mfh::PipelineParams trained;
  const std::vector<double> trace = mfh::train_toy(toy, &trained);
  std::ofstream os(out, std::ios::binary);
  if (!os) throw mfh::Error("cannot open for writing: " + out);
  mfh::write_trace_csv(os, trace);
  std::cout << "wrote " << out << " (" << trace.size()
            << " steps, final loss " << trace.back() << ")\n";
  if (!save_weights.empty()) {
    mfh::WeightMap w =
        mfh::pack_weights(trained.extractor, &trained.fab, &trained.stub);
    w.emplace_back("head.w", trained.head.w);
    w.emplace_back("head.b", trained.head.b);
    mfh::write_mfhw(save_weights, w);
    std::cout << "wrote " << save_weights << "\n";
  }
  return 0;
}

int cmd_bench(const CliOptions& opt, const std::string& image_path) {
  using clock = std::chrono::steady_clock;
  const int n = opt.cfg.patch_size;
  mfh::Tensor image;
  if (image_path.empty()) {
    image = mfh::Tensor({1, 512, 512});
    mfh::Rng rng(opt.cfg.seed);
    mfh::fill_uniform(image, rng, 0.0, 1.0);
  } else {
    image = mfh::read_pgm(image_path, opt.cfg.invert);
  }
  const mfh::Tensor padded = mfh::pad_to_multiple(image, n);
  const mfh::Tensor patches = mfh::patchify(padded, n);
  const std::size_t count = patches.dim(0);
  const mfh::DctPlan plan = mfh::DctPlan::make(n);
  const auto nn = static_cast<std::size_t>(n);

  auto patch_at = [&](std::size_t p) {
    mfh::Tensor one({nn, nn});
    std::copy(patches.data() + p * nn * nn, patches.data() + (p + 1) * nn * nn,
              one.data());
    return one;
  };

  // agreement first, timing second
  double max_diff = 0.0;
  for (std::size_t p = 0; p < count; ++p) {
    const mfh::Tensor one = patch_at(p);
    max_diff = std::max(
        max_diff, mfh::max_abs_diff(mfh::dct2(one, plan), mfh::dct2_naive(one)));
  }
  if (max_diff > 1e-9) {
    std::cerr << "bench: naive and separable paths disagree (" << max_diff
              << ")\n";
    return 1;
  }

  volatile double sink = 0.0;  // keeps the timed loops from being elided
  const auto t0 = clock::now();
  for (std::size_t p = 0; p < count; ++p)
    sink = sink + mfh::dct2_naive(patch_at(p))[0];
  const auto t1 = clock::now();
  for (std::size_t p = 0; p < count; ++p)
    sink = sink + mfh::dct2(patch_at(p), plan)[0];
  const auto t2 = clock::now();

  const double naive_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  const double sep_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
  std::cout << "dct bench: n=" << n << ", patches=" << count
            << ", image=" << mfh::shape_string(padded) << "\n";
  std::cout << "  naive:     " << naive_ms << " ms ("
            << (count / (naive_ms / 1000.0)) << " patches/sec)\n";
  std::cout << "  separable: " << sep_ms << " ms ("
            << (count / (sep_ms / 1000.0)) << " patches/sec)\n";
  std::cout << "  speedup:   " << (naive_ms / sep_ms) << "x\n";
  std::cout << "  max diff:  " << max_diff << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"frequency-domain feature pipeline"};
  app.require_subcommand(1);

  CliOptions preprocess_opt, viz_opt, sweep_opt, forward_opt, gradcheck_opt,
      train_opt, bench_opt;

  auto* preprocess = app.add_subcommand(
      "preprocess", "blockwise DCT with high-frequency retention, to MFHT");
  std::string pre_in, pre_out;
  preprocess->add_option("input", pre_in, "input PGM")->required();
  preprocess->add_option("output", pre_out, "output MFHT")->required();
  add_shared_flags(preprocess, preprocess_opt, false);

  auto* viz = app.add_subcommand(
      "viz", "reconstructed-spatial preprocessing rendered as PGM");
  std::string viz_in, viz_out;
  viz->add_option("input", viz_in, "input PGM")->required();
  viz->add_option("output", viz_out, "output PGM")->required();
  add_shared_flags(viz, viz_opt, false);

  auto* sweep = app.add_subcommand(
      "sweep", "retention sweep m=1..n: energy fraction and toy loss, to CSV");
  std::string sweep_out, sweep_images;
  int sweep_steps = 40;
  double sweep_lr = 0.25;
  sweep->add_option("output", sweep_out, "output CSV")->required();
  sweep->add_option("--images", sweep_images,
                    "directory of PGM images for the energy column");
  sweep->add_option("--sweep-steps", sweep_steps,
                    "training steps per retention value")
      ->capture_default_str();
  sweep->add_option("--lr", sweep_lr, "learning rate")->capture_default_str();
  add_shared_flags(sweep, sweep_opt, true);

  auto* forward = app.add_subcommand(
      "forward", "run the fused pipeline on an image, dump features to MFHT");
  std::string fwd_in, fwd_out, fwd_weights, fwd_dump = "fused";
  forward->add_option("input", fwd_in, "input PGM")->required();
  forward->add_option("output", fwd_out, "output MFHT")->required();
  forward->add_option("--weights", fwd_weights, "MFHW weights (seeded init if absent)");
  forward->add_option("--dump", fwd_dump, "which feature to dump")
      ->check(CLI::IsMember({"fused", "k", "t"}))
      ->capture_default_str();
  add_shared_flags(forward, forward_opt, false);

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "analytic vs finite-difference gradients, JSON report");
  std::string gc_out;
  int gc_seeds = 5;
  double gc_eps = 1e-6, gc_threshold = 1e-4;
  gradcheck->add_option("--out", gc_out, "write report here instead of stdout");
  gradcheck->add_option("--gc-seeds", gc_seeds, "seeds per block")
      ->capture_default_str();
  gradcheck->add_option("--gc-eps", gc_eps, "finite-difference step")
      ->capture_default_str();
  gradcheck->add_option("--gc-threshold", gc_threshold,
                        "max relative error to pass")
      ->capture_default_str();
  add_shared_flags(gradcheck, gradcheck_opt, true);

  auto* train = app.add_subcommand(
      "train-toy", "gradient descent on the synthetic two-blob task, CSV trace");
  std::string train_out, train_weights;
  int train_steps = 300;
  double train_lr = 0.4;
  train->add_option("output", train_out, "output CSV trace")->required();
  train->add_option("--steps", train_steps, "training steps")
      ->capture_default_str();
  train->add_option("--lr", train_lr, "learning rate")->capture_default_str();
  train->add_option("--save-weights", train_weights,
                    "write trained weights to this MFHW file");
  // defaults mirror ToyConfig, so a bare train-toy reproduces the pinned run
  train_opt.cfg.patch_size = 16;
  train_opt.cfg.retain = 12;
  add_shared_flags(train, train_opt, true);

  auto* bench = app.add_subcommand(
      "bench", "naive vs separable DCT wall-clock comparison");
  std::string bench_image;
  bench->add_option("--image", bench_image,
                    "PGM to benchmark on (512x512 synthetic if absent)");
  add_shared_flags(bench, bench_opt, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (preprocess->parsed()) {
      preprocess_opt.resolve();
      return cmd_preprocess(preprocess_opt, pre_in, pre_out);
    }
    if (viz->parsed()) {
      viz_opt.resolve();
      return cmd_viz(viz_opt, viz_in, viz_out);
    }
    if (sweep->parsed()) {
      sweep_opt.resolve();
      return cmd_sweep(sweep_opt, sweep_images, sweep_steps, sweep_lr, sweep_out);
    }
    if (forward->parsed()) {
      forward_opt.resolve();
      return cmd_forward(forward_opt, fwd_in, fwd_weights, fwd_dump, fwd_out);
    }
    if (gradcheck->parsed()) {
      gradcheck_opt.resolve();
      return cmd_gradcheck(gradcheck_opt, gc_seeds, gc_eps, gc_threshold, gc_out);
    }
    if (train->parsed()) {
      train_opt.resolve();
      return cmd_train_toy(train_opt, train_steps, train_lr, train_weights,
                           train_out);
    }
    if (bench->parsed()) {
      bench_opt.resolve();
      return cmd_bench(bench_opt, bench_image);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
