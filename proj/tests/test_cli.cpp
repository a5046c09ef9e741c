#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mfh/mfh.hpp"

namespace fs = std::filesystem;
using namespace mfh;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "mfh_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string at(const std::string& name) { return (work_dir() / name).string(); }

// exit status of the binary; captured output lands in last_run.log
int run_cli(const std::string& args) {
  const std::string cmd = std::string(MFH_CLI_PATH) + " " + args + " > " +
                          at("last_run.log") + " 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 24x16 test card with a gradient and one sharp edge
std::string input_pgm() {
  static const std::string path = [] {
    Tensor img({1, 24, 16});
    for (std::size_t y = 0; y < 24; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        img.at3(0, y, x) = (y + 2.0 * x) / 60.0 + (x > 10 ? 0.3 : 0.0);
    const std::string p = at("input.pgm");
    write_pgm(img, p);
    return p;
  }();
  return path;
}

std::string input64_pgm() {
  static const std::string path = [] {
    const std::string p = at("input64.pgm");
    write_pgm(make_toy_sample(3, 1).image, p);
    return p;
  }();
  return path;
}

}  // namespace

TEST_CASE("preprocess matches the library transform") {
  const std::string out = at("pre.mfht");
  REQUIRE(run_cli("preprocess " + input_pgm() + " " + out) == 0);
  const Tensor got = read_mfht(out);
  REQUIRE(got.rank() == 3);
  CHECK(got.dim(1) == 24);
  CHECK(got.dim(2) == 16);
  const Tensor want =
      preprocess(read_pgm(input_pgm()), 8, 5, FreqMode::CoefficientDomain).data;
  CHECK(got == want);
}

TEST_CASE("preprocess honors invert and spatial mode") {
  const std::string out = at("pre_inv.mfht");
  REQUIRE(run_cli("preprocess " + input_pgm() + " " + out +
                  " --invert --freq-mode spatial --patch-size 2 --retain 2") ==
          0);
  // full retention in spatial mode reconstructs the (inverted) input
  const Tensor got = read_mfht(out);
  Tensor want = read_pgm(input_pgm(), true);
  CHECK(max_abs_diff(got, want) < 1e-9);
}

TEST_CASE("viz renders a readable image") {
  const std::string out = at("viz.pgm");
  REQUIRE(run_cli("viz " + input_pgm() + " " + out) == 0);
  const Tensor img = read_pgm(out);
  CHECK(img.dim(1) == 24);
  CHECK(img.dim(2) == 16);
}

TEST_CASE("bad parameters fail without leaving output behind") {
  const std::string out = at("never.mfht");
  CHECK(run_cli("preprocess " + input_pgm() + " " + out + " --retain 9") != 0);
  CHECK_FALSE(fs::exists(out));
  CHECK(run_cli("preprocess " + input_pgm() + " " + out + " --patch-size 7") !=
        0);
  CHECK(run_cli("preprocess " + input_pgm() + " " + out +
                " --freq-mode sideways") != 0);
  CHECK(run_cli("frobnicate") != 0);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("missing input file is reported as an error") {
  CHECK(run_cli("preprocess " + at("no_such.pgm") + " " + at("x.mfht")) != 0);
  const std::string log = slurp(at("last_run.log"));
  CHECK(log.find("error:") != std::string::npos);
}

TEST_CASE("gradcheck emits a passing JSON report") {
  const std::string out = at("gc.json");
  REQUIRE(run_cli("gradcheck --gc-seeds 1 --out " + out) == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  CHECK(j["pass"] == true);
  CHECK(j["seeds"] == 1);
  REQUIRE(j["reports"].is_array());
  CHECK(j["reports"].size() == 6);
  for (const auto& rep : j["reports"]) {
    CHECK(rep["pass"] == true);
    CHECK(rep["tensors"].is_array());
  }
}

TEST_CASE("train-toy writes identical traces on identical runs") {
  REQUIRE(run_cli("train-toy " + at("t1.csv") + " --steps 2") == 0);
  REQUIRE(run_cli("train-toy " + at("t2.csv") + " --steps 2") == 0);
  const std::string a = slurp(at("t1.csv"));
  CHECK(a == slurp(at("t2.csv")));
  CHECK(a.find("step,loss\n0,0.693") == 0);
}

TEST_CASE("saved weights feed the forward command") {
  const std::string wfile = at("toy.mfhw");
  REQUIRE(run_cli("train-toy " + at("t3.csv") + " --steps 1 --save-weights " +
                  wfile) == 0);
  const WeightMap w = read_mfhw(wfile);
  const Tensor* head_w = find_weight(w, "head.w");
  REQUIRE(head_w != nullptr);
  CHECK(head_w->size() == 8);
  CHECK(find_weight(w, "embed.w") != nullptr);
  CHECK(find_weight(w, "stub.conv3.w") != nullptr);
  CHECK(find_weight(w, "fab.vk") != nullptr);

  // forward must run at the same geometry the toy trainer saved
  const std::string shared =
      " --channels 8 --mlp-layers 2 --patch-size 16 --retain 12";
  const std::string fused_path = at("fwd_fused.mfht");
  REQUIRE(run_cli("forward " + input64_pgm() + " " + fused_path +
                  " --weights " + wfile + shared) == 0);
  const Tensor fused = read_mfht(fused_path);
  CHECK(fused.dim(0) == 8);
  CHECK(fused.dim(1) == 4);
  CHECK(fused.dim(2) == 4);

  // the CLI path and the library path must agree bit for bit
  RunConfig cfg;
  cfg.channels = 8;
  cfg.mlp_layers = 2;
  cfg.patch_size = 16;
  cfg.retain = 12;
  PipelineParams params = PipelineParams::init(cfg.extractor_config(), cfg.seed,
                                               cfg.fab_attention, cfg.fab_vectors);
  bind_weights(w, params.extractor, &params.fab, &params.stub);
  const Tensor want = fused_forward(read_pgm(input64_pgm()), params);
  CHECK(fused == want);

  for (const std::string dump : {"k", "t"}) {
    const std::string p = at("fwd_" + dump + ".mfht");
    REQUIRE(run_cli("forward " + input64_pgm() + " " + p + " --weights " +
                    wfile + " --dump " + dump + shared) == 0);
    const Tensor part = read_mfht(p);
    CHECK(part.dim(0) == 8);
    CHECK(part.dim(1) == 4);
    CHECK(part.dim(2) == 4);
  }
}

TEST_CASE("sweep covers every retention level") {
  const std::string out = at("sweep.csv");
  REQUIRE(run_cli("sweep " + out + " --sweep-steps 1") == 0);
  std::istringstream ss(slurp(out));
  std::string line;
  REQUIRE(std::getline(ss, line));
  CHECK(line == "m,energy_fraction,toy_loss");
  double prev_energy = -1.0;
  int rows = 0;
  while (std::getline(ss, line)) {
    ++rows;
    std::istringstream row(line);
    int m = 0;
    char comma = 0;
    double energy = 0.0, loss = 0.0;
    row >> m >> comma >> energy >> comma >> loss;
    CHECK(m == rows);
    CHECK(energy >= prev_energy);  // more retained frequencies, more energy
    CHECK(energy <= 1.0 + 1e-10);
    CHECK(std::isfinite(loss));
    prev_energy = energy;
  }
  CHECK(rows == 8);
  CHECK(prev_energy > 1.0 - 1e-10);  // full retention keeps everything
}

TEST_CASE("bench verifies agreement and reports a speedup") {
  REQUIRE(run_cli("bench") == 0);
  const std::string log = slurp(at("last_run.log"));
  CHECK(log.find("speedup") != std::string::npos);
  CHECK(log.find("max diff") != std::string::npos);
}
