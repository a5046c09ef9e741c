#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "mfh/errors.hpp"
#include "mfh/rng.hpp"
#include "mfh/tensor.hpp"

namespace mfh {

// Minimal spatial stream: four 3x3 stride-2 convs with ReLU, 1 -> 16 -> 32
// -> 64 -> C. Stands in for a CNN backbone so fusion is exercisable; each
// stage halves resolution (ceil), so four stages land on the /16 grid.
struct StubParams {
  std::array<Tensor, 4> conv_w;
  std::array<Tensor, 4> conv_b;

  static StubParams init(int channels, std::uint64_t seed) {
    if (channels < 1) throw ParameterError("stub: channels must be positive");
    const std::size_t chain[5] = {1, 16, 32, 64, static_cast<std::size_t>(channels)};
    StubParams p;
    for (std::size_t k = 0; k < 4; ++k) {
      const std::string name = "stub.conv" + std::to_string(k) + ".w";
      p.conv_w[k] = init_weight({chain[k + 1], chain[k], 3, 3}, chain[k] * 9,
                                derive_seed(seed, name));
      p.conv_b[k] = Tensor({chain[k + 1]});
    }
    return p;
  }

  std::size_t out_channels() const { return conv_w[3].dim(0); }
};

inline Tensor stub_forward(const Tensor& image, const StubParams& params) {
  if (image.rank() != 3 || image.dim(0) != 1)
    throw DimensionError("stub_forward: expects a 1xHxW image");
  Tensor x = image;
  for (std::size_t k = 0; k < 4; ++k) {
    x = conv2d(x, params.conv_w[k], params.conv_b[k], 2, 1);
    for (double& v : x.values()) v = relu(v);
  }
  return x;
}

}  // namespace mfh
