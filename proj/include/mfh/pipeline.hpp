#pragma once

#include <cstdint>

#include "mfh/errors.hpp"
#include "mfh/extractor.hpp"
#include "mfh/fab.hpp"
#include "mfh/freq_transform.hpp"
#include "mfh/spatial_stub.hpp"
#include "mfh/tensor.hpp"

namespace mfh {

// Scalar logistic head over the globally pooled fused feature.
struct HeadParams {
  Tensor w;  // C
  Tensor b;  // 1

  static HeadParams zero(int channels) {
    HeadParams h;
    h.w = Tensor({static_cast<std::size_t>(channels)});
    h.b = Tensor({1});
    return h;
  }
};

struct PipelineFlags {
  bool channel_attention = true;
  bool positional_encoding = true;
  bool fab = true;

  ExtractorFlags extractor() const {
    return {channel_attention, positional_encoding};
  }
};

struct PipelineParams {
  ExtractorParams extractor;
  StubParams stub;
  FabParams fab;
  HeadParams head;

  static PipelineParams init(const ExtractorConfig& cfg, std::uint64_t seed,
                             FabAttention attention = FabAttention::Concat,
                             FabVectors vectors = FabVectors::Learnable) {
    PipelineParams p;
    p.extractor = ExtractorParams::init(cfg, derive_seed(seed, "extractor"));
    p.stub = StubParams::init(cfg.channels, derive_seed(seed, "stub"));
    p.fab = FabParams::init(cfg.channels, derive_seed(seed, "fab"), attention, vectors);
    p.head = HeadParams::zero(cfg.channels);
    // a faint head gives the feature stack a nonzero gradient from step
    // one while initial logits stay far inside the uninformative band
    p.head.w = init_weight({static_cast<std::size_t>(cfg.channels)},
                           cfg.channels * 400, derive_seed(seed, "head.w"));
    return p;
  }
};

// Both streams consume one shared padded canvas, so their /16 grids align by
// construction. 16 is a multiple of every allowed patch size.
inline Tensor pad_for_fusion(const Tensor& image) {
  return pad_to_multiple(image, 16);
}

// K from the frequency stream, T from the spatial stub, fused by FAB (or by
// plain addition when FAB is disabled).
inline Tensor fused_forward(const Tensor& image, const PipelineParams& params,
                            PipelineFlags flags = {},
                            Dropout mode = Dropout::off()) {
  const Tensor padded = pad_for_fusion(image);
  const Tensor k = extractor_forward(padded, params.extractor, flags.extractor(), mode);
  const Tensor t = stub_forward(padded, params.stub);
  if (!k.same_shape(t))
    throw DimensionError("fused_forward: stream shapes disagree " +
                         shape_string(k) + " vs " + shape_string(t));
  return flags.fab ? fab_forward(k, t, params.fab) : add(k, t);
}

inline double head_logit(const Tensor& fused, const HeadParams& head) {
  const Tensor pooled = global_avg_pool(fused);
  if (pooled.size() != head.w.size())
    throw DimensionError("head: feature width disagrees with weights");
  double z = head.b[0];
  for (std::size_t c = 0; c < pooled.size(); ++c) z += head.w[c] * pooled[c];
  return z;
}

}  // namespace mfh
