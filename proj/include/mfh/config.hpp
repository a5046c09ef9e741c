#pragma once

#include <cstdint>
#include <string>

#include "mfh/errors.hpp"
#include "mfh/extractor.hpp"
#include "mfh/fab.hpp"
#include "mfh/freq_transform.hpp"
#include "mfh/pipeline.hpp"
#include "mfh/toy.hpp"

namespace mfh {

inline FreqMode parse_freq_mode(const std::string& s) {
  if (s == "coeff") return FreqMode::CoefficientDomain;
  if (s == "spatial") return FreqMode::ReconstructedSpatial;
  throw ParameterError("freq-mode must be 'coeff' or 'spatial', got '" + s + "'");
}

// One bag of knobs shared by every command; validated before any file is
// written so bad flag combinations never leave partial output behind.
struct RunConfig {
  int patch_size = 8;
  int retain = 5;
  int channels = 256;
  int mlp_layers = 6;
  double dropout = 0.3;
  double pe_scale = 1.0;
  std::uint64_t seed = 0;
  bool invert = false;
  FreqMode freq_mode = FreqMode::CoefficientDomain;
  bool channel_attention = true;
  bool positional_encoding = true;
  bool fab = true;
  FabAttention fab_attention = FabAttention::Concat;
  FabVectors fab_vectors = FabVectors::Learnable;

  void validate() const { extractor_config().validate(); }

  ExtractorConfig extractor_config() const {
    ExtractorConfig cfg;
    cfg.channels = channels;
    cfg.patch_size = patch_size;
    cfg.retain = retain;
    cfg.mlp_layers = mlp_layers;
    cfg.reduction = derive_reduction(channels);
    cfg.dropout = dropout;
    cfg.pe_scale = pe_scale;
    cfg.freq_mode = freq_mode;
    return cfg;
  }

  PipelineFlags pipeline_flags() const {
    return {channel_attention, positional_encoding, fab};
  }

  ToyConfig toy_config() const {
    ToyConfig cfg;
    cfg.dataset_seed = seed;
    cfg.init_seed = seed;
    cfg.channels = channels;
    cfg.mlp_layers = mlp_layers;
    cfg.patch_size = patch_size;
    cfg.retain = retain;
    cfg.pe_scale = pe_scale;
    cfg.freq_mode = freq_mode;
    cfg.flags = pipeline_flags();
    cfg.fab_attention = fab_attention;
    cfg.fab_vectors = fab_vectors;
    return cfg;
  }
};

}  // namespace mfh
