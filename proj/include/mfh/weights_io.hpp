#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mfh/errors.hpp"
#include "mfh/extractor.hpp"
#include "mfh/fab.hpp"
#include "mfh/spatial_stub.hpp"
#include "mfh/tensor.hpp"
#include "mfh/tensor_io.hpp"

namespace mfh {

// MFHW weights container:
//   magic "MFHW", u8 version=1, u32 header length, UTF-8 JSON header mapping
//   tensor names to {dtype, dims, offset}, then concatenated little-endian
//   payloads. Offsets are relative to the first payload byte.

// Insertion order is the file order, kept stable for bit-reproducible output.
using WeightMap = std::vector<std::pair<std::string, Tensor>>;

inline const Tensor* find_weight(const WeightMap& weights, const std::string& name) {
  for (const auto& [key, tensor] : weights)
    if (key == name) return &tensor;
  return nullptr;
}

inline void write_mfhw(std::ostream& os, const WeightMap& weights,
                       Dtype dtype = Dtype::F64) {
  const std::size_t elem = dtype == Dtype::F64 ? 8 : 4;
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : weights) {
    nlohmann::ordered_json entry;
    entry["dtype"] = dtype == Dtype::F64 ? "f64" : "f32";
    entry["dims"] = tensor.shape();
    entry["offset"] = offset;
    header[name] = std::move(entry);
    offset += tensor.size() * elem;
  }
  const std::string text = header.dump();
  os.write("MFHW", 4);
  os.put(static_cast<char>(1));
  detail::write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, tensor] : weights) {
    if (dtype == Dtype::F64) {
      os.write(reinterpret_cast<const char*>(tensor.data()),
               static_cast<std::streamsize>(tensor.size() * 8));
    } else {
      std::vector<float> buf(tensor.size());
      for (std::size_t i = 0; i < tensor.size(); ++i)
        buf[i] = static_cast<float>(tensor[i]);
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * 4));
    }
  }
}

inline void write_mfhw(const std::string& path, const WeightMap& weights,
                       Dtype dtype = Dtype::F64) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  write_mfhw(os, weights, dtype);
  if (!os) throw Error("write failed: " + path);
}

inline WeightMap read_mfhw(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "MFHW")
    throw FormatError("bad magic, expected MFHW", 0);
  std::size_t offset = 4;
  const int version = is.get();
  if (version == EOF) throw FormatError("truncated version byte", offset);
  if (version != 1)
    throw FormatError("unsupported version " + std::to_string(version), offset);
  offset += 1;
  const std::uint32_t header_len = detail::read_u32(is, offset);
  std::string text(header_len, '\0');
  is.read(text.data(), header_len);
  if (!is) throw FormatError("truncated JSON header", offset);
  offset += header_len;
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what(), 9);
  }
  if (!header.is_object())
    throw FormatError("JSON header must be an object", 9);

  const std::size_t payload_start = offset;
  std::string payload((std::istreambuf_iterator<char>(is)),
                      std::istreambuf_iterator<char>());

  WeightMap out;
  for (const auto& [name, entry] : header.items()) {
    if (!entry.contains("dtype") || !entry.contains("dims") ||
        !entry.contains("offset"))
      throw FormatError("header entry '" + name + "' missing a field", 9);
    const std::string dt = entry["dtype"].get<std::string>();
    if (dt != "f32" && dt != "f64")
      throw FormatError("header entry '" + name + "' has unknown dtype " + dt, 9);
    const std::size_t elem = dt == "f64" ? 8 : 4;
    std::vector<std::size_t> dims = entry["dims"].get<std::vector<std::size_t>>();
    const std::uint64_t rel = entry["offset"].get<std::uint64_t>();
    Tensor t(dims);
    const std::size_t need = t.size() * elem;
    if (rel > payload.size() || need > payload.size() - rel)
      throw FormatError("payload for '" + name + "' out of bounds",
                        payload_start + payload.size());
    const char* src = payload.data() + rel;
    if (elem == 8) {
      std::memcpy(t.data(), src, need);
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) {
        float f;
        std::memcpy(&f, src + i * 4, 4);
        t[i] = f;
      }
    }
    out.emplace_back(name, std::move(t));
  }
  return out;
}

inline WeightMap read_mfhw(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open: " + path);
  return read_mfhw(is);
}

// --- fixed-name packing for the model parameter structs ---------------------

inline WeightMap pack_weights(const ExtractorParams& ext,
                              const FabParams* fab = nullptr,
                              const StubParams* stub = nullptr) {
  WeightMap w;
  w.emplace_back("embed.w", ext.embed_w);
  w.emplace_back("embed.b", ext.embed_b);
  for (std::size_t k = 0; k < ext.blocks.size(); ++k) {
    const std::string p = "mlp" + std::to_string(k);
    w.emplace_back(p + ".ln.g", ext.blocks[k].ln_gamma);
    w.emplace_back(p + ".ln.b", ext.blocks[k].ln_beta);
    w.emplace_back(p + ".fc1.w", ext.blocks[k].fc1_w);
    w.emplace_back(p + ".fc1.b", ext.blocks[k].fc1_b);
    w.emplace_back(p + ".fc2.w", ext.blocks[k].fc2_w);
    w.emplace_back(p + ".fc2.b", ext.blocks[k].fc2_b);
  }
  w.emplace_back("ca.w1", ext.ca.w1);
  w.emplace_back("ca.b1", ext.ca.b1);
  w.emplace_back("ca.w2", ext.ca.w2);
  w.emplace_back("ca.b2", ext.ca.b2);
  if (fab) {
    w.emplace_back("fab.conv.w", fab->conv_w);
    w.emplace_back("fab.conv.b", fab->conv_b);
    w.emplace_back("fab.vk", fab->v_k);
    w.emplace_back("fab.vt", fab->v_t);
  }
  if (stub) {
    for (std::size_t k = 0; k < 4; ++k) {
      const std::string p = "stub.conv" + std::to_string(k);
      w.emplace_back(p + ".w", stub->conv_w[k]);
      w.emplace_back(p + ".b", stub->conv_b[k]);
    }
  }
  return w;
}

namespace detail {

inline void bind_one(const WeightMap& weights, const std::string& name,
                     Tensor& dst) {
  const Tensor* src = find_weight(weights, name);
  if (!src) throw ParameterError("weights: missing tensor '" + name + "'");
  if (!src->same_shape(dst))
    throw DimensionError("weights: '" + name + "' has shape " +
                         shape_string(*src) + ", expected " + shape_string(dst));
  dst = *src;
}

}  // namespace detail

// Shape-checked load into already-sized parameter structs.
inline void bind_weights(const WeightMap& weights, ExtractorParams& ext,
                         FabParams* fab = nullptr, StubParams* stub = nullptr) {
  detail::bind_one(weights, "embed.w", ext.embed_w);
  detail::bind_one(weights, "embed.b", ext.embed_b);
  for (std::size_t k = 0; k < ext.blocks.size(); ++k) {
    const std::string p = "mlp" + std::to_string(k);
    detail::bind_one(weights, p + ".ln.g", ext.blocks[k].ln_gamma);
    detail::bind_one(weights, p + ".ln.b", ext.blocks[k].ln_beta);
    detail::bind_one(weights, p + ".fc1.w", ext.blocks[k].fc1_w);
    detail::bind_one(weights, p + ".fc1.b", ext.blocks[k].fc1_b);
    detail::bind_one(weights, p + ".fc2.w", ext.blocks[k].fc2_w);
    detail::bind_one(weights, p + ".fc2.b", ext.blocks[k].fc2_b);
  }
  detail::bind_one(weights, "ca.w1", ext.ca.w1);
  detail::bind_one(weights, "ca.b1", ext.ca.b1);
  detail::bind_one(weights, "ca.w2", ext.ca.w2);
  detail::bind_one(weights, "ca.b2", ext.ca.b2);
  if (fab) {
    detail::bind_one(weights, "fab.conv.w", fab->conv_w);
    detail::bind_one(weights, "fab.conv.b", fab->conv_b);
    detail::bind_one(weights, "fab.vk", fab->v_k);
    detail::bind_one(weights, "fab.vt", fab->v_t);
  }
  if (stub) {
    for (std::size_t k = 0; k < 4; ++k) {
      const std::string p = "stub.conv" + std::to_string(k);
      detail::bind_one(weights, p + ".w", stub->conv_w[k]);
      detail::bind_one(weights, p + ".b", stub->conv_b[k]);
    }
  }
}

}  // namespace mfh
