#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "mfh/errors.hpp"
#include "mfh/tensor.hpp"

namespace mfh {

// MFHT tensor container:
//   magic "MFHT", u8 version=1, u8 dtype (1=f32, 2=f64), u8 rank,
//   rank x u32 dims (little-endian), row-major payload (little-endian).

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

enum class Dtype : std::uint8_t { F32 = 1, F64 = 2 };

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is, std::size_t& offset) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw FormatError("truncated u32 field", offset);
  offset += 4;
  return v;
}

}  // namespace detail

inline void write_mfht(std::ostream& os, const Tensor& t,
                       Dtype dtype = Dtype::F64) {
  os.write("MFHT", 4);
  const std::uint8_t version = 1;
  const std::uint8_t dt = static_cast<std::uint8_t>(dtype);
  const std::uint8_t rank = static_cast<std::uint8_t>(t.rank());
  os.put(static_cast<char>(version));
  os.put(static_cast<char>(dt));
  os.put(static_cast<char>(rank));
  for (std::size_t d : t.shape())
    detail::write_u32(os, static_cast<std::uint32_t>(d));
  if (dtype == Dtype::F64) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  } else {
    std::vector<float> buf(t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      buf[i] = static_cast<float>(t[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

inline void write_mfht(const std::string& path, const Tensor& t,
                       Dtype dtype = Dtype::F64) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open for writing: " + path);
  write_mfht(os, t, dtype);
  if (!os) throw Error("write failed: " + path);
}

inline Tensor read_mfht(std::istream& is) {
  std::size_t offset = 0;
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MFHT", 4) != 0)
    throw FormatError("bad MFHT magic", 0);
  offset = 4;
  int version = is.get();
  int dt = is.get();
  int rank = is.get();
  if (!is) throw FormatError("truncated MFHT header", offset);
  offset += 3;
  if (version != 1) throw FormatError("unsupported MFHT version", 4);
  if (dt != 1 && dt != 2) throw FormatError("unknown MFHT dtype", 5);
  std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
  for (auto& d : shape) {
    d = detail::read_u32(is, offset);
    if (d == 0) throw FormatError("zero dimension in MFHT header", offset - 4);
  }
  Tensor t(shape);
  if (dt == 2) {
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is)
      throw FormatError("truncated MFHT payload",
                        offset + static_cast<std::size_t>(is.gcount()));
  } else {
    std::vector<float> buf(t.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is)
      throw FormatError("truncated MFHT payload",
                        offset + static_cast<std::size_t>(is.gcount()));
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<double>(buf[i]);
  }
  return t;
}

inline Tensor read_mfht(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open for reading: " + path);
  return read_mfht(is);
}

}  // namespace mfh
