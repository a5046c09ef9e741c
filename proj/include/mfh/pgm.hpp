#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>

#include "mfh/errors.hpp"
#include "mfh/tensor.hpp"

namespace mfh {

// Binary PGM (P5), maxval 255 only. Pixels are normalized to [0,1] on read;
// writes rescale [min,max] to the full 8-bit range.

namespace detail {

// In-memory P5 scanner; keeps a byte cursor so every failure can name the
// offending offset.
struct PgmScanner {
  const std::string& bytes;
  std::size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }

  void skip_space_and_comments() {
    while (!eof()) {
      const char c = bytes[pos];
      if (c == '#') {
        while (!eof() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos;
      } else {
        return;
      }
    }
  }

  // nonnegative decimal integer token
  std::uint64_t read_number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos;
    std::uint64_t v = 0;
    bool any = false;
    while (!eof() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      v = v * 10 + static_cast<std::uint64_t>(bytes[pos] - '0');
      if (v > 0xFFFFFFFFull)
        throw FormatError(std::string("pgm: ") + what + " out of range", start);
      ++pos;
      any = true;
    }
    if (!any)
      throw FormatError(std::string("pgm: expected ") + what, start);
    return v;
  }
};

}  // namespace detail

inline Tensor read_pgm_bytes(const std::string& bytes, bool invert = false) {
  detail::PgmScanner sc{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    throw FormatError("pgm: bad magic, expected P5", 0);
  sc.pos = 2;
  const std::uint64_t width = sc.read_number("width");
  const std::uint64_t height = sc.read_number("height");
  sc.skip_space_and_comments();
  const std::size_t maxval_pos = sc.pos;
  const std::uint64_t maxval = sc.read_number("maxval");
  if (width == 0 || height == 0)
    throw FormatError("pgm: zero image dimension", 2);
  if (maxval != 255)
    throw FormatError("pgm: only maxval 255 is supported, got " +
                          std::to_string(maxval),
                      maxval_pos);
  if (sc.eof())
    throw FormatError("pgm: missing separator after maxval", sc.pos);
  ++sc.pos;  // exactly one whitespace byte separates header from payload
  const std::size_t need = static_cast<std::size_t>(width * height);
  if (bytes.size() - sc.pos < need)
    throw FormatError("pgm: truncated payload, expected " +
                          std::to_string(need) + " bytes",
                      bytes.size());
  Tensor out({1, static_cast<std::size_t>(height), static_cast<std::size_t>(width)});
  for (std::size_t i = 0; i < need; ++i) {
    const double v = static_cast<unsigned char>(bytes[sc.pos + i]) / 255.0;
    out[i] = invert ? 1.0 - v : v;
  }
  return out;
}

inline Tensor read_pgm(const std::string& path, bool invert = false) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("pgm: cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return read_pgm_bytes(bytes, invert);
}

inline std::string write_pgm_bytes(const Tensor& image) {
  if (!(image.rank() == 2 ||
        (image.rank() == 3 && image.dim(0) == 1)))
    throw DimensionError("pgm: expects HxW or 1xHxW, got " + shape_string(image));
  if (!all_finite(image)) throw NumericError("pgm: non-finite pixel values");
  const std::size_t h = image.dim(image.rank() - 2);
  const std::size_t w = image.dim(image.rank() - 1);
  double lo = image[0], hi = image[0];
  for (double v : image.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    long q = 0;  // constant images render as black
    if (span > 0.0) q = std::lround((image[i] - lo) / span * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

inline void write_pgm(const Tensor& image, const std::string& path) {
  const std::string bytes = write_pgm_bytes(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("pgm: cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("pgm: write failed for '" + path + "'");
}

}  // namespace mfh
