#pragma once

// Binary netpbm IO: P6 (RGB) for images, P5 (grey) for label maps and masks.
// Only maxval 255 is supported.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "camix/camx_io.hpp"
#include "camix/errors.hpp"
#include "camix/grid.hpp"
#include "camix/tensor.hpp"

namespace camix {

// Interleaved 8-bit RGB.
struct Rgb8Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;

  bool operator==(const Rgb8Image&) const = default;
};

namespace detail {

struct PnmHeader {
  std::size_t width, height;
  std::size_t data_offset;
};

inline std::size_t parse_pnm_number(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  // Skip whitespace and comments.
  for (;;) {
    while (pos < in.size() && std::isspace(in[pos])) ++pos;
    if (pos < in.size() && in[pos] == '#') {
      while (pos < in.size() && in[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= in.size()) throw FormatError("netpbm: truncated header", pos);
  if (!std::isdigit(in[pos])) throw FormatError("netpbm: expected a number in header", pos);
  std::size_t v = 0;
  while (pos < in.size() && std::isdigit(in[pos])) {
    v = v * 10 + (in[pos] - '0');
    if (v > (1u << 24)) throw FormatError("netpbm: header value too large", pos);
    ++pos;
  }
  return v;
}

inline PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& in, char kind) {
  if (in.size() < 2 || in[0] != 'P') throw FormatError("netpbm: missing magic", 0);
  if (in[1] != static_cast<std::uint8_t>(kind))
    throw FormatError(std::string("netpbm: expected P") + kind + ", found P" +
                          static_cast<char>(in[1]), 1);
  std::size_t pos = 2;
  if (pos >= in.size() || !std::isspace(in[pos]))
    throw FormatError("netpbm: expected whitespace after magic", pos);
  const std::size_t w = parse_pnm_number(in, pos);
  const std::size_t h = parse_pnm_number(in, pos);
  const std::size_t maxval_at = pos;
  const std::size_t maxval = parse_pnm_number(in, pos);
  if (w == 0 || h == 0) throw FormatError("netpbm: zero image dimension", maxval_at);
  if (maxval != 255) throw FormatError("netpbm: only maxval 255 is supported", maxval_at);
  if (pos >= in.size() || !std::isspace(in[pos]))
    throw FormatError("netpbm: expected single whitespace before payload", pos);
  ++pos;
  return {w, h, pos};
}

inline std::vector<std::uint8_t> pnm_header_bytes(char kind, std::size_t w, std::size_t h) {
  const std::string s = std::string("P") + kind + "\n" + std::to_string(w) + " " +
                        std::to_string(h) + "\n255\n";
  return {s.begin(), s.end()};
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_ppm(const Rgb8Image& img) {
  if (img.rgb.size() != img.height * img.width * 3) throw ShapeError("encode_ppm: buffer size mismatch");
  auto out = detail::pnm_header_bytes('6', img.width, img.height);
  out.insert(out.end(), img.rgb.begin(), img.rgb.end());
  return out;
}

inline Rgb8Image decode_ppm(const std::vector<std::uint8_t>& in) {
  const auto hdr = detail::parse_pnm_header(in, '6');
  const std::size_t n = hdr.width * hdr.height * 3;
  if (in.size() - hdr.data_offset < n) throw FormatError("netpbm: truncated payload", in.size());
  Rgb8Image img{hdr.height, hdr.width, {}};
  img.rgb.assign(in.begin() + static_cast<std::ptrdiff_t>(hdr.data_offset),
                 in.begin() + static_cast<std::ptrdiff_t>(hdr.data_offset + n));
  return img;
}

inline std::vector<std::uint8_t> encode_pgm(const Grid<std::uint8_t>& g) {
  auto out = detail::pnm_header_bytes('5', g.width, g.height);
  out.insert(out.end(), g.cells.begin(), g.cells.end());
  return out;
}

inline Grid<std::uint8_t> decode_pgm(const std::vector<std::uint8_t>& in) {
  const auto hdr = detail::parse_pnm_header(in, '5');
  const std::size_t n = hdr.width * hdr.height;
  if (in.size() - hdr.data_offset < n) throw FormatError("netpbm: truncated payload", in.size());
  return Grid<std::uint8_t>(hdr.height, hdr.width,
                            std::vector<std::uint8_t>(in.begin() + static_cast<std::ptrdiff_t>(hdr.data_offset),
                                                      in.begin() + static_cast<std::ptrdiff_t>(hdr.data_offset + n)));
}

inline void write_ppm(const std::filesystem::path& path, const Rgb8Image& img) {
  detail::write_file_bytes(path, encode_ppm(img));
}

inline Rgb8Image read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(detail::read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

inline void write_pgm(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
  detail::write_file_bytes(path, encode_pgm(g));
}

inline Grid<std::uint8_t> read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(detail::read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

// (3, H, W) values in [0, 1] -> 8-bit, round to nearest, clamped.
template <typename T>
Rgb8Image quantize_rgb(const Tensor<T>& image) {
  image.require_ndim(3, "quantize_rgb");
  if (image.dim(0) != 3) throw ShapeError("quantize_rgb: expected 3 channels");
  const std::size_t H = image.dim(1), W = image.dim(2), n = H * W;
  Rgb8Image out{H, W, std::vector<std::uint8_t>(n * 3)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(static_cast<double>(image[c * n + i]), 0.0, 1.0);
      out.rgb[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return out;
}

template <typename T>
Tensor<T> dequantize_rgb(const Rgb8Image& img) {
  const std::size_t n = img.height * img.width;
  Tensor<T> out({3, img.height, img.width});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      out[c * n + i] = static_cast<T>(img.rgb[i * 3 + c]) / static_cast<T>(255);
  return out;
}

// Grey rendering of an (H, W) map, linearly stretched from [lo, hi] to [0, 255].
template <typename T>
Grid<std::uint8_t> grey_from_map(const Tensor<T>& map, double lo, double hi) {
  map.require_ndim(2, "grey_from_map");
  Grid<std::uint8_t> g(map.dim(0), map.dim(1), 0);
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = std::clamp((static_cast<double>(map[i]) - lo) / span, 0.0, 1.0);
    g[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return g;
}

// {0,1} mask -> {0,255}.
inline Grid<std::uint8_t> grey_from_binary(const BinaryGrid& m) {
  Grid<std::uint8_t> g(m.height, m.width, 0);
  for (std::size_t i = 0; i < m.size(); ++i) g[i] = m[i] ? 255 : 0;
  return g;
}

}  // namespace camix
