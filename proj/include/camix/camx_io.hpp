#pragma once

// "CAMX" tensor files:
//   magic "CAMX" | u32 version (1) | u8 dtype (0 = f32, 1 = f64) | u32 ndim |
//   ndim x u64 dims | raw little-endian element data

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include "camix/errors.hpp"
#include "camix/tensor.hpp"

namespace camix {

inline constexpr std::uint32_t kCamxVersion = 1;

enum class CamxDtype : std::uint8_t { f32 = 0, f64 = 1 };

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
               std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  const auto bits = std::bit_cast<Bits>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename U>
U get_le(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* what) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
               std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  if (pos + sizeof(U) > in.size())
    throw FormatError(std::string("CAMX: truncated ") + what, pos);
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return std::bit_cast<U>(bits);
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for reading");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_camx(const Tensor<T>& t) {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  std::vector<std::uint8_t> out{'C', 'A', 'M', 'X'};
  detail::put_le<std::uint32_t>(out, kCamxVersion);
  detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(std::is_same_v<T, float> ? CamxDtype::f32 : CamxDtype::f64));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) detail::put_le<std::uint64_t>(out, d);
  out.reserve(out.size() + t.size() * sizeof(T));
  for (T v : t.values()) detail::put_le<T>(out, v);
  return out;
}

// Decodes into T regardless of the stored dtype (values are converted).
template <typename T>
Tensor<T> decode_camx(const std::vector<std::uint8_t>& in) {
  if (in.size() < 4 || std::memcmp(in.data(), "CAMX", 4) != 0)
    throw FormatError("CAMX: bad magic", 0);
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(in, pos, "version");
  if (version != kCamxVersion)
    throw FormatError("CAMX: unsupported version " + std::to_string(version), 4);
  const auto dtype = detail::get_le<std::uint8_t>(in, pos, "dtype");
  if (dtype > 1) throw FormatError("CAMX: unknown dtype " + std::to_string(dtype), 8);
  const auto ndim = detail::get_le<std::uint32_t>(in, pos, "ndim");
  if (ndim == 0 || ndim > 8) throw FormatError("CAMX: bad ndim " + std::to_string(ndim), 9);
  Shape shape(ndim);
  for (auto& d : shape) {
    const std::size_t at = pos;
    d = detail::get_le<std::uint64_t>(in, pos, "dims");
    if (d == 0 || d > (1ULL << 32)) throw FormatError("CAMX: bad dimension", at);
  }
  const std::size_t n = shape_volume(shape);
  const std::size_t elem = dtype == 0 ? 4 : 8;
  if (in.size() - pos < n * elem) throw FormatError("CAMX: truncated payload", in.size());
  if (in.size() - pos > n * elem) throw FormatError("CAMX: trailing bytes", pos + n * elem);
  std::vector<T> data(n);
  for (auto& v : data)
    v = dtype == 0 ? static_cast<T>(detail::get_le<float>(in, pos, "data"))
                   : static_cast<T>(detail::get_le<double>(in, pos, "data"));
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void write_camx(const std::filesystem::path& path, const Tensor<T>& t) {
  detail::write_file_bytes(path, encode_camx(t));
}

template <typename T>
Tensor<T> read_camx(const std::filesystem::path& path) {
  try {
    return decode_camx<T>(detail::read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

}  // namespace camix
