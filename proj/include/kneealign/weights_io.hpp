#pragma once

// KAW1 weights container:
//   "KAW1" | u32 version | u32 count | count x record
//   record = u32 name_len | name bytes (UTF-8) | u32 rank | rank x u32 dim | f32 values
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "kneealign/error.hpp"
#include "kneealign/tensor.hpp"

namespace ka {

inline constexpr std::uint32_t kWeightsVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw Error(Errc::ParseError, "truncated weights file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline std::string encode_weights(const std::vector<NamedArray>& arrays) {
  std::string out = "KAW1";
  detail::put_u32(out, kWeightsVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.values.size() != shape_numel(a.shape)) {
      throw Error(Errc::ShapeMismatch, "weights record '" + a.name + "' has inconsistent shape");
    }
    detail::put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    detail::put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (int d : a.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : a.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline std::vector<NamedArray> decode_weights(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "KAW1") != 0) {
    throw Error(Errc::ParseError, "missing KAW1 magic");
  }
  std::size_t pos = 4;
  const std::uint32_t version = detail::get_u32(bytes, pos);
  if (version != kWeightsVersion) {
    throw Error(Errc::ParseError, "unsupported weights version " + std::to_string(version));
  }
  const std::uint32_t count = detail::get_u32(bytes, pos);
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint32_t name_len = detail::get_u32(bytes, pos);
    if (pos + name_len > bytes.size()) throw Error(Errc::ParseError, "truncated tensor name");
    a.name = bytes.substr(pos, name_len);
    pos += name_len;
    const std::uint32_t rank = detail::get_u32(bytes, pos);
    for (std::uint32_t r = 0; r < rank; ++r) a.shape.push_back(static_cast<int>(detail::get_u32(bytes, pos)));
    const std::size_t n = shape_numel(a.shape);
    if (pos + 4 * n > bytes.size()) throw Error(Errc::ParseError, "truncated values for '" + a.name + "'");
    a.values.resize(n);
    for (std::size_t j = 0; j < n; ++j) a.values[j] = std::bit_cast<float>(detail::get_u32(bytes, pos));
    arrays.push_back(std::move(a));
  }
  if (pos != bytes.size()) throw Error(Errc::ParseError, "trailing bytes after weights records");
  return arrays;
}

inline void save_weights(const std::filesystem::path& path, const std::vector<NamedArray>& arrays) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  const std::string bytes = encode_weights(arrays);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

inline std::vector<NamedArray> load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_weights(bytes);
}

}  // namespace ka
