#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sckan/tensor.hpp"

namespace sckan {

// Malformed volume file; offset is the byte position of the first bad field.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset(offset) {}
  std::uint64_t offset;
};

// 3D scalar grid, row-major with the last axis fastest.
template <typename T>
struct Grid3 {
  std::array<int, 3> dims{0, 0, 0};
  std::vector<T> data;

  Grid3() = default;
  Grid3(int a, int b, int c, T fill = T{})
      : dims{a, b, c}, data(static_cast<std::size_t>(a) * b * c, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * dims[1] + j) * dims[2] + k;
  }
  T& at(int i, int j, int k) { return data[index(i, j, k)]; }
  const T& at(int i, int j, int k) const { return data[index(i, j, k)]; }

  bool operator==(const Grid3&) const = default;
};

using Volume = Grid3<double>;
using Mask = Grid3<std::uint8_t>;

// Binary segmentation throughout: class 0 background, class 1 foreground.
inline constexpr int kNumClasses = 2;

namespace detail {

constexpr char kVolumeMagic[4] = {'S', 'C', 'K', 'V'};
constexpr std::uint32_t kVolumeVersion = 1;
// magic(4) + version(4) + dtype(1) + rank(1) + reserved(2) + dims(3*4) = 24.
constexpr std::size_t kVolumeHeaderSize = 24;

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto len = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(len);
  if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("short read on " + path);
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write on " + path);
}

inline std::vector<std::uint8_t> encode_header(std::uint8_t dtype, const std::array<int, 3>& dims) {
  std::vector<std::uint8_t> out;
  out.reserve(kVolumeHeaderSize);
  out.insert(out.end(), kVolumeMagic, kVolumeMagic + 4);
  put_u32(out, kVolumeVersion);
  out.push_back(dtype);
  out.push_back(3);  // rank
  out.push_back(0);  // reserved
  out.push_back(0);  // reserved
  for (int d : dims) put_u32(out, static_cast<std::uint32_t>(d));
  return out;
}

inline std::array<int, 3> decode_header(const std::vector<std::uint8_t>& bytes,
                                        std::uint8_t expected_dtype) {
  if (bytes.size() < kVolumeHeaderSize) throw FormatError("truncated header", bytes.size());
  if (std::memcmp(bytes.data(), kVolumeMagic, 4) != 0) throw FormatError("bad magic", 0);
  if (get_u32(bytes.data() + 4) != kVolumeVersion) throw FormatError("unsupported version", 4);
  if (bytes[8] != expected_dtype) throw FormatError("unexpected dtype", 8);
  if (bytes[9] != 3) throw FormatError("unexpected rank", 9);
  std::array<int, 3> dims{};
  for (int i = 0; i < 3; ++i) {
    const std::uint32_t d = get_u32(bytes.data() + 12 + 4 * i);
    if (d == 0 || d > (1u << 20)) throw FormatError("implausible dimension", 12 + 4 * i);
    dims[static_cast<std::size_t>(i)] = static_cast<int>(d);
  }
  return dims;
}

}  // namespace detail

// "SCKV" container, dtype 0: little-endian f64 payload.
inline void write_volume(const std::string& path, const Volume& v) {
  auto bytes = detail::encode_header(0, v.dims);
  bytes.reserve(bytes.size() + v.data.size() * 8);
  for (double x : v.data) detail::put_u64(bytes, std::bit_cast<std::uint64_t>(x));
  detail::write_file_bytes(path, bytes);
}

inline Volume read_volume(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  const auto dims = detail::decode_header(bytes, 0);
  Volume v(dims[0], dims[1], dims[2]);
  const std::size_t want = detail::kVolumeHeaderSize + v.size() * 8;
  if (bytes.size() != want) throw FormatError("payload size mismatch", bytes.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    v.data[i] = std::bit_cast<double>(detail::get_u64(bytes.data() + detail::kVolumeHeaderSize + 8 * i));
  return v;
}

// "SCKV" container, dtype 1: u8 label payload.
inline void write_mask(const std::string& path, const Mask& m) {
  auto bytes = detail::encode_header(1, m.dims);
  bytes.insert(bytes.end(), m.data.begin(), m.data.end());
  detail::write_file_bytes(path, bytes);
}

inline Mask read_mask(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  const auto dims = detail::decode_header(bytes, 1);
  Mask m(dims[0], dims[1], dims[2]);
  const std::size_t want = detail::kVolumeHeaderSize + m.size();
  if (bytes.size() != want) throw FormatError("payload size mismatch", bytes.size());
  std::memcpy(m.data.data(), bytes.data() + detail::kVolumeHeaderSize, m.size());
  return m;
}

// Nearest-neighbor factor-2 downsampling of a label grid (even index rule),
// used to align masks with the feature resolution.
inline Mask downsample_mask2x(const Mask& m) {
  require(m.dims[0] % 2 == 0 && m.dims[1] % 2 == 0 && m.dims[2] % 2 == 0,
          "downsample_mask2x: odd dims");
  Mask out(m.dims[0] / 2, m.dims[1] / 2, m.dims[2] / 2);
  for (int i = 0; i < out.dims[0]; ++i)
    for (int j = 0; j < out.dims[1]; ++j)
      for (int k = 0; k < out.dims[2]; ++k) out.at(i, j, k) = m.at(2 * i, 2 * j, 2 * k);
  return out;
}

inline std::vector<int> mask_labels(const Mask& m) {
  return std::vector<int>(m.data.begin(), m.data.end());
}

}  // namespace sckan
