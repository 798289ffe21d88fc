#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "sckan/gradcheck.hpp"
#include "sckan/tensor.hpp"
#include "sckan/volume.hpp"

namespace sckan {

namespace detail {
constexpr char kCheckpointMagic[4] = {'S', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace detail

// "SCKP" checkpoint: magic, version u32, then named parameter records until
// EOF (name length u16, UTF-8 name, rank u8, dims u32 each, LE f64 data).
inline void save_checkpoint(const std::string& path, const std::vector<NamedParam>& params) {
  std::vector<std::uint8_t> bytes;
  bytes.insert(bytes.end(), detail::kCheckpointMagic, detail::kCheckpointMagic + 4);
  detail::put_u32(bytes, detail::kCheckpointVersion);
  for (const auto& p : params) {
    require(p.name.size() < 65536, "save_checkpoint: name too long");
    bytes.push_back(static_cast<std::uint8_t>(p.name.size() & 0xff));
    bytes.push_back(static_cast<std::uint8_t>((p.name.size() >> 8) & 0xff));
    bytes.insert(bytes.end(), p.name.begin(), p.name.end());
    const auto& shape = p.tensor.shape();
    bytes.push_back(static_cast<std::uint8_t>(shape.size()));
    for (int d : shape) detail::put_u32(bytes, static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) detail::put_u64(bytes, std::bit_cast<std::uint64_t>(v));
  }
  detail::write_file_bytes(path, bytes);
}

inline std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() < 8) throw FormatError("truncated header", bytes.size());
  if (std::memcmp(bytes.data(), detail::kCheckpointMagic, 4) != 0)
    throw FormatError("bad magic", 0);
  if (detail::get_u32(bytes.data() + 4) != detail::kCheckpointVersion)
    throw FormatError("unsupported version", 4);
  std::map<std::string, Tensor> out;
  std::size_t pos = 8;
  while (pos < bytes.size()) {
    if (pos + 2 > bytes.size()) throw FormatError("truncated record", pos);
    const std::size_t name_len = bytes[pos] | (static_cast<std::size_t>(bytes[pos + 1]) << 8);
    pos += 2;
    if (pos + name_len + 1 > bytes.size()) throw FormatError("truncated name", pos);
    std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
    pos += name_len;
    const int rank = bytes[pos++];
    if (pos + static_cast<std::size_t>(rank) * 4 > bytes.size())
      throw FormatError("truncated dims", pos);
    Shape shape(static_cast<std::size_t>(rank));
    for (int i = 0; i < rank; ++i) {
      shape[static_cast<std::size_t>(i)] = static_cast<int>(detail::get_u32(bytes.data() + pos));
      pos += 4;
    }
    const std::size_t count = static_cast<std::size_t>(numel(shape));
    if (pos + count * 8 > bytes.size()) throw FormatError("truncated data", pos);
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i)
      data[i] = std::bit_cast<double>(detail::get_u64(bytes.data() + pos + 8 * i));
    pos += count * 8;
    out.emplace(std::move(name), Tensor::from_vector(std::move(shape), std::move(data)));
  }
  return out;
}

// Restores values into an existing parameter set; shapes must match.
inline void restore_params(const std::map<std::string, Tensor>& loaded,
                           const std::vector<NamedParam>& params, const std::string& prefix) {
  for (const auto& p : params) {
    auto it = loaded.find(prefix + p.name);
    require(it != loaded.end(), "checkpoint: missing parameter " + prefix + p.name);
    require(it->second.shape() == p.tensor.shape(),
            "checkpoint: shape mismatch for " + prefix + p.name);
    auto& dst = const_cast<Tensor&>(p.tensor).mutable_values();
    const auto src = it->second.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace sckan
