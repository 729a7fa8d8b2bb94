#pragma once

// Checkpoint files are little-endian:
//   "ACDR" | u32 version | record*
//   record = u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 values
// Records run to end of file.

#include "acdr/tensor.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace acdr {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'A', 'C', 'D', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  friend bool operator==(const NamedArray &, const NamedArray &) = default;
};

namespace detail {

inline void write_u32(std::ostream &os, std::uint32_t v) {
  os.write(reinterpret_cast<const char *>(&v), sizeof v);
}

inline bool read_u32(std::istream &is, std::uint32_t &v) {
  return static_cast<bool>(is.read(reinterpret_cast<char *>(&v), sizeof v));
}

} // namespace detail

inline void write_checkpoint(const std::string &path,
                             const std::vector<NamedArray> &records) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw std::runtime_error("checkpoint: cannot open '" + path +
                             "' for writing");
  os.write(kCheckpointMagic, 4);
  detail::write_u32(os, kCheckpointVersion);
  for (const auto &r : records) {
    if (numel(r.shape) != r.values.size())
      throw std::invalid_argument("checkpoint: record '" + r.name +
                                  "' has inconsistent shape");
    detail::write_u32(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape)
      detail::write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char *>(r.values.data()),
             static_cast<std::streamsize>(r.values.size() * sizeof(float)));
  }
  if (!os)
    throw std::runtime_error("checkpoint: write to '" + path + "' failed");
}

inline std::vector<NamedArray> read_checkpoint(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  std::uint32_t version = 0;
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' has bad magic");
  if (!detail::read_u32(is, version) || version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: '" + path +
                             "' has unsupported version " +
                             std::to_string(version));
  std::vector<NamedArray> records;
  std::uint32_t name_len = 0;
  while (detail::read_u32(is, name_len)) {
    NamedArray r;
    r.name.resize(name_len);
    std::uint32_t rank = 0;
    if (!is.read(r.name.data(), name_len) || !detail::read_u32(is, rank))
      throw std::runtime_error("checkpoint: truncated record in '" + path + "'");
    r.shape.resize(rank);
    for (auto &d : r.shape) {
      std::uint32_t v = 0;
      if (!detail::read_u32(is, v))
        throw std::runtime_error("checkpoint: truncated dims in '" + path + "'");
      d = v;
    }
    r.values.resize(numel(r.shape));
    if (!is.read(reinterpret_cast<char *>(r.values.data()),
                 static_cast<std::streamsize>(r.values.size() * sizeof(float))))
      throw std::runtime_error("checkpoint: truncated values for '" + r.name +
                               "' in '" + path + "'");
    records.push_back(std::move(r));
  }
  return records;
}

} // namespace acdr
