#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ingraph/optim.hpp"
#include "ingraph/tensor.hpp"

namespace ingraph {

// Flat binary parameter container. Layout, all integers 64-bit little-endian:
//   "IGK1" | u64 count | per parameter:
//   u64 name_len | name bytes | u64 rank | u64 dims[rank] | f64 values[...]
inline constexpr char kCheckpointMagic[4] = {'I', 'G', 'K', '1'};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw IoError("checkpoint: truncated while reading " + what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline void write_f64(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(os, bits);
}

inline double read_f64(std::istream& is, const std::string& what) {
  const std::uint64_t bits = read_u64(is, what);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<Parameter*>& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  detail::write_u64(os, params.size());
  for (const Parameter* p : params) {
    detail::write_u64(os, p->name.size());
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    const Shape& s = p->tensor.shape();
    detail::write_u64(os, s.size());
    for (std::size_t d : s) detail::write_u64(os, d);
    for (double v : p->tensor.values()) detail::write_f64(os, v);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

inline std::map<std::string, Tensor> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw IoError("not a checkpoint file (bad magic): " + path);
  const std::uint64_t count = detail::read_u64(is, "parameter count");
  std::map<std::string, Tensor> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = detail::read_u64(is, "name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw IoError("checkpoint: truncated while reading name");
    const std::uint64_t rank = detail::read_u64(is, "rank of '" + name + "'");
    Shape shape(rank);
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      shape[d] = detail::read_u64(is, "dims of '" + name + "'");
      numel *= shape[d];
    }
    std::vector<double> values(numel);
    for (std::size_t v = 0; v < numel; ++v)
      values[v] = detail::read_f64(is, "values of '" + name + "'");
    if (!out.emplace(name, Tensor::from_values(std::move(shape), std::move(values)))
             .second)
      throw IoError("checkpoint: duplicate parameter '" + name + "'");
  }
  return out;
}

// Loads values into an existing parameter set; every parameter must be
// present in the file with a matching shape, and vice versa.
inline void load_checkpoint(const std::string& path,
                            const std::vector<Parameter*>& params) {
  auto stored = read_checkpoint(path);
  for (Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end())
      throw IoError("checkpoint " + path + " is missing parameter '" + p->name + "'");
    if (it->second.shape() != p->tensor.shape())
      throw IoError("checkpoint " + path + ": parameter '" + p->name + "' has shape " +
                    shape_str(it->second.shape()) + ", model expects " +
                    shape_str(p->tensor.shape()));
    p->tensor.mutable_values() = it->second.values();
    stored.erase(it);
  }
  if (!stored.empty())
    throw IoError("checkpoint " + path + " contains unknown parameter '" +
                  stored.begin()->first + "'");
}

}  // namespace ingraph
