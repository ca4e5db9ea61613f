#pragma once

// Binary parameter checkpoint, little-endian:
//   "EVSD" | u32 version | u32 dim_count | u32 dims[dim_count] | u8 activation | f64 params[d]
// dims lists input, hidden..., output. Parameters follow the flat layout of Mlp.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "esdrl/nn.hpp"

namespace esdrl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t read(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size())
      throw std::runtime_error("checkpoint truncated");
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * b);
    return v;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Mlp& net) {
  const MlpSpec& spec = net.spec();
  std::vector<std::uint8_t> out{'E', 'V', 'S', 'D'};
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(spec.hidden_dims.size() + 2));
  detail::put_u32(out, static_cast<std::uint32_t>(spec.input_dim));
  for (auto h : spec.hidden_dims) detail::put_u32(out, static_cast<std::uint32_t>(h));
  detail::put_u32(out, static_cast<std::uint32_t>(spec.output_dim));
  out.push_back(static_cast<std::uint8_t>(spec.activation));
  for (double v : net.parameters()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Mlp decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 'E' || bytes[1] != 'V' || bytes[2] != 'S' || bytes[3] != 'D')
    throw std::runtime_error("not a checkpoint: bad magic");
  detail::ByteReader in(bytes.subspan(4));
  const auto version = static_cast<std::uint32_t>(in.read(4));
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto dim_count = static_cast<std::uint32_t>(in.read(4));
  if (dim_count < 2) throw std::runtime_error("checkpoint needs at least input and output dims");
  std::vector<std::size_t> dims(dim_count);
  for (auto& d : dims) d = static_cast<std::size_t>(in.read(4));
  const auto tag = static_cast<std::uint8_t>(in.read(1));
  if (tag > 1) throw std::runtime_error("unknown activation tag " + std::to_string(tag));

  MlpSpec spec;
  spec.input_dim = dims.front();
  spec.output_dim = dims.back();
  spec.hidden_dims.assign(dims.begin() + 1, dims.end() - 1);
  spec.activation = static_cast<Activation>(tag);
  spec.validate();

  ParameterVector params(spec.parameter_count());
  for (double& v : params) v = std::bit_cast<double>(in.read(8));
  if (!in.at_end()) throw std::runtime_error("trailing bytes after checkpoint parameters");
  return Mlp(std::move(spec), std::move(params));
}

inline void save_checkpoint(const Mlp& net, const std::string& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline Mlp load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace esdrl
