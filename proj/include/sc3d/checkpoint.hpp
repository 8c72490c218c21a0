#pragma once

// Binary checkpoint of a SiameseModel. Layout (all integers little-endian):
//
//   "SC3DCKPT"  u32 version  u64 seed  u64 K  u64 N  u64 M  u64 hidden  u64 layer_count
//   per layer:  str name  u8 kind  i64 step_count  u64 tensor_count
//   per tensor: str name  u64 ndim  u64 dims[ndim]  f64 values[prod(dims)]
//
// where str is u64 length followed by bytes, and f64 is the IEEE-754 bit
// pattern. Loading rebuilds the architecture from the header and requires
// every stored tensor to match it exactly.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "sc3d/errors.hpp"
#include "sc3d/network.hpp"

namespace sc3d {

inline constexpr char kCheckpointMagic[8] = {'S', 'C', '3', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(std::istream& is) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw DataError("checkpoint: unexpected end of file");
    v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_le<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get_le<std::uint64_t>(is);
  if (n > (1u << 20)) throw DataError("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("checkpoint: unexpected end of file");
  return s;
}

inline void put_values(std::ostream& os, const std::string& name, const Shape& shape,
                       const std::vector<double>& values) {
  put_string(os, name);
  put_le<std::uint64_t>(os, shape.size());
  for (std::size_t d : shape) put_le<std::uint64_t>(os, d);
  for (double v : values) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

inline std::map<std::string, std::pair<Shape, std::vector<double>>> layer_tensors(const LayerParams& p) {
  std::map<std::string, std::pair<Shape, std::vector<double>>> t;
  t["weights"] = {p.weights.shape, p.weights.values};
  t["bias"] = {p.bias.shape, p.bias.values};
  t["adam_m_weights"] = {p.weights.shape, p.adam_m_weights};
  t["adam_v_weights"] = {p.weights.shape, p.adam_v_weights};
  t["adam_m_bias"] = {p.bias.shape, p.adam_m_bias};
  t["adam_v_bias"] = {p.bias.shape, p.adam_v_bias};
  if (p.kind == LayerKind::batch_norm) {
    t["running_mean"] = {Shape{p.running_mean.size()}, p.running_mean};
    t["running_var"] = {Shape{p.running_var.size()}, p.running_var};
  }
  return t;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const SiameseModel& m) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint64_t>(os, m.seed);
  detail::put_le<std::uint64_t>(os, m.shape.latent);
  detail::put_le<std::uint64_t>(os, m.shape.points);
  detail::put_le<std::uint64_t>(os, m.shape.decoded_points);
  detail::put_le<std::uint64_t>(os, m.shape.hidden);
  const auto layers = m.layers();
  detail::put_le<std::uint64_t>(os, layers.size());
  for (const LayerParams* p : layers) {
    detail::put_string(os, p->name);
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(p->kind));
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(p->step_count));
    const auto tensors = detail::layer_tensors(*p);
    detail::put_le<std::uint64_t>(os, tensors.size());
    for (const auto& [name, t] : tensors) detail::put_values(os, name, t.first, t.second);
  }
  if (!os) throw DataError("checkpoint: write failed");
}

inline SiameseModel read_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kCheckpointMagic)) throw DataError("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto seed = detail::get_le<std::uint64_t>(is);
  NetworkShape shape;
  shape.latent = detail::get_le<std::uint64_t>(is);
  shape.points = detail::get_le<std::uint64_t>(is);
  shape.decoded_points = detail::get_le<std::uint64_t>(is);
  shape.hidden = detail::get_le<std::uint64_t>(is);
  if (shape.latent == 0 || shape.points == 0 || shape.decoded_points == 0 || shape.hidden == 0 ||
      shape.latent > 65536 || shape.points > (1u << 24) || shape.decoded_points > (1u << 24) ||
      shape.hidden > 65536) {
    throw DataError("checkpoint: implausible network shape");
  }
  SiameseModel m(shape, seed);
  auto layers = m.layers();
  if (detail::get_le<std::uint64_t>(is) != layers.size()) throw DataError("checkpoint: layer count mismatch");
  for (LayerParams* p : layers) {
    const std::string name = detail::get_string(is);
    if (name != p->name) throw DataError("checkpoint: expected layer " + p->name + ", found " + name);
    if (detail::get_le<std::uint8_t>(is) != static_cast<std::uint8_t>(p->kind)) {
      throw DataError("checkpoint: layer kind mismatch for " + name);
    }
    p->step_count = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is));
    auto expected = detail::layer_tensors(*p);
    const auto count = detail::get_le<std::uint64_t>(is);
    if (count != expected.size()) throw DataError("checkpoint: tensor count mismatch for " + name);
    for (std::uint64_t t = 0; t < count; ++t) {
      const std::string tname = detail::get_string(is);
      const auto it = expected.find(tname);
      if (it == expected.end()) throw DataError("checkpoint: unexpected tensor " + name + "." + tname);
      const auto ndim = detail::get_le<std::uint64_t>(is);
      Shape dims;
      for (std::uint64_t d = 0; d < ndim && d < 8; ++d) dims.push_back(detail::get_le<std::uint64_t>(is));
      if (dims != it->second.first) {
        throw DataError("checkpoint: " + name + "." + tname + " has shape " + shape_string(dims) + ", expected " +
                        shape_string(it->second.first));
      }
      std::vector<double> values(shape_product(dims));
      for (double& v : values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
      if (tname == "weights") p->weights.values = std::move(values);
      else if (tname == "bias") p->bias.values = std::move(values);
      else if (tname == "adam_m_weights") p->adam_m_weights = std::move(values);
      else if (tname == "adam_v_weights") p->adam_v_weights = std::move(values);
      else if (tname == "adam_m_bias") p->adam_m_bias = std::move(values);
      else if (tname == "adam_v_bias") p->adam_v_bias = std::move(values);
      else if (tname == "running_mean") p->running_mean = std::move(values);
      else if (tname == "running_var") p->running_var = std::move(values);
    }
  }
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const SiameseModel& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  write_checkpoint(os, m);
}

inline SiameseModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace sc3d
