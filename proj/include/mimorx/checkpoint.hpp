// Weight checkpoint files, magic "DRXW".
//
// Layout (little-endian):
//   "DRXW" | u32 version | u32 tensor count | per tensor:
//     u32 name length | name bytes | u32 rank | u32 dims[rank] |
//     u8 plane count (1 real, 2 complex) |
//     f32 planes (real plane, then imaginary plane for complex tensors)
//
// Values are stored at training precision (f32), so a save/load round trip
// is bitwise. A plain-text JSON sidecar written next to the checkpoint
// carries the model architecture and training progress; this file holds
// only named tensors.

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "mimorx/dataset_io.hpp"
#include "mimorx/model.hpp"
#include "mimorx/tensor.hpp"

namespace mimorx {

constexpr uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

inline void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write("DRXW", 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::write_u32(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::write_u32(out, static_cast<uint32_t>(t.value.rank()));
    for (int d : t.value.shape) detail::write_u32(out, static_cast<uint32_t>(d));
    out.put(t.value.is_complex() ? 2 : 1);
    detail::write_f32_plane(out, t.value.re);
    if (t.value.is_complex()) detail::write_f32_plane(out, t.value.im);
  }
  if (!out) throw IoError("short write to " + path);
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "DRXW") throw IoError(path + ": not a DRXW checkpoint");
  const uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
  const uint32_t count = detail::read_u32(in);
  std::vector<NamedTensor> tensors;
  tensors.reserve(count);
  for (uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    const uint32_t nlen = detail::read_u32(in);
    if (!in || nlen > (1u << 20)) throw IoError(path + ": corrupt tensor name length");
    t.name.resize(nlen);
    in.read(t.name.data(), nlen);
    const uint32_t rank = detail::read_u32(in);
    if (!in || rank > 8) throw IoError(path + ": corrupt tensor rank");
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(detail::read_u32(in));
    const int planes = in.get();
    if (planes != 1 && planes != 2) throw IoError(path + ": corrupt plane count");
    t.value = planes == 2 ? Tensor<float>::complex(shape) : Tensor<float>::real(shape);
    detail::read_f32_plane(in, t.value.re, static_cast<size_t>(t.value.numel()));
    if (planes == 2) detail::read_f32_plane(in, t.value.im, static_cast<size_t>(t.value.numel()));
    if (!in) throw IoError(path + ": truncated tensor payload");
    tensors.push_back(std::move(t));
  }
  return tensors;
}

// Model parameters in canonical (insertion) order, downcast to f32.
template <typename T>
std::vector<NamedTensor> snapshot_params(const ParamStore<T>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (size_t i = 0; i < params.size(); ++i)
    out.push_back({params.name(i), params.var(i).value().template cast<float>()});
  return out;
}

// Strict restore: the checkpoint must carry exactly the store's tensors,
// in order, with matching shapes and realness.
template <typename T>
void load_params(ParamStore<T>& params, const std::vector<NamedTensor>& tensors) {
  if (tensors.size() != params.size())
    throw ConfigError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, model has " +
                      std::to_string(params.size()));
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& t = tensors[i];
    auto& v = params.var(i);
    if (t.name != params.name(i))
      throw ConfigError("checkpoint tensor '" + t.name + "' where model expects '" + params.name(i) +
                        "'");
    if (t.value.shape != v.value().shape || t.value.is_complex() != v.value().is_complex())
      throw ConfigError("checkpoint tensor '" + t.name + "' has shape " + shape_str(t.value.shape) +
                        ", model wants " + shape_str(v.value().shape));
    v.node()->value = t.value.template cast<T>();
    v.node()->grad = Tensor<T>{};
  }
}

}  // namespace mimorx
