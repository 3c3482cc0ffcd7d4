#pragma once

// Checkpoint container
// --------------------
// Little-endian binary file:
//
//   bytes 0..7   magic "SEKDCKPT"
//   u32          container version (kCheckpointVersion)
//   u64, bytes   metadata record, UTF-8 JSON
//   u32          number of arrays
//   per array:   u32 name length, name bytes,
//                u8 dtype (1 = f32, 2 = f64, 3 = i32), u8 rank, rank × i64 dims,
//                raw element data
//
// Metadata keys: "format", "version", "arch" (channel plan), "descriptor_dim",
// "iteration", "epoch", "phase", "step", "extra" (free-form object).
// Network arrays are stored under their parameter names; auxiliary integer
// arrays (e.g. keypoint caches) under caller-chosen names prefixed "aux/".

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "sekd/core/error.hpp"
#include "sekd/model/params.hpp"

namespace sekd::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'K', 'D', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

struct Checkpoint {
  NetworkParams<float> params;
  nlohmann::json extra = nlohmann::json::object();
  std::map<std::string, std::vector<std::int32_t>> aux;
};

inline nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"stem_channels", a.stem_channels},
          {"stage_channels", a.stage_channels},
          {"blocks_per_stage", a.blocks_per_stage},
          {"bottleneck", a.bottleneck},
          {"bottleneck_ratio", a.bottleneck_ratio},
          {"descriptor_dim", a.descriptor_dim},
          {"head_channels", a.head_channels},
          {"deconv_kernel", a.deconv_kernel}};
}

inline ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.stem_channels = j.at("stem_channels");
  a.stage_channels = j.at("stage_channels");
  a.blocks_per_stage = j.at("blocks_per_stage");
  a.bottleneck = j.at("bottleneck");
  a.bottleneck_ratio = j.at("bottleneck_ratio");
  a.descriptor_dim = j.at("descriptor_dim");
  a.head_channels = j.at("head_channels");
  a.deconv_kernel = j.at("deconv_kernel");
  a.validate();
  return a;
}

namespace detail {

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is) {
  V v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!is) throw DataError("checkpoint truncated");
  return v;
}

inline void put_array(std::ostream& os, const std::string& name, std::uint8_t dtype,
                      const std::vector<std::int64_t>& dims, const void* data, std::size_t bytes) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(os, dtype);
  put<std::uint8_t>(os, static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) put<std::int64_t>(os, d);
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

struct RawArray {
  std::uint8_t dtype = 0;
  std::vector<std::int64_t> dims;
  std::vector<char> bytes;
};

}  // namespace detail

/// Writes atomically: the file is assembled under a temporary name and renamed.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  const auto& p = ck.params;
  nlohmann::json meta = {{"format", "sekd-checkpoint"},
                         {"version", kCheckpointVersion},
                         {"arch", arch_to_json(p.arch())},
                         {"descriptor_dim", p.arch().descriptor_dim},
                         {"iteration", p.meta().iteration},
                         {"epoch", p.meta().epoch},
                         {"phase", p.meta().phase},
                         {"step", p.meta().step},
                         {"extra", ck.extra}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint: " + tmp.string());
    os.write(kCheckpointMagic, 8);
    detail::put<std::uint32_t>(os, kCheckpointVersion);
    const std::string m = meta.dump();
    detail::put<std::uint64_t>(os, m.size());
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.count() + ck.aux.size()));
    for (std::size_t i = 0; i < p.count(); ++i) {
      const auto& t = p[i];
      detail::put_array(os, p.name(i), 1, {t.n(), t.c(), t.h(), t.w()}, t.data(),
                        t.size() * sizeof(float));
    }
    for (const auto& [name, v] : ck.aux)
      detail::put_array(os, "aux/" + name, 3, {static_cast<std::int64_t>(v.size())}, v.data(),
                        v.size() * sizeof(std::int32_t));
    if (!os) throw DataError("failed writing checkpoint: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path.string());
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version mismatch: file " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  const auto mlen = detail::get<std::uint64_t>(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw DataError("checkpoint truncated");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(mtext);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (meta.value("format", "") != "sekd-checkpoint") throw DataError("checkpoint format tag missing");

  std::map<std::string, detail::RawArray> arrays;
  const auto count = detail::get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto nlen = detail::get<std::uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    detail::RawArray a;
    a.dtype = detail::get<std::uint8_t>(is);
    const auto rank = detail::get<std::uint8_t>(is);
    std::int64_t elems = 1;
    for (int r = 0; r < rank; ++r) {
      a.dims.push_back(detail::get<std::int64_t>(is));
      elems *= a.dims.back();
    }
    const std::size_t esize = a.dtype == 2 ? 8 : 4;
    if (a.dtype < 1 || a.dtype > 3 || elems < 0) throw DataError("checkpoint: bad array header");
    a.bytes.resize(static_cast<std::size_t>(elems) * esize);
    is.read(a.bytes.data(), static_cast<std::streamsize>(a.bytes.size()));
    if (!is) throw DataError("checkpoint truncated in array " + name);
    arrays.emplace(std::move(name), std::move(a));
  }

  Checkpoint ck;
  try {
    ck.params = NetworkParams<float>(arch_from_json(meta.at("arch")));
    ck.params.meta().iteration = meta.at("iteration");
    ck.params.meta().epoch = meta.at("epoch");
    ck.params.meta().phase = meta.at("phase");
    ck.params.meta().step = meta.at("step");
    ck.extra = meta.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata incomplete: ") + e.what());
  }
  for (std::size_t i = 0; i < ck.params.count(); ++i) {
    auto it = arrays.find(ck.params.name(i));
    if (it == arrays.end()) throw DataError("checkpoint missing array " + ck.params.name(i));
    auto& t = ck.params[i];
    const auto& a = it->second;
    if (a.dims != std::vector<std::int64_t>{t.n(), t.c(), t.h(), t.w()})
      throw DataError("checkpoint shape mismatch for " + ck.params.name(i));
    if (a.dtype == 1) {
      std::memcpy(t.data(), a.bytes.data(), a.bytes.size());
    } else if (a.dtype == 2) {
      std::vector<double> tmp(t.size());
      std::memcpy(tmp.data(), a.bytes.data(), a.bytes.size());
      for (std::size_t e = 0; e < t.size(); ++e) t.data()[e] = static_cast<float>(tmp[e]);
    } else {
      throw DataError("checkpoint: parameter array has integer dtype");
    }
  }
  for (auto& [name, a] : arrays) {
    if (name.rfind("aux/", 0) != 0) continue;
    if (a.dtype != 3) throw DataError("checkpoint: aux array must be int32");
    std::vector<std::int32_t> v(a.bytes.size() / 4);
    std::memcpy(v.data(), a.bytes.data(), a.bytes.size());
    ck.aux.emplace(name.substr(4), std::move(v));
  }
  return ck;
}

}  // namespace sekd::model
