#pragma once

// Binary checkpoint: configuration, variant, parameters and Adam state.
//
// Layout (little-endian):
//   "PISAC" | u16 version | u32 n + n bytes config text | u8 variant
//   u32 tensor count | per tensor: u8 rank, rank x u32 extents, f64 values
//   u64 Adam step | m tensors | v tensors (same per-tensor encoding) | u32 epochs done

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pisac/config.hpp"
#include "pisac/errors.hpp"
#include "pisac/network.hpp"
#include "pisac/trainer.hpp"

namespace pisac {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[5] = {'P', 'I', 'S', 'A', 'C'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ExperimentConfig config;
  Variant variant = Variant::kProposed;
  NetworkParams params;
  AdamState adam;
  std::uint32_t epochs_done = 0;
};

namespace detail {

template <class T>
void put(std::ostream& o, T v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ConfigError("checkpoint: truncated file");
  return v;
}

inline void put_tensors(std::ostream& o, const std::vector<ad::Tensor>& ts) {
  for (const auto& t : ts) {
    put<std::uint8_t>(o, static_cast<std::uint8_t>(t.rank()));
    for (auto e : t.shape) put<std::uint32_t>(o, static_cast<std::uint32_t>(e));
    o.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

inline std::vector<ad::Tensor> get_tensors(std::istream& in, std::size_t count) {
  std::vector<ad::Tensor> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto rank = get<std::uint8_t>(in);
    ad::Shape shape(rank);
    std::size_t n = 1;
    for (auto& e : shape) {
      e = get<std::uint32_t>(in);
      n *= e;
    }
    if (n > (std::size_t{1} << 28)) throw ConfigError("checkpoint: implausible tensor size");
    std::vector<double> v(n);
    if (!in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw ConfigError("checkpoint: truncated tensor data");
    }
    out.emplace_back(std::move(shape), std::move(v));
  }
  return out;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& o, const Checkpoint& ck) {
  using namespace detail;
  o.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint16_t>(o, kCheckpointVersion);
  const std::string text = write_config(ck.config);
  put<std::uint32_t>(o, static_cast<std::uint32_t>(text.size()));
  o.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint8_t>(o, ck.variant == Variant::kProposed ? 0 : 1);
  put<std::uint32_t>(o, static_cast<std::uint32_t>(ck.params.tensors.size()));
  put_tensors(o, ck.params.tensors);
  put<std::uint64_t>(o, ck.adam.step);
  put_tensors(o, ck.adam.m);
  put_tensors(o, ck.adam.v);
  put<std::uint32_t>(o, ck.epochs_done);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  using namespace detail;
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw ConfigError("checkpoint: bad magic");
  }
  if (const auto ver = get<std::uint16_t>(in); ver != kCheckpointVersion) {
    throw ConfigError("checkpoint: unsupported version " + std::to_string(ver));
  }
  Checkpoint ck;
  const auto len = get<std::uint32_t>(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw ConfigError("checkpoint: truncated config block");
  ck.config = parse_config_string(text);
  const auto variant = get<std::uint8_t>(in);
  if (variant > 1) throw ConfigError("checkpoint: bad variant tag");
  ck.variant = variant == 0 ? Variant::kProposed : Variant::kFixAnt;
  const auto count = get<std::uint32_t>(in);
  ck.params.tensors = get_tensors(in, count);
  check_params(ck.params, NetworkConfig::from(ck.config.system));
  ck.adam.step = get<std::uint64_t>(in);
  ck.adam.m = get_tensors(in, count);
  ck.adam.v = get_tensors(in, count);
  for (std::size_t i = 0; i < count; ++i) {
    if (ck.adam.m[i].shape != ck.params.tensors[i].shape || ck.adam.v[i].shape != ck.params.tensors[i].shape) {
      throw ConfigError("checkpoint: Adam state does not match the parameters");
    }
  }
  ck.epochs_done = get<std::uint32_t>(in);
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw ConfigError("cannot write checkpoint '" + path + "'");
  write_checkpoint(o, ck);
  if (!o) throw ConfigError("error writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

inline Checkpoint make_checkpoint(const ExperimentConfig& cfg, Variant variant, const TrainResult& r) {
  return Checkpoint{cfg, variant, r.params, r.adam, static_cast<std::uint32_t>(r.epochs_done)};
}

/// Training state to resume from (history is not stored).
inline TrainResult resume_state(const Checkpoint& ck) {
  TrainResult r;
  r.params = ck.params;
  r.adam = ck.adam;
  r.epochs_done = static_cast<int>(ck.epochs_done);
  return r;
}

}  // namespace pisac
