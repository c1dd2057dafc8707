// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoints. All integers are little-endian.
//
//   "BASL"  u32 format
//   u64 config length, canonical JSON model config
//   u64 parameter count
//   per parameter: u64 name length, name, u64 rank, rank x u64 dims,
//                  numel x f64 values

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "basedlab/config.hpp"
#include "basedlab/errors.hpp"
#include "basedlab/model.hpp"

namespace basedlab {

inline constexpr std::uint32_t kCheckpointFormat = 1;

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw InputError("checkpoint: truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw InputError("checkpoint: truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::string get_bytes(std::istream& is, std::uint64_t n) {
  if (n > (1ULL << 32)) throw InputError("checkpoint: implausible length field");
  std::string s(n, '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(n))) throw InputError("checkpoint: truncated");
  return s;
}

}  // namespace detail

template <typename T>
void save_checkpoint(std::ostream& os, const HybridModel<T>& m) {
  os.write("BASL", 4);
  detail::put_u32(os, kCheckpointFormat);
  const std::string cfg = to_json(m.config).dump();
  detail::put_u64(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = m.parameters();
  detail::put_u64(os, params.size());
  for (const auto& [name, t] : params) {
    detail::put_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(os, t.rank());
    for (auto d : t.shape()) detail::put_u64(os, d);
    for (T x : t.data()) detail::put_u64(os, std::bit_cast<std::uint64_t>(static_cast<double>(x)));
  }
  if (!os) throw InputError("checkpoint: write failed");
}

// Reads the header through the model config.
inline ModelConfig read_checkpoint_config(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "BASL", 4) != 0) throw InputError("checkpoint: bad magic");
  const auto fmt = detail::get_u32(is);
  if (fmt != kCheckpointFormat) throw InputError("checkpoint: unsupported format " + std::to_string(fmt));
  const std::string cfg = detail::get_bytes(is, detail::get_u64(is));
  return model_config_from_json(parse_json_text(cfg, "checkpoint.config"));
}

inline ModelConfig read_checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("checkpoint: cannot open '" + path + "'");
  return read_checkpoint_config(is);
}

template <typename T = double>
HybridModel<T> load_checkpoint(std::istream& is) {
  HybridModel<T> m = build<T>(read_checkpoint_config(is));
  const auto params = m.parameters();
  const auto count = detail::get_u64(is);
  if (count != params.size()) throw InputError("checkpoint: parameter count does not match the config");
  for (auto [name, t] : params) {
    const std::string got = detail::get_bytes(is, detail::get_u64(is));
    if (got != name) throw InputError("checkpoint: expected parameter '" + name + "', found '" + got + "'");
    const auto rank = detail::get_u64(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(is);
    if (shape != t.shape()) throw InputError("checkpoint: shape mismatch for '" + name + "'");
    for (auto& x : t.mutable_data()) x = static_cast<T>(std::bit_cast<double>(detail::get_u64(is)));
  }
  return m;
}

template <typename T>
void save_checkpoint(const std::string& path, const HybridModel<T>& m) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InputError("checkpoint: cannot open '" + path + "' for writing");
  save_checkpoint(os, m);
}

template <typename T = double>
HybridModel<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("checkpoint: cannot open '" + path + "'");
  return load_checkpoint<T>(is);
}

}  // namespace basedlab
