// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#include "dv/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace dv {

namespace {

constexpr char kMagic[4] = {'U', 'V', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw io_error("checkpoint: truncated file");
  return v;
}

template <class T>
void write_vec(std::ofstream& f, const std::vector<T>& v) {
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
void read_vec(std::ifstream& f, std::vector<T>& v, size_t n) {
  v.resize(n);
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!f) throw io_error("checkpoint: truncated tensor payload");
}

}  // namespace

TensorEntry TensorEntry::of_f32(std::string name, std::vector<uint32_t> dims,
                                std::vector<float> v) {
  TensorEntry e;
  e.name = std::move(name);
  e.dtype = EntryType::F32;
  e.dims = std::move(dims);
  e.f32 = std::move(v);
  if (e.f32.size() != e.expected_count()) throw dim_error("TensorEntry: payload/shape mismatch");
  return e;
}

TensorEntry TensorEntry::of_f64(std::string name, std::vector<uint32_t> dims,
                                std::vector<double> v) {
  TensorEntry e;
  e.name = std::move(name);
  e.dtype = EntryType::F64;
  e.dims = std::move(dims);
  e.f64 = std::move(v);
  if (e.f64.size() != e.expected_count()) throw dim_error("TensorEntry: payload/shape mismatch");
  return e;
}

TensorEntry TensorEntry::of_u64(std::string name, std::vector<uint32_t> dims,
                                std::vector<uint64_t> v) {
  TensorEntry e;
  e.name = std::move(name);
  e.dtype = EntryType::U64;
  e.dims = std::move(dims);
  e.u64 = std::move(v);
  if (e.u64.size() != e.expected_count()) throw dim_error("TensorEntry: payload/shape mismatch");
  return e;
}

const TensorEntry& CheckpointFile::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw io_error("checkpoint: missing entry " + name);
}

bool CheckpointFile::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

void write_checkpoint(const std::string& path, const ModelConfig& cfg,
                      const std::vector<TensorEntry>& entries) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  try {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("checkpoint: cannot open " + tmp);
    f.write(kMagic, 4);
    write_pod(f, kVersion);
    write_pod(f, static_cast<uint32_t>(cfg.d_model));
    write_pod(f, static_cast<uint32_t>(cfg.n_heads));
    write_pod(f, static_cast<uint32_t>(cfg.n_layers));
    write_pod(f, static_cast<uint32_t>(cfg.vocab_size));
    write_pod(f, static_cast<uint32_t>(cfg.frame_dim));
    write_pod(f, static_cast<uint32_t>(cfg.max_positions));
    write_pod(f, static_cast<uint32_t>(cfg.adapter_pool));
    write_pod(f, static_cast<uint8_t>(cfg.tie_lm_head ? 1 : 0));
    write_pod(f, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
      write_pod(f, static_cast<uint32_t>(e.name.size()));
      f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_pod(f, static_cast<uint8_t>(e.dtype));
      write_pod(f, static_cast<uint32_t>(e.dims.size()));
      for (uint32_t d : e.dims) write_pod(f, d);
      switch (e.dtype) {
        case EntryType::F32: write_vec(f, e.f32); break;
        case EntryType::F64: write_vec(f, e.f64); break;
        case EntryType::U32: write_vec(f, e.u32); break;
        case EntryType::U64: write_vec(f, e.u64); break;
      }
    }
    if (!f.flush()) throw io_error("checkpoint: write failed for " + tmp);
    f.close();
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

CheckpointFile read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0) throw io_error("checkpoint: bad magic");
  if (read_pod<uint32_t>(f) != kVersion) throw io_error("checkpoint: unsupported version");
  CheckpointFile ck;
  ck.cfg.d_model = static_cast<int>(read_pod<uint32_t>(f));
  ck.cfg.n_heads = static_cast<int>(read_pod<uint32_t>(f));
  ck.cfg.n_layers = static_cast<int>(read_pod<uint32_t>(f));
  ck.cfg.vocab_size = static_cast<int>(read_pod<uint32_t>(f));
  ck.cfg.frame_dim = static_cast<int>(read_pod<uint32_t>(f));
  ck.cfg.max_positions = static_cast<int>(read_pod<uint32_t>(f));
  ck.cfg.adapter_pool = static_cast<int>(read_pod<uint32_t>(f));
  ck.cfg.tie_lm_head = read_pod<uint8_t>(f) != 0;
  const uint32_t n = read_pod<uint32_t>(f);
  if (n > 1u << 20) throw io_error("checkpoint: implausible entry count");
  ck.entries.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    TensorEntry e;
    const uint32_t name_len = read_pod<uint32_t>(f);
    if (name_len == 0 || name_len > 4096) throw io_error("checkpoint: implausible name length");
    e.name.resize(name_len);
    f.read(e.name.data(), name_len);
    if (!f) throw io_error("checkpoint: truncated name");
    const uint8_t dt = read_pod<uint8_t>(f);
    if (dt > 3) throw io_error("checkpoint: unknown dtype tag");
    e.dtype = static_cast<EntryType>(dt);
    const uint32_t ndim = read_pod<uint32_t>(f);
    if (ndim > 8) throw io_error("checkpoint: implausible rank");
    e.dims.resize(ndim);
    for (auto& d : e.dims) {
      d = read_pod<uint32_t>(f);
      if (d == 0 || d > 1u << 28) throw io_error("checkpoint: implausible extent");
    }
    const size_t count = e.expected_count();
    switch (e.dtype) {
      case EntryType::F32: read_vec(f, e.f32, count); break;
      case EntryType::F64: read_vec(f, e.f64, count); break;
      case EntryType::U32: read_vec(f, e.u32, count); break;
      case EntryType::U64: read_vec(f, e.u64, count); break;
    }
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

}  // namespace dv
