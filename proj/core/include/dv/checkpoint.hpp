// Copyright (c) 2026, the dualvoice authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dv/model.hpp"

namespace dv {

// Checkpoint container: a little-endian stream of named, typed, shaped
// tensors behind a magic/version header and a model-config echo. Writing the
// same state twice produces byte-identical files; writes go through a
// temporary then rename so a failure never leaves a partial file behind.

enum class EntryType : uint8_t { F32 = 0, F64 = 1, U32 = 2, U64 = 3 };

struct TensorEntry {
  std::string name;
  EntryType dtype = EntryType::F32;
  std::vector<uint32_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;
  std::vector<uint32_t> u32;
  std::vector<uint64_t> u64;

  size_t expected_count() const {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
  }

  static TensorEntry of_f32(std::string name, std::vector<uint32_t> dims, std::vector<float> v);
  static TensorEntry of_f64(std::string name, std::vector<uint32_t> dims, std::vector<double> v);
  static TensorEntry of_u64(std::string name, std::vector<uint32_t> dims,
                            std::vector<uint64_t> v);
};

struct CheckpointFile {
  ModelConfig cfg;
  std::vector<TensorEntry> entries;

  const TensorEntry& find(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const ModelConfig& cfg,
                      const std::vector<TensorEntry>& entries);
CheckpointFile read_checkpoint(const std::string& path);

}  // namespace dv
