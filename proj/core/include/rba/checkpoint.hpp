// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rba/tensor.hpp"

namespace rba {

/// On-disk array container, shared by checkpoints and preprocessed tensors.
///
/// Layout (all integers little-endian):
///   bytes 0..7   magic "RBACKPT1"
///   u32          format version (currently 1)
///   u64          metadata length L
///   L bytes      metadata JSON (UTF-8)
///   u32          tensor count T
///   T entries    u16 name length, name bytes, u8 dtype (1 = float32),
///                u8 rank, rank x u64 extents, u64 payload offset, u64 length
///   u64          payload length
///   payload      raw little-endian tensor data
///
/// A write/read round trip is bit-exact, and writing is a pure function of
/// the contents, so deterministic pipelines produce byte-identical files.
struct Container {
  std::uint32_t version = 1;
  std::string metadata;  // JSON text
  std::vector<std::pair<std::string, Tensor>> tensors;  // ordered
};

inline constexpr char kContainerMagic[8] = {'R', 'B', 'A', 'C',
                                            'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;

void write_container(const Container& container, const std::string& path);
Container read_container(const std::string& path);

/// Single-tensor convenience wrappers used for preprocessed volumes.
void save_tensor(const Tensor& tensor, const std::string& metadata_json,
                 const std::string& path);
std::pair<Tensor, std::string> load_tensor(const std::string& path);

}  // namespace rba
