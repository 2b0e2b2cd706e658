// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rba/error.hpp"

namespace rba {

/// One subject's image: a 3D scalar grid with physical voxel spacing.
/// Voxels are stored x-fastest (the NIfTI on-disk order), so data[i] maps to
/// coordinates x = i % nx, y = (i / nx) % ny, z = i / (nx*ny).
struct Volume {
  std::array<std::int64_t, 3> extents{0, 0, 0};  // (nx, ny, nz)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel
  std::vector<float> data;

  // provenance
  std::string source_path;
  std::vector<std::uint8_t> source_header;  // original 348 bytes when read

  std::int64_t numel() const { return extents[0] * extents[1] * extents[2]; }

  float at(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return data[std::size_t((z * extents[1] + y) * extents[0] + x)];
  }
  float& at(std::int64_t x, std::int64_t y, std::int64_t z) {
    return data[std::size_t((z * extents[1] + y) * extents[0] + x)];
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      check(extents[std::size_t(a)] >= 1, "volume: extent on axis ", a,
            " must be at least 1, got ", extents[std::size_t(a)]);
      check(spacing[std::size_t(a)] > 0, "volume: spacing on axis ", a,
            " must be positive, got ", spacing[std::size_t(a)]);
    }
    check(std::int64_t(data.size()) == numel(), "volume: data length ",
          data.size(), " does not match extents product ", numel());
  }
};

}  // namespace rba
