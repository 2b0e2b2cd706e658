// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace rba {

/// The three study grids. Medium and low are exact halvings/quarterings of
/// the high grid.
enum class Resolution { high, medium, low };

struct ResolutionInfo {
  const char* name;
  std::array<std::int64_t, 3> grid;   // (nx, ny, nz) voxels
  std::array<double, 3> voxel_mm;     // nominal voxel size
};

const ResolutionInfo& resolution_info(Resolution r);
Resolution resolution_from_string(const std::string& name);

}  // namespace rba
