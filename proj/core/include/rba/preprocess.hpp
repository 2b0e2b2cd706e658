// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include "rba/resolution.hpp"
#include "rba/rng.hpp"
#include "rba/tensor.hpp"
#include "rba/volume.hpp"

namespace rba {

/// Inclusive voxel bounding box, (x, y, z) per corner.
struct BBox {
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> hi{0, 0, 0};

  std::array<std::int64_t, 3> extents() const {
    return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
  }
};

/// Random-crop augmentation bounds: the crop along each axis covers a
/// fraction drawn uniformly from [min_fraction, max_fraction] of the extent.
struct AugmentConfig {
  double min_fraction = 0.9;
  double max_fraction = 1.0;
};

/// Tightest box containing every voxel above the background level, which is
/// exactly 0 for skull-stripped images. Fails on an all-background volume.
BBox compute_bbox(const Volume& volume);

/// Copies the boxed sub-volume (spacing unchanged).
Volume crop(const Volume& volume, const BBox& box);

/// Trilinear resampling to new grid extents under the pixel-center
/// convention: output voxel i samples the source at (i+0.5)*(src/dst)-0.5,
/// clamped at the borders. Equal extents reproduce the input bit-exactly;
/// spacing is rescaled by src/dst per axis.
Volume resample_trilinear(const Volume& volume,
                          const std::array<std::int64_t, 3>& target_extents);

/// The minimal pipeline: bounding-box crop, trilinear resample to the
/// resolution grid, per-volume min-max rescale to [0,1]. Returns a
/// (1,1,D,H,W) tensor with D=z, H=y, W=x.
Tensor minimal_preprocess(const Volume& volume, Resolution resolution);

/// Crop geometry drawn for one augmentation: per axis in order (depth,
/// height, width), a fraction uniform in [min_fraction, max_fraction] and
/// then an offset uniform over the valid positions.
struct AugmentPlan {
  std::array<std::int64_t, 3> length{};
  std::array<std::int64_t, 3> offset{};
  std::array<double, 3> fraction{};
};

AugmentPlan plan_augment_crop(const std::array<std::int64_t, 3>& extents,
                              const AugmentConfig& cfg, Rng& rng);

/// Training augmentation: per axis, crop a random fraction of the extent at
/// a random offset, then resample back to the original grid. fraction 1.0
/// reproduces the input bit-exactly.
Tensor augment_random_crop(const Tensor& input, const AugmentConfig& cfg,
                           Rng& rng);

/// Approximate skull-strip fallback for inputs that still carry background
/// signal: Otsu threshold over a 256-bin histogram, keep the largest
/// 6-connected component, zero everything else. Fails when the volume is
/// single-valued.
Volume threshold_mask(const Volume& volume);

/// Otsu split of a 256-bin histogram: returns the value separating the two
/// classes (lower edge of the first above-threshold bin).
double otsu_threshold(const Volume& volume);

}  // namespace rba
