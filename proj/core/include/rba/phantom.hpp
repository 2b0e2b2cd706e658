// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "rba/manifest.hpp"
#include "rba/preprocess.hpp"
#include "rba/rng.hpp"
#include "rba/volume.hpp"

namespace rba {

/// Synthetic skull-stripped "brain": an ellipsoidal shell of intensity 1
/// whose geometry encodes age. A central spherical cavity grows with age
/// (cavity_radius_base + cavity_growth * (age - age_min) voxels) and the
/// shell intensity decays as 1 - shell_thinning * age. Gaussian noise
/// (clamped at 0) is added to shell voxels only; the cavity and the
/// background stay exactly 0, the skull-stripped convention.
///
/// Default extents are odd so the untranslated center lands on the voxel
/// grid, which makes the analytic bounding box exact.
struct PhantomParams {
  std::array<std::int64_t, 3> extents{73, 89, 73};  // (nx, ny, nz)
  std::array<double, 3> spacing_mm{2.0, 2.0, 2.0};
  std::array<double, 3> semi_axes{26.0, 34.0, 26.0};  // voxels
  double cavity_radius_base = 2.5;  // voxels at age_min
  double cavity_growth = 0.11;      // voxels per year of age
  double shell_thinning = 0.003;    // intensity per year of age
  double noise_sigma = 0.05;
  double age_min = 20.0;
  double age_max = 72.0;
  bool random_translation = true;

  double cavity_radius(double age) const {
    return cavity_radius_base + cavity_growth * (age - age_min);
  }
  /// Largest whole-voxel |translation| that keeps the ellipsoid inside the
  /// field of view.
  std::array<std::int64_t, 3> translation_margin() const;
  void validate() const;
};

/// Deterministic core: the phantom for a given age and whole-voxel
/// translation. The rng is consumed only for shell noise (one normal draw
/// per shell voxel in x-fastest scan order), so noise_sigma = 0 uses no
/// randomness at all.
Volume generate_phantom_at(double age, const PhantomParams& params,
                           const std::array<std::int64_t, 3>& translation,
                           Rng& rng);

/// Draws the translation (when enabled: uniform over the margin, axis order
/// x,y,z), then delegates to generate_phantom_at.
Volume generate_phantom(double age, const PhantomParams& params, Rng& rng);

/// Closed-form bounding box of the shell: per axis ceil(c-a)..floor(c+a)
/// around the translated center. Exact when the center lies on the voxel
/// grid (odd extents, whole-voxel translation).
BBox phantom_analytic_bbox(const PhantomParams& params,
                           const std::array<std::int64_t, 3>& translation);

/// Writes n phantoms as NIfTI files plus manifest.csv into out_dir. Ages are
/// uniform over [age_min, age_max); sexes alternate F,M for bias-report
/// fixtures. Subject i is generated from its own child rng stream, so the
/// dataset is reproducible and could be generated in any order. The returned
/// manifest carries resolved absolute paths; the CSV stores bare filenames.
Manifest generate_dataset(std::int64_t n, const PhantomParams& params,
                          std::uint64_t seed, const std::string& out_dir,
                          bool compress = true);

}  // namespace rba
