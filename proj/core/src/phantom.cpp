// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include "rba/phantom.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "rba/nifti.hpp"

namespace rba {

std::array<std::int64_t, 3> PhantomParams::translation_margin() const {
  std::array<std::int64_t, 3> m{};
  for (int a = 0; a < 3; ++a) {
    const double center = double(extents[std::size_t(a)] - 1) / 2.0;
    m[std::size_t(a)] =
        std::int64_t(std::floor(center - semi_axes[std::size_t(a)]));
  }
  return m;
}

void PhantomParams::validate() const {
  for (int a = 0; a < 3; ++a) {
    check(extents[std::size_t(a)] >= 3, "phantom: extent on axis ", a,
          " too small");
    check(spacing_mm[std::size_t(a)] > 0, "phantom: spacing on axis ", a,
          " must be positive");
    check(semi_axes[std::size_t(a)] >= 1, "phantom: semi-axis ", a,
          " must be at least 1 voxel");
    check(translation_margin()[std::size_t(a)] >= 0,
          "phantom: ellipsoid does not fit inside the field of view on axis ",
          a);
  }
  check(noise_sigma >= 0, "phantom: noise_sigma must be non-negative");
  check(age_min < age_max, "phantom: age range [", age_min, ", ", age_max,
        ") is empty");
  const double min_axis =
      std::min({semi_axes[0], semi_axes[1], semi_axes[2]});
  check(cavity_radius(age_max) < min_axis,
        "phantom: cavity radius ", cavity_radius(age_max),
        " at maximum age exceeds the shell (smallest semi-axis ", min_axis,
        ")");
  check(1.0 - shell_thinning * age_max > 0,
        "phantom: shell_thinning zeroes the shell at maximum age");
}

Volume generate_phantom_at(double age, const PhantomParams& params,
                           const std::array<std::int64_t, 3>& translation,
                           Rng& rng) {
  params.validate();
  check(age >= params.age_min && age <= params.age_max, "phantom: age ", age,
        " outside configured range [", params.age_min, ", ", params.age_max,
        "]");
  const double r_cavity = params.cavity_radius(age);
  check(r_cavity < std::min({params.semi_axes[0], params.semi_axes[1],
                             params.semi_axes[2]}),
        "phantom: cavity radius ", r_cavity, " exceeds the shell");
  const double shell = 1.0 - params.shell_thinning * age;

  std::array<double, 3> center;
  for (int a = 0; a < 3; ++a)
    center[std::size_t(a)] = double(params.extents[std::size_t(a)] - 1) / 2.0 +
                             double(translation[std::size_t(a)]);

  Volume v;
  v.extents = params.extents;
  v.spacing = params.spacing_mm;
  v.data.assign(std::size_t(v.numel()), 0.0f);
  const double r2_cavity = r_cavity * r_cavity;
  std::size_t i = 0;
  for (std::int64_t z = 0; z < v.extents[2]; ++z) {
    const double dz = double(z) - center[2];
    const double ez = dz / params.semi_axes[2];
    for (std::int64_t y = 0; y < v.extents[1]; ++y) {
      const double dy = double(y) - center[1];
      const double ey = dy / params.semi_axes[1];
      for (std::int64_t x = 0; x < v.extents[0]; ++x, ++i) {
        const double dx = double(x) - center[0];
        const double ex = dx / params.semi_axes[0];
        if (ex * ex + ey * ey + ez * ez > 1.0) continue;  // background
        if (dx * dx + dy * dy + dz * dz <= r2_cavity) continue;  // cavity
        double value = shell;
        if (params.noise_sigma > 0)
          value = std::max(0.0, value + params.noise_sigma * rng.normal());
        v.data[i] = float(value);
      }
    }
  }
  return v;
}

Volume generate_phantom(double age, const PhantomParams& params, Rng& rng) {
  params.validate();
  std::array<std::int64_t, 3> t{0, 0, 0};
  if (params.random_translation) {
    const auto margin = params.translation_margin();
    for (int a = 0; a < 3; ++a)
      t[std::size_t(a)] =
          rng.uniform_int(-margin[std::size_t(a)], margin[std::size_t(a)]);
  }
  return generate_phantom_at(age, params, t, rng);
}

BBox phantom_analytic_bbox(const PhantomParams& params,
                           const std::array<std::int64_t, 3>& translation) {
  BBox box;
  for (int a = 0; a < 3; ++a) {
    const double center = double(params.extents[std::size_t(a)] - 1) / 2.0 +
                          double(translation[std::size_t(a)]);
    box.lo[std::size_t(a)] =
        std::int64_t(std::ceil(center - params.semi_axes[std::size_t(a)]));
    box.hi[std::size_t(a)] =
        std::int64_t(std::floor(center + params.semi_axes[std::size_t(a)]));
  }
  return box;
}

Manifest generate_dataset(std::int64_t n, const PhantomParams& params,
                          std::uint64_t seed, const std::string& out_dir,
                          bool compress) {
  check(n >= 1, "generate_dataset: n must be at least 1");
  params.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  check(std::filesystem::is_directory(out_dir),
        "generate_dataset: cannot create output directory '", out_dir, "'");

  Rng master(seed);
  std::vector<double> ages(static_cast<std::size_t>(n));
  for (auto& a : ages) a = master.uniform(params.age_min, params.age_max);

  Manifest manifest;
  const char* ext = compress ? ".nii.gz" : ".nii";
  for (std::int64_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "sub-%05lld",
                  static_cast<long long>(i + 1));
    Subject s;
    s.id = name;
    s.age_years = ages[std::size_t(i)];
    s.sex = (i % 2 == 0) ? "F" : "M";
    const std::string filename = s.id + ext;
    const auto path = std::filesystem::path(out_dir) / filename;

    Rng child = Rng::child(seed, std::uint64_t(i) + 1);
    Volume vol = generate_phantom(s.age_years, params, child);
    write_nifti(vol, path.string(), compress);

    s.path = path.string();
    manifest.subjects.push_back(std::move(s));
  }

  // the CSV stores bare filenames so the directory is relocatable
  Manifest relative = manifest;
  for (auto& s : relative.subjects)
    s.path = std::filesystem::path(s.path).filename().string();
  write_manifest_csv(relative,
                     (std::filesystem::path(out_dir) / "manifest.csv").string());
  return manifest;
}

}  // namespace rba
