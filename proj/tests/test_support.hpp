// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rba/model.hpp"
#include "rba/rng.hpp"
#include "rba/tensor.hpp"

namespace rba::testing {

/// The volumetric network at an arbitrary tiny grid, for fast end-to-end
/// tests. Mirrors build_resnet3d with recomputed head extents.
inline ModelSpec tiny_resnet(std::array<std::int64_t, 3> grid_dhw) {
  ModelSpec spec = build_resnet3d(Resolution::low);
  spec.input_grid = grid_dhw;
  std::int64_t flat = 32;
  for (auto e : grid_dhw) {
    const std::int64_t stem = (e + 6 - 7) / 2 + 1;
    flat *= (stem + 2 - 3) / 2 + 1;
  }
  for (auto& layer : spec.layers) {
    if (layer.name == "flat_bn")
      std::get<BatchNormSpec>(layer.spec).features = flat;
    if (layer.name == "fc1") std::get<DenseSpec>(layer.spec).in = flat;
  }
  return spec;
}

template <typename S>
TensorT<S> random_normal(const Shape& shape, Rng& rng, bool requires_grad = false) {
  auto t = TensorT<S>::zeros(shape, requires_grad);
  for (auto& v : t.mutable_data()) v = S(rng.normal());
  return t;
}

template <typename S>
TensorT<S> random_uniform(const Shape& shape, Rng& rng, double lo, double hi,
                          bool requires_grad = false) {
  auto t = TensorT<S>::zeros(shape, requires_grad);
  for (auto& v : t.mutable_data()) v = S(rng.uniform(lo, hi));
  return t;
}

template <typename S>
double max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
  double m = 0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i)
    m = std::max(m, std::abs(double(da[i]) - double(db[i])));
  return m;
}

/// Unique scratch directory under the build tree for file-producing tests.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rba_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Kolmogorov-Smirnov p-value for samples being uniform on [lo, hi]
/// (asymptotic Kolmogorov distribution).
inline double ks_uniform_pvalue(std::vector<double> samples, double lo,
                                double hi) {
  std::sort(samples.begin(), samples.end());
  const double n = double(samples.size());
  double d = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = (samples[i] - lo) / (hi - lo);
    d = std::max(d, std::abs(cdf - double(i) / n));
    d = std::max(d, std::abs(double(i + 1) / n - cdf));
  }
  const double sn = std::sqrt(n);
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0;
  for (int k = 1; k <= 100; ++k)
    p += 2.0 * (k % 2 == 1 ? 1.0 : -1.0) *
         std::exp(-2.0 * double(k) * double(k) * lambda * lambda);
  return std::clamp(p, 0.0, 1.0);
}

}  // namespace rba::testing
