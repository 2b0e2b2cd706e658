// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include "rba/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <vector>

namespace rba {

const ResolutionInfo& resolution_info(Resolution r) {
  static const ResolutionInfo table[] = {
      {"high", {136, 168, 136}, {1.36, 1.30, 1.36}},
      {"medium", {68, 84, 68}, {2.73, 2.63, 2.73}},
      {"low", {34, 42, 34}, {5.46, 5.27, 5.46}},
  };
  switch (r) {
    case Resolution::high: return table[0];
    case Resolution::medium: return table[1];
    case Resolution::low: return table[2];
  }
  fail("resolution_info: unknown resolution");
}

Resolution resolution_from_string(const std::string& name) {
  if (name == "high") return Resolution::high;
  if (name == "medium") return Resolution::medium;
  if (name == "low") return Resolution::low;
  fail("resolution: unknown name '", name, "' (expected high|medium|low)");
}

BBox compute_bbox(const Volume& volume) {
  volume.validate();
  BBox box{{volume.extents[0], volume.extents[1], volume.extents[2]},
           {-1, -1, -1}};
  std::size_t i = 0;
  for (std::int64_t z = 0; z < volume.extents[2]; ++z)
    for (std::int64_t y = 0; y < volume.extents[1]; ++y)
      for (std::int64_t x = 0; x < volume.extents[0]; ++x, ++i) {
        if (!(volume.data[i] > 0.0f)) continue;
        box.lo[0] = std::min(box.lo[0], x);
        box.lo[1] = std::min(box.lo[1], y);
        box.lo[2] = std::min(box.lo[2], z);
        box.hi[0] = std::max(box.hi[0], x);
        box.hi[1] = std::max(box.hi[1], y);
        box.hi[2] = std::max(box.hi[2], z);
      }
  check(box.hi[0] >= 0,
        "compute_bbox: volume has no voxels above the background level");
  return box;
}

Volume crop(const Volume& volume, const BBox& box) {
  for (int a = 0; a < 3; ++a) {
    check(box.lo[std::size_t(a)] >= 0 &&
              box.hi[std::size_t(a)] < volume.extents[std::size_t(a)] &&
              box.lo[std::size_t(a)] <= box.hi[std::size_t(a)],
          "crop: box out of range on axis ", a);
  }
  Volume out;
  out.extents = box.extents();
  out.spacing = volume.spacing;
  out.source_path = volume.source_path;
  out.data.resize(std::size_t(out.numel()));
  std::size_t i = 0;
  for (std::int64_t z = box.lo[2]; z <= box.hi[2]; ++z)
    for (std::int64_t y = box.lo[1]; y <= box.hi[1]; ++y)
      for (std::int64_t x = box.lo[0]; x <= box.hi[0]; ++x, ++i)
        out.data[i] = volume.at(x, y, z);
  return out;
}

namespace {

struct AxisMap {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> frac;
};

AxisMap axis_map(std::int64_t src, std::int64_t dst) {
  AxisMap m;
  m.i0.resize(std::size_t(dst));
  m.i1.resize(std::size_t(dst));
  m.frac.resize(std::size_t(dst));
  const double scale = double(src) / double(dst);
  for (std::int64_t i = 0; i < dst; ++i) {
    double pos = (double(i) + 0.5) * scale - 0.5;
    pos = std::clamp(pos, 0.0, double(src - 1));
    const double base = std::floor(pos);
    auto i0 = std::int64_t(base);
    m.i0[std::size_t(i)] = i0;
    m.i1[std::size_t(i)] = std::min(i0 + 1, src - 1);
    m.frac[std::size_t(i)] = pos - base;
  }
  return m;
}

// a + f*(b-a): monotone rounding keeps the result inside [min(a,b), max(a,b)]
inline double lerp1(double a, double b, double f) { return a + f * (b - a); }

// Trilinear resample of a contiguous (n0, n1, n2) grid, last axis fastest.
void resample_grid(const float* src, const std::array<std::int64_t, 3>& se,
                   float* dst, const std::array<std::int64_t, 3>& de) {
  if (se == de) {
    std::memcpy(dst, src, sizeof(float) * std::size_t(se[0] * se[1] * se[2]));
    return;
  }
  const AxisMap m0 = axis_map(se[0], de[0]);
  const AxisMap m1 = axis_map(se[1], de[1]);
  const AxisMap m2 = axis_map(se[2], de[2]);
  const std::int64_t s12 = se[1] * se[2];
  std::size_t o = 0;
  for (std::int64_t i0 = 0; i0 < de[0]; ++i0) {
    const float* pa = src + m0.i0[std::size_t(i0)] * s12;
    const float* pb = src + m0.i1[std::size_t(i0)] * s12;
    const double f0 = m0.frac[std::size_t(i0)];
    for (std::int64_t i1 = 0; i1 < de[1]; ++i1) {
      const std::int64_t ra = m1.i0[std::size_t(i1)] * se[2];
      const std::int64_t rb = m1.i1[std::size_t(i1)] * se[2];
      const double f1 = m1.frac[std::size_t(i1)];
      for (std::int64_t i2 = 0; i2 < de[2]; ++i2, ++o) {
        const std::int64_t ca = m2.i0[std::size_t(i2)];
        const std::int64_t cb = m2.i1[std::size_t(i2)];
        const double f2 = m2.frac[std::size_t(i2)];
        const double v00 = lerp1(double(pa[ra + ca]), double(pa[ra + cb]), f2);
        const double v01 = lerp1(double(pa[rb + ca]), double(pa[rb + cb]), f2);
        const double v10 = lerp1(double(pb[ra + ca]), double(pb[ra + cb]), f2);
        const double v11 = lerp1(double(pb[rb + ca]), double(pb[rb + cb]), f2);
        dst[o] = float(lerp1(lerp1(v00, v01, f1), lerp1(v10, v11, f1), f0));
      }
    }
  }
}

}  // namespace

Volume resample_trilinear(const Volume& volume,
                          const std::array<std::int64_t, 3>& target_extents) {
  volume.validate();
  for (int a = 0; a < 3; ++a)
    check(target_extents[std::size_t(a)] >= 1,
          "resample_trilinear: target extent on axis ", a,
          " must be at least 1");
  Volume out;
  out.extents = target_extents;
  out.source_path = volume.source_path;
  for (int a = 0; a < 3; ++a)
    out.spacing[std::size_t(a)] = volume.spacing[std::size_t(a)] *
                                  double(volume.extents[std::size_t(a)]) /
                                  double(target_extents[std::size_t(a)]);
  out.data.resize(std::size_t(out.numel()));
  // volume layout is x-fastest, so the grid order is (z, y, x)
  resample_grid(volume.data.data(),
                {volume.extents[2], volume.extents[1], volume.extents[0]},
                out.data.data(),
                {target_extents[2], target_extents[1], target_extents[0]});
  return out;
}

Tensor minimal_preprocess(const Volume& volume, Resolution resolution) {
  const auto& info = resolution_info(resolution);
  const Volume boxed = crop(volume, compute_bbox(volume));
  const Volume grid = resample_trilinear(boxed, info.grid);

  float lo = grid.data[0], hi = grid.data[0];
  for (float v : grid.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  auto out = Tensor::zeros({1, 1, info.grid[2], info.grid[1], info.grid[0]});
  auto dst = out.mutable_data();
  if (hi > lo) {
    const double lo_d = double(lo), range = double(hi) - double(lo);
    for (std::size_t i = 0; i < grid.data.size(); ++i)
      dst[i] = float((double(grid.data[i]) - lo_d) / range);
  }
  // degenerate constant volume maps to all zeros
  return out;
}

AugmentPlan plan_augment_crop(const std::array<std::int64_t, 3>& extents,
                              const AugmentConfig& cfg, Rng& rng) {
  check(cfg.min_fraction > 0 && cfg.min_fraction <= cfg.max_fraction &&
            cfg.max_fraction <= 1.0,
        "augment: fractions must satisfy 0 < min <= max <= 1, got [",
        cfg.min_fraction, ", ", cfg.max_fraction, "]");
  AugmentPlan plan;
  for (int a = 0; a < 3; ++a) {
    const double f = rng.uniform(cfg.min_fraction, cfg.max_fraction);
    plan.fraction[std::size_t(a)] = f;
    plan.length[std::size_t(a)] = std::clamp<std::int64_t>(
        std::llround(f * double(extents[std::size_t(a)])), 1,
        extents[std::size_t(a)]);
    plan.offset[std::size_t(a)] = rng.uniform_int(
        0, extents[std::size_t(a)] - plan.length[std::size_t(a)]);
  }
  return plan;
}

Tensor augment_random_crop(const Tensor& input, const AugmentConfig& cfg,
                           Rng& rng) {
  check(input.rank() == 5 && input.extent(0) == 1 && input.extent(1) == 1,
        "augment: expects a single-sample (1,1,D,H,W) tensor, got ",
        shape_str(input.shape()));
  const std::array<std::int64_t, 3> ext{input.extent(2), input.extent(3),
                                        input.extent(4)};
  const AugmentPlan plan = plan_augment_crop(ext, cfg, rng);
  const auto& len = plan.length;
  const auto& off = plan.offset;

  if (len == ext) return input.clone();  // identity crop

  std::vector<float> cropped(std::size_t(len[0] * len[1] * len[2]));
  const float* src = input.data().data();
  std::size_t i = 0;
  for (std::int64_t d = 0; d < len[0]; ++d)
    for (std::int64_t h = 0; h < len[1]; ++h)
      for (std::int64_t w = 0; w < len[2]; ++w, ++i)
        cropped[i] = src[((off[0] + d) * ext[1] + (off[1] + h)) * ext[2] +
                         (off[2] + w)];

  auto out = Tensor::zeros(input.shape());
  resample_grid(cropped.data(), len, out.mutable_data().data(), ext);
  return out;
}

double otsu_threshold(const Volume& volume) {
  volume.validate();
  float lo = volume.data[0], hi = volume.data[0];
  for (float v : volume.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  check(hi > lo, "threshold_mask: intensity histogram is degenerate "
                 "(single-valued volume)");
  constexpr int kBins = 256;
  const double range = double(hi) - double(lo);
  std::array<std::int64_t, kBins> counts{};
  for (float v : volume.data) {
    auto b = int((double(v) - double(lo)) / range * kBins);
    counts[std::size_t(std::clamp(b, 0, kBins - 1))]++;
  }
  const double total = double(volume.numel());
  double overall_mean = 0;
  for (int b = 0; b < kBins; ++b)
    overall_mean += double(b) * double(counts[std::size_t(b)]);
  overall_mean /= total;

  double best_var = -1.0;
  int best_t = 0;
  double w0 = 0, sum0 = 0;
  for (int t = 0; t < kBins - 1; ++t) {
    w0 += double(counts[std::size_t(t)]);
    sum0 += double(t) * double(counts[std::size_t(t)]);
    const double w1 = total - w0;
    if (w0 == 0 || w1 == 0) continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (overall_mean * total - sum0) / w1;
    const double between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (between > best_var) {
      best_var = between;
      best_t = t;
    }
  }
  // threshold at the lower edge of the first above-split bin
  return double(lo) + double(best_t + 1) * range / kBins;
}

Volume threshold_mask(const Volume& volume) {
  const double threshold = otsu_threshold(volume);
  const std::int64_t nx = volume.extents[0], ny = volume.extents[1],
                     nz = volume.extents[2];
  const std::int64_t n = volume.numel();
  std::vector<std::int32_t> label(std::size_t(n), 0);
  std::vector<std::int64_t> component_size;
  std::deque<std::int64_t> queue;

  auto kept = [&](std::int64_t idx) {
    return double(volume.data[std::size_t(idx)]) >= threshold;
  };

  std::int32_t next_label = 0;
  for (std::int64_t seed = 0; seed < n; ++seed) {
    if (!kept(seed) || label[std::size_t(seed)] != 0) continue;
    ++next_label;
    std::int64_t size = 0;
    label[std::size_t(seed)] = next_label;
    queue.push_back(seed);
    while (!queue.empty()) {
      const std::int64_t idx = queue.front();
      queue.pop_front();
      ++size;
      const std::int64_t x = idx % nx;
      const std::int64_t y = (idx / nx) % ny;
      const std::int64_t z = idx / (nx * ny);
      const std::int64_t neighbors[6] = {
          x > 0 ? idx - 1 : -1,          x < nx - 1 ? idx + 1 : -1,
          y > 0 ? idx - nx : -1,         y < ny - 1 ? idx + nx : -1,
          z > 0 ? idx - nx * ny : -1,    z < nz - 1 ? idx + nx * ny : -1};
      for (std::int64_t nb : neighbors) {
        if (nb < 0 || label[std::size_t(nb)] != 0 || !kept(nb)) continue;
        label[std::size_t(nb)] = next_label;
        queue.push_back(nb);
      }
    }
    component_size.push_back(size);
  }

  // largest component wins; ties keep the first found in scan order
  std::int32_t winner = 1;
  for (std::int32_t c = 2; c <= next_label; ++c)
    if (component_size[std::size_t(c - 1)] >
        component_size[std::size_t(winner - 1)])
      winner = c;

  Volume out = volume;
  for (std::int64_t i = 0; i < n; ++i)
    if (label[std::size_t(i)] != winner) out.data[std::size_t(i)] = 0.0f;
  return out;
}

}  // namespace rba
