// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include "rba/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rba/error.hpp"
#include "rba/rng.hpp"

namespace rba {

namespace {

GradCheckResult run_check(
    const std::function<TensorT<double>(TapeT<double>*)>& f,
    std::vector<TensorT<double>>& inputs, double epsilon,
    const std::vector<std::vector<std::int64_t>>* coord_subset) {
  check(epsilon > 0, "grad_check: epsilon must be positive");

  // analytic pass
  for (auto& t : inputs) t.clear_grad();
  TapeT<double> tape;
  auto loss = f(&tape);
  check(loss.numel() == 1, "grad_check: f must return a scalar");
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    if (!t.requires_grad()) {
      analytic.emplace_back();
      continue;
    }
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty())
      analytic.back().assign(std::size_t(t.numel()), 0.0);  // unreachable
  }

  GradCheckResult result;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    if (!t.requires_grad()) continue;
    auto data = t.mutable_data();
    auto check_coord = [&](std::int64_t j) {
      const double saved = data[std::size_t(j)];
      data[std::size_t(j)] = saved + epsilon;
      const double up = f(nullptr).item();
      data[std::size_t(j)] = saved - epsilon;
      const double down = f(nullptr).item();
      data[std::size_t(j)] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[ti][std::size_t(j)];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      result.max_rel_err =
          std::max(result.max_rel_err, std::abs(a - numeric) / denom);
      ++result.checked;
    };
    if (coord_subset) {
      for (std::int64_t j : (*coord_subset)[ti]) check_coord(j);
    } else {
      for (std::int64_t j = 0; j < t.numel(); ++j) check_coord(j);
    }
  }
  return result;
}

}  // namespace

GradCheckResult grad_check(
    const std::function<TensorT<double>(TapeT<double>*)>& f,
    std::vector<TensorT<double>> inputs, double epsilon) {
  return run_check(f, inputs, epsilon, nullptr);
}

GradCheckResult grad_check_sample(
    const std::function<TensorT<double>(TapeT<double>*)>& f,
    std::vector<TensorT<double>> inputs, double epsilon,
    std::int64_t coords_per_input, std::uint64_t seed) {
  check(coords_per_input >= 1, "grad_check_sample: need at least 1 coordinate");
  Rng rng(seed);
  std::vector<std::vector<std::int64_t>> subset(inputs.size());
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    const std::int64_t n = inputs[ti].numel();
    if (n <= coords_per_input) {
      subset[ti].resize(std::size_t(n));
      for (std::int64_t j = 0; j < n; ++j) subset[ti][std::size_t(j)] = j;
      continue;
    }
    // distinct draws by rejection; coordinate counts are tiny
    std::vector<std::int64_t> picked;
    while (std::int64_t(picked.size()) < coords_per_input) {
      const std::int64_t j = rng.uniform_int(0, n - 1);
      if (std::find(picked.begin(), picked.end(), j) == picked.end())
        picked.push_back(j);
    }
    std::sort(picked.begin(), picked.end());
    subset[ti] = std::move(picked);
  }
  return run_check(f, inputs, epsilon, &subset);
}

}  // namespace rba
