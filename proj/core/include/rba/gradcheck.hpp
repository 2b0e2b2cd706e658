// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "rba/tape.hpp"
#include "rba/tensor.hpp"

namespace rba {

/// Central finite-difference verification of analytic gradients. Meant to
/// run on double tensors; single-precision noise swamps the tolerances.
///
/// `f` evaluates the function under test: with a tape it must build the
/// recorded graph ending in a scalar loss, with nullptr it must compute the
/// same value without recording. It is called many times and must be pure
/// up to the tensors in `inputs` (reset any internal state, e.g. batch-norm
/// running statistics, on every call).
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;  // number of coordinates compared
};

/// Compares d(loss)/d(inputs[i][j]) against (f(x+eps) - f(x-eps)) / (2 eps)
/// for every coordinate of every input flagged requires_grad. The relative
/// error of a pair (a, n) is |a-n| / max(|a|, |n|, 1e-6).
GradCheckResult grad_check(
    const std::function<TensorT<double>(TapeT<double>*)>& f,
    std::vector<TensorT<double>> inputs, double epsilon = 1e-5);

/// Same check restricted to at most `coords_per_input` randomly chosen
/// coordinates per input (deterministic in `seed`). For end-to-end networks
/// where exhaustive differencing is too slow.
GradCheckResult grad_check_sample(
    const std::function<TensorT<double>(TapeT<double>*)>& f,
    std::vector<TensorT<double>> inputs, double epsilon,
    std::int64_t coords_per_input, std::uint64_t seed);

}  // namespace rba
