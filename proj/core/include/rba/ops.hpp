// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "rba/rng.hpp"
#include "rba/tape.hpp"
#include "rba/tensor.hpp"

namespace rba {

/// Train/eval switch shared by batch-norm, dropout and the model forward.
enum class Mode { train, eval };

/// Geometry of a 3D convolution. Extent arrays are ordered (depth, height,
/// width).
struct ConvParams {
  std::array<std::int64_t, 3> kernel{1, 1, 1};
  std::array<std::int64_t, 3> stride{1, 1, 1};
  std::array<std::int64_t, 3> padding{0, 0, 0};
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  bool has_bias = true;

  std::int64_t weight_count() const {
    return out_channels * in_channels * kernel[0] * kernel[1] * kernel[2];
  }
  std::int64_t param_count() const {
    return weight_count() + (has_bias ? out_channels : 0);
  }
};

/// floor((in + 2*pad - kernel) / stride) + 1, the output extent of a
/// convolution or pooling axis. Fails if the result would be non-positive.
std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel,
                             std::int64_t stride, std::int64_t padding,
                             const char* op, const char* axis);

/// Forward-path selection for conv3d. `auto_select` lowers large kernels
/// (e.g. the 7x7x7 stem) to an im2col matrix product and runs small kernels
/// with direct blocked loops. Both paths accumulate each output element in
/// the identical (in-channel, kd, kh, kw) order, so all choices produce
/// bit-identical results.
enum class ConvAlgo { auto_select, direct, im2col };

/// Running batch-norm statistics, updated in train mode by exponential
/// moving average and consumed in eval mode. `batches` counts train-mode
/// updates; eval before the first update is an error.
template <typename S>
struct RunningStatsT {
  TensorT<S> mean;
  TensorT<S> var;
  std::int64_t batches = 0;

  static RunningStatsT make(std::int64_t channels) {
    return {TensorT<S>::zeros({channels}), TensorT<S>::full({channels}, S(1)),
            0};
  }
};

using RunningStats = RunningStatsT<float>;

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// --- differentiable operations --------------------------------------------
//
// Every op takes an optional tape as its first argument. With a tape the op
// records a backward closure; with nullptr it runs inference-only. Gradients
// flow to inputs flagged requires_grad.

template <typename S>
TensorT<S> conv3d(TapeT<S>* tape, const TensorT<S>& input,
                  const TensorT<S>& weights,
                  const std::optional<TensorT<S>>& bias, const ConvParams& p,
                  ConvAlgo algo = ConvAlgo::auto_select);

template <typename S>
TensorT<S> maxpool3d(TapeT<S>* tape, const TensorT<S>& input,
                     const std::array<std::int64_t, 3>& kernel,
                     const std::array<std::int64_t, 3>& stride,
                     const std::array<std::int64_t, 3>& padding);

/// Batch normalization over the channel axis (rank-5 input) or the feature
/// axis (rank-2 input). Train mode normalizes with batch statistics and
/// updates `stats`; eval mode normalizes with `stats`. The affine transform
/// is applied only when gamma/beta are present (pass both or neither).
template <typename S>
TensorT<S> batchnorm(TapeT<S>* tape, const TensorT<S>& input,
                     const std::optional<TensorT<S>>& gamma,
                     const std::optional<TensorT<S>>& beta,
                     RunningStatsT<S>& stats, Mode mode,
                     double epsilon = kBatchNormEpsilon,
                     double momentum = kBatchNormMomentum);

template <typename S>
TensorT<S> relu(TapeT<S>* tape, const TensorT<S>& input);

template <typename S>
TensorT<S> sigmoid(TapeT<S>* tape, const TensorT<S>& input);

/// Affine map: input (N,F) x weights (F,M) + bias (M) -> (N,M).
template <typename S>
TensorT<S> dense(TapeT<S>* tape, const TensorT<S>& input,
                 const TensorT<S>& weights,
                 const std::optional<TensorT<S>>& bias);

/// Inverted dropout: train mode zeroes each element with probability p and
/// scales survivors by 1/(1-p); eval mode is the identity. The rng is
/// advanced once per element in train mode regardless of outcome.
template <typename S>
TensorT<S> dropout(TapeT<S>* tape, const TensorT<S>& input, double p,
                   Mode mode, Rng& rng);

/// Elementwise sum of same-shape tensors (the residual skip join).
template <typename S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b);

/// Copy with a new shape of equal element count; gradients reshape back.
template <typename S>
TensorT<S> reshape(TapeT<S>* tape, const TensorT<S>& input,
                   const Shape& shape);

/// Mean squared error over two equal-length rank-1 tensors; returns a
/// scalar. d(loss)/d(pred) = 2*(pred-target)/N.
template <typename S>
TensorT<S> mse_loss(TapeT<S>* tape, const TensorT<S>& pred,
                    const TensorT<S>& target);

}  // namespace rba
