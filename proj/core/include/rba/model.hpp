// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rba/ops.hpp"
#include "rba/resolution.hpp"
#include "rba/rng.hpp"

namespace rba {

// --- layer descriptors -------------------------------------------------------

struct ConvSpec {
  ConvParams params;
};
struct PoolSpec {
  std::array<std::int64_t, 3> kernel, stride, padding;
};
struct BatchNormSpec {
  std::int64_t features = 0;
  bool affine = true;
};
struct ActSpec {
  enum class Kind { relu, sigmoid };
  Kind kind = Kind::relu;
};
struct DenseSpec {
  std::int64_t in = 0, out = 0;
  bool bias = true;
};
struct DropoutSpec {
  double p = 0.5;
};
struct FlattenSpec {};

struct Layer;

/// Two stacked conv stages summed with a shortcut: identity when the channel
/// count is unchanged, a bias-free 1x1x1 projection otherwise.
struct ResidualSpec {
  std::vector<Layer> body;
  std::optional<ConvParams> projection;
};

struct Layer {
  std::string name;
  std::variant<ConvSpec, PoolSpec, BatchNormSpec, ActSpec, DenseSpec,
               DropoutSpec, FlattenSpec, ResidualSpec>
      spec;
};

/// Declarative layer graph plus its input contract. The output is always one
/// scalar per sample: predicted age in years.
struct ModelSpec {
  std::string kind;  // "resnet3d" | "ann"
  std::string resolution_name;             // resnet3d only
  std::array<std::int64_t, 3> input_grid{};  // (D,H,W), resnet3d only
  std::int64_t input_dim = 0;              // ann only
  double dropout_p = 0.5;                  // ann only
  std::vector<Layer> layers;
};

/// Named parameter tensors and batch-norm running statistics.
template <typename S>
struct ModelStateT {
  std::map<std::string, TensorT<S>> params;
  std::map<std::string, RunningStatsT<S>> bn;
  Mode mode = Mode::train;

  void set_requires_grad(bool rg) {
    for (auto& [name, t] : params) t.set_requires_grad(rg);
  }

  /// Deep copy. A plain copy shares tensor storage (tensors are handles);
  /// clone() is what callers need before mutating weights.
  ModelStateT clone() const {
    ModelStateT c;
    c.mode = mode;
    for (const auto& [name, t] : params) c.params[name] = t.clone();
    for (const auto& [name, s] : bn)
      c.bn[name] = RunningStatsT<S>{s.mean.clone(), s.var.clone(), s.batches};
    return c;
  }
};

using ModelState = ModelStateT<float>;

/// The volumetric regression network at one of the three study grids:
/// a 7x7x7/stride-2 stem into 16 channels, 3x3x3/stride-2 max pooling, a
/// 16->32 residual block with projection shortcut, a 32->32 residual block
/// with identity shortcut, then an affine-free 1D batch-norm over the
/// flattened features, a 32-unit sigmoid-activated hidden layer, and a
/// linear output head.
ModelSpec build_resnet3d(Resolution resolution);

/// Fully-connected baseline: dense input->32, ReLU, BatchNorm1d, dropout,
/// dense 32->1.
ModelSpec build_ann(std::int64_t input_dim, double dropout_p = 0.5);

/// Trainable scalar count (running statistics excluded).
std::int64_t count_parameters(const ModelSpec& spec);

/// Fresh state: He-normal weights (std sqrt(2/fan_in)), zero biases, unit
/// gamma / zero beta, unit running variance. Deterministic in the seed.
template <typename S>
ModelStateT<S> init_state(const ModelSpec& spec, std::uint64_t seed);

struct ShapeTraceEntry {
  std::string layer;
  Shape shape;
};

/// Runs the network. In train mode batch-norm uses batch statistics (and
/// updates the running ones) and dropout is active (requires `dropout_rng`
/// when the spec contains a dropout layer); eval mode is deterministic and
/// requires primed batch-norm statistics. Returns one predicted age (years)
/// per sample as a rank-1 tensor.
template <typename S>
TensorT<S> forward(const ModelSpec& spec, ModelStateT<S>& state,
                   const TensorT<S>& batch, TapeT<S>* tape,
                   Rng* dropout_rng = nullptr,
                   std::vector<ShapeTraceEntry>* trace = nullptr);

/// Compact JSON round trip for checkpoints: stores the constructor inputs
/// and rebuilds the layer graph on load.
std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& json_text);

}  // namespace rba
