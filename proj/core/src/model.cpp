// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0

#include "rba/model.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace rba {

namespace {

ConvParams conv3(std::int64_t in_c, std::int64_t out_c, std::int64_t k,
                 std::int64_t s, std::int64_t p, bool bias) {
  ConvParams cp;
  cp.kernel = {k, k, k};
  cp.stride = {s, s, s};
  cp.padding = {p, p, p};
  cp.in_channels = in_c;
  cp.out_channels = out_c;
  cp.has_bias = bias;
  return cp;
}

std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t s,
                        std::int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

/// Residual block: [conv k3 s1 p1 + ReLU + BN] then [conv k3 s1 p1 + BN],
/// summed with the shortcut. Convs carry biases; the projection does not.
Layer residual_block(const std::string& name, std::int64_t in_c,
                     std::int64_t out_c) {
  ResidualSpec block;
  block.body.push_back({name + ".conv1", ConvSpec{conv3(in_c, out_c, 3, 1, 1, true)}});
  block.body.push_back({name + ".relu1", ActSpec{ActSpec::Kind::relu}});
  block.body.push_back({name + ".bn1", BatchNormSpec{out_c, true}});
  block.body.push_back({name + ".conv2", ConvSpec{conv3(out_c, out_c, 3, 1, 1, true)}});
  block.body.push_back({name + ".bn2", BatchNormSpec{out_c, true}});
  if (in_c != out_c) block.projection = conv3(in_c, out_c, 1, 1, 0, false);
  Layer layer;
  layer.name = name;
  layer.spec = std::move(block);
  return layer;
}

}  // namespace

ModelSpec build_resnet3d(Resolution resolution) {
  const auto& info = resolution_info(resolution);
  ModelSpec spec;
  spec.kind = "resnet3d";
  spec.resolution_name = info.name;
  spec.input_grid = {info.grid[2], info.grid[1], info.grid[0]};  // (D,H,W)

  spec.layers.push_back({"stem.conv", ConvSpec{conv3(1, 16, 7, 2, 3, false)}});
  spec.layers.push_back({"stem.relu", ActSpec{ActSpec::Kind::relu}});
  spec.layers.push_back({"stem.bn", BatchNormSpec{16, true}});
  spec.layers.push_back({"pool", PoolSpec{{3, 3, 3}, {2, 2, 2}, {1, 1, 1}}});
  spec.layers.push_back(residual_block("block1", 16, 32));
  spec.layers.push_back({"relu1", ActSpec{ActSpec::Kind::relu}});
  spec.layers.push_back(residual_block("block2", 32, 32));
  spec.layers.push_back({"relu2", ActSpec{ActSpec::Kind::relu}});
  spec.layers.push_back({"flatten", FlattenSpec{}});

  std::int64_t flat = 32;
  for (auto e : spec.input_grid)
    flat *= out_extent(out_extent(e, 7, 2, 3), 3, 2, 1);
  spec.layers.push_back({"flat_bn", BatchNormSpec{flat, false}});
  spec.layers.push_back({"fc1", DenseSpec{flat, 32, true}});
  spec.layers.push_back({"fc1.sigmoid", ActSpec{ActSpec::Kind::sigmoid}});
  spec.layers.push_back({"fc2", DenseSpec{32, 1, true}});
  return spec;
}

ModelSpec build_ann(std::int64_t input_dim, double dropout_p) {
  check(input_dim >= 1, "build_ann: input_dim must be at least 1");
  ModelSpec spec;
  spec.kind = "ann";
  spec.input_dim = input_dim;
  spec.dropout_p = dropout_p;
  spec.layers.push_back({"fc1", DenseSpec{input_dim, 32, true}});
  spec.layers.push_back({"relu", ActSpec{ActSpec::Kind::relu}});
  spec.layers.push_back({"bn", BatchNormSpec{32, true}});
  spec.layers.push_back({"dropout", DropoutSpec{dropout_p}});
  spec.layers.push_back({"fc2", DenseSpec{32, 1, true}});
  return spec;
}

namespace {

std::int64_t layer_parameters(const Layer& layer) {
  return std::visit(
      [](const auto& s) -> std::int64_t {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConvSpec>) {
          return s.params.param_count();
        } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
          return s.affine ? 2 * s.features : 0;
        } else if constexpr (std::is_same_v<T, DenseSpec>) {
          return s.in * s.out + (s.bias ? s.out : 0);
        } else if constexpr (std::is_same_v<T, ResidualSpec>) {
          std::int64_t n = 0;
          for (const auto& inner : s.body) n += layer_parameters(inner);
          if (s.projection) n += s.projection->param_count();
          return n;
        } else {
          return 0;
        }
      },
      layer.spec);
}

}  // namespace

std::int64_t count_parameters(const ModelSpec& spec) {
  std::int64_t n = 0;
  for (const auto& layer : spec.layers) n += layer_parameters(layer);
  return n;
}

// --- state -------------------------------------------------------------------

namespace {

template <typename S>
TensorT<S> he_normal(const Shape& shape, std::int64_t fan_in, Rng& rng) {
  auto t = TensorT<S>::zeros(shape);
  const double stddev = std::sqrt(2.0 / double(fan_in));
  for (auto& v : t.mutable_data()) v = S(rng.normal(0.0, stddev));
  return t;
}

template <typename S>
void init_layer(const Layer& layer, ModelStateT<S>& state, Rng& rng) {
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConvSpec>) {
          const auto& p = s.params;
          const std::int64_t fan_in =
              p.in_channels * p.kernel[0] * p.kernel[1] * p.kernel[2];
          state.params[layer.name + ".weight"] =
              he_normal<S>({p.out_channels, p.in_channels, p.kernel[0],
                            p.kernel[1], p.kernel[2]},
                           fan_in, rng);
          if (p.has_bias)
            state.params[layer.name + ".bias"] =
                TensorT<S>::zeros({p.out_channels});
        } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
          if (s.affine) {
            state.params[layer.name + ".gamma"] =
                TensorT<S>::full({s.features}, S(1));
            state.params[layer.name + ".beta"] =
                TensorT<S>::zeros({s.features});
          }
          state.bn[layer.name] = RunningStatsT<S>::make(s.features);
        } else if constexpr (std::is_same_v<T, DenseSpec>) {
          state.params[layer.name + ".weight"] =
              he_normal<S>({s.in, s.out}, s.in, rng);
          if (s.bias)
            state.params[layer.name + ".bias"] = TensorT<S>::zeros({s.out});
        } else if constexpr (std::is_same_v<T, ResidualSpec>) {
          for (const auto& inner : s.body) init_layer(inner, state, rng);
          if (s.projection) {
            const auto& p = *s.projection;
            state.params[layer.name + ".proj.weight"] =
                he_normal<S>({p.out_channels, p.in_channels, p.kernel[0],
                              p.kernel[1], p.kernel[2]},
                             p.in_channels, rng);
          }
        }
      },
      layer.spec);
}

}  // namespace

template <typename S>
ModelStateT<S> init_state(const ModelSpec& spec, std::uint64_t seed) {
  ModelStateT<S> state;
  Rng rng(seed);
  for (const auto& layer : spec.layers) init_layer(layer, state, rng);
  return state;
}

// --- forward -----------------------------------------------------------------

namespace {

template <typename S>
struct ForwardCtx {
  ModelStateT<S>& state;
  TapeT<S>* tape;
  Rng* dropout_rng;
  std::vector<ShapeTraceEntry>* trace;

  TensorT<S>& param(const std::string& name) {
    auto it = state.params.find(name);
    check(it != state.params.end(), "forward: missing parameter '", name,
          "' in model state");
    return it->second;
  }
};

template <typename S>
TensorT<S> run_layer(const Layer& layer, const TensorT<S>& input,
                     ForwardCtx<S>& ctx) {
  return std::visit(
      [&](const auto& s) -> TensorT<S> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConvSpec>) {
          std::optional<TensorT<S>> bias;
          if (s.params.has_bias) bias = ctx.param(layer.name + ".bias");
          return conv3d<S>(ctx.tape, input, ctx.param(layer.name + ".weight"),
                           bias, s.params);
        } else if constexpr (std::is_same_v<T, PoolSpec>) {
          return maxpool3d<S>(ctx.tape, input, s.kernel, s.stride, s.padding);
        } else if constexpr (std::is_same_v<T, BatchNormSpec>) {
          auto it = ctx.state.bn.find(layer.name);
          check(it != ctx.state.bn.end(),
                "forward: missing batch-norm statistics for '", layer.name,
                "'");
          std::optional<TensorT<S>> gamma, beta;
          if (s.affine) {
            gamma = ctx.param(layer.name + ".gamma");
            beta = ctx.param(layer.name + ".beta");
          }
          return batchnorm<S>(ctx.tape, input, gamma, beta, it->second,
                              ctx.state.mode);
        } else if constexpr (std::is_same_v<T, ActSpec>) {
          return s.kind == ActSpec::Kind::relu ? relu<S>(ctx.tape, input)
                                               : sigmoid<S>(ctx.tape, input);
        } else if constexpr (std::is_same_v<T, DenseSpec>) {
          std::optional<TensorT<S>> bias;
          if (s.bias) bias = ctx.param(layer.name + ".bias");
          return dense<S>(ctx.tape, input, ctx.param(layer.name + ".weight"),
                          bias);
        } else if constexpr (std::is_same_v<T, DropoutSpec>) {
          if (ctx.state.mode == Mode::eval)
            return reshape<S>(ctx.tape, input, input.shape());
          check(ctx.dropout_rng != nullptr,
                "forward: dropout in train mode needs an rng");
          return dropout<S>(ctx.tape, input, s.p, Mode::train,
                            *ctx.dropout_rng);
        } else if constexpr (std::is_same_v<T, FlattenSpec>) {
          return reshape<S>(ctx.tape, input,
                            {input.extent(0), input.numel() / input.extent(0)});
        } else {  // ResidualSpec
          TensorT<S> shortcut = input;
          if (s.projection)
            shortcut = conv3d<S>(ctx.tape, input,
                                 ctx.param(layer.name + ".proj.weight"),
                                 std::nullopt, *s.projection);
          TensorT<S> h = input;
          for (const auto& inner : s.body) h = run_layer(inner, h, ctx);
          return add<S>(ctx.tape, h, shortcut);
        }
      },
      layer.spec);
}

}  // namespace

template <typename S>
TensorT<S> forward(const ModelSpec& spec, ModelStateT<S>& state,
                   const TensorT<S>& batch, TapeT<S>* tape, Rng* dropout_rng,
                   std::vector<ShapeTraceEntry>* trace) {
  if (spec.kind == "resnet3d") {
    check(batch.rank() == 5 && batch.extent(1) == 1 &&
              batch.extent(2) == spec.input_grid[0] &&
              batch.extent(3) == spec.input_grid[1] &&
              batch.extent(4) == spec.input_grid[2],
          "forward: batch shape ", shape_str(batch.shape()),
          " does not match the model grid (N,1,", spec.input_grid[0], ",",
          spec.input_grid[1], ",", spec.input_grid[2], ")");
  } else if (spec.kind == "ann") {
    check(batch.rank() == 2 && batch.extent(1) == spec.input_dim,
          "forward: batch shape ", shape_str(batch.shape()),
          " does not match the model input (N,", spec.input_dim, ")");
  } else {
    fail("forward: unknown model kind '", spec.kind, "'");
  }

  ForwardCtx<S> ctx{state, tape, dropout_rng, trace};
  TensorT<S> h = batch;
  for (const auto& layer : spec.layers) {
    h = run_layer(layer, h, ctx);
    if (trace) trace->push_back({layer.name, h.shape()});
  }
  check(h.rank() == 2 && h.extent(1) == 1,
        "forward: head output shape ", shape_str(h.shape()),
        " is not (N,1)");
  return reshape<S>(tape, h, {h.extent(0)});
}

// --- spec JSON ----------------------------------------------------------------

std::string model_spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["kind"] = spec.kind;
  if (spec.kind == "resnet3d") {
    j["resolution"] = spec.resolution_name;
  } else {
    j["input_dim"] = spec.input_dim;
    j["dropout_p"] = spec.dropout_p;
  }
  return j.dump();
}

ModelSpec model_spec_from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text, nullptr, false);
  check(!j.is_discarded(), "model spec: metadata block is not valid JSON");
  check(j.contains("kind"), "model spec: missing 'kind'");
  const std::string kind = j["kind"].get<std::string>();
  if (kind == "resnet3d")
    return build_resnet3d(
        resolution_from_string(j.at("resolution").get<std::string>()));
  if (kind == "ann")
    return build_ann(j.at("input_dim").get<std::int64_t>(),
                     j.value("dropout_p", 0.5));
  fail("model spec: unknown kind '", kind, "'");
}

// --- instantiations ------------------------------------------------------------

template ModelStateT<float> init_state<float>(const ModelSpec&, std::uint64_t);
template ModelStateT<double> init_state<double>(const ModelSpec&,
                                                std::uint64_t);
template TensorT<float> forward<float>(const ModelSpec&, ModelStateT<float>&,
                                       const TensorT<float>&, TapeT<float>*,
                                       Rng*, std::vector<ShapeTraceEntry>*);
template TensorT<double> forward<double>(const ModelSpec&,
                                         ModelStateT<double>&,
                                         const TensorT<double>&,
                                         TapeT<double>*, Rng*,
                                         std::vector<ShapeTraceEntry>*);

}  // namespace rba
