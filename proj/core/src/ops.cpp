// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable ops besides conv3d. Reductions run in a fixed scan order
// with double accumulators; elementwise math is written so repeated runs are
// bit-identical.

#include <cmath>
#include <cstring>
#include <vector>

#include "rba/ops.hpp"

namespace rba {

namespace {

template <typename S>
void expect_same_shape(const TensorT<S>& a, const TensorT<S>& b,
                       const char* op) {
  check(a.shape() == b.shape(), op, ": shape mismatch ", shape_str(a.shape()),
        " vs ", shape_str(b.shape()));
}

}  // namespace

// --- maxpool3d --------------------------------------------------------------

template <typename S>
TensorT<S> maxpool3d(TapeT<S>* tape, const TensorT<S>& input,
                     const std::array<std::int64_t, 3>& kernel,
                     const std::array<std::int64_t, 3>& stride,
                     const std::array<std::int64_t, 3>& padding) {
  check(input.rank() == 5, "maxpool3d: input must be rank 5 (N,C,D,H,W), got ",
        shape_str(input.shape()));
  const auto& is = input.shape();
  const std::int64_t N = is[0], C = is[1], D = is[2], H = is[3], W = is[4];
  const std::int64_t OD =
      conv_out_extent(D, kernel[0], stride[0], padding[0], "maxpool3d", "depth");
  const std::int64_t OH = conv_out_extent(H, kernel[1], stride[1], padding[1],
                                          "maxpool3d", "height");
  const std::int64_t OW = conv_out_extent(W, kernel[2], stride[2], padding[2],
                                          "maxpool3d", "width");
  auto out = TensorT<S>::zeros({N, C, OD, OH, OW});
  S* o = out.mutable_data().data();
  const S* x = input.data().data();
  const std::int64_t in_vol = D * H * W;
  // Padding positions act as -inf: they are never selected while any real
  // voxel lies in the window. Ties break to the first window position in
  // (kd,kh,kw) scan order.
  std::vector<std::int64_t> argmax(std::size_t(out.numel()));
  std::int64_t opos = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    for (std::int64_t c = 0; c < C; ++c) {
      const S* plane = x + (n * C + c) * in_vol;
      const std::int64_t plane_base = (n * C + c) * in_vol;
      for (std::int64_t od = 0; od < OD; ++od) {
        for (std::int64_t oh = 0; oh < OH; ++oh) {
          for (std::int64_t ow = 0; ow < OW; ++ow, ++opos) {
            S best = S(0);
            std::int64_t best_idx = -1;
            for (std::int64_t kd = 0; kd < kernel[0]; ++kd) {
              const std::int64_t id = od * stride[0] - padding[0] + kd;
              if (id < 0 || id >= D) continue;
              for (std::int64_t kh = 0; kh < kernel[1]; ++kh) {
                const std::int64_t ih = oh * stride[1] - padding[1] + kh;
                if (ih < 0 || ih >= H) continue;
                for (std::int64_t kw = 0; kw < kernel[2]; ++kw) {
                  const std::int64_t iw = ow * stride[2] - padding[2] + kw;
                  if (iw < 0 || iw >= W) continue;
                  const std::int64_t idx = (id * H + ih) * W + iw;
                  const S v = plane[idx];
                  if (best_idx < 0 || v > best) {
                    best = v;
                    best_idx = idx;
                  }
                }
              }
            }
            check(best_idx >= 0, "maxpool3d: window at output (", od, ",", oh,
                  ",", ow, ") contains no input voxels");
            o[opos] = best;
            argmax[std::size_t(opos)] = plane_base + best_idx;
          }
        }
      }
    }
  }

  if (tape) {
    out.set_requires_grad(input.requires_grad());
    TensorT<S> in_t = input, out_t = out;
    auto arg = std::make_shared<std::vector<std::int64_t>>(std::move(argmax));
    tape->record("maxpool3d", {input}, out, [in_t, out_t, arg]() mutable {
      if (!in_t.requires_grad()) return;
      std::span<const S> dy = out_t.grad();
      std::span<S> dx = in_t.grad_buffer();
      for (std::size_t i = 0; i < dy.size(); ++i)
        dx[std::size_t((*arg)[i])] += dy[i];
    });
  }
  return out;
}

// --- batchnorm ---------------------------------------------------------------

template <typename S>
TensorT<S> batchnorm(TapeT<S>* tape, const TensorT<S>& input,
                     const std::optional<TensorT<S>>& gamma,
                     const std::optional<TensorT<S>>& beta,
                     RunningStatsT<S>& stats, Mode mode, double epsilon,
                     double momentum) {
  check(input.rank() == 5 || input.rank() == 2,
        "batchnorm: input must be rank 5 (channel statistics) or rank 2 "
        "(feature statistics), got ",
        shape_str(input.shape()));
  check(epsilon >= 0, "batchnorm: epsilon must be non-negative");
  check(gamma.has_value() == beta.has_value(),
        "batchnorm: gamma and beta must be passed together or not at all");
  const auto& is = input.shape();
  const std::int64_t N = is[0];
  const std::int64_t C = is[1];
  const std::int64_t SP = input.rank() == 5 ? is[2] * is[3] * is[4] : 1;
  const std::int64_t M = N * SP;
  check(stats.mean.valid() && stats.mean.numel() == C &&
            stats.var.numel() == C,
        "batchnorm: running statistics sized for ", stats.mean.numel(),
        " channels, input has ", C);
  if (gamma) {
    check(gamma->rank() == 1 && gamma->extent(0) == C, "batchnorm: gamma shape ",
          shape_str(gamma->shape()), " does not match channel count ", C);
    check(beta->rank() == 1 && beta->extent(0) == C, "batchnorm: beta shape ",
          shape_str(beta->shape()), " does not match channel count ", C);
  }
  const bool train = mode == Mode::train;
  if (train)
    check(M >= 2, "batchnorm: training-mode statistics need at least 2 values "
                  "per channel, got batch*spatial = ",
          M);
  else
    check(stats.batches >= 1,
          "batchnorm: eval mode before any training batch has primed the "
          "running statistics");

  auto out = TensorT<S>::zeros(is);
  auto xhat = std::make_shared<std::vector<S>>(std::size_t(input.numel()));
  auto invstd = std::make_shared<std::vector<double>>(std::size_t(C));
  const S* x = input.data().data();
  S* o = out.mutable_data().data();
  const S* g = gamma ? gamma->data().data() : nullptr;
  const S* b = beta ? beta->data().data() : nullptr;

  for (std::int64_t c = 0; c < C; ++c) {
    double mean, var;
    if (train) {
      double sum = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const S* row = x + (n * C + c) * SP;
        for (std::int64_t s = 0; s < SP; ++s) sum += double(row[s]);
      }
      mean = sum / double(M);
      double sq = 0;
      for (std::int64_t n = 0; n < N; ++n) {
        const S* row = x + (n * C + c) * SP;
        for (std::int64_t s = 0; s < SP; ++s) {
          const double dv = double(row[s]) - mean;
          sq += dv * dv;
        }
      }
      var = sq / double(M);  // biased variance normalizes the batch
      // Running stats keep the unbiased variance, matching the convention of
      // mainstream frameworks.
      const double unbiased = M > 1 ? sq / double(M - 1) : var;
      auto rm = stats.mean.mutable_data();
      auto rv = stats.var.mutable_data();
      rm[std::size_t(c)] =
          S((1.0 - momentum) * double(rm[std::size_t(c)]) + momentum * mean);
      rv[std::size_t(c)] =
          S((1.0 - momentum) * double(rv[std::size_t(c)]) + momentum * unbiased);
    } else {
      mean = double(stats.mean.data()[std::size_t(c)]);
      var = double(stats.var.data()[std::size_t(c)]);
    }
    const double istd = 1.0 / std::sqrt(var + epsilon);
    (*invstd)[std::size_t(c)] = istd;
    const double gc = g ? double(g[std::size_t(c)]) : 1.0;
    const double bc = b ? double(b[std::size_t(c)]) : 0.0;
    for (std::int64_t n = 0; n < N; ++n) {
      const S* row = x + (n * C + c) * SP;
      S* orow = o + (n * C + c) * SP;
      S* xh = xhat->data() + (n * C + c) * SP;
      for (std::int64_t s = 0; s < SP; ++s) {
        const double h = (double(row[s]) - mean) * istd;
        xh[s] = S(h);
        orow[s] = S(gc * h + bc);
      }
    }
  }
  if (train) stats.batches++;

  if (tape) {
    const bool any_grad = input.requires_grad() ||
                          (gamma && gamma->requires_grad()) ||
                          (beta && beta->requires_grad());
    out.set_requires_grad(any_grad);
    std::vector<TensorT<S>> inputs{input};
    if (gamma) {
      inputs.push_back(*gamma);
      inputs.push_back(*beta);
    }
    TensorT<S> in_t = input, out_t = out;
    std::optional<TensorT<S>> g_t = gamma, b_t = beta;
    tape->record(
        "batchnorm", std::move(inputs), out,
        [in_t, out_t, g_t, b_t, xhat, invstd, train, N, C, SP, M]() mutable {
          std::span<const S> dy = out_t.grad();
          const S* gp = g_t ? g_t->data().data() : nullptr;
          for (std::int64_t c = 0; c < C; ++c) {
            double sum_dy = 0, sum_dy_xhat = 0;
            for (std::int64_t n = 0; n < N; ++n) {
              const std::int64_t base = (n * C + c) * SP;
              for (std::int64_t s = 0; s < SP; ++s) {
                const double gy = double(dy[std::size_t(base + s)]);
                sum_dy += gy;
                sum_dy_xhat += gy * double((*xhat)[std::size_t(base + s)]);
              }
            }
            if (g_t && g_t->requires_grad())
              g_t->grad_buffer()[std::size_t(c)] += S(sum_dy_xhat);
            if (b_t && b_t->requires_grad())
              b_t->grad_buffer()[std::size_t(c)] += S(sum_dy);
            if (!in_t.requires_grad()) continue;
            const double gc = gp ? double(gp[std::size_t(c)]) : 1.0;
            const double istd = (*invstd)[std::size_t(c)];
            std::span<S> dx = in_t.grad_buffer();
            if (train) {
              const double mean_dy = sum_dy / double(M);
              const double mean_dy_xhat = sum_dy_xhat / double(M);
              for (std::int64_t n = 0; n < N; ++n) {
                const std::int64_t base = (n * C + c) * SP;
                for (std::int64_t s = 0; s < SP; ++s) {
                  const std::size_t i = std::size_t(base + s);
                  dx[i] += S(gc * istd *
                             (double(dy[i]) - mean_dy -
                              double((*xhat)[i]) * mean_dy_xhat));
                }
              }
            } else {
              for (std::int64_t n = 0; n < N; ++n) {
                const std::int64_t base = (n * C + c) * SP;
                for (std::int64_t s = 0; s < SP; ++s) {
                  const std::size_t i = std::size_t(base + s);
                  dx[i] += S(gc * istd * double(dy[i]));
                }
              }
            }
          }
        });
  }
  return out;
}

// --- activations -------------------------------------------------------------

template <typename S>
TensorT<S> relu(TapeT<S>* tape, const TensorT<S>& input) {
  auto out = TensorT<S>::zeros(input.shape());
  const S* x = input.data().data();
  S* o = out.mutable_data().data();
  const std::int64_t n = input.numel();
  for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] > S(0) ? x[i] : S(0);
  if (tape) {
    out.set_requires_grad(input.requires_grad());
    TensorT<S> in_t = input, out_t = out;
    tape->record("relu", {input}, out, [in_t, out_t]() mutable {
      if (!in_t.requires_grad()) return;
      std::span<const S> dy = out_t.grad();
      std::span<const S> x = in_t.data();
      std::span<S> dx = in_t.grad_buffer();
      // subgradient at exactly 0 is defined as 0
      for (std::size_t i = 0; i < dy.size(); ++i)
        if (x[i] > S(0)) dx[i] += dy[i];
    });
  }
  return out;
}

template <typename S>
TensorT<S> sigmoid(TapeT<S>* tape, const TensorT<S>& input) {
  auto out = TensorT<S>::zeros(input.shape());
  const S* x = input.data().data();
  S* o = out.mutable_data().data();
  const std::int64_t n = input.numel();
  for (std::int64_t i = 0; i < n; ++i)
    o[i] = S(1.0 / (1.0 + std::exp(-double(x[i]))));
  if (tape) {
    out.set_requires_grad(input.requires_grad());
    TensorT<S> in_t = input, out_t = out;
    tape->record("sigmoid", {input}, out, [in_t, out_t]() mutable {
      if (!in_t.requires_grad()) return;
      std::span<const S> dy = out_t.grad();
      std::span<const S> s = out_t.data();
      std::span<S> dx = in_t.grad_buffer();
      for (std::size_t i = 0; i < dy.size(); ++i)
        dx[i] += dy[i] * s[i] * (S(1) - s[i]);
    });
  }
  return out;
}

// --- dense -------------------------------------------------------------------

template <typename S>
TensorT<S> dense(TapeT<S>* tape, const TensorT<S>& input,
                 const TensorT<S>& weights,
                 const std::optional<TensorT<S>>& bias) {
  check(input.rank() == 2, "dense: input must be rank 2 (N,F), got ",
        shape_str(input.shape()));
  check(weights.rank() == 2, "dense: weights must be rank 2 (F,M), got ",
        shape_str(weights.shape()));
  const std::int64_t N = input.extent(0), F = input.extent(1);
  const std::int64_t M = weights.extent(1);
  check(weights.extent(0) == F, "dense: input feature extent ", F,
        " does not match weight rows ", weights.extent(0));
  if (bias)
    check(bias->rank() == 1 && bias->extent(0) == M, "dense: bias shape ",
          shape_str(bias->shape()), " does not match output extent ", M);

  auto out = TensorT<S>::zeros({N, M});
  const S* x = input.data().data();
  const S* w = weights.data().data();
  S* o = out.mutable_data().data();
  for (std::int64_t n = 0; n < N; ++n) {
    S* orow = o + n * M;
    const S* xrow = x + n * F;
    for (std::int64_t f = 0; f < F; ++f) {
      const S xv = xrow[f];
      const S* wrow = w + f * M;
      for (std::int64_t m = 0; m < M; ++m) orow[m] += xv * wrow[m];
    }
    if (bias) {
      const S* bp = bias->data().data();
      for (std::int64_t m = 0; m < M; ++m) orow[m] += bp[m];
    }
  }

  if (tape) {
    const bool any_grad = input.requires_grad() || weights.requires_grad() ||
                          (bias && bias->requires_grad());
    out.set_requires_grad(any_grad);
    std::vector<TensorT<S>> inputs{input, weights};
    if (bias) inputs.push_back(*bias);
    TensorT<S> in_t = input, w_t = weights, out_t = out;
    std::optional<TensorT<S>> b_t = bias;
    tape->record("dense", std::move(inputs), out,
                 [in_t, w_t, b_t, out_t, N, F, M]() mutable {
                   std::span<const S> dy = out_t.grad();
                   const S* x = in_t.data().data();
                   const S* w = w_t.data().data();
                   if (w_t.requires_grad()) {
                     std::span<S> dw = w_t.grad_buffer();
                     for (std::int64_t n = 0; n < N; ++n) {
                       const S* dyrow = dy.data() + n * M;
                       const S* xrow = x + n * F;
                       for (std::int64_t f = 0; f < F; ++f) {
                         const S xv = xrow[f];
                         S* dwrow = dw.data() + f * M;
                         for (std::int64_t m = 0; m < M; ++m)
                           dwrow[m] += xv * dyrow[m];
                       }
                     }
                   }
                   if (in_t.requires_grad()) {
                     std::span<S> dx = in_t.grad_buffer();
                     for (std::int64_t n = 0; n < N; ++n) {
                       const S* dyrow = dy.data() + n * M;
                       S* dxrow = dx.data() + n * F;
                       for (std::int64_t f = 0; f < F; ++f) {
                         const S* wrow = w + f * M;
                         S s = S(0);
                         for (std::int64_t m = 0; m < M; ++m)
                           s += dyrow[m] * wrow[m];
                         dxrow[f] += s;
                       }
                     }
                   }
                   if (b_t && b_t->requires_grad()) {
                     std::span<S> db = b_t->grad_buffer();
                     for (std::int64_t n = 0; n < N; ++n) {
                       const S* dyrow = dy.data() + n * M;
                       for (std::int64_t m = 0; m < M; ++m)
                         db[std::size_t(m)] += dyrow[m];
                     }
                   }
                 });
  }
  return out;
}

// --- dropout -----------------------------------------------------------------

template <typename S>
TensorT<S> dropout(TapeT<S>* tape, const TensorT<S>& input, double p,
                   Mode mode, Rng& rng) {
  check(p >= 0.0 && p < 1.0, "dropout: probability must be in [0,1), got ", p);
  if (mode == Mode::eval) {
    auto out = reshape(tape, input, input.shape());  // identity with gradient
    return out;
  }
  const S scale = S(1.0 / (1.0 - p));
  auto out = TensorT<S>::zeros(input.shape());
  auto mask = std::make_shared<std::vector<S>>(std::size_t(input.numel()));
  const S* x = input.data().data();
  S* o = out.mutable_data().data();
  for (std::int64_t i = 0; i < input.numel(); ++i) {
    const S m = rng.uniform() < p ? S(0) : scale;
    (*mask)[std::size_t(i)] = m;
    o[i] = x[i] * m;
  }
  if (tape) {
    out.set_requires_grad(input.requires_grad());
    TensorT<S> in_t = input, out_t = out;
    tape->record("dropout", {input}, out, [in_t, out_t, mask]() mutable {
      if (!in_t.requires_grad()) return;
      std::span<const S> dy = out_t.grad();
      std::span<S> dx = in_t.grad_buffer();
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*mask)[i];
    });
  }
  return out;
}

// --- add / reshape -------------------------------------------------------------

template <typename S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
  expect_same_shape(a, b, "add");
  auto out = TensorT<S>::zeros(a.shape());
  const S* pa = a.data().data();
  const S* pb = b.data().data();
  S* o = out.mutable_data().data();
  for (std::int64_t i = 0; i < a.numel(); ++i) o[i] = pa[i] + pb[i];
  if (tape) {
    out.set_requires_grad(a.requires_grad() || b.requires_grad());
    TensorT<S> a_t = a, b_t = b, out_t = out;
    tape->record("add", {a, b}, out, [a_t, b_t, out_t]() mutable {
      std::span<const S> dy = out_t.grad();
      if (a_t.requires_grad()) a_t.accumulate_grad(dy);
      if (b_t.requires_grad()) b_t.accumulate_grad(dy);
    });
  }
  return out;
}

template <typename S>
TensorT<S> reshape(TapeT<S>* tape, const TensorT<S>& input,
                   const Shape& shape) {
  check(shape_numel(shape) == input.numel(), "reshape: new shape ",
        shape_str(shape), " has ", shape_numel(shape),
        " elements, tensor has ", input.numel());
  auto out = TensorT<S>::from_data(
      shape, std::vector<S>(input.data().begin(), input.data().end()));
  if (tape) {
    out.set_requires_grad(input.requires_grad());
    TensorT<S> in_t = input, out_t = out;
    tape->record("reshape", {input}, out, [in_t, out_t]() mutable {
      if (!in_t.requires_grad()) return;
      in_t.accumulate_grad(out_t.grad());
    });
  }
  return out;
}

// --- mse ----------------------------------------------------------------------

template <typename S>
TensorT<S> mse_loss(TapeT<S>* tape, const TensorT<S>& pred,
                    const TensorT<S>& target) {
  check(pred.rank() == 1 && target.rank() == 1,
        "mse_loss: expects rank-1 tensors, got ", shape_str(pred.shape()),
        " and ", shape_str(target.shape()));
  expect_same_shape(pred, target, "mse_loss");
  const std::int64_t n = pred.numel();
  check(n >= 1, "mse_loss: empty input");
  const S* p = pred.data().data();
  const S* t = target.data().data();
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = double(p[i]) - double(t[i]);
    acc += d * d;
  }
  auto out = TensorT<S>::scalar(S(acc / double(n)));
  if (tape) {
    out.set_requires_grad(pred.requires_grad() || target.requires_grad());
    TensorT<S> p_t = pred, t_t = target, out_t = out;
    tape->record("mse_loss", {pred, target}, out, [p_t, t_t, out_t, n]() mutable {
      const double g = double(out_t.grad()[0]);
      const S* p = p_t.data().data();
      const S* t = t_t.data().data();
      if (p_t.requires_grad()) {
        std::span<S> dp = p_t.grad_buffer();
        for (std::int64_t i = 0; i < n; ++i)
          dp[std::size_t(i)] +=
              S(g * 2.0 * (double(p[i]) - double(t[i])) / double(n));
      }
      if (t_t.requires_grad()) {
        std::span<S> dt = t_t.grad_buffer();
        for (std::int64_t i = 0; i < n; ++i)
          dt[std::size_t(i)] -=
              S(g * 2.0 * (double(p[i]) - double(t[i])) / double(n));
      }
    });
  }
  return out;
}

// --- explicit instantiations ---------------------------------------------------

#define RBA_INSTANTIATE_OPS(S)                                                 \
  template TensorT<S> maxpool3d(TapeT<S>*, const TensorT<S>&,                  \
                                const std::array<std::int64_t, 3>&,            \
                                const std::array<std::int64_t, 3>&,            \
                                const std::array<std::int64_t, 3>&);           \
  template TensorT<S> batchnorm(TapeT<S>*, const TensorT<S>&,                  \
                                const std::optional<TensorT<S>>&,              \
                                const std::optional<TensorT<S>>&,              \
                                RunningStatsT<S>&, Mode, double, double);      \
  template TensorT<S> relu(TapeT<S>*, const TensorT<S>&);                      \
  template TensorT<S> sigmoid(TapeT<S>*, const TensorT<S>&);                   \
  template TensorT<S> dense(TapeT<S>*, const TensorT<S>&, const TensorT<S>&,   \
                            const std::optional<TensorT<S>>&);                 \
  template TensorT<S> dropout(TapeT<S>*, const TensorT<S>&, double, Mode,      \
                              Rng&);                                           \
  template TensorT<S> add(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);    \
  template TensorT<S> reshape(TapeT<S>*, const TensorT<S>&, const Shape&);     \
  template TensorT<S> mse_loss(TapeT<S>*, const TensorT<S>&, const TensorT<S>&);

RBA_INSTANTIATE_OPS(float)
RBA_INSTANTIATE_OPS(double)

#undef RBA_INSTANTIATE_OPS

}  // namespace rba
