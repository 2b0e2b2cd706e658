// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
//
// 3D convolution, forward and backward.
//
// Every path accumulates each output element in the same fixed order
// (in-channel, then kd, kh, kw), vectorizing only across independent output
// elements (the out-channel axis innermost). That keeps results bit-identical
// between the direct path, the im2col path and the naive reference kernel in
// the test suite, and makes training runs byte-reproducible.

#include <algorithm>
#include <cstring>
#include <vector>

#include "rba/ops.hpp"

namespace rba {

std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel,
                             std::int64_t stride, std::int64_t padding,
                             const char* op, const char* axis) {
  check(in >= 1, op, ": input ", axis, " extent ", in, " must be positive");
  check(kernel >= 1, op, ": kernel ", axis, " extent ", kernel,
        " must be positive");
  check(stride >= 1, op, ": stride on ", axis, " axis must be positive, got ",
        stride);
  check(padding >= 0, op, ": padding on ", axis,
        " axis must be non-negative, got ", padding);
  std::int64_t numerator = in + 2 * padding - kernel;
  std::int64_t out = numerator >= 0 ? numerator / stride + 1 : 0;
  check(out >= 1, op, ": non-positive output extent on ", axis,
        " axis (input ", in, ", kernel ", kernel, ", stride ", stride,
        ", padding ", padding, ")");
  return out;
}

namespace {

struct ConvDims {
  std::int64_t N, C, D, H, W;
  std::int64_t OC, KD, KH, KW;
  std::int64_t SD, SH, SW, PD, PH, PW;
  std::int64_t OD, OH, OW;

  std::int64_t in_vol() const { return D * H * W; }
  std::int64_t out_vol() const { return OD * OH * OW; }
  std::int64_t taps() const { return C * KD * KH * KW; }
};

template <typename S>
ConvDims make_dims(const TensorT<S>& input, const TensorT<S>& weights,
                   const ConvParams& p) {
  check(input.rank() == 5, "conv3d: input must be rank 5 (N,C,D,H,W), got ",
        shape_str(input.shape()));
  check(weights.rank() == 5,
        "conv3d: weights must be rank 5 (out_c,in_c,kd,kh,kw), got ",
        shape_str(weights.shape()));
  const auto& is = input.shape();
  ConvDims d;
  d.N = is[0];
  d.C = is[1];
  d.D = is[2];
  d.H = is[3];
  d.W = is[4];
  check(d.C == p.in_channels, "conv3d: input channel extent ", d.C,
        " does not match in_channels ", p.in_channels);
  Shape expect{p.out_channels, p.in_channels, p.kernel[0], p.kernel[1],
               p.kernel[2]};
  check(weights.shape() == expect, "conv3d: weights shape ",
        shape_str(weights.shape()), " does not match expected ",
        shape_str(expect));
  d.OC = p.out_channels;
  d.KD = p.kernel[0];
  d.KH = p.kernel[1];
  d.KW = p.kernel[2];
  d.SD = p.stride[0];
  d.SH = p.stride[1];
  d.SW = p.stride[2];
  d.PD = p.padding[0];
  d.PH = p.padding[1];
  d.PW = p.padding[2];
  d.OD = conv_out_extent(d.D, d.KD, d.SD, d.PD, "conv3d", "depth");
  d.OH = conv_out_extent(d.H, d.KH, d.SH, d.PH, "conv3d", "height");
  d.OW = conv_out_extent(d.W, d.KW, d.SW, d.PW, "conv3d", "width");
  return d;
}

// Weights rearranged to tap-major, out-channel-minor: wT[k*OC + oc] with
// k = ((ic*KD + kd)*KH + kh)*KW + kw. Lets the inner accumulation loop run
// over contiguous out-channels.
template <typename S>
std::vector<S> transpose_weights(const S* w, const ConvDims& d) {
  const std::int64_t K = d.taps();
  std::vector<S> wT(std::size_t(K * d.OC));
  for (std::int64_t oc = 0; oc < d.OC; ++oc)
    for (std::int64_t k = 0; k < K; ++k) wT[std::size_t(k * d.OC + oc)] = w[oc * K + k];
  return wT;
}

template <typename S>
void store_position(S* out_n, const S* acc, const S* bias, const ConvDims& d,
                    std::int64_t pos) {
  const std::int64_t vol = d.out_vol();
  if (bias) {
    for (std::int64_t oc = 0; oc < d.OC; ++oc)
      out_n[oc * vol + pos] = acc[oc] + bias[oc];
  } else {
    for (std::int64_t oc = 0; oc < d.OC; ++oc) out_n[oc * vol + pos] = acc[oc];
  }
}

template <typename S>
void forward_direct(const S* in, const S* wT, const S* bias, S* out,
                    const ConvDims& d) {
  std::vector<S> acc_v(std::size_t(d.OC));
  S* acc = acc_v.data();
  const std::int64_t in_vol = d.in_vol();
  for (std::int64_t n = 0; n < d.N; ++n) {
    const S* in_n = in + n * d.C * in_vol;
    S* out_n = out + n * d.OC * d.out_vol();
    for (std::int64_t od = 0; od < d.OD; ++od) {
      const std::int64_t id0 = od * d.SD - d.PD;
      const std::int64_t kd_lo = std::max<std::int64_t>(0, -id0);
      const std::int64_t kd_hi = std::min(d.KD, d.D - id0);
      for (std::int64_t oh = 0; oh < d.OH; ++oh) {
        const std::int64_t ih0 = oh * d.SH - d.PH;
        const std::int64_t kh_lo = std::max<std::int64_t>(0, -ih0);
        const std::int64_t kh_hi = std::min(d.KH, d.H - ih0);
        for (std::int64_t ow = 0; ow < d.OW; ++ow) {
          const std::int64_t iw0 = ow * d.SW - d.PW;
          const std::int64_t kw_lo = std::max<std::int64_t>(0, -iw0);
          const std::int64_t kw_hi = std::min(d.KW, d.W - iw0);
          std::memset(acc, 0, sizeof(S) * std::size_t(d.OC));
          for (std::int64_t ic = 0; ic < d.C; ++ic) {
            const S* in_c = in_n + ic * in_vol;
            for (std::int64_t kd = kd_lo; kd < kd_hi; ++kd) {
              const std::int64_t id = id0 + kd;
              for (std::int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                const std::int64_t ih = ih0 + kh;
                const S* in_row = in_c + (id * d.H + ih) * d.W + iw0;
                const std::int64_t kbase =
                    ((ic * d.KD + kd) * d.KH + kh) * d.KW;
                for (std::int64_t kw = kw_lo; kw < kw_hi; ++kw) {
                  const S x = in_row[kw];
                  const S* wrow = wT + (kbase + kw) * d.OC;
                  for (std::int64_t oc = 0; oc < d.OC; ++oc)
                    acc[oc] += x * wrow[oc];
                }
              }
            }
          }
          store_position(out_n, acc, bias, d, (od * d.OH + oh) * d.OW + ow);
        }
      }
    }
  }
}

// im2col path: gather a tile of input columns, then run the same
// tap-sequential accumulation on the dense tile. Out-of-bounds taps gather
// zero; adding those zero products cannot change any accumulator value, so
// the result stays bit-identical to the direct path.
template <typename S>
void forward_im2col(const S* in, const S* wT, const S* bias, S* out,
                    const ConvDims& d) {
  const std::int64_t K = d.taps();
  const std::int64_t P = d.out_vol();
  const std::int64_t tile =
      std::clamp<std::int64_t>((1 << 20) / (K * std::int64_t(sizeof(S))), 16, 512);
  std::vector<S> col(std::size_t(tile * K));
  std::vector<S> acc_v(std::size_t(d.OC));
  S* acc = acc_v.data();
  const std::int64_t in_vol = d.in_vol();
  for (std::int64_t n = 0; n < d.N; ++n) {
    const S* in_n = in + n * d.C * in_vol;
    S* out_n = out + n * d.OC * P;
    for (std::int64_t p0 = 0; p0 < P; p0 += tile) {
      const std::int64_t pn = std::min(tile, P - p0);
      // gather
      for (std::int64_t t = 0; t < pn; ++t) {
        const std::int64_t pos = p0 + t;
        const std::int64_t od = pos / (d.OH * d.OW);
        const std::int64_t oh = (pos / d.OW) % d.OH;
        const std::int64_t ow = pos % d.OW;
        const std::int64_t id0 = od * d.SD - d.PD;
        const std::int64_t ih0 = oh * d.SH - d.PH;
        const std::int64_t iw0 = ow * d.SW - d.PW;
        S* colrow = col.data() + t * K;
        std::int64_t k = 0;
        for (std::int64_t ic = 0; ic < d.C; ++ic) {
          const S* in_c = in_n + ic * in_vol;
          for (std::int64_t kd = 0; kd < d.KD; ++kd) {
            const std::int64_t id = id0 + kd;
            const bool drow = id >= 0 && id < d.D;
            for (std::int64_t kh = 0; kh < d.KH; ++kh) {
              const std::int64_t ih = ih0 + kh;
              if (!drow || ih < 0 || ih >= d.H) {
                std::memset(colrow + k, 0, sizeof(S) * std::size_t(d.KW));
                k += d.KW;
                continue;
              }
              const S* in_row = in_c + (id * d.H + ih) * d.W;
              for (std::int64_t kw = 0; kw < d.KW; ++kw, ++k) {
                const std::int64_t iw = iw0 + kw;
                colrow[k] = (iw >= 0 && iw < d.W) ? in_row[iw] : S(0);
              }
            }
          }
        }
      }
      // multiply
      for (std::int64_t t = 0; t < pn; ++t) {
        const S* colrow = col.data() + t * K;
        std::memset(acc, 0, sizeof(S) * std::size_t(d.OC));
        for (std::int64_t k = 0; k < K; ++k) {
          const S x = colrow[k];
          const S* wrow = wT + k * d.OC;
          for (std::int64_t oc = 0; oc < d.OC; ++oc) acc[oc] += x * wrow[oc];
        }
        store_position(out_n, acc, bias, d, p0 + t);
      }
    }
  }
}

// Gradient w.r.t. weights and bias. dW element order: samples outer, output
// positions in scan order.
template <typename S>
void backward_weights(const S* in, const S* dy, S* dw_out, S* db_out,
                      const ConvDims& d) {
  const std::int64_t K = d.taps();
  const std::int64_t P = d.out_vol();
  const std::int64_t in_vol = d.in_vol();
  std::vector<S> dwT;
  if (dw_out) dwT.assign(std::size_t(K * d.OC), S(0));
  std::vector<S> dyT(std::size_t(P * d.OC));
  for (std::int64_t n = 0; n < d.N; ++n) {
    const S* in_n = in + n * d.C * in_vol;
    const S* dy_n = dy + n * d.OC * P;
    if (db_out) {
      for (std::int64_t oc = 0; oc < d.OC; ++oc) {
        const S* row = dy_n + oc * P;
        S s = db_out[oc];
        for (std::int64_t p = 0; p < P; ++p) s += row[p];
        db_out[oc] = s;
      }
    }
    if (!dw_out) continue;
    for (std::int64_t oc = 0; oc < d.OC; ++oc)
      for (std::int64_t p = 0; p < P; ++p)
        dyT[std::size_t(p * d.OC + oc)] = dy_n[oc * P + p];
    std::int64_t pos = 0;
    for (std::int64_t od = 0; od < d.OD; ++od) {
      const std::int64_t id0 = od * d.SD - d.PD;
      const std::int64_t kd_lo = std::max<std::int64_t>(0, -id0);
      const std::int64_t kd_hi = std::min(d.KD, d.D - id0);
      for (std::int64_t oh = 0; oh < d.OH; ++oh) {
        const std::int64_t ih0 = oh * d.SH - d.PH;
        const std::int64_t kh_lo = std::max<std::int64_t>(0, -ih0);
        const std::int64_t kh_hi = std::min(d.KH, d.H - ih0);
        for (std::int64_t ow = 0; ow < d.OW; ++ow, ++pos) {
          const std::int64_t iw0 = ow * d.SW - d.PW;
          const std::int64_t kw_lo = std::max<std::int64_t>(0, -iw0);
          const std::int64_t kw_hi = std::min(d.KW, d.W - iw0);
          const S* dyrow = dyT.data() + pos * d.OC;
          for (std::int64_t ic = 0; ic < d.C; ++ic) {
            const S* in_c = in_n + ic * in_vol;
            for (std::int64_t kd = kd_lo; kd < kd_hi; ++kd) {
              const std::int64_t id = id0 + kd;
              for (std::int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                const std::int64_t ih = ih0 + kh;
                const S* in_row = in_c + (id * d.H + ih) * d.W + iw0;
                const std::int64_t kbase =
                    ((ic * d.KD + kd) * d.KH + kh) * d.KW;
                for (std::int64_t kw = kw_lo; kw < kw_hi; ++kw) {
                  const S x = in_row[kw];
                  S* wrow = dwT.data() + (kbase + kw) * d.OC;
                  for (std::int64_t oc = 0; oc < d.OC; ++oc)
                    wrow[oc] += x * dyrow[oc];
                }
              }
            }
          }
        }
      }
    }
  }
  if (dw_out) {
    for (std::int64_t oc = 0; oc < d.OC; ++oc)
      for (std::int64_t k = 0; k < K; ++k)
        dw_out[oc * K + k] += dwT[std::size_t(k * d.OC + oc)];
  }
}

// Gradient w.r.t. the input: per output position, combine the weight rows of
// all out-channels into one column gradient, then scatter its valid taps.
template <typename S>
void backward_input(const S* w, const S* dy, S* dx, const ConvDims& d) {
  const std::int64_t K = d.taps();
  const std::int64_t P = d.out_vol();
  const std::int64_t in_vol = d.in_vol();
  std::vector<S> dcol(static_cast<std::size_t>(K));
  for (std::int64_t n = 0; n < d.N; ++n) {
    const S* dy_n = dy + n * d.OC * P;
    S* dx_n = dx + n * d.C * in_vol;
    std::int64_t pos = 0;
    for (std::int64_t od = 0; od < d.OD; ++od) {
      const std::int64_t id0 = od * d.SD - d.PD;
      const std::int64_t kd_lo = std::max<std::int64_t>(0, -id0);
      const std::int64_t kd_hi = std::min(d.KD, d.D - id0);
      for (std::int64_t oh = 0; oh < d.OH; ++oh) {
        const std::int64_t ih0 = oh * d.SH - d.PH;
        const std::int64_t kh_lo = std::max<std::int64_t>(0, -ih0);
        const std::int64_t kh_hi = std::min(d.KH, d.H - ih0);
        for (std::int64_t ow = 0; ow < d.OW; ++ow, ++pos) {
          const std::int64_t iw0 = ow * d.SW - d.PW;
          const std::int64_t kw_lo = std::max<std::int64_t>(0, -iw0);
          const std::int64_t kw_hi = std::min(d.KW, d.W - iw0);
          std::memset(dcol.data(), 0, sizeof(S) * std::size_t(K));
          for (std::int64_t oc = 0; oc < d.OC; ++oc) {
            const S g = dy_n[oc * P + pos];
            const S* wrow = w + oc * K;
            S* dc = dcol.data();
            for (std::int64_t k = 0; k < K; ++k) dc[k] += g * wrow[k];
          }
          for (std::int64_t ic = 0; ic < d.C; ++ic) {
            S* dx_c = dx_n + ic * in_vol;
            for (std::int64_t kd = kd_lo; kd < kd_hi; ++kd) {
              const std::int64_t id = id0 + kd;
              for (std::int64_t kh = kh_lo; kh < kh_hi; ++kh) {
                const std::int64_t ih = ih0 + kh;
                S* dx_row = dx_c + (id * d.H + ih) * d.W + iw0;
                const std::int64_t kbase =
                    ((ic * d.KD + kd) * d.KH + kh) * d.KW;
                const S* dc = dcol.data() + kbase;
                for (std::int64_t kw = kw_lo; kw < kw_hi; ++kw)
                  dx_row[kw] += dc[kw];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename S>
TensorT<S> conv3d(TapeT<S>* tape, const TensorT<S>& input,
                  const TensorT<S>& weights,
                  const std::optional<TensorT<S>>& bias, const ConvParams& p,
                  ConvAlgo algo) {
  const ConvDims d = make_dims(input, weights, p);
  if (p.has_bias) {
    check(bias.has_value(), "conv3d: params declare a bias but none was given");
    check(bias->rank() == 1 && bias->extent(0) == d.OC,
          "conv3d: bias shape ", shape_str(bias->shape()),
          " does not match out_channels ", d.OC);
  } else {
    check(!bias.has_value(),
          "conv3d: bias given but params declare has_bias=false");
  }

  auto out = TensorT<S>::zeros({d.N, d.OC, d.OD, d.OH, d.OW});
  const std::vector<S> wT = transpose_weights(weights.data().data(), d);
  const S* bias_ptr = bias ? bias->data().data() : nullptr;
  const bool lower_to_matrix =
      algo == ConvAlgo::im2col ||
      (algo == ConvAlgo::auto_select && d.KD * d.KH * d.KW >= 128);
  if (lower_to_matrix)
    forward_im2col(input.data().data(), wT.data(), bias_ptr,
                   out.mutable_data().data(), d);
  else
    forward_direct(input.data().data(), wT.data(), bias_ptr,
                   out.mutable_data().data(), d);

  if (tape) {
    const bool any_grad = input.requires_grad() || weights.requires_grad() ||
                          (bias && bias->requires_grad());
    out.set_requires_grad(any_grad);
    std::vector<TensorT<S>> inputs{input, weights};
    if (bias) inputs.push_back(*bias);
    TensorT<S> in_t = input, w_t = weights, out_t = out;
    std::optional<TensorT<S>> b_t = bias;
    tape->record("conv3d", std::move(inputs), out,
                 [in_t, w_t, b_t, out_t, d]() mutable {
                   std::span<const S> dy = out_t.grad();
                   const bool need_dw = w_t.requires_grad();
                   const bool need_db = b_t && b_t->requires_grad();
                   if (need_dw || need_db)
                     backward_weights(in_t.data().data(), dy.data(),
                                      need_dw ? w_t.grad_buffer().data()
                                              : nullptr,
                                      need_db ? b_t->grad_buffer().data()
                                              : nullptr,
                                      d);
                   if (in_t.requires_grad())
                     backward_input(w_t.data().data(), dy.data(),
                                    in_t.grad_buffer().data(), d);
                 });
  }
  return out;
}

template TensorT<float> conv3d(TapeT<float>*, const TensorT<float>&,
                               const TensorT<float>&,
                               const std::optional<TensorT<float>>&,
                               const ConvParams&, ConvAlgo);
template TensorT<double> conv3d(TapeT<double>*, const TensorT<double>&,
                                const TensorT<double>&,
                                const std::optional<TensorT<double>>&,
                                const ConvParams&, ConvAlgo);

}  // namespace rba
