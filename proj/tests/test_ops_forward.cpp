// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rba/ops.hpp"
#include "reference_ops.hpp"
#include "test_support.hpp"

using namespace rba;
using namespace rba::testing;

namespace {

ConvParams conv_params(std::array<std::int64_t, 3> k,
                       std::array<std::int64_t, 3> s,
                       std::array<std::int64_t, 3> p, std::int64_t in_c,
                       std::int64_t out_c, bool bias) {
  ConvParams cp;
  cp.kernel = k;
  cp.stride = s;
  cp.padding = p;
  cp.in_channels = in_c;
  cp.out_channels = out_c;
  cp.has_bias = bias;
  return cp;
}

}  // namespace

TEST_CASE("conv3d output shape follows the extent formula") {
  Rng rng(7);
  auto input = random_normal<float>({1, 1, 136, 168, 136}, rng);
  auto p = conv_params({7, 7, 7}, {2, 2, 2}, {3, 3, 3}, 1, 16, false);
  auto w = random_normal<float>({16, 1, 7, 7, 7}, rng);
  auto out = conv3d<float>(nullptr, input, w, std::nullopt, p);
  CHECK(out.shape() == Shape{1, 16, 68, 84, 68});
}

TEST_CASE("conv3d all-ones 3x3x3 kernel sums the window") {
  auto input = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
  auto w = Tensor::full({1, 1, 3, 3, 3}, 1.0f);
  auto p = conv_params({3, 3, 3}, {1, 1, 1}, {0, 0, 0}, 1, 1, false);
  auto out = conv3d<float>(nullptr, input, w, std::nullopt, p);
  CHECK(out.shape() == Shape{1, 1, 1, 1, 1});
  CHECK(out.item() == 27.0f);
}

TEST_CASE("conv3d matches the naive reference bit for bit on all paths") {
  Rng rng(42);
  struct Case {
    Shape in;
    std::array<std::int64_t, 3> k, s, p;
    std::int64_t oc;
    bool bias;
  };
  const Case cases[] = {
      {{2, 3, 5, 6, 5}, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 4, true},
      {{1, 1, 9, 10, 9}, {7, 7, 7}, {2, 2, 2}, {3, 3, 3}, 16, false},
      {{2, 4, 4, 5, 4}, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}, 8, false},
      {{1, 2, 7, 7, 7}, {3, 2, 1}, {2, 1, 1}, {0, 1, 0}, 3, true},
  };
  for (const auto& c : cases) {
    CAPTURE(shape_str(c.in));
    auto input = random_normal<float>(c.in, rng);
    auto p = conv_params(c.k, c.s, c.p, c.in[1], c.oc, c.bias);
    auto w = random_normal<float>({c.oc, c.in[1], c.k[0], c.k[1], c.k[2]}, rng);
    std::optional<Tensor> b;
    if (c.bias) b = random_normal<float>({c.oc}, rng);
    auto ref = naive_conv3d<float>(input, w, b, p);
    auto direct = conv3d<float>(nullptr, input, w, b, p, ConvAlgo::direct);
    auto lowered = conv3d<float>(nullptr, input, w, b, p, ConvAlgo::im2col);
    CHECK(direct.bit_equal(ref));
    CHECK(lowered.bit_equal(ref));
  }
}

TEST_CASE("conv3d output-shape property over random valid configs") {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    std::array<std::int64_t, 3> k, s, p;
    Shape in{1, rng.uniform_int(1, 3), 0, 0, 0};
    for (int a = 0; a < 3; ++a) {
      k[std::size_t(a)] = rng.uniform_int(1, 4);
      s[std::size_t(a)] = rng.uniform_int(1, 3);
      p[std::size_t(a)] = rng.uniform_int(0, 2);
      // choose an input extent that keeps the output extent positive
      std::int64_t min_in =
          std::max<std::int64_t>(1, k[std::size_t(a)] - 2 * p[std::size_t(a)]);
      in[std::size_t(a + 2)] = min_in + rng.uniform_int(0, 6);
    }
    std::int64_t oc = rng.uniform_int(1, 4);
    auto cp = conv_params(k, s, p, in[1], oc, false);
    auto input = random_normal<float>(in, rng);
    auto w = random_normal<float>({oc, in[1], k[0], k[1], k[2]}, rng);
    auto out = conv3d<float>(nullptr, input, w, std::nullopt, cp);
    for (int a = 0; a < 3; ++a) {
      std::int64_t expect = (in[std::size_t(a + 2)] + 2 * p[std::size_t(a)] -
                             k[std::size_t(a)]) /
                                s[std::size_t(a)] +
                            1;
      CHECK(out.extent(a + 2) == expect);
    }
  }
}

TEST_CASE("conv3d is linear in its input for fixed weights") {
  Rng rng(3);
  auto x = random_normal<float>({1, 2, 6, 6, 6}, rng);
  auto y = random_normal<float>({1, 2, 6, 6, 6}, rng);
  auto p = conv_params({3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 2, 3, false);
  auto w = random_normal<float>({3, 2, 3, 3, 3}, rng);
  const float alpha = 1.75f, beta = -0.5f;
  auto mix = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i)
    mix.mutable_data()[std::size_t(i)] =
        alpha * x.data()[std::size_t(i)] + beta * y.data()[std::size_t(i)];
  auto lhs = conv3d<float>(nullptr, mix, w, std::nullopt, p);
  auto cx = conv3d<float>(nullptr, x, w, std::nullopt, p);
  auto cy = conv3d<float>(nullptr, y, w, std::nullopt, p);
  // relative to the scale of the output field; individual elements may
  // cancel towards zero
  double scale = 0, max_diff = 0;
  for (std::int64_t i = 0; i < lhs.numel(); ++i) {
    double a = double(lhs.data()[std::size_t(i)]);
    double b = alpha * double(cx.data()[std::size_t(i)]) +
               beta * double(cy.data()[std::size_t(i)]);
    scale = std::max({scale, std::abs(a), std::abs(b)});
    max_diff = std::max(max_diff, std::abs(a - b));
  }
  CHECK(max_diff < 1e-5 * scale);
}

TEST_CASE("conv3d repeated runs are bit-identical") {
  Rng rng(5);
  auto input = random_normal<float>({2, 2, 8, 9, 8}, rng);
  auto p = conv_params({3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 2, 5, true);
  auto w = random_normal<float>({5, 2, 3, 3, 3}, rng);
  auto b = random_normal<float>({5}, rng);
  auto first = conv3d<float>(nullptr, input, w, std::optional(b), p);
  for (int i = 0; i < 3; ++i) {
    auto again = conv3d<float>(nullptr, input, w, std::optional(b), p);
    CHECK(again.bit_equal(first));
  }
}

TEST_CASE("conv3d rejects mismatched shapes with axis in message") {
  Rng rng(1);
  auto input = random_normal<float>({1, 3, 4, 4, 4}, rng);
  auto p = conv_params({3, 3, 3}, {1, 1, 1}, {0, 0, 0}, 16, 8, false);
  auto w = random_normal<float>({8, 16, 3, 3, 3}, rng);
  CHECK_THROWS_WITH_AS(conv3d<float>(nullptr, input, w, std::nullopt, p),
                       doctest::Contains("channel"), Error);

  auto p2 = conv_params({9, 3, 3}, {1, 1, 1}, {0, 0, 0}, 3, 8, false);
  auto w2 = random_normal<float>({8, 3, 9, 3, 3}, rng);
  CHECK_THROWS_WITH_AS(conv3d<float>(nullptr, input, w2, std::nullopt, p2),
                       doctest::Contains("depth"), Error);
}

TEST_CASE("maxpool3d shape and constant behaviour") {
  Rng rng(9);
  auto input = random_normal<float>({1, 16, 68, 84, 68}, rng);
  auto out = maxpool3d<float>(nullptr, input, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
  CHECK(out.shape() == Shape{1, 16, 34, 42, 34});

  auto constant = Tensor::full({1, 2, 6, 6, 6}, 5.0f);
  auto pooled =
      maxpool3d<float>(nullptr, constant, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
  for (auto v : pooled.data()) CHECK(v == 5.0f);
}

TEST_CASE("maxpool3d matches naive reference and padding is never selected") {
  Rng rng(10);
  auto input = random_uniform<float>({2, 3, 7, 6, 5}, rng, -4.0, -1.0);
  auto out = maxpool3d<float>(nullptr, input, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
  auto ref = naive_maxpool3d<float>(input, {3, 3, 3}, {2, 2, 2}, {1, 1, 1});
  CHECK(out.bit_equal(ref));
  // all inputs are negative, so a selected zero would betray a padding voxel
  for (auto v : out.data()) CHECK(v < 0.0f);
}

TEST_CASE("batchnorm normalizes [1,3] to [-1,1] with epsilon 0") {
  auto input = Tensor::from_data({2, 1}, {1.0f, 3.0f});
  auto stats = RunningStats::make(1);
  auto out = batchnorm<float>(nullptr, input, std::nullopt, std::nullopt,
                              stats, Mode::train, 0.0);
  CHECK(out.at({0, 0}) == doctest::Approx(-1.0));
  CHECK(out.at({1, 0}) == doctest::Approx(1.0));
}

TEST_CASE("batchnorm train output has zero mean unit variance per channel") {
  Rng rng(21);
  auto input = random_normal<float>({4, 3, 5, 6, 5}, rng);
  auto stats = RunningStats::make(3);
  auto out = batchnorm<float>(nullptr, input, std::nullopt, std::nullopt,
                              stats, Mode::train);
  const std::int64_t N = 4, C = 3, SP = 5 * 6 * 5;
  for (std::int64_t c = 0; c < C; ++c) {
    double sum = 0, sq = 0;
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t s = 0; s < SP; ++s) {
        double v = double(out.data()[std::size_t((n * C + c) * SP + s)]);
        sum += v;
        sq += v * v;
      }
    const double m = sum / double(N * SP);
    const double var = sq / double(N * SP) - m * m;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
}

TEST_CASE("batchnorm eval uses running statistics and needs priming") {
  Rng rng(22);
  auto input = random_normal<float>({8, 4}, rng);
  auto stats = RunningStats::make(4);
  CHECK_THROWS_WITH_AS(batchnorm<float>(nullptr, input, std::nullopt,
                                        std::nullopt, stats, Mode::eval),
                       doctest::Contains("eval"), Error);
  (void)batchnorm<float>(nullptr, input, std::nullopt, std::nullopt, stats,
                         Mode::train);
  CHECK(stats.batches == 1);
  auto one = random_normal<float>({1, 4}, rng);
  auto out = batchnorm<float>(nullptr, one, std::nullopt, std::nullopt, stats,
                              Mode::eval);
  CHECK(out.shape() == Shape{1, 4});
}

TEST_CASE("batchnorm train mode rejects a single statistic-free sample") {
  Rng rng(23);
  auto input = random_normal<float>({1, 4}, rng);
  auto stats = RunningStats::make(4);
  CHECK_THROWS_WITH_AS(batchnorm<float>(nullptr, input, std::nullopt,
                                        std::nullopt, stats, Mode::train),
                       doctest::Contains("at least 2"), Error);
}

TEST_CASE("relu and sigmoid basics") {
  auto x = Tensor::from_data({3}, {-2.0f, 0.0f, 3.0f});
  auto r = relu<float>(nullptr, x);
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 0.0f);
  CHECK(r.data()[2] == 3.0f);

  auto s = sigmoid<float>(nullptr, Tensor::scalar(0.0f));
  CHECK(s.item() == doctest::Approx(0.5));
}

TEST_CASE("dense identity weights and arithmetic example") {
  auto x = Tensor::from_data({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  auto eye = Tensor::from_data({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  auto zero_bias = Tensor::zeros({2});
  auto out = dense<float>(nullptr, x, eye, std::optional(zero_bias));
  CHECK(out.bit_equal(x));

  auto x2 = Tensor::from_data({1, 2}, {1.0f, 2.0f});
  auto w2 = Tensor::from_data({2, 1}, {1.0f, 1.0f});
  auto b2 = Tensor::from_data({1}, {0.5f});
  auto out2 = dense<float>(nullptr, x2, w2, std::optional(b2));
  CHECK(out2.item() == doctest::Approx(3.5));

  Rng rng(31);
  auto a = random_normal<float>({3, 5}, rng);
  auto w = random_normal<float>({5, 4}, rng);
  auto b = random_normal<float>({4}, rng);
  auto got = dense<float>(nullptr, a, w, std::optional(b));
  auto ref = naive_dense<float>(a, w, std::optional(b));
  CHECK(got.bit_equal(ref));

  auto wbad = random_normal<float>({6, 4}, rng);
  CHECK_THROWS_WITH_AS(dense<float>(nullptr, a, wbad, std::nullopt),
                       doctest::Contains("feature extent"), Error);
}

TEST_CASE("dropout identity cases and survivor scaling") {
  Rng rng(40);
  auto x = random_normal<float>({1000}, rng);

  Rng r1(1);
  auto p0 = dropout<float>(nullptr, x, 0.0, Mode::train, r1);
  CHECK(p0.bit_equal(x));

  Rng r2(1);
  auto ev = dropout<float>(nullptr, x, 0.5, Mode::eval, r2);
  CHECK(ev.bit_equal(x));

  CHECK_THROWS_WITH_AS(dropout<float>(nullptr, x, 1.0, Mode::train, r2),
                       doctest::Contains("probability"), Error);

  // law of large numbers: scaled survivors keep the mean
  auto ones = Tensor::full({100000}, 1.0f);
  Rng r3(77);
  auto dropped = dropout<float>(nullptr, ones, 0.5, Mode::train, r3);
  double mean = 0;
  for (auto v : dropped.data()) mean += double(v);
  mean /= double(dropped.numel());
  CHECK(std::abs(mean - 1.0) < 0.01);
}

TEST_CASE("add examples") {
  auto a = Tensor::from_data({2}, {1.0f, 2.0f});
  auto b = Tensor::from_data({2}, {3.0f, 4.0f});
  auto sum = add<float>(nullptr, a, b);
  CHECK(sum.data()[0] == 4.0f);
  CHECK(sum.data()[1] == 6.0f);

  auto zero = Tensor::zeros({2});
  CHECK(add<float>(nullptr, a, zero).bit_equal(a));

  auto c = Tensor::zeros({3});
  CHECK_THROWS_WITH_AS(add<float>(nullptr, a, c),
                       doctest::Contains("shape mismatch"), Error);
}

TEST_CASE("mse_loss examples") {
  auto p = Tensor::from_data({3}, {1.0f, 2.0f, 3.0f});
  CHECK(mse_loss<float>(nullptr, p, p).item() == 0.0f);

  auto pred = Tensor::from_data({1}, {2.0f});
  auto target = Tensor::from_data({1}, {0.0f});
  CHECK(mse_loss<float>(nullptr, pred, target).item() == 4.0f);

  auto empty_guard = Tensor::from_data({2}, {0.0f, 1.0f});
  CHECK_THROWS_AS((void)mse_loss<float>(nullptr, pred, empty_guard), Error);
}

TEST_CASE("tape: gradient fan-out accumulates and unreachable stays absent") {
  auto x = Tensor::scalar(3.0f, true);
  auto unused = Tensor::scalar(1.0f, true);
  Tape tape;
  auto doubled = add<float>(&tape, x, x);
  auto loss = reshape<float>(&tape, doubled, {1});
  tape.backward(loss);
  REQUIRE(x.has_grad());
  CHECK(x.grad()[0] == 2.0f);  // both uses contribute 1
  CHECK_FALSE(unused.has_grad());
}

TEST_CASE("tape: identity loss has gradient one; non-scalar loss rejected") {
  auto x = Tensor::scalar(5.0f, true);
  Tape tape;
  auto y = reshape<float>(&tape, x, {1});
  tape.backward(y);
  CHECK(x.grad()[0] == 1.0f);

  auto v = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  Tape tape2;
  auto w = relu<float>(&tape2, v);
  CHECK_THROWS_WITH_AS(tape2.backward(w), doctest::Contains("scalar"), Error);
}

TEST_CASE("tape nodes are topologically ordered") {
  Rng rng(50);
  auto x = random_normal<float>({1, 1, 4, 4, 4}, rng, true);
  auto p = conv_params({3, 3, 3}, {1, 1, 1}, {1, 1, 1}, 1, 2, false);
  auto w = random_normal<float>({2, 1, 3, 3, 3}, rng, true);
  Tape tape;
  auto h = conv3d<float>(&tape, x, w, std::nullopt, p);
  auto a = relu<float>(&tape, h);
  auto flat = reshape<float>(&tape, a, {1, a.numel()});
  for (const auto& node : tape.nodes())
    for (auto in_id : node.input_ids) CHECK(in_id < node.output_id);
  CHECK(tape.size() == 3);
}
