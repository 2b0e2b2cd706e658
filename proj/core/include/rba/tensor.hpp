// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rba/error.hpp"

namespace rba {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

constexpr int kMaxRank = 5;

/// Dense N-dimensional array of scalars (rank <= 5), stored contiguously
/// with the last axis fastest. A TensorT is a cheap handle to shared
/// storage: copies alias the same data, which is what lets a recorded tape
/// accumulate gradients into the tensors a caller still holds. Data is
/// treated as immutable once an op has consumed it; the gradient buffer is
/// the only part mutated afterwards.
///
/// Volumetric data uses the axis order (batch N, channels C, depth D,
/// height H, width W).
template <typename S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(const Shape& shape, bool requires_grad = false) {
    return TensorT(shape, std::vector<S>(std::size_t(checked_numel(shape)), S(0)),
                   requires_grad);
  }

  static TensorT full(const Shape& shape, S value, bool requires_grad = false) {
    return TensorT(shape,
                   std::vector<S>(std::size_t(checked_numel(shape)), value),
                   requires_grad);
  }

  static TensorT from_data(const Shape& shape, std::vector<S> data,
                           bool requires_grad = false) {
    check(std::int64_t(data.size()) == checked_numel(shape),
          "tensor: data length ", data.size(), " does not match shape ",
          shape_str(shape));
    return TensorT(shape, std::move(data), requires_grad);
  }

  static TensorT scalar(S value, bool requires_grad = false) {
    return TensorT({1}, std::vector<S>{value}, requires_grad);
  }

  bool valid() const { return bool(st_); }
  const Shape& shape() const { return st_->shape; }
  int rank() const { return int(st_->shape.size()); }
  std::int64_t numel() const { return std::int64_t(st_->data.size()); }
  std::int64_t extent(int axis) const { return st_->shape[std::size_t(axis)]; }

  std::span<const S> data() const { return st_->data; }
  std::span<S> mutable_data() { return st_->data; }

  bool requires_grad() const { return st_->requires_grad; }
  void set_requires_grad(bool rg) { st_->requires_grad = rg; }

  bool has_grad() const { return !st_->grad.empty(); }
  std::span<const S> grad() const { return st_->grad; }
  std::span<S> mutable_grad() { return st_->grad; }

  /// Adds `values` into the gradient buffer, allocating it on first use.
  void accumulate_grad(std::span<const S> values) {
    check(std::int64_t(values.size()) == numel(),
          "tensor: gradient length ", values.size(),
          " does not match tensor shape ", shape_str(shape()));
    auto& g = st_->grad;
    if (g.empty()) g.assign(st_->data.size(), S(0));
    for (std::size_t i = 0; i < values.size(); ++i) g[i] += values[i];
  }

  /// Ensures the gradient buffer exists (zero-filled) and returns it.
  std::span<S> grad_buffer() {
    auto& g = st_->grad;
    if (g.empty()) g.assign(st_->data.size(), S(0));
    return g;
  }

  /// Drops the gradient buffer, returning the tensor to "no gradient".
  void clear_grad() { st_->grad.clear(); }

  S item() const {
    check(numel() == 1, "tensor: item() on non-scalar shape ",
          shape_str(shape()));
    return st_->data[0];
  }

  /// Element access by multi-index (row-major), for tests and small code.
  S at(std::initializer_list<std::int64_t> idx) const {
    return st_->data[std::size_t(linear_index(idx))];
  }
  S& at(std::initializer_list<std::int64_t> idx) {
    return st_->data[std::size_t(linear_index(idx))];
  }

  /// Unique creation id; later ids are always created after earlier ones,
  /// which keeps any recorded tape topologically ordered.
  std::uint64_t id() const { return st_->id; }

  /// Deep copy with fresh storage (and no gradient).
  TensorT clone() const {
    TensorT c(st_->shape, st_->data, st_->requires_grad);
    return c;
  }

  /// Identical storage values? (shape and bit pattern of every element)
  bool bit_equal(const TensorT& other) const {
    if (st_->shape != other.st_->shape) return false;
    return std::memcmp(st_->data.data(), other.st_->data.data(),
                       st_->data.size() * sizeof(S)) == 0;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<S> data;
    bool requires_grad = false;
    std::vector<S> grad;
    std::uint64_t id = 0;
  };

  TensorT(const Shape& shape, std::vector<S> data, bool requires_grad)
      : st_(std::make_shared<Storage>()) {
    check(shape.size() <= kMaxRank, "tensor: rank ", shape.size(),
          " exceeds the supported maximum of ", kMaxRank);
    st_->shape = shape;
    st_->data = std::move(data);
    st_->requires_grad = requires_grad;
    st_->id = next_id();
  }

  static std::int64_t checked_numel(const Shape& shape) {
    check(shape.size() <= kMaxRank, "tensor: rank ", shape.size(),
          " exceeds the supported maximum of ", kMaxRank);
    for (auto e : shape)
      check(e >= 1, "tensor: non-positive extent in shape ", shape_str(shape));
    return shape_numel(shape);
  }

  std::int64_t linear_index(std::initializer_list<std::int64_t> idx) const {
    check(int(idx.size()) == rank(), "tensor: index rank ", idx.size(),
          " does not match tensor rank ", rank());
    std::int64_t lin = 0;
    int axis = 0;
    for (auto i : idx) {
      check(i >= 0 && i < st_->shape[std::size_t(axis)],
            "tensor: index ", i, " out of range on axis ", axis);
      lin = lin * st_->shape[std::size_t(axis)] + i;
      ++axis;
    }
    return lin;
  }

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  std::shared_ptr<Storage> st_;
};

using Tensor = TensorT<float>;   // training precision
using Tensor64 = TensorT<double>;  // verification precision

}  // namespace rba
