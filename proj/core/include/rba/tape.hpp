// Copyright (c) 2026 the rba authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <unordered_set>
#include <vector>

#include "rba/tensor.hpp"

namespace rba {

/// Records the forward computation of one training step for reverse-mode
/// differentiation. Each node holds the op name, the ids of its input and
/// output tensors, and a closure that pulls the output gradient and
/// accumulates into the inputs (the closure owns whatever forward context
/// the backward pass needs). Nodes are appended in execution order, so the
/// list is topologically sorted by construction: every input id precedes
/// the output id of its node.
///
/// A tape is confined to a single training worker; create one per step and
/// discard it after backward().
template <typename S>
class TapeT {
 public:
  struct Node {
    const char* op;
    std::vector<std::uint64_t> input_ids;
    std::uint64_t output_id;
    TensorT<S> output;  // handle kept alive for grad lookup
    std::function<void()> backward;
  };

  void record(const char* op, std::vector<TensorT<S>> inputs,
              const TensorT<S>& output, std::function<void()> backward) {
    Node node;
    node.op = op;
    node.input_ids.reserve(inputs.size());
    for (const auto& t : inputs) node.input_ids.push_back(t.id());
    node.output_id = output.id();
    node.output = output;
    node.backward = std::move(backward);
    output_ids_.insert(node.output_id);
    nodes_.push_back(std::move(node));
  }

  bool has_output(std::uint64_t id) const { return output_ids_.contains(id); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }

  void clear() {
    nodes_.clear();
    output_ids_.clear();
  }

  /// Reverse pass from `loss` (a scalar produced by this tape). Seeds the
  /// loss gradient with 1, then visits every node exactly once in reverse
  /// recording order. Tensors flagged requires_grad that are reachable from
  /// the loss end up with an accumulated gradient; everything else keeps no
  /// gradient buffer at all.
  void backward(TensorT<S>& loss) {
    check(loss.valid(), "backward: loss tensor is empty");
    check(loss.numel() == 1, "backward: loss must be a scalar, got shape ",
          shape_str(loss.shape()));
    check(has_output(loss.id()),
          "backward: loss is not an output of this tape");
    loss.grad_buffer()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.has_grad()) continue;  // not reachable from the loss
      it->backward();
    }
  }

 private:
  std::vector<Node> nodes_;
  std::unordered_set<std::uint64_t> output_ids_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

/// Free-function spelling of the reverse pass.
template <typename S>
void backward(TapeT<S>& tape, TensorT<S>& loss) {
  tape.backward(loss);
}

}  // namespace rba
