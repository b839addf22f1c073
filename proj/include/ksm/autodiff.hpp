// Copyright 2026 The KSM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Tape-based reverse-mode automatic differentiation over row-major matrices.
//
// A Tape records every operation in creation order. `Tape::backward` walks the
// tape in reverse and adds d(loss)/d(parameter) into `Tensor::grad` of every
// parameter leaf. Gradients accumulate: calling backward twice (on the same
// tape or on two tapes) without `ParameterStore::zero_grad` in between sums
// both contributions. The tape keeps its nodes after backward, so the same
// graph may be differentiated again; drop the Tape to release it.
//
// A tape and the Vars it hands out are confined to one thread.

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "ksm/tensor.hpp"

namespace ksm::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  /// Gradient of the last backward pass; empty if the node was not reached.
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1 x 1 node.
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the upstream gradient of the node being propagated.
  using Backprop = std::function<void(Tape&, const Mat& upstream)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf without gradient.
  Var constant(Mat value);
  /// Leaf bound to a parameter; one node per tensor per tape.
  Var parameter(Tensor& p);

  /// Requires a 1 x 1 loss recorded on this tape.
  void backward(const Var& loss);

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Records an op result. `backprop` is invoked only if some input needs grad.
  Var record(Mat value, std::initializer_list<Var> inputs, Backprop backprop);
  Var record(Mat value, std::span<const Var> inputs, Backprop backprop);

  /// Adds `delta` into the gradient of node `id` (no-op for constants).
  void accumulate(std::size_t id, const Mat& delta);
  template <typename Expr>
  void accumulate_expr(std::size_t id, const Expr& delta) {
    if (!nodes_[id].needs_grad) return;
    Mat& g = grad_slot(id);
    g += delta;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backprop backprop;
    Tensor* param = nullptr;
    bool needs_grad = false;
  };

  Mat& grad_slot(std::size_t id);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Op vocabulary. All inputs must live on the same tape.

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
/// Elementwise sum; `b` may also be a 1 x cols row broadcast over rows of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise (Hadamard) product of equal shapes.
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);

/// Concatenation along the last axis; all parts share the row count.
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);

/// Mean over `axis` (0 -> 1 x cols, 1 -> rows x 1).
Var mean(const Var& a, int axis);
/// Max over `axis`; ties send the gradient to the first maximal entry.
Var max(const Var& a, int axis);
/// Sum of all entries as 1 x 1.
Var sum(const Var& a);

Var softmax(const Var& a, int axis);
/// Normalizes each row; gamma and beta are 1 x cols.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps);

/// Inverted dropout: kept entries are scaled by 1/(1-rate). Identity when
/// `active` is false or rate == 0.
Var dropout(const Var& x, double rate, std::mt19937_64& rng, bool active);

/// out.row(k) = a.row(index[k])
Var gather_rows(const Var& a, std::span<const Eigen::Index> index);
/// out.col(k) = a.col(index[k])
Var gather_cols(const Var& a, std::span<const Eigen::Index> index);
/// Stacks `rows` copies of a 1 x cols row.
Var repeat_rows(const Var& row, Eigen::Index rows);

/// Natural log with inputs clamped below at `floor` (zero gradient there).
Var log(const Var& a, double floor = 1e-12);
/// Row-major reinterpretation to rows x cols.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

}  // namespace ksm::ad
