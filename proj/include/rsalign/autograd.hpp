// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "rsalign/matrix.hpp"

// Minimal reverse-mode differentiation over Matrix values.
//
// A Tape records every intermediate value together with a closure that pushes
// the node's gradient onto its parents. Parameters are bound by address, so a
// module can bind the same weight several times and receive one summed
// gradient. A tape built with record=false evaluates forward only.
namespace rsalign::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  // Receives the node's own output value and its accumulated gradient.
  using Backward = std::function<void(Tape&, const Matrix& out, const Matrix& grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix m);
  Var param(const Matrix& m);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool recording() const noexcept { return record_; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  // Seeds d(loss)/d(loss) = 1; loss must be 1x1.
  void backward(Var loss);

  // Gradient with respect to a bound parameter (zeros when the parameter was
  // never reached).
  Matrix param_grad(const Matrix& p) const;
  std::vector<const Matrix*> bound_params() const;

  // Used by op implementations.
  Var push(Matrix value, std::span<const std::size_t> parents, Backward back);
  void accumulate(std::size_t id, const Matrix& g);
  Matrix& grad_slot(std::size_t id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool needs_grad = false;
    Backward back;
  };
  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<const Matrix*, std::size_t> param_nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var add_bias(Var a, Var bias);     // bias is 1 x a.cols, added to every row
Var scale(Var a, double s);
Var scale_by(Var a, Var s);        // s is 1x1
Var hadamard(Var a, Var b);
Var mul_rows(Var a, Var col);      // col is a.rows x 1; row t scaled by col[t]
// Rows with keep[t] == 0 become exact zeros.
Var mask_rows(Var a, std::span<const std::uint8_t> keep);
Var exp(Var a);
Var tanh(Var a);
Var gelu(Var a);                   // tanh approximation
Var silu(Var a);
Var softmax_rows(Var a);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var l2_normalize_rows(Var a);
Var transpose(Var a);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var table, std::span<const int> ids);
// Entries above the diagonal are replaced by a large negative constant.
Var causal_fill(Var scores);
Var sum(Var a);
// Mean softmax cross-entropy over rows whose target is >= 0; 1x1 result.
// Rows with target < 0 are ignored. Throws if no row is counted.
Var cross_entropy(Var logits, std::span<const int> targets);

}  // namespace rsalign::ad
