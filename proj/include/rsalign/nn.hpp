// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "rsalign/autograd.hpp"
#include "rsalign/gradcheck.hpp"
#include "rsalign/matrix.hpp"
#include "rsalign/rng.hpp"

// Layers shared by the prompter, the visual encoder and the language model.
// Weights are stored input-major: a projection from n to m features is an
// n x m matrix applied as x * W to row-token matrices.
namespace rsalign::nn {

// Gaussian with std 1/sqrt(fan_in).
Matrix init_linear(std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct LayerNormParams {
  Matrix gain;  // 1 x d
  Matrix bias;  // 1 x d

  static LayerNormParams init(std::size_t dim);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

ad::Var layer_norm(ad::Tape& tape, const LayerNormParams& p, ad::Var x);

// Multi-head attention with an output projection. Heads split the projected
// feature dimension into equal contiguous column blocks.
struct AttentionParams {
  Matrix wq;  // d_query x d
  Matrix wk;  // d_context x d
  Matrix wv;  // d_context x d
  Matrix wo;  // d x d
  LayerNormParams norm;  // applied to the query stream

  static AttentionParams init(std::size_t d_query, std::size_t d_context, std::size_t dim,
                              Rng& rng);
  std::size_t dim() const { return wo.cols(); }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

struct AttentionOptions {
  std::size_t heads = 1;
  bool causal = false;
  bool residual = true;
  bool query_norm = true;
};

// Attention of `queries` over `context`; output has queries.rows rows.
// With residual on, the (un-normalized) queries are added to the output, which
// requires queries.cols == dim.
ad::Var cross_attention(ad::Tape& tape, const AttentionParams& p, ad::Var queries,
                        ad::Var context, const AttentionOptions& opts);

// Pre-norm self-attention: the normalized input serves as query, key and value.
ad::Var self_attention(ad::Tape& tape, const AttentionParams& p, ad::Var x,
                       const AttentionOptions& opts);

// Attention core without projections or normalization, exposed for tests:
// concat_h softmax(Q_h K_hᵀ / sqrt(d/heads)) V_h.
ad::Var multi_head_core(ad::Var q, ad::Var k, ad::Var v, std::size_t heads, bool causal);

// GELU MLP: gelu(x W1 + b1) W2 + b2.
struct MlpParams {
  Matrix w1, b1, w2, b2;

  static MlpParams init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

ad::Var mlp(ad::Tape& tape, const MlpParams& p, ad::Var x);

// Gated feed-forward: (silu(x Wg) ⊙ x Wu) Wd, bias-free. Holds 3·d·d_inner
// weights.
struct FeedForwardParams {
  Matrix w_gate;  // d x d_inner
  Matrix w_up;    // d x d_inner
  Matrix w_down;  // d_inner x d

  static FeedForwardParams init(std::size_t dim, std::size_t inner, Rng& rng);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

ad::Var feed_forward(ad::Tape& tape, const FeedForwardParams& p, ad::Var x);

}  // namespace rsalign::nn
