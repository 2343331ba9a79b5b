// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/nn.hpp"

#include <cmath>

#include "rsalign/errors.hpp"

namespace rsalign::nn {

Matrix init_linear(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return random_normal(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

LayerNormParams LayerNormParams::init(std::size_t dim) {
  return {Matrix(1, dim, 1.0), Matrix(1, dim, 0.0)};
}

void LayerNormParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".gain", &gain});
  out.push_back({prefix + ".bias", &bias});
}

ad::Var layer_norm(ad::Tape& tape, const LayerNormParams& p, ad::Var x) {
  return ad::layer_norm(x, tape.param(p.gain), tape.param(p.bias));
}

AttentionParams AttentionParams::init(std::size_t d_query, std::size_t d_context,
                                      std::size_t dim, Rng& rng) {
  AttentionParams p;
  p.wq = init_linear(d_query, dim, rng);
  p.wk = init_linear(d_context, dim, rng);
  p.wv = init_linear(d_context, dim, rng);
  p.wo = init_linear(dim, dim, rng);
  p.norm = LayerNormParams::init(d_query);
  return p;
}

void AttentionParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".wq", &wq});
  out.push_back({prefix + ".wk", &wk});
  out.push_back({prefix + ".wv", &wv});
  out.push_back({prefix + ".wo", &wo});
  norm.collect(prefix + ".norm", out);
}

ad::Var multi_head_core(ad::Var q, ad::Var k, ad::Var v, std::size_t heads, bool causal) {
  const std::size_t dim = q.cols();
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention: dimension " + std::to_string(dim) +
                     " not divisible by head count " + std::to_string(heads));
  }
  if (k.cols() != dim || v.cols() != dim || k.rows() != v.rows()) {
    throw ShapeError("attention: q " + q.value().shape_string() + ", k " +
                     k.value().shape_string() + ", v " + v.value().shape_string());
  }
  const std::size_t hd = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<ad::Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    ad::Var qh = heads == 1 ? q : ad::slice_cols(q, h * hd, (h + 1) * hd);
    ad::Var kh = heads == 1 ? k : ad::slice_cols(k, h * hd, (h + 1) * hd);
    ad::Var vh = heads == 1 ? v : ad::slice_cols(v, h * hd, (h + 1) * hd);
    ad::Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    if (causal) scores = ad::causal_fill(scores);
    outs.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  return heads == 1 ? outs.front() : ad::concat_cols(outs);
}

ad::Var cross_attention(ad::Tape& tape, const AttentionParams& p, ad::Var queries,
                        ad::Var context, const AttentionOptions& opts) {
  if (queries.cols() != p.wq.rows()) {
    throw ShapeError("cross_attention: queries " + queries.value().shape_string() +
                     " vs query projection " + p.wq.shape_string());
  }
  if (context.cols() != p.wk.rows()) {
    throw ShapeError("cross_attention: context " + context.value().shape_string() +
                     " vs key projection " + p.wk.shape_string());
  }
  ad::Var qin = opts.query_norm ? layer_norm(tape, p.norm, queries) : queries;
  ad::Var q = ad::matmul(qin, tape.param(p.wq));
  ad::Var k = ad::matmul(context, tape.param(p.wk));
  ad::Var v = ad::matmul(context, tape.param(p.wv));
  ad::Var out = ad::matmul(multi_head_core(q, k, v, opts.heads, opts.causal), tape.param(p.wo));
  return opts.residual ? ad::add(queries, out) : out;
}

ad::Var self_attention(ad::Tape& tape, const AttentionParams& p, ad::Var x,
                       const AttentionOptions& opts) {
  if (x.cols() != p.wq.rows() || x.cols() != p.wk.rows()) {
    throw ShapeError("self_attention: input " + x.value().shape_string() +
                     " vs projections " + p.wq.shape_string());
  }
  ad::Var xin = opts.query_norm ? layer_norm(tape, p.norm, x) : x;
  ad::Var q = ad::matmul(xin, tape.param(p.wq));
  ad::Var k = ad::matmul(xin, tape.param(p.wk));
  ad::Var v = ad::matmul(xin, tape.param(p.wv));
  ad::Var out = ad::matmul(multi_head_core(q, k, v, opts.heads, opts.causal), tape.param(p.wo));
  return opts.residual ? ad::add(x, out) : out;
}

MlpParams MlpParams::init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
  return {init_linear(in, hidden, rng), Matrix(1, hidden), init_linear(hidden, out, rng),
          Matrix(1, out)};
}

void MlpParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w1", &w1});
  out.push_back({prefix + ".b1", &b1});
  out.push_back({prefix + ".w2", &w2});
  out.push_back({prefix + ".b2", &b2});
}

ad::Var mlp(ad::Tape& tape, const MlpParams& p, ad::Var x) {
  ad::Var h = ad::gelu(ad::add_bias(ad::matmul(x, tape.param(p.w1)), tape.param(p.b1)));
  return ad::add_bias(ad::matmul(h, tape.param(p.w2)), tape.param(p.b2));
}

FeedForwardParams FeedForwardParams::init(std::size_t dim, std::size_t inner, Rng& rng) {
  return {init_linear(dim, inner, rng), init_linear(dim, inner, rng), init_linear(inner, dim, rng)};
}

void FeedForwardParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".w_gate", &w_gate});
  out.push_back({prefix + ".w_up", &w_up});
  out.push_back({prefix + ".w_down", &w_down});
}

ad::Var feed_forward(ad::Tape& tape, const FeedForwardParams& p, ad::Var x) {
  ad::Var gate = ad::silu(ad::matmul(x, tape.param(p.w_gate)));
  ad::Var up = ad::matmul(x, tape.param(p.w_up));
  return ad::matmul(ad::hadamard(gate, up), tape.param(p.w_down));
}

}  // namespace rsalign::nn
