// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rsalign/autograd.hpp"
#include "rsalign/gradcheck.hpp"
#include "rsalign/matrix.hpp"
#include "rsalign/nn.hpp"

namespace rsalign {

enum class SegmentKind : std::uint8_t { kImage, kSemantic, kQuery };

// Tag of one token position. `level` is meaningful only for semantic tokens
// and is zero-based.
struct Segment {
  SegmentKind kind = SegmentKind::kImage;
  std::uint32_t level = 0;

  static Segment image() { return {SegmentKind::kImage, 0}; }
  static Segment semantic(std::uint32_t level) { return {SegmentKind::kSemantic, level}; }
  static Segment query() { return {SegmentKind::kQuery, 0}; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

// Throws ShapeError unless every tag is in range and the layout is
// [Image..., Semantic(0)..., ..., Semantic(L-1)..., Query...] (any block may
// be empty).
void validate_segments(std::span<const Segment> segments, std::size_t num_levels);

struct SegmentedTokens {
  Matrix hidden;                  // T x d_h
  std::vector<Segment> segments;  // length T
};

struct RouteMask {
  std::size_t level = 0;
  std::vector<std::uint8_t> bits;  // 1 for Image, Query and Semantic(level) tokens
};

RouteMask build_mask(std::span<const Segment> segments, std::size_t level,
                     std::size_t num_levels);

// Bias-free rank-d_r bottleneck. Tokens are rows, so the map is x * U * V
// with U: d_h x d_r (rank reduction) and V: d_r x d_h (rank expansion).
struct LowRankExpert {
  Matrix down;  // U
  Matrix up;    // V

  std::size_t parameter_count() const { return down.size() + up.size(); }
};

struct ExpertLayerConfig {
  std::size_t hidden = 12;   // d_h
  std::size_t rank = 3;      // d_r
  std::size_t inner = 48;    // d_i of the parallel feed-forward
  std::size_t num_levels = 2;

  std::vector<std::string> problems() const;
};

// Per-level experts, the gating projection W_g (d_h x L) and the feed-forward
// network running in parallel with them.
struct ExpertLayerParams {
  std::vector<LowRankExpert> experts;
  Matrix gate;
  nn::FeedForwardParams ffn;

  // U ~ N(0, 0.02^2), V = 0, W_g = 0: the block starts as the plain FFN with
  // uniform gates.
  static ExpertLayerParams init(const ExpertLayerConfig& config, Rng& rng);
  std::size_t num_levels() const { return experts.size(); }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

// Parameter arithmetic for the low-rank expert and for a conventional gated
// MoE expert (gate, up and down projections).
constexpr std::uint64_t low_rank_expert_params(std::uint64_t d_h, std::uint64_t d_r) {
  return 2 * d_h * d_r;
}
constexpr std::uint64_t gated_ffn_expert_params(std::uint64_t d_h, std::uint64_t d_i) {
  return 3 * d_h * d_i;
}

Matrix expert_forward(const LowRankExpert& expert, const Matrix& masked_hidden);
// softmax(hidden[t] W_g) for image and query tokens, one-hot at the token's
// level for semantic tokens.
Matrix gate_weights(const Matrix& gate, const Matrix& hidden, std::span<const Segment> segments);
// h_s[t] = sum_l gates[t][l] * h_l[t]
Matrix merge_experts(std::span<const Matrix> expert_outputs, const Matrix& gates);

// Intermediate values of one block evaluation.
struct ExpertBlockTrace {
  Matrix ffn;
  std::vector<Matrix> expert_outputs;  // h^l, computed on mask-zeroed input
  Matrix gates;
  Matrix merged;  // h_s
  Matrix output;  // ffn + merged
};

// h = FFN(x) + sum_l g_l * E_l(M_l x)
Matrix expert_block_forward(const ExpertLayerParams& params, const SegmentedTokens& x);
ExpertBlockTrace expert_block_trace(const ExpertLayerParams& params, const SegmentedTokens& x);
ad::Var expert_block_forward(ad::Tape& tape, const ExpertLayerParams& params, ad::Var hidden,
                             std::span<const Segment> segments);

}  // namespace rsalign
