// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/expert_layer.hpp"

#include "rsalign/errors.hpp"
#include "rsalign/rng.hpp"

namespace rsalign {

namespace {

constexpr double kExpertInitStd = 0.02;

int layout_rank(const Segment& s, std::size_t num_levels) {
  switch (s.kind) {
    case SegmentKind::kImage:
      return 0;
    case SegmentKind::kSemantic:
      return 1 + static_cast<int>(s.level);
    case SegmentKind::kQuery:
      return 1 + static_cast<int>(num_levels);
  }
  return -1;
}

void check_expert_shapes(const LowRankExpert& e, std::size_t hidden) {
  if (e.down.rows() != hidden || e.up.cols() != hidden || e.down.cols() != e.up.rows()) {
    throw ShapeError("expert: U " + e.down.shape_string() + " and V " + e.up.shape_string() +
                     " do not form a d_h=" + std::to_string(hidden) + " bottleneck");
  }
}

// Constant factors that turn a softmax over experts into the gating rule:
// keep[t] is 1 for image/query rows, fixed[t] is the semantic one-hot.
std::pair<Matrix, Matrix> gating_constants(std::span<const Segment> segments,
                                           std::size_t num_levels) {
  Matrix keep(segments.size(), num_levels, 1.0);
  Matrix fixed(segments.size(), num_levels, 0.0);
  for (std::size_t t = 0; t < segments.size(); ++t) {
    if (segments[t].kind != SegmentKind::kSemantic) continue;
    for (auto& v : keep.row(t)) v = 0.0;
    fixed(t, segments[t].level) = 1.0;
  }
  return {std::move(keep), std::move(fixed)};
}

ad::Var gate_var(ad::Tape& tape, ad::Var gate, ad::Var hidden, std::span<const Segment> segments) {
  const std::size_t levels = gate.cols();
  auto [keep, fixed] = gating_constants(segments, levels);
  ad::Var soft = ad::softmax_rows(ad::matmul(hidden, gate));
  return ad::add(ad::hadamard(soft, tape.constant(std::move(keep))), tape.constant(std::move(fixed)));
}

ad::Var merge_var(std::span<const ad::Var> outputs, ad::Var gates) {
  ad::Var merged = ad::mul_rows(outputs[0], ad::slice_cols(gates, 0, 1));
  for (std::size_t l = 1; l < outputs.size(); ++l)
    merged = ad::add(merged, ad::mul_rows(outputs[l], ad::slice_cols(gates, l, l + 1)));
  return merged;
}

}  // namespace

void validate_segments(std::span<const Segment> segments, std::size_t num_levels) {
  int prev = 0;
  for (std::size_t t = 0; t < segments.size(); ++t) {
    const Segment& s = segments[t];
    if (s.kind == SegmentKind::kSemantic && s.level >= num_levels) {
      throw ShapeError("segment " + std::to_string(t) + ": semantic level " +
                       std::to_string(s.level) + " outside [0, " + std::to_string(num_levels) + ")");
    }
    const int rank = layout_rank(s, num_levels);
    if (rank < prev) {
      throw ShapeError("segment " + std::to_string(t) +
                       ": layout must be image, semantic levels in order, then query");
    }
    prev = rank;
  }
}

RouteMask build_mask(std::span<const Segment> segments, std::size_t level, std::size_t num_levels) {
  if (level >= num_levels) {
    throw InvalidArgument("build_mask: level " + std::to_string(level) + " outside [0, " +
                          std::to_string(num_levels) + ")");
  }
  validate_segments(segments, num_levels);
  RouteMask mask{level, std::vector<std::uint8_t>(segments.size())};
  for (std::size_t t = 0; t < segments.size(); ++t) {
    const Segment& s = segments[t];
    mask.bits[t] = (s.kind != SegmentKind::kSemantic || s.level == level) ? 1 : 0;
  }
  return mask;
}

std::vector<std::string> ExpertLayerConfig::problems() const {
  std::vector<std::string> out;
  if (hidden == 0) out.emplace_back("expert layer: d_h must be >= 1");
  if (rank == 0) out.emplace_back("expert layer: d_r must be >= 1");
  if (rank >= hidden) {
    out.emplace_back("expert layer: d_r (" + std::to_string(rank) + ") must be < d_h (" +
                     std::to_string(hidden) + ")");
  }
  if (inner == 0) out.emplace_back("expert layer: d_i must be >= 1");
  if (num_levels == 0) out.emplace_back("expert layer: L must be >= 1");
  return out;
}

ExpertLayerParams ExpertLayerParams::init(const ExpertLayerConfig& config, Rng& rng) {
  if (auto p = config.problems(); !p.empty()) throw ConfigError(std::move(p));
  ExpertLayerParams p;
  for (std::size_t l = 0; l < config.num_levels; ++l) {
    p.experts.push_back({random_normal(config.hidden, config.rank, kExpertInitStd, rng),
                         Matrix(config.rank, config.hidden)});
  }
  p.gate = Matrix(config.hidden, config.num_levels);
  p.ffn = nn::FeedForwardParams::init(config.hidden, config.inner, rng);
  return p;
}

void ExpertLayerParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  for (std::size_t l = 0; l < experts.size(); ++l) {
    out.push_back({prefix + ".expert." + std::to_string(l) + ".down", &experts[l].down});
    out.push_back({prefix + ".expert." + std::to_string(l) + ".up", &experts[l].up});
  }
  out.push_back({prefix + ".gate", &gate});
  ffn.collect(prefix + ".ffn", out);
}

Matrix expert_forward(const LowRankExpert& expert, const Matrix& masked_hidden) {
  check_expert_shapes(expert, masked_hidden.cols());
  return matmul(matmul(masked_hidden, expert.down), expert.up);
}

Matrix gate_weights(const Matrix& gate, const Matrix& hidden, std::span<const Segment> segments) {
  if (gate.rows() != hidden.cols() || segments.size() != hidden.rows()) {
    throw ShapeError("gate_weights: W_g " + gate.shape_string() + ", hidden " +
                     hidden.shape_string() + ", " + std::to_string(segments.size()) + " segments");
  }
  validate_segments(segments, gate.cols());
  ad::Tape tape(false);
  return gate_var(tape, tape.constant(gate), tape.constant(hidden), segments).value();
}

Matrix merge_experts(std::span<const Matrix> expert_outputs, const Matrix& gates) {
  if (expert_outputs.empty() || gates.cols() != expert_outputs.size()) {
    throw ShapeError("merge_experts: " + std::to_string(expert_outputs.size()) +
                     " expert outputs for gates " + gates.shape_string());
  }
  ad::Tape tape(false);
  std::vector<ad::Var> outs;
  for (const Matrix& h : expert_outputs) {
    if (!h.same_shape(expert_outputs[0]) || h.rows() != gates.rows()) {
      throw ShapeError("merge_experts: expert output " + h.shape_string() + " vs gates " +
                       gates.shape_string());
    }
    outs.push_back(tape.constant(h));
  }
  return merge_var(outs, tape.constant(gates)).value();
}

ad::Var expert_block_forward(ad::Tape& tape, const ExpertLayerParams& params, ad::Var hidden,
                             std::span<const Segment> segments) {
  const std::size_t levels = params.num_levels();
  if (levels == 0) throw ShapeError("expert block: no experts");
  if (segments.size() != hidden.rows()) {
    throw ShapeError("expert block: " + std::to_string(segments.size()) + " segments for hidden " +
                     hidden.value().shape_string());
  }
  if (params.gate.rows() != hidden.cols() || params.gate.cols() != levels) {
    throw ShapeError("expert block: gate " + params.gate.shape_string() + " for hidden width " +
                     std::to_string(hidden.cols()) + " and " + std::to_string(levels) + " levels");
  }
  validate_segments(segments, levels);
  std::vector<ad::Var> outputs;
  outputs.reserve(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    const auto& e = params.experts[l];
    check_expert_shapes(e, hidden.cols());
    const RouteMask mask = build_mask(segments, l, levels);
    ad::Var masked = ad::mask_rows(hidden, mask.bits);
    outputs.push_back(ad::matmul(ad::matmul(masked, tape.param(e.down)), tape.param(e.up)));
  }
  ad::Var gates = gate_var(tape, tape.param(params.gate), hidden, segments);
  return ad::add(nn::feed_forward(tape, params.ffn, hidden), merge_var(outputs, gates));
}

ExpertBlockTrace expert_block_trace(const ExpertLayerParams& params, const SegmentedTokens& x) {
  if (x.segments.size() != x.hidden.rows()) {
    throw ShapeError("expert block: " + std::to_string(x.segments.size()) +
                     " segments for hidden " + x.hidden.shape_string());
  }
  const std::size_t levels = params.num_levels();
  validate_segments(x.segments, levels);
  ExpertBlockTrace trace;
  for (std::size_t l = 0; l < levels; ++l) {
    const RouteMask mask = build_mask(x.segments, l, levels);
    Matrix masked(x.hidden.rows(), x.hidden.cols());
    for (std::size_t t = 0; t < masked.rows(); ++t)
      if (mask.bits[t])
        std::copy(x.hidden.row(t).begin(), x.hidden.row(t).end(), masked.row(t).begin());
    trace.expert_outputs.push_back(expert_forward(params.experts[l], masked));
  }
  trace.gates = gate_weights(params.gate, x.hidden, x.segments);
  trace.merged = merge_experts(trace.expert_outputs, trace.gates);
  {
    ad::Tape tape(false);
    trace.ffn = nn::feed_forward(tape, params.ffn, tape.constant(x.hidden)).value();
  }
  trace.output = trace.ffn + trace.merged;
  return trace;
}

Matrix expert_block_forward(const ExpertLayerParams& params, const SegmentedTokens& x) {
  ad::Tape tape(false);
  return expert_block_forward(tape, params, tape.constant(x.hidden), x.segments).value();
}

}  // namespace rsalign
