// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/prompter.hpp"

#include "rsalign/errors.hpp"
#include "rsalign/rng.hpp"

namespace rsalign {

namespace {

constexpr double kAggInitStd = 0.02;

void require_cols(const ad::Var& v, std::size_t cols, const char* what) {
  if (v.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(cols) +
                     " columns, got " + v.value().shape_string());
  }
}

void require_rows(const ad::Var& v, const char* what) {
  if (v.rows() == 0) throw ShapeError(std::string(what) + ": no tokens");
}

}  // namespace

std::vector<std::string> PrompterConfig::problems() const {
  std::vector<std::string> out;
  if (num_agg_tokens == 0) out.emplace_back("prompter: num_agg_tokens must be >= 1");
  if (dim == 0) out.emplace_back("prompter: dim must be >= 1");
  if (heads == 0 || (dim != 0 && dim % heads != 0)) {
    out.emplace_back("prompter: dim " + std::to_string(dim) + " not divisible by heads " +
                     std::to_string(heads));
  }
  if (level_dims.empty()) out.emplace_back("prompter: at least one visual level is required");
  for (std::size_t l = 0; l < level_dims.size(); ++l)
    if (level_dims[l] == 0) out.emplace_back("prompter: level " + std::to_string(l) + " has width 0");
  return out;
}

void PrompterConfig::validate() const {
  if (auto p = problems(); !p.empty()) throw ConfigError(std::move(p));
}

PrompterParams PrompterParams::init(const PrompterConfig& config, Rng& rng) {
  config.validate();
  PrompterParams p;
  p.agg_tokens = random_normal(config.num_agg_tokens, config.dim, kAggInitStd, rng);
  p.query_attn = nn::AttentionParams::init(config.dim, config.dim, config.dim, rng);
  p.semantic_attn = nn::AttentionParams::init(config.dim, config.dim, config.dim, rng);
  for (std::size_t d_l : config.level_dims)
    p.level_attn.push_back(nn::AttentionParams::init(config.dim, d_l, config.dim, rng));
  return p;
}

void PrompterParams::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({prefix + ".agg_tokens", &agg_tokens});
  query_attn.collect(prefix + ".query_attn", out);
  semantic_attn.collect(prefix + ".semantic_attn", out);
  for (std::size_t l = 0; l < level_attn.size(); ++l)
    level_attn[l].collect(prefix + ".level_attn." + std::to_string(l), out);
}

MultiLevelPrompter::MultiLevelPrompter(PrompterConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  Rng rng(seed);
  params_ = PrompterParams::init(config_, rng);
}

MultiLevelPrompter::MultiLevelPrompter(PrompterConfig config, PrompterParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const bool ok = params_.agg_tokens.rows() == config_.num_agg_tokens &&
                  params_.agg_tokens.cols() == config_.dim &&
                  params_.level_attn.size() == config_.num_levels();
  if (!ok) throw ShapeError("MultiLevelPrompter: parameters do not match configuration");
  for (std::size_t l = 0; l < config_.num_levels(); ++l) {
    if (params_.level_attn[l].wk.rows() != config_.level_dims[l]) {
      throw ShapeError("MultiLevelPrompter: level " + std::to_string(l) +
                       " key projection does not match level width");
    }
  }
}

namespace {

nn::AttentionOptions options_for(const PrompterConfig& c) {
  nn::AttentionOptions o;
  o.heads = c.heads;
  o.residual = c.residual;
  o.query_norm = c.query_norm;
  return o;
}

ad::Var aggregate_impl(ad::Tape& tape, const PrompterConfig& c, const PrompterParams& p,
                       ad::Var user_tokens) {
  require_cols(user_tokens, c.dim, "aggregate_query(user tokens)");
  require_rows(user_tokens, "aggregate_query(user tokens)");
  const std::array parts{tape.param(p.agg_tokens), user_tokens};
  ad::Var joint = ad::concat_rows(parts);
  ad::Var out = nn::self_attention(tape, p.query_attn, joint, options_for(c));
  return ad::slice_rows(out, 0, c.num_agg_tokens);
}

ad::Var semantics_impl(ad::Tape& tape, const PrompterConfig& c, const PrompterParams& p,
                       ad::Var z1, ad::Var semantic_tokens) {
  require_cols(z1, c.dim, "attend_semantics(queries)");
  require_cols(semantic_tokens, c.dim, "attend_semantics(semantic tokens)");
  require_rows(semantic_tokens, "attend_semantics(semantic tokens)");
  return nn::cross_attention(tape, p.semantic_attn, z1, semantic_tokens, options_for(c));
}

ad::Var level_impl(ad::Tape& tape, const PrompterConfig& c, const PrompterParams& p, ad::Var z2,
                   ad::Var visual, std::size_t level) {
  if (level >= c.num_levels()) {
    throw InvalidArgument("attend_level: level " + std::to_string(level) + " out of range [0, " +
                          std::to_string(c.num_levels()) + ")");
  }
  require_cols(z2, c.dim, "attend_level(queries)");
  require_cols(visual, c.level_dims[level], "attend_level(visual features)");
  require_rows(visual, "attend_level(visual features)");
  return nn::cross_attention(tape, p.level_attn[level], z2, visual, options_for(c));
}

}  // namespace

ad::Var build_prompt(ad::Tape& tape, const PrompterConfig& config, const PrompterParams& params,
                     ad::Var user_tokens, ad::Var semantic_tokens,
                     std::span<const ad::Var> visual_levels) {
  if (visual_levels.size() != config.num_levels()) {
    throw ShapeError("build_prompt: " + std::to_string(visual_levels.size()) +
                     " visual levels, expected " + std::to_string(config.num_levels()));
  }
  ad::Var z1 = aggregate_impl(tape, config, params, user_tokens);
  ad::Var z2 = semantics_impl(tape, config, params, z1, semantic_tokens);
  std::vector<ad::Var> blocks;
  blocks.reserve(visual_levels.size());
  for (std::size_t l = 0; l < visual_levels.size(); ++l)
    blocks.push_back(level_impl(tape, config, params, z2, visual_levels[l], l));
  return ad::concat_rows(blocks);
}

ad::Var MultiLevelPrompter::aggregate_query(ad::Tape& tape, ad::Var user_tokens) const {
  return aggregate_impl(tape, config_, params_, user_tokens);
}

ad::Var MultiLevelPrompter::attend_semantics(ad::Tape& tape, ad::Var z1,
                                             ad::Var semantic_tokens) const {
  return semantics_impl(tape, config_, params_, z1, semantic_tokens);
}

ad::Var MultiLevelPrompter::attend_level(ad::Tape& tape, ad::Var z2, ad::Var visual,
                                         std::size_t level) const {
  return level_impl(tape, config_, params_, z2, visual, level);
}

ad::Var MultiLevelPrompter::build_prompt(ad::Tape& tape, ad::Var user_tokens,
                                         ad::Var semantic_tokens,
                                         std::span<const ad::Var> visual_levels) const {
  return rsalign::build_prompt(tape, config_, params_, user_tokens, semantic_tokens,
                               visual_levels);
}

Matrix MultiLevelPrompter::aggregate_query(const Matrix& user_tokens) const {
  ad::Tape tape(false);
  return aggregate_query(tape, tape.constant(user_tokens)).value();
}

Matrix MultiLevelPrompter::attend_semantics(const Matrix& z1, const Matrix& semantic_tokens) const {
  ad::Tape tape(false);
  return attend_semantics(tape, tape.constant(z1), tape.constant(semantic_tokens)).value();
}

Matrix MultiLevelPrompter::attend_level(const Matrix& z2, const Matrix& visual,
                                        std::size_t level) const {
  ad::Tape tape(false);
  return attend_level(tape, tape.constant(z2), tape.constant(visual), level).value();
}

Matrix MultiLevelPrompter::build_prompt(const PromptInputs& inputs) const {
  ad::Tape tape(false);
  std::vector<ad::Var> levels;
  for (const auto& m : inputs.visual_levels) levels.push_back(tape.constant(m));
  return build_prompt(tape, tape.constant(inputs.user_tokens),
                      tape.constant(inputs.semantic_tokens), levels)
      .value();
}

}  // namespace rsalign
