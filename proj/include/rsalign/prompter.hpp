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

struct PrompterConfig {
  std::size_t num_agg_tokens = 4;         // N_a
  std::size_t dim = 16;                   // token width d
  std::size_t heads = 2;
  std::vector<std::size_t> level_dims{16, 16, 16};  // feature width per visual level
  bool residual = true;
  bool query_norm = true;

  std::size_t num_levels() const noexcept { return level_dims.size(); }
  std::size_t output_rows() const noexcept { return num_agg_tokens * level_dims.size(); }
  // Problems found, empty when valid.
  std::vector<std::string> problems() const;
  void validate() const;
};

// Aggregation tokens plus one attention block per stage: the query
// self-attention, the semantic cross-attention and one cross-attention per
// visual level. Level blocks project keys and values from d_l to d.
struct PrompterParams {
  Matrix agg_tokens;  // N_a x d, N(0, 0.02^2) at init
  nn::AttentionParams query_attn;
  nn::AttentionParams semantic_attn;
  std::vector<nn::AttentionParams> level_attn;

  static PrompterParams init(const PrompterConfig& config, Rng& rng);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

struct PromptInputs {
  Matrix user_tokens;                 // N_u x d
  Matrix semantic_tokens;             // N_s x d
  std::vector<Matrix> visual_levels;  // level l: N_l x d_l
};

// Graph form for parameters owned elsewhere, such as inside a full model.
ad::Var build_prompt(ad::Tape& tape, const PrompterConfig& config, const PrompterParams& params,
                     ad::Var user_tokens, ad::Var semantic_tokens,
                     std::span<const ad::Var> visual_levels);

// Multi-level visual prompter. The aggregation tokens first attend jointly
// with the user query, then to the retrieved semantic tokens, and finally to
// each visual level separately. Level l of the output is rows
// [l * N_a, (l + 1) * N_a). Levels are zero-based.
class MultiLevelPrompter {
 public:
  MultiLevelPrompter(PrompterConfig config, std::uint64_t seed);
  MultiLevelPrompter(PrompterConfig config, PrompterParams params);

  const PrompterConfig& config() const noexcept { return config_; }
  const PrompterParams& params() const noexcept { return params_; }
  PrompterParams& params() noexcept { return params_; }

  Matrix aggregate_query(const Matrix& user_tokens) const;
  Matrix attend_semantics(const Matrix& z1, const Matrix& semantic_tokens) const;
  Matrix attend_level(const Matrix& z2, const Matrix& visual, std::size_t level) const;
  Matrix build_prompt(const PromptInputs& inputs) const;

  ad::Var aggregate_query(ad::Tape& tape, ad::Var user_tokens) const;
  ad::Var attend_semantics(ad::Tape& tape, ad::Var z1, ad::Var semantic_tokens) const;
  ad::Var attend_level(ad::Tape& tape, ad::Var z2, ad::Var visual, std::size_t level) const;
  ad::Var build_prompt(ad::Tape& tape, ad::Var user_tokens, ad::Var semantic_tokens,
                       std::span<const ad::Var> visual_levels) const;

 private:
  PrompterConfig config_;
  PrompterParams params_;
};

}  // namespace rsalign
