// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsalign/autograd.hpp"
#include "rsalign/expert_layer.hpp"
#include "rsalign/gradcheck.hpp"
#include "rsalign/matrix.hpp"
#include "rsalign/nn.hpp"
#include "rsalign/prompter.hpp"

namespace rsalign {

// Sizes of the toy vision-language model. Text uses a byte vocabulary: ids
// below 256 are raw bytes and the last two ids are the separator and the end
// token, so text encoding needs vocab == 258. Smaller vocabularies are usable
// with explicit token ids.
struct ModelConfig {
  std::size_t patch_dim = 8;        // features per image patch
  std::size_t visual_dim = 16;      // d_v
  std::size_t visual_blocks = 3;    // M
  std::size_t visual_heads = 2;
  std::size_t hidden = 32;          // d_h
  std::size_t lm_blocks = 2;
  std::size_t lm_heads = 2;
  std::size_t ffn_inner = 0;        // d_i; 0 means 4 * d_h
  std::size_t expert_rank = 8;      // d_r
  std::size_t expert_stride = 4;    // blocks 0, stride, 2*stride, ... carry experts
  std::size_t num_levels = 3;       // L
  std::size_t num_agg_tokens = 4;   // N_a
  std::size_t prompter_heads = 2;
  std::size_t vocab = 258;
  std::size_t max_positions = 256;
  std::size_t max_semantic_tokens = 512;

  static constexpr std::size_t kByteVocab = 258;

  std::size_t inner() const noexcept { return ffn_inner == 0 ? 4 * hidden : ffn_inner; }
  int sep_id() const noexcept { return static_cast<int>(vocab) - 2; }
  int eos_id() const noexcept { return static_cast<int>(vocab) - 1; }
  // Encoder depth after which level l is read, floor((l + 1) * M / L).
  std::vector<std::size_t> tap_depths() const;
  std::vector<std::size_t> expert_block_indices() const;
  PrompterConfig prompter() const;
  ExpertLayerConfig expert_layer() const;

  std::vector<std::string> problems() const;
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Byte encoding of text. Throws InvalidArgument unless vocab is the byte
// vocabulary.
std::vector<int> encode_text(const ModelConfig& config, std::string_view text);
// Inverse of encode_text; special ids are dropped.
std::string decode_text(const ModelConfig& config, std::span<const int> ids);
// Retrieved descriptions in rank order, joined by the separator and cut to
// max_semantic_tokens. An empty list yields a lone separator.
std::vector<int> semantic_token_ids(const ModelConfig& config, std::span<const std::string> texts);

struct VisualBlockParams {
  nn::AttentionParams attn;
  nn::LayerNormParams mlp_norm;
  nn::MlpParams mlp;
};

struct VisualEncoderParams {
  Matrix patch_embed;  // patch_dim x d_v
  Matrix patch_bias;   // 1 x d_v
  std::vector<VisualBlockParams> blocks;

  static VisualEncoderParams init(const ModelConfig& config, Rng& rng);
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

// Decoder block. Blocks without experts leave layer.experts empty and use
// layer.ffn alone.
struct LmBlockParams {
  nn::AttentionParams attn;
  nn::LayerNormParams ffn_norm;
  ExpertLayerParams layer;

  bool has_experts() const noexcept { return !layer.experts.empty(); }
  void collect(const std::string& prefix, std::vector<ParamRef>& out);
};

struct ModelParams {
  VisualEncoderParams visual;
  PrompterParams prompter;
  Matrix projector;       // d_v x d_h, image tokens into the LM
  Matrix projector_bias;  // 1 x d_h
  Matrix embed;           // vocab x d_h
  Matrix positions;       // max_positions x d_h
  std::vector<LmBlockParams> blocks;
  nn::LayerNormParams final_norm;
  Matrix lm_head;  // d_h x vocab

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Trainable groups. collect_all is the concatenation in checkpoint order.
  void collect_visual(std::vector<ParamRef>& out);
  void collect_prompter(std::vector<ParamRef>& out);
  void collect_projector(std::vector<ParamRef>& out);
  void collect_lm(std::vector<ParamRef>& out);
  std::vector<ParamRef> collect_all();
};

// One training or inference example in token form.
struct Sample {
  Matrix patches;              // N_p x patch_dim
  std::vector<int> query;      // without the separator
  std::vector<int> response;   // without the end token
  std::vector<int> semantics;  // see semantic_token_ids
};

struct SequenceLayout {
  std::vector<Segment> segments;
  std::vector<int> token_ids;  // -1 for image and prompt rows
};

struct LmOutput {
  ad::Var logits;                // T x vocab
  std::optional<ad::Var> loss;   // mean cross-entropy over the targets, if any
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ModelParams params);

  const ModelConfig& config() const noexcept { return config_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& params() noexcept { return params_; }

  // Hidden states after each tap depth; L matrices of N_p x d_v.
  std::vector<Matrix> encode_multilevel(const Matrix& patches) const;
  std::vector<ad::Var> encode_multilevel(ad::Tape& tape, ad::Var patches) const;

  // [image_tokens; prompt; embedded token_ids] with segment tags. image_tokens
  // are already in d_h; prompt holds N_a rows per level.
  SegmentedTokens assemble_sequence(const Matrix& image_tokens, const Matrix& prompt,
                                    std::span<const int> token_ids) const;
  ad::Var assemble_sequence(ad::Tape& tape, ad::Var image_tokens, ad::Var prompt,
                            std::span<const int> token_ids, SequenceLayout& layout) const;

  // Causal decoder over an assembled sequence. targets has one entry per row,
  // -1 where no prediction is scored; scored rows must be query rows.
  LmOutput forward_lm(ad::Tape& tape, ad::Var hidden, std::span<const Segment> segments,
                      std::span<const int> targets) const;

  // Full pipeline for [query, separator, response, end]; targets cover the
  // response and the end token.
  LmOutput forward(ad::Tape& tape, const Sample& sample) const;
  double loss(const Sample& sample) const;

  // Greedy decoding; stops at the end token or after max_tokens.
  std::vector<int> generate(const Matrix& patches, std::span<const int> query,
                            std::span<const int> semantics, std::size_t max_tokens) const;

  std::vector<char> serialize() const;
  static Model deserialize(std::span<const char> bytes);
  void save(const std::string& path) const;
  static Model load(const std::string& path);

 private:
  void check_sample(const Sample& sample) const;
  ad::Var prompt_for(ad::Tape& tape, const std::vector<ad::Var>& levels,
                     std::span<const int> query, std::span<const int> semantics) const;

  ModelConfig config_;
  ModelParams params_;
};

enum class TrainStage { kAlignment = 1, kInstruction = 2 };

struct TrainOptions {
  TrainStage stage = TrainStage::kAlignment;
  std::uint64_t seed = 0;
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  double lr_visual = 0.0;
  double lr_prompter = 1e-3;  // also used for the projector
  double lr_lm = 1e-3;
  bool train_projector = true;  // alignment stage only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  // Stop once a full-set batch scores below this loss.
  std::optional<double> target_loss;

  std::vector<std::string> problems() const;
};

struct TrainLog {
  double initial_loss = 0.0;  // mean over the training set before the first step
  double final_loss = 0.0;    // same, after the last step
  std::vector<double> batch_loss;
  std::size_t steps_run = 0;
};

// Alignment trains the prompter (and the projector unless disabled);
// instruction trains every component at its own rate. Components with a zero
// rate are left untouched. Throws NumericError on a non-finite loss.
TrainLog train(Model& model, std::span<const Sample> samples, const TrainOptions& options);

// Mean loss over samples.
double mean_loss(const Model& model, std::span<const Sample> samples);

// End-to-end finite-difference check over every parameter. Expert up
// projections and gates start at zero, so they are redrawn first to exercise
// every path.
GradReport check_model_gradients(const ModelConfig& config, std::uint64_t seed,
                                 std::size_t probes_per_param);

}  // namespace rsalign
