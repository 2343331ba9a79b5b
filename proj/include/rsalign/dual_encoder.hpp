// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsalign/autograd.hpp"
#include "rsalign/gradcheck.hpp"
#include "rsalign/matrix.hpp"
#include "rsalign/nn.hpp"

namespace rsalign {

struct DualEncoderDims {
  std::uint32_t image_dim = 0;  // raw image-feature length
  std::uint32_t embed_dim = 0;  // shared embedding space
  std::uint32_t vocab = 0;      // text bag-of-tokens width

  friend bool operator==(const DualEncoderDims&, const DualEncoderDims&) = default;
};

// Two GELU MLP towers (hidden width = embed_dim) ending in L2 normalization,
// plus a log-parameterized temperature.
//
// RSDE file layout (little-endian):
//   "RSDE" | version u16 | image_dim u32 | embed_dim u32 | vocab u32 |
//   float32 blocks, each row-major, in this order:
//     image.w1 (image_dim x E), image.b1 (E), image.w2 (E x E), image.b2 (E),
//     text.w1 (vocab x E),      text.b1 (E),  text.w2 (E x E),  text.b2 (E),
//     log_temperature (1)
struct DualEncoderParams {
  static constexpr std::uint16_t kFormatVersion = 1;
  static constexpr double kInitialTemperature = 0.07;

  DualEncoderDims dims;
  nn::MlpParams image_proj;
  nn::MlpParams text_proj;
  Matrix log_temperature;  // 1x1

  static DualEncoderParams init(const DualEncoderDims& dims, std::uint64_t seed);
  double temperature() const;
  std::vector<ParamRef> params();

  std::vector<char> serialize() const;
  static DualEncoderParams deserialize(std::span<const char> bytes);
  void save(const std::string& path) const;
  static DualEncoderParams load(const std::string& path);
};

struct ContrastivePair {
  std::vector<double> image_features;
  std::vector<int> text_tokens;
};

// Lower-cased whitespace tokenizer; each word maps to FNV-1a(word) mod vocab.
std::vector<int> tokenize_words(std::string_view text, std::uint32_t vocab);

// Token counts divided by the token count (1 x vocab).
Matrix bag_of_tokens(std::span<const int> tokens, std::uint32_t vocab);

std::vector<double> encode_image(const DualEncoderParams& p, std::span<const double> features);
std::vector<double> encode_text(const DualEncoderParams& p, std::span<const int> tokens);

ad::Var encode_images(ad::Tape& tape, const DualEncoderParams& p, const Matrix& features);
ad::Var encode_texts(ad::Tape& tape, const DualEncoderParams& p, const Matrix& bags);

// Symmetric InfoNCE over the B x B cosine matrix scaled by 1/temperature:
// mean of the image->text and text->image cross-entropies with the diagonal as
// targets. Requires B >= 2 and pairwise-distinct texts.
double contrastive_loss(const DualEncoderParams& p, std::span<const ContrastivePair> batch);
ad::Var contrastive_loss(ad::Tape& tape, const DualEncoderParams& p,
                         std::span<const ContrastivePair> batch);

// The same objective evaluated from a precomputed similarity matrix.
double infonce_from_similarity(const Matrix& similarity, double temperature);

struct RetrieverTrainOptions {
  std::size_t epochs = 200;
  double lr = 0.03;
  bool momentum = false;  // heavy-ball with coefficient 0.9
  std::uint64_t seed = 0;
};

struct RetrieverTrainLog {
  std::vector<double> loss_per_epoch;  // loss before each epoch's update
  double final_loss = 0.0;             // loss after the last update
};

// Full-batch gradient descent on contrastive_loss. Requires at least 8 pairs.
// Throws NumericError if the loss becomes non-finite.
DualEncoderParams train_retriever(std::span<const ContrastivePair> pairs,
                                  const DualEncoderDims& dims,
                                  const RetrieverTrainOptions& options,
                                  RetrieverTrainLog* log = nullptr);

// Fraction of pairs whose own text is the top cosine match for their image.
// Ties count against the pair.
double retrieval_recall_at_1(const DualEncoderParams& p, std::span<const ContrastivePair> pairs);

}  // namespace rsalign
