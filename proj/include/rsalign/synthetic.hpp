// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rsalign/dual_encoder.hpp"
#include "rsalign/matrix.hpp"
#include "rsalign/model.hpp"

// Deterministic toy corpora for smoke runs, tests and the acceptance suite.
namespace rsalign::synthetic {

// Image features are Gaussian vectors split into four equal groups; the
// caption names the arg-max attribute of every group ("forest dense river
// north"), so each text is a deterministic function of its features. Texts
// are pairwise distinct. image_dim must be a positive multiple of 4.
struct RetrievalCorpus {
  std::vector<std::vector<double>> features;
  std::vector<std::string> texts;
};

RetrievalCorpus retrieval_corpus(std::size_t count, std::size_t image_dim, std::uint64_t seed);
std::string describe_features(const std::vector<double>& features);
std::vector<ContrastivePair> to_pairs(const RetrievalCorpus& corpus, std::uint32_t vocab);

// Image-text example before tokenization. Patches are noisy copies of one
// feature vector whose description is the ground truth for the sample.
struct VisionTextSample {
  Matrix patches;
  std::string query;
  std::string response;
  std::vector<std::string> semantics;
};

// Alignment pairs: fixed query "describe", response = full description.
std::vector<VisionTextSample> caption_corpus(std::size_t count, std::size_t patches,
                                             std::size_t patch_dim, std::uint64_t seed);
// Instruction samples: the query names one attribute group ("scene?",
// "density?", "feature?", "side?") and the response is that attribute.
std::vector<VisionTextSample> instruction_corpus(std::size_t count, std::size_t patches,
                                                 std::size_t patch_dim, std::uint64_t seed);
std::vector<Sample> to_samples(const ModelConfig& config, std::span<const VisionTextSample> items);

}  // namespace rsalign::synthetic
