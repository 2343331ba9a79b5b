// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/synthetic.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "rsalign/errors.hpp"
#include "rsalign/rng.hpp"

namespace rsalign::synthetic {

namespace {

constexpr std::array<std::array<const char*, 4>, 4> kAttributes{{
    {"forest", "desert", "water", "urban"},
    {"dense", "sparse", "scattered", "clustered"},
    {"road", "river", "railway", "bridge"},
    {"north", "south", "east", "west"},
}};

constexpr std::array<const char*, 4> kGroupQueries{"scene?", "density?", "feature?", "side?"};
constexpr double kPatchNoise = 0.3;

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i <= text.size()) {
    const std::size_t j = std::min(text.find(' ', i), text.size());
    out.push_back(text.substr(i, j - i));
    i = j + 1;
  }
  return out;
}

VisionTextSample make_image(const std::vector<double>& features, std::size_t patches, Rng& rng) {
  VisionTextSample s;
  s.patches = Matrix(patches, features.size());
  for (std::size_t p = 0; p < patches; ++p)
    for (std::size_t c = 0; c < features.size(); ++c)
      s.patches(p, c) = features[c] + kPatchNoise * rng.normal();
  s.semantics.push_back(describe_features(features));
  return s;
}

}  // namespace

std::string describe_features(const std::vector<double>& features) {
  if (features.empty() || features.size() % 4 != 0) {
    throw InvalidArgument("describe_features: length must be a positive multiple of 4");
  }
  const std::size_t group = features.size() / 4;
  std::string text;
  for (std::size_t g = 0; g < 4; ++g) {
    // Each attribute value owns a contiguous quarter of the group.
    std::array<double, 4> score{};
    for (std::size_t i = 0; i < group; ++i) score[i * 4 / group] += features[g * group + i];
    const auto best = static_cast<std::size_t>(
        std::max_element(score.begin(), score.end()) - score.begin());
    if (!text.empty()) text += ' ';
    text += kAttributes[g][best];
  }
  return text;
}

RetrievalCorpus retrieval_corpus(std::size_t count, std::size_t image_dim, std::uint64_t seed) {
  if (image_dim == 0 || image_dim % 4 != 0) {
    throw InvalidArgument("retrieval_corpus: image_dim must be a positive multiple of 4");
  }
  if (count > 256) throw InvalidArgument("retrieval_corpus: at most 256 distinct texts exist");
  Rng rng(seed);
  RetrievalCorpus corpus;
  std::set<std::string> seen;
  while (corpus.texts.size() < count) {
    std::vector<double> f(image_dim);
    for (auto& v : f) v = rng.normal();
    std::string text = describe_features(f);
    if (!seen.insert(text).second) continue;
    corpus.features.push_back(std::move(f));
    corpus.texts.push_back(std::move(text));
  }
  return corpus;
}

std::vector<ContrastivePair> to_pairs(const RetrievalCorpus& corpus, std::uint32_t vocab) {
  std::vector<ContrastivePair> pairs;
  for (std::size_t i = 0; i < corpus.texts.size(); ++i)
    pairs.push_back({corpus.features[i], tokenize_words(corpus.texts[i], vocab)});
  return pairs;
}

std::vector<VisionTextSample> caption_corpus(std::size_t count, std::size_t patches,
                                             std::size_t patch_dim, std::uint64_t seed) {
  if (patches == 0) throw InvalidArgument("caption_corpus: patches must be >= 1");
  const RetrievalCorpus base = retrieval_corpus(count, patch_dim, seed);
  Rng rng(seed + 1);
  std::vector<VisionTextSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    VisionTextSample s = make_image(base.features[i], patches, rng);
    s.query = "describe";
    s.response = base.texts[i];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<VisionTextSample> instruction_corpus(std::size_t count, std::size_t patches,
                                                 std::size_t patch_dim, std::uint64_t seed) {
  if (patches == 0) throw InvalidArgument("instruction_corpus: patches must be >= 1");
  const RetrievalCorpus base = retrieval_corpus(count, patch_dim, seed);
  Rng rng(seed + 1);
  std::vector<VisionTextSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    VisionTextSample s = make_image(base.features[i], patches, rng);
    const std::size_t group = rng.below(4);
    s.query = kGroupQueries[group];
    s.response = split_words(base.texts[i])[group];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> to_samples(const ModelConfig& config, std::span<const VisionTextSample> items) {
  std::vector<Sample> out;
  for (const auto& it : items) {
    out.push_back({it.patches, encode_text(config, it.query), encode_text(config, it.response),
                   semantic_token_ids(config, it.semantics)});
  }
  return out;
}

}  // namespace rsalign::synthetic
