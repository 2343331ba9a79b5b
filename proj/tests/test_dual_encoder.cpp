// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "rsalign/dual_encoder.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/rng.hpp"
#include "rsalign/synthetic.hpp"

using namespace rsalign;

namespace {

const DualEncoderDims kDims{16, 12, 64};

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("encoders produce deterministic unit vectors") {
  auto p = DualEncoderParams::init(kDims, 3);
  Rng rng(1);
  for (int i = 0; i < 10; ++i) {
    auto x = random_vec(16, rng);
    auto e = encode_image(p, x);
    CHECK(e.size() == 12);
    CHECK(std::abs(l2_norm(e) - 1.0) < 1e-6);
    CHECK(encode_image(p, x) == e);
  }
  auto t = encode_text(p, std::vector<int>{1, 5, 5, 9});
  CHECK(std::abs(l2_norm(t) - 1.0) < 1e-6);
  CHECK(encode_text(p, std::vector<int>{5, 9, 1, 5}) == t);
  CHECK_THROWS_AS(encode_image(p, std::vector<double>(15, 1.0)), ShapeError);
  CHECK_THROWS_AS(encode_text(p, std::vector<int>{64}), DomainError);
}

TEST_CASE("tokenizer is case-folded and whitespace split") {
  auto a = tokenize_words("Dense  Forest\tnear river", 1000);
  auto b = tokenize_words("dense forest near RIVER ", 1000);
  CHECK(a.size() == 4);
  CHECK(a == b);
  CHECK(tokenize_words("   ", 10).empty());
}

TEST_CASE("encoder gradients match finite differences") {
  auto p = DualEncoderParams::init(kDims, 4);
  Rng rng(2);
  const Matrix x = Matrix::row_vector(random_vec(16, rng));
  const Matrix target = Matrix(12, 1, random_vec(12, rng));
  const Matrix bag = bag_of_tokens(std::vector<int>{3, 3, 17, 40}, kDims.vocab);
  auto refs = p.params();
  refs.pop_back();  // temperature does not enter a single embedding

  GradCheckOptions opts;
  opts.probes_per_param = 0;
  auto cos_to_target = [&](ad::Tape& t, ad::Var e) {
    const double tn = l2_norm(target.values());
    return ad::scale(ad::matmul(e, t.constant(target)), 1.0 / tn);
  };
  auto image_report = check_gradients(
      [&](ad::Tape& t) { return cos_to_target(t, encode_images(t, p, x)); },
      std::span(refs).subspan(0, 4), opts);
  CHECK(image_report.max_relative_error < 1e-4);
  auto text_report = check_gradients(
      [&](ad::Tape& t) { return cos_to_target(t, encode_texts(t, p, bag)); },
      std::span(refs).subspan(4, 4), opts);
  CHECK(text_report.max_relative_error < 1e-4);
}

TEST_CASE("infonce closed forms") {
  CHECK(infonce_from_similarity(Matrix(2, 2, 0.3), 0.07) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(infonce_from_similarity(Matrix(5, 5, -0.1), 0.5) ==
        doctest::Approx(std::log(5.0)).epsilon(1e-14));
  Matrix separated(3, 3, -1.0);
  for (std::size_t i = 0; i < 3; ++i) separated(i, i) = 1.0;
  CHECK(infonce_from_similarity(separated, 0.01) < 1e-80);
  CHECK_THROWS_AS(infonce_from_similarity(Matrix(1, 1), 0.1), ShapeError);
}

TEST_CASE("contrastive loss matches a row-wise softmax oracle") {
  auto p = DualEncoderParams::init(kDims, 5);
  auto corpus = synthetic::retrieval_corpus(4, 16, 9);
  auto batch = synthetic::to_pairs(corpus, kDims.vocab);
  const std::size_t b = batch.size();
  std::vector<std::vector<double>> img, txt;
  for (const auto& pr : batch) {
    img.push_back(encode_image(p, pr.image_features));
    txt.push_back(encode_text(p, pr.text_tokens));
  }
  const double inv_t = 1.0 / p.temperature();
  double i2t = 0.0, t2i = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double zr = 0.0, zc = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      zr += std::exp(cosine_similarity(img[i], txt[j]) * inv_t);
      zc += std::exp(cosine_similarity(img[j], txt[i]) * inv_t);
    }
    const double diag = cosine_similarity(img[i], txt[i]) * inv_t;
    i2t += std::log(zr) - diag;
    t2i += std::log(zc) - diag;
  }
  const double oracle = 0.5 * (i2t + t2i) / static_cast<double>(b);
  CHECK(std::abs(contrastive_loss(p, batch) - oracle) < 1e-10);
  CHECK(contrastive_loss(p, batch) >= 0.0);

  CHECK_THROWS_AS(contrastive_loss(p, std::span(batch).subspan(0, 1)), InvalidArgument);
  auto dup = batch;
  dup[1].text_tokens = dup[0].text_tokens;
  std::reverse(dup[1].text_tokens.begin(), dup[1].text_tokens.end());
  CHECK_THROWS_AS(contrastive_loss(p, dup), InvalidArgument);
}

TEST_CASE("contrastive loss gradients on a B=3 batch") {
  auto p = DualEncoderParams::init(kDims, 6);
  auto batch = synthetic::to_pairs(synthetic::retrieval_corpus(3, 16, 10), kDims.vocab);
  auto refs = p.params();
  GradCheckOptions opts;
  opts.probes_per_param = 0;
  auto report = check_gradients([&](ad::Tape& t) { return contrastive_loss(t, p, batch); },
                                refs, opts);
  CAPTURE(report.worst_parameter);
  CHECK(report.max_relative_error < 1e-4);
}

TEST_CASE("train_retriever reaches high recall on the synthetic corpus") {
  auto corpus = synthetic::retrieval_corpus(32, 16, 21);
  auto pairs = synthetic::to_pairs(corpus, kDims.vocab);
  const double before = retrieval_recall_at_1(DualEncoderParams::init(kDims, 7), pairs);
  RetrieverTrainOptions opts;
  opts.seed = 7;
  RetrieverTrainLog log;
  auto trained = train_retriever(pairs, kDims, opts, &log);
  const double after = retrieval_recall_at_1(trained, pairs);
  MESSAGE("recall@1 before " << before << " after " << after << ", loss " << log.loss_per_epoch.front() << " -> " << log.final_loss);
  CHECK(before <= 0.2);
  CHECK(after >= 0.9);
  REQUIRE(log.loss_per_epoch.size() == 200);
  CHECK(log.loss_per_epoch.back() < log.loss_per_epoch.front());

  auto again = train_retriever(pairs, kDims, opts);
  CHECK(again.serialize() == trained.serialize());
}

TEST_CASE("train_retriever with zero learning rate leaves params unchanged") {
  auto pairs = synthetic::to_pairs(synthetic::retrieval_corpus(8, 16, 22), kDims.vocab);
  RetrieverTrainOptions opts;
  opts.epochs = 5;
  opts.lr = 0.0;
  opts.seed = 3;
  RetrieverTrainLog log;
  auto p = train_retriever(pairs, kDims, opts, &log);
  CHECK(p.serialize() == DualEncoderParams::init(kDims, 3).serialize());
  for (double l : log.loss_per_epoch) CHECK(l == log.loss_per_epoch.front());
  CHECK_THROWS_AS(train_retriever(std::span(pairs).subspan(0, 7), kDims, opts), InvalidArgument);
}

TEST_CASE("RSDE round trip") {
  auto p = DualEncoderParams::init(kDims, 8);
  auto bytes = p.serialize();
  CHECK(bytes.size() == 18 + 4 * (16 * 12 + 12 + 144 + 12 + 64 * 12 + 12 + 144 + 12 + 1));
  auto back = DualEncoderParams::deserialize(bytes);
  CHECK(back.dims == kDims);
  CHECK(back.serialize() == bytes);
  auto bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_AS(DualEncoderParams::deserialize(bad), FormatError);
  bytes.pop_back();
  CHECK_THROWS_AS(DualEncoderParams::deserialize(bytes), FormatError);
}
