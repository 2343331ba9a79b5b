// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/dual_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include "rsalign/binary_io.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/rng.hpp"

namespace rsalign {

namespace {

constexpr char kMagic[] = "RSDE";

void check_dims(const DualEncoderDims& d) {
  if (d.image_dim == 0 || d.embed_dim == 0 || d.vocab == 0) {
    throw InvalidArgument("dual encoder: all dimensions must be positive");
  }
}

Matrix stack_rows(std::span<const ContrastivePair> batch, std::uint32_t dim) {
  Matrix m(batch.size(), dim);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& f = batch[i].image_features;
    if (f.size() != dim) {
      throw ShapeError("image features of length " + std::to_string(f.size()) +
                       ", encoder expects " + std::to_string(dim));
    }
    std::copy(f.begin(), f.end(), m.row(i).begin());
  }
  return m;
}

Matrix stack_bags(std::span<const ContrastivePair> batch, std::uint32_t vocab) {
  Matrix m(batch.size(), vocab);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Matrix bag = bag_of_tokens(batch[i].text_tokens, vocab);
    std::copy(bag.values().begin(), bag.values().end(), m.row(i).begin());
  }
  return m;
}

void check_batch(std::span<const ContrastivePair> batch) {
  if (batch.size() < 2) throw InvalidArgument("contrastive_loss: batch size must be at least 2");
  std::set<std::vector<int>> seen;
  for (const auto& p : batch) {
    if (p.image_features.empty() || p.text_tokens.empty()) {
      throw InvalidArgument("contrastive_loss: empty image features or text");
    }
    auto key = p.text_tokens;
    std::sort(key.begin(), key.end());
    if (!seen.insert(std::move(key)).second) {
      throw InvalidArgument("contrastive_loss: duplicate text in batch");
    }
  }
}

void write_matrix(bin::Writer& w, const Matrix& m) {
  for (double v : m.values()) w.f32(static_cast<float>(v));
}

void read_matrix(bin::Reader& r, Matrix& m, const char* what) {
  for (auto& v : m.values()) {
    const float f = r.f32(what);
    if (!std::isfinite(f)) r.fail(std::string("non-finite value in ") + what);
    v = f;
  }
}

}  // namespace

DualEncoderParams DualEncoderParams::init(const DualEncoderDims& dims, std::uint64_t seed) {
  check_dims(dims);
  Rng rng(seed);
  DualEncoderParams p;
  p.dims = dims;
  p.image_proj = nn::MlpParams::init(dims.image_dim, dims.embed_dim, dims.embed_dim, rng);
  p.text_proj = nn::MlpParams::init(dims.vocab, dims.embed_dim, dims.embed_dim, rng);
  // The bag input has only a few non-zero entries, so the first text layer is
  // an averaged embedding lookup: unit-variance rows regardless of vocab.
  p.text_proj.w1 = random_normal(dims.vocab, dims.embed_dim, 1.0, rng);
  p.log_temperature = Matrix(1, 1, std::log(kInitialTemperature));
  return p;
}

double DualEncoderParams::temperature() const { return std::exp(log_temperature(0, 0)); }

std::vector<ParamRef> DualEncoderParams::params() {
  std::vector<ParamRef> out;
  image_proj.collect("image", out);
  text_proj.collect("text", out);
  out.push_back({"log_temperature", &log_temperature});
  return out;
}

std::vector<char> DualEncoderParams::serialize() const {
  bin::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kFormatVersion);
  w.u32(dims.image_dim);
  w.u32(dims.embed_dim);
  w.u32(dims.vocab);
  for (const auto* m : {&image_proj.w1, &image_proj.b1, &image_proj.w2, &image_proj.b2,
                        &text_proj.w1, &text_proj.b1, &text_proj.w2, &text_proj.b2,
                        &log_temperature})
    write_matrix(w, *m);
  return w.buffer();
}

DualEncoderParams DualEncoderParams::deserialize(std::span<const char> bytes) {
  bin::Reader r(bytes);
  if (r.bytes(std::min<std::size_t>(4, r.remaining()), "magic") != std::string_view(kMagic, 4)) {
    r.fail_at("bad magic, expected \"RSDE\"", 0);
  }
  const std::uint16_t version = r.u16("format version");
  if (version != kFormatVersion) r.fail_at("unsupported RSDE version " + std::to_string(version), 4);
  DualEncoderDims dims;
  dims.image_dim = r.u32("image_dim");
  dims.embed_dim = r.u32("embed_dim");
  dims.vocab = r.u32("vocab");
  if (dims.image_dim == 0 || dims.embed_dim == 0 || dims.vocab == 0) {
    r.fail_at("zero dimension in header", 6);
  }
  const std::uint64_t e = dims.embed_dim;
  const std::uint64_t expected =
      4 * (dims.image_dim * e + e + e * e + e + dims.vocab * e + e + e * e + e + 1);
  if (r.remaining() < expected) r.fail("truncated payload: parameter blocks incomplete");
  DualEncoderParams p;
  p.dims = dims;
  p.image_proj = {Matrix(dims.image_dim, e), Matrix(1, e), Matrix(e, e), Matrix(1, e)};
  p.text_proj = {Matrix(dims.vocab, e), Matrix(1, e), Matrix(e, e), Matrix(1, e)};
  p.log_temperature = Matrix(1, 1);
  read_matrix(r, p.image_proj.w1, "image.w1");
  read_matrix(r, p.image_proj.b1, "image.b1");
  read_matrix(r, p.image_proj.w2, "image.w2");
  read_matrix(r, p.image_proj.b2, "image.b2");
  read_matrix(r, p.text_proj.w1, "text.w1");
  read_matrix(r, p.text_proj.b1, "text.b1");
  read_matrix(r, p.text_proj.w2, "text.w2");
  read_matrix(r, p.text_proj.b2, "text.b2");
  read_matrix(r, p.log_temperature, "log_temperature");
  if (r.remaining() != 0) r.fail("trailing bytes after parameter blocks");
  return p;
}

void DualEncoderParams::save(const std::string& path) const { bin::write_file(path, serialize()); }

DualEncoderParams DualEncoderParams::load(const std::string& path) {
  return deserialize(bin::read_file(path));
}

std::vector<int> tokenize_words(std::string_view text, std::uint32_t vocab) {
  if (vocab == 0) throw InvalidArgument("tokenize_words: vocab must be positive");
  std::vector<int> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i >= text.size()) break;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) {
      const auto c = static_cast<unsigned char>(std::tolower(static_cast<unsigned char>(text[i])));
      h = (h ^ c) * 0x100000001b3ULL;
      ++i;
    }
    out.push_back(static_cast<int>(h % vocab));
  }
  return out;
}

Matrix bag_of_tokens(std::span<const int> tokens, std::uint32_t vocab) {
  if (tokens.empty()) throw InvalidArgument("bag_of_tokens: empty token list");
  Matrix bag(1, vocab);
  const double w = 1.0 / static_cast<double>(tokens.size());
  for (int t : tokens) {
    if (t < 0 || static_cast<std::uint32_t>(t) >= vocab) {
      throw DomainError("bag_of_tokens: token " + std::to_string(t) + " outside vocab of " +
                        std::to_string(vocab));
    }
    bag(0, static_cast<std::size_t>(t)) += w;
  }
  return bag;
}

ad::Var encode_images(ad::Tape& tape, const DualEncoderParams& p, const Matrix& features) {
  if (features.cols() != p.dims.image_dim) {
    throw ShapeError("encode_image: features " + features.shape_string() + ", expected width " +
                     std::to_string(p.dims.image_dim));
  }
  return ad::l2_normalize_rows(nn::mlp(tape, p.image_proj, tape.constant(features)));
}

ad::Var encode_texts(ad::Tape& tape, const DualEncoderParams& p, const Matrix& bags) {
  if (bags.cols() != p.dims.vocab) {
    throw ShapeError("encode_text: bag " + bags.shape_string() + ", expected width " +
                     std::to_string(p.dims.vocab));
  }
  return ad::l2_normalize_rows(nn::mlp(tape, p.text_proj, tape.constant(bags)));
}

std::vector<double> encode_image(const DualEncoderParams& p, std::span<const double> features) {
  ad::Tape tape(false);
  const Matrix out = encode_images(tape, p, Matrix::row_vector(features)).value();
  return {out.values().begin(), out.values().end()};
}

std::vector<double> encode_text(const DualEncoderParams& p, std::span<const int> tokens) {
  ad::Tape tape(false);
  const Matrix out = encode_texts(tape, p, bag_of_tokens(tokens, p.dims.vocab)).value();
  return {out.values().begin(), out.values().end()};
}

ad::Var contrastive_loss(ad::Tape& tape, const DualEncoderParams& p,
                         std::span<const ContrastivePair> batch) {
  check_batch(batch);
  ad::Var img = encode_images(tape, p, stack_rows(batch, p.dims.image_dim));
  ad::Var txt = encode_texts(tape, p, stack_bags(batch, p.dims.vocab));
  ad::Var inv_temp = ad::exp(ad::scale(tape.param(p.log_temperature), -1.0));
  ad::Var logits = ad::scale_by(ad::matmul(img, ad::transpose(txt)), inv_temp);
  std::vector<int> diag(batch.size());
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  ad::Var i2t = ad::cross_entropy(logits, diag);
  ad::Var t2i = ad::cross_entropy(ad::transpose(logits), diag);
  return ad::scale(ad::add(i2t, t2i), 0.5);
}

double contrastive_loss(const DualEncoderParams& p, std::span<const ContrastivePair> batch) {
  ad::Tape tape(false);
  return contrastive_loss(tape, p, batch).value()(0, 0);
}

double infonce_from_similarity(const Matrix& similarity, double temperature) {
  if (similarity.rows() != similarity.cols() || similarity.rows() < 2) {
    throw ShapeError("infonce_from_similarity: need a square matrix of size >= 2, got " +
                     similarity.shape_string());
  }
  if (!(temperature > 0.0)) throw DomainError("infonce_from_similarity: temperature must be > 0");
  ad::Tape tape(false);
  ad::Var logits = ad::scale(tape.constant(similarity), 1.0 / temperature);
  std::vector<int> diag(similarity.rows());
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  const double a = ad::cross_entropy(logits, diag).value()(0, 0);
  const double b = ad::cross_entropy(ad::transpose(logits), diag).value()(0, 0);
  return 0.5 * (a + b);
}

DualEncoderParams train_retriever(std::span<const ContrastivePair> pairs,
                                  const DualEncoderDims& dims,
                                  const RetrieverTrainOptions& options, RetrieverTrainLog* log) {
  if (pairs.size() < 8) throw InvalidArgument("train_retriever: need at least 8 pairs");
  if (options.lr < 0.0) throw InvalidArgument("train_retriever: negative learning rate");
  DualEncoderParams p = DualEncoderParams::init(dims, options.seed);
  auto refs = p.params();
  std::vector<Matrix> velocity;
  for (const auto& r : refs) velocity.emplace_back(r.value->rows(), r.value->cols());

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    ad::Tape tape;
    ad::Var loss = contrastive_loss(tape, p, pairs);
    const double lv = loss.value()(0, 0);
    if (!std::isfinite(lv)) {
      throw NumericError("train_retriever: non-finite loss at epoch " + std::to_string(epoch) +
                         " (temperature " + std::to_string(p.temperature()) + ")");
    }
    if (log) log->loss_per_epoch.push_back(lv);
    tape.backward(loss);
    for (std::size_t i = 0; i < refs.size(); ++i) {
      Matrix g = tape.param_grad(*refs[i].value);
      if (options.momentum) {
        velocity[i] *= 0.9;
        velocity[i] += g;
        g = velocity[i];
      }
      *refs[i].value += g * (-options.lr);
    }
  }
  if (log) {
    log->final_loss = contrastive_loss(p, pairs);
    if (!std::isfinite(log->final_loss)) throw NumericError("train_retriever: non-finite final loss");
  }
  return p;
}

double retrieval_recall_at_1(const DualEncoderParams& p, std::span<const ContrastivePair> pairs) {
  if (pairs.empty()) return 0.0;
  ad::Tape tape(false);
  const Matrix img = encode_images(tape, p, stack_rows(pairs, p.dims.image_dim)).value();
  const Matrix txt = encode_texts(tape, p, stack_bags(pairs, p.dims.vocab)).value();
  const Matrix sim = matmul(img, txt.transposed());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sim.rows(); ++i) {
    bool best = true;
    for (std::size_t j = 0; j < sim.cols(); ++j)
      if (j != i && sim(i, j) >= sim(i, i)) best = false;
    hits += best ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace rsalign
