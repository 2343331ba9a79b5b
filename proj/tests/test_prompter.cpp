// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "rsalign/errors.hpp"
#include "rsalign/prompter.hpp"
#include "rsalign/rng.hpp"

using namespace rsalign;

namespace {

Matrix layer_norm_oracle(const Matrix& x, const Matrix& gain, const Matrix& bias) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.cols());
    for (std::size_t c = 0; c < x.cols(); ++c)
      out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * gain(0, c) + bias(0, c);
  }
  return out;
}

Matrix cols(const Matrix& m, std::size_t begin, std::size_t end) {
  Matrix out(m.rows(), end - begin);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = m(r, c);
  return out;
}

// Per-head composition of the plain scaled_dot_attention primitive.
Matrix attention_oracle(const nn::AttentionParams& p, const Matrix& queries,
                        const Matrix& context, std::size_t heads, bool residual, bool norm,
                        bool self) {
  const Matrix qin = norm ? layer_norm_oracle(queries, p.norm.gain, p.norm.bias) : queries;
  const Matrix& ctx = self ? qin : context;
  const Matrix q = matmul(qin, p.wq);
  const Matrix k = matmul(ctx, p.wk);
  const Matrix v = matmul(ctx, p.wv);
  const std::size_t hd = p.wo.rows() / heads;
  Matrix joined(queries.rows(), p.wo.rows());
  for (std::size_t h = 0; h < heads; ++h) {
    Matrix o = scaled_dot_attention(cols(q, h * hd, (h + 1) * hd), cols(k, h * hd, (h + 1) * hd),
                                    cols(v, h * hd, (h + 1) * hd));
    for (std::size_t r = 0; r < o.rows(); ++r)
      for (std::size_t c = 0; c < hd; ++c) joined(r, h * hd + c) = o(r, c);
  }
  Matrix out = matmul(joined, p.wo);
  return residual ? out + queries : out;
}

Matrix rows(const Matrix& m, std::size_t begin, std::size_t end) {
  Matrix out(end - begin, m.cols());
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(r - begin, c) = m(r, c);
  return out;
}

Matrix stack(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() + b.rows(), a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(r, c);
  for (std::size_t r = 0; r < b.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(a.rows() + r, c) = b(r, c);
  return out;
}

PrompterConfig toy_config() {
  PrompterConfig c;
  c.num_agg_tokens = 4;
  c.dim = 8;
  c.heads = 2;
  c.level_dims = {6, 10};
  return c;
}

PromptInputs toy_inputs(const PrompterConfig& c, Rng& rng) {
  PromptInputs in;
  in.user_tokens = random_normal(3, c.dim, 1.0, rng);
  in.semantic_tokens = random_normal(5, c.dim, 1.0, rng);
  for (std::size_t d_l : c.level_dims) in.visual_levels.push_back(random_normal(7, d_l, 1.0, rng));
  return in;
}

}  // namespace

TEST_CASE("config validation lists every problem") {
  PrompterConfig c;
  c.num_agg_tokens = 0;
  c.dim = 10;
  c.heads = 3;
  c.level_dims = {};
  auto problems = c.problems();
  CHECK(problems.size() == 3);
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("aggregate_query shape and per-head oracle") {
  const auto cfg = toy_config();
  MultiLevelPrompter p(cfg, 1);
  Rng rng(2);
  const Matrix user = random_normal(3, cfg.dim, 1.0, rng);
  const Matrix z1 = p.aggregate_query(user);
  CHECK(z1.rows() == 4);
  CHECK(z1.cols() == 8);
  const Matrix joint = stack(p.params().agg_tokens, user);
  CHECK(joint.rows() == 7);
  const Matrix expected =
      rows(attention_oracle(p.params().query_attn, joint, joint, 2, true, true, true), 0, 4);
  CHECK(max_abs_diff(z1, expected) < 1e-10);
  CHECK_THROWS_AS(p.aggregate_query(Matrix(3, 5)), ShapeError);
}

TEST_CASE("aggregate_query with identity projections is a convex combination") {
  PrompterConfig cfg = toy_config();
  cfg.heads = 1;
  cfg.residual = false;
  cfg.query_norm = false;
  MultiLevelPrompter p(cfg, 3);
  auto& qa = p.params().query_attn;
  qa.wq = qa.wk = qa.wv = qa.wo = Matrix::identity(cfg.dim);
  Rng rng(4);
  p.params().agg_tokens = random_normal(4, cfg.dim, 1.0, rng);
  const Matrix user = rows(p.params().agg_tokens, 0, 3);
  const Matrix z1 = p.aggregate_query(user);
  const Matrix joint = stack(p.params().agg_tokens, user);
  for (std::size_t c = 0; c < cfg.dim; ++c) {
    double lo = joint(0, c), hi = joint(0, c);
    for (std::size_t r = 1; r < joint.rows(); ++r) {
      lo = std::min(lo, joint(r, c));
      hi = std::max(hi, joint(r, c));
    }
    for (std::size_t r = 0; r < z1.rows(); ++r) {
      CHECK(z1(r, c) >= lo - 1e-12);
      CHECK(z1(r, c) <= hi + 1e-12);
    }
  }
}

TEST_CASE("attend_semantics oracle, single key and sensitivity") {
  const auto cfg = toy_config();
  MultiLevelPrompter p(cfg, 5);
  Rng rng(6);
  const Matrix z1 = random_normal(4, cfg.dim, 1.0, rng);
  const Matrix sem = random_normal(5, cfg.dim, 1.0, rng);
  CHECK(max_abs_diff(p.attend_semantics(z1, sem),
                     attention_oracle(p.params().semantic_attn, z1, sem, 2, true, true, false)) <
        1e-10);

  Matrix changed = sem;
  changed(2, 3) += 0.5;
  CHECK(max_abs_diff(p.attend_semantics(z1, sem), p.attend_semantics(z1, changed)) > 1e-6);

  PrompterConfig no_res = cfg;
  no_res.residual = false;
  MultiLevelPrompter q(no_res, p.params());
  const Matrix one = random_normal(1, cfg.dim, 1.0, rng);
  const Matrix projected = matmul(matmul(one, q.params().semantic_attn.wv), q.params().semantic_attn.wo);
  const Matrix out = q.attend_semantics(z1, one);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) CHECK(std::abs(out(r, c) - projected(0, c)) < 1e-12);
  CHECK_THROWS_AS(p.attend_semantics(z1, Matrix(0, cfg.dim)), ShapeError);
}

TEST_CASE("attend_level oracle, reduction and errors") {
  const auto cfg = toy_config();
  MultiLevelPrompter p(cfg, 7);
  Rng rng(8);
  const Matrix z2 = random_normal(4, cfg.dim, 1.0, rng);
  const Matrix vis1 = random_normal(9, 10, 1.0, rng);
  CHECK(max_abs_diff(p.attend_level(z2, vis1, 1),
                     attention_oracle(p.params().level_attn[1], z2, vis1, 2, true, true, false)) <
        1e-10);
  CHECK_THROWS_AS(p.attend_level(z2, vis1, 2), InvalidArgument);
  CHECK_THROWS_AS(p.attend_level(z2, vis1, 0), ShapeError);

  PrompterConfig same = cfg;
  same.level_dims = {cfg.dim};
  MultiLevelPrompter r(same, 9);
  auto& lvl = r.params().level_attn[0];
  auto& sem = r.params().semantic_attn;
  lvl.wk = lvl.wv = sem.wk = sem.wv = Matrix::identity(cfg.dim);
  lvl.wq = sem.wq;
  lvl.wo = sem.wo;
  lvl.norm = sem.norm;
  const Matrix feats = random_normal(6, cfg.dim, 1.0, rng);
  CHECK(r.attend_level(z2, feats, 0) == r.attend_semantics(z2, feats));

  PrompterConfig no_res = cfg;
  no_res.residual = false;
  MultiLevelPrompter q(no_res, p.params());
  const Matrix single = random_normal(1, 6, 1.0, rng);
  const Matrix projected = matmul(matmul(single, q.params().level_attn[0].wv), q.params().level_attn[0].wo);
  const Matrix out = q.attend_level(z2, single, 0);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < out.cols(); ++c) CHECK(std::abs(out(i, c) - projected(0, c)) < 1e-12);
}

TEST_CASE("build_prompt concatenates levels in order") {
  const auto cfg = toy_config();
  MultiLevelPrompter p(cfg, 10);
  Rng rng(11);
  auto in = toy_inputs(cfg, rng);
  const Matrix s = p.build_prompt(in);
  CHECK(s.rows() == 8);
  CHECK(s.cols() == cfg.dim);
  const Matrix z2 = p.attend_semantics(p.aggregate_query(in.user_tokens), in.semantic_tokens);
  CHECK(rows(s, 0, 4) == p.attend_level(z2, in.visual_levels[0], 0));
  CHECK(rows(s, 4, 8) == p.attend_level(z2, in.visual_levels[1], 1));
  CHECK(p.build_prompt(in) == s);

  auto perturbed = in;
  perturbed.visual_levels[1](0, 0) += 1.0;
  const Matrix s2 = p.build_prompt(perturbed);
  CHECK(rows(s2, 0, 4) == rows(s, 0, 4));
  CHECK(!(rows(s2, 4, 8) == rows(s, 4, 8)));

  in.visual_levels.pop_back();
  CHECK_THROWS_AS(p.build_prompt(in), ShapeError);
}

TEST_CASE("build_prompt row count is N_a * L") {
  Rng rng(12);
  for (std::size_t n_a : {1u, 3u, 5u}) {
    for (std::size_t levels : {1u, 2u, 4u}) {
      PrompterConfig c;
      c.num_agg_tokens = n_a;
      c.dim = 4;
      c.heads = 2;
      c.level_dims.assign(levels, 3);
      MultiLevelPrompter p(c, 13);
      CHECK(p.build_prompt(toy_inputs(c, rng)).rows() == n_a * levels);
    }
  }
  PrompterConfig wide;
  wide.num_agg_tokens = 144;
  wide.dim = 8;
  wide.heads = 2;
  wide.level_dims = {8, 8, 8};
  MultiLevelPrompter p(wide, 14);
  CHECK(p.build_prompt(toy_inputs(wide, rng)).rows() == 432);
}

TEST_CASE("prompter gradients match finite differences") {
  PrompterConfig c;
  c.num_agg_tokens = 3;
  c.dim = 8;
  c.heads = 2;
  c.level_dims = {8, 5};
  MultiLevelPrompter p(c, 15);
  Rng rng(16);
  const auto in = toy_inputs(c, rng);
  std::vector<ParamRef> refs;
  p.params().collect("prompter", refs);
  GradCheckOptions opts;
  opts.probes_per_param = 6;
  opts.seed = 1;
  auto report = check_gradients(
      [&](ad::Tape& t) {
        std::vector<ad::Var> levels;
        for (const auto& m : in.visual_levels) levels.push_back(t.constant(m));
        return ad::sum(p.build_prompt(t, t.constant(in.user_tokens),
                                      t.constant(in.semantic_tokens), levels));
      },
      refs, opts);
  CAPTURE(report.worst_parameter);
  CHECK(report.probes >= 100);
  CHECK(report.max_relative_error < 1e-4);
}
