// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>

#include "doctest.h"
#include "rsalign/autograd.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/gradcheck.hpp"
#include "rsalign/matrix.hpp"
#include "rsalign/rng.hpp"

using namespace rsalign;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

double max_rel(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return m;
}

}  // namespace

TEST_CASE("matmul identity, scalar and triple-loop oracle") {
  Rng rng(1);
  Matrix m = random_normal(3, 4, 1.0, rng);
  CHECK(matmul(Matrix::identity(3), m) == m);
  CHECK(matmul(Matrix{{2.0}}, Matrix{{3.0}}) == Matrix{{6.0}});

  Matrix a = random_normal(5, 4, 1.0, rng);
  Matrix b = random_normal(4, 3, 1.0, rng);
  CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) < 1e-12);
}

TEST_CASE("matmul shape error names both shapes") {
  try {
    matmul(Matrix(2, 3), Matrix(4, 5));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x5") != std::string::npos);
  }
}

TEST_CASE("matmul is associative on random triples") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix a = random_normal(4, 6, 1.0, rng);
    Matrix b = random_normal(6, 5, 1.0, rng);
    Matrix c = random_normal(5, 3, 1.0, rng);
    CHECK(max_rel(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) < 1e-9);
  }
}

TEST_CASE("softmax_rows closed forms and stability") {
  Matrix s = softmax_rows(Matrix{{0.0, 0.0}, {std::log(2.0), 0.0}, {1000.0, 0.0}});
  CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s(1, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(s(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(s(2, 0) == 1.0);
  CHECK(s(2, 1) == doctest::Approx(0.0));
  CHECK(s.all_finite());
}

TEST_CASE("softmax_rows rows sum to one and ignore row shifts") {
  Rng rng(3);
  Matrix m = random_normal(6, 7, 3.0, rng);
  Matrix s = softmax_rows(m);
  Matrix shifted = m;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (auto& v : shifted.row(r)) v += static_cast<double>(r) * 4.5 - 7.0;
  Matrix s2 = softmax_rows(shifted);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double sum = 0.0;
    for (double v : s.row(r)) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
  CHECK(max_abs_diff(s, s2) < 1e-12);
}

TEST_CASE("scaled_dot_attention degenerate cases") {
  Rng rng(4);
  Matrix q = random_normal(3, 4, 1.0, rng);
  Matrix k1 = random_normal(1, 4, 1.0, rng);
  Matrix v1 = random_normal(1, 5, 1.0, rng);
  Matrix out = scaled_dot_attention(q, k1, v1);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(out(r, c) == doctest::Approx(v1(0, c)));

  Matrix krow = random_normal(1, 4, 1.0, rng);
  Matrix k(6, 4);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) k(r, c) = krow(0, c);
  Matrix v = random_normal(6, 2, 1.0, rng);
  Matrix mean(1, 2);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 2; ++c) mean(0, c) += v(r, c) / 6.0;
  Matrix avg = scaled_dot_attention(q, k, v);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) CHECK(std::abs(avg(r, c) - mean(0, c)) < 1e-12);
}

TEST_CASE("scaled_dot_attention matches two-step oracle and stays convex") {
  Rng rng(5);
  Matrix q = random_normal(3, 4, 1.0, rng);
  Matrix k = random_normal(5, 4, 1.0, rng);
  Matrix v = random_normal(5, 6, 1.0, rng);
  Matrix w(3, 5);
  for (std::size_t i = 0; i < 3; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += q(i, c) * k(j, c);
      w(i, j) = std::exp(s / 2.0);
      z += w(i, j);
    }
    for (std::size_t j = 0; j < 5; ++j) w(i, j) /= z;
  }
  Matrix out = scaled_dot_attention(q, k, v);
  CHECK(max_abs_diff(out, naive_matmul(w, v)) < 1e-12);
  for (std::size_t c = 0; c < v.cols(); ++c) {
    double lo = v(0, c), hi = v(0, c);
    for (std::size_t r = 1; r < v.rows(); ++r) {
      lo = std::min(lo, v(r, c));
      hi = std::max(hi, v(r, c));
    }
    for (std::size_t r = 0; r < out.rows(); ++r) {
      CHECK(out(r, c) >= lo - 1e-12);
      CHECK(out(r, c) <= hi + 1e-12);
    }
  }
  CHECK_THROWS_AS(scaled_dot_attention(q, Matrix(5, 3), v), ShapeError);
  CHECK_THROWS_AS(scaled_dot_attention(q, k, Matrix(4, 6)), ShapeError);
}

TEST_CASE("cosine_similarity") {
  const std::vector<double> u{1.0, 2.0, -3.0};
  const std::vector<double> neg{-1.0, -2.0, 3.0};
  CHECK(cosine_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine_similarity(u, neg) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarity(u, std::vector<double>{0, 0, 0}), DomainError);
}

TEST_CASE("finite_diff_gradient basics") {
  auto square = [](std::span<const double> x) { return x[0] * x[0]; };
  const std::vector<double> x{3.0};
  CHECK(std::abs(finite_diff_gradient(square, x, 1e-5)[0] - 6.0) < 1e-6);

  auto constant = [](std::span<const double>) { return 4.2; };
  for (double g : finite_diff_gradient(constant, std::vector<double>{1, 2, 3}, 1e-5))
    CHECK(g == 0.0);

  auto bad = [](std::span<const double>) { return std::nan(""); };
  CHECK_THROWS_AS(finite_diff_gradient(bad, x, 1e-5), NumericError);
  CHECK_THROWS_AS(finite_diff_gradient(square, x, 0.0), InvalidArgument);
}

TEST_CASE("finite_diff_gradient of a quadratic matches 2 A^T A x") {
  Rng rng(6);
  Matrix a = random_normal(5, 4, 1.0, rng);
  Matrix xm = random_normal(4, 1, 1.0, rng);
  auto f = [&](std::span<const double> x) {
    Matrix col(4, 1, std::vector<double>(x.begin(), x.end()));
    Matrix ax = matmul(a, col);
    return dot(ax.values(), ax.values());
  };
  Matrix analytic = matmul(a.transposed(), matmul(a, xm)) * 2.0;
  for (double eps : {1e-6, 1e-5, 1e-4}) {
    auto g = finite_diff_gradient(f, xm.values(), eps);
    for (std::size_t i = 0; i < 4; ++i) CHECK(relative_error(analytic[i], g[i], 1e-8) < 1e-6);
  }
}

TEST_CASE("rng stream is fixed") {
  Rng rng(42);
  CHECK(rng.next_u64() == 0x15780b2e0c2ec716ULL);
  CHECK(rng.next_u64() == 0x6104d9866d113a7eULL);
  CHECK(rng.next_u64() == 0xae17533239e499a1ULL);
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(a.below(7) < 7);
  }
}

// Every tape op is checked against central differences of its own forward.
TEST_CASE("autograd ops match finite differences") {
  Rng rng(8);
  Matrix a = random_normal(3, 4, 1.0, rng);
  Matrix b = random_normal(4, 3, 1.0, rng);
  Matrix c = random_normal(3, 4, 1.0, rng);
  Matrix bias = random_normal(1, 4, 1.0, rng);
  Matrix col = random_normal(3, 1, 1.0, rng);
  Matrix scalar{{0.3}};
  Matrix gain = random_normal(1, 4, 1.0, rng);
  Matrix weights = random_normal(3, 4, 1.0, rng);  // fixed projection of outputs
  Matrix square = random_normal(3, 3, 1.0, rng);
  std::vector<ParamRef> params{{"a", &a}, {"b", &b}, {"c", &c}, {"bias", &bias},
                               {"col", &col}, {"scalar", &scalar}, {"gain", &gain},
                               {"square", &square}};

  // Weighted sums keep the probes from cancelling by symmetry.
  auto weighted = [&](ad::Tape& t, ad::Var v) {
    Matrix w(v.rows(), v.cols());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::sin(1.0 + 0.7 * static_cast<double>(i));
    return ad::sum(ad::hadamard(v, t.constant(w)));
  };

  std::vector<std::pair<std::string, LossBuilder>> cases;
  cases.emplace_back("matmul", [&](ad::Tape& t) { return weighted(t, ad::matmul(t.param(a), t.param(b))); });
  cases.emplace_back("add_bias", [&](ad::Tape& t) { return weighted(t, ad::add_bias(ad::add(t.param(a), t.param(c)), t.param(bias))); });
  cases.emplace_back("hadamard", [&](ad::Tape& t) { return weighted(t, ad::hadamard(t.param(a), t.param(c))); });
  cases.emplace_back("mul_rows", [&](ad::Tape& t) { return weighted(t, ad::mul_rows(t.param(a), t.param(col))); });
  cases.emplace_back("mask_rows", [&](ad::Tape& t) {
    const std::vector<std::uint8_t> keep{1, 0, 1};
    return weighted(t, ad::mask_rows(t.param(a), keep));
  });
  cases.emplace_back("scale_by_exp", [&](ad::Tape& t) { return weighted(t, ad::scale_by(t.param(a), ad::exp(t.param(scalar)))); });
  cases.emplace_back("tanh_gelu_silu", [&](ad::Tape& t) { return weighted(t, ad::add(ad::tanh(t.param(a)), ad::add(ad::gelu(t.param(c)), ad::silu(t.param(a))))); });
  cases.emplace_back("softmax", [&](ad::Tape& t) { return weighted(t, ad::softmax_rows(t.param(a))); });
  cases.emplace_back("layer_norm", [&](ad::Tape& t) { return weighted(t, ad::layer_norm(t.param(a), t.param(gain), t.param(bias))); });
  cases.emplace_back("l2_normalize", [&](ad::Tape& t) { return weighted(t, ad::l2_normalize_rows(t.param(c))); });
  cases.emplace_back("transpose_concat_slice", [&](ad::Tape& t) {
    std::array rows{t.param(a), t.param(c)};
    std::array cols{t.param(a), t.param(c)};
    ad::Var r = ad::slice_rows(ad::concat_rows(rows), 1, 5);
    ad::Var s = ad::slice_cols(ad::concat_cols(cols), 2, 6);
    return ad::add(weighted(t, r), weighted(t, ad::transpose(s)));
  });
  cases.emplace_back("gather", [&](ad::Tape& t) {
    const std::vector<int> ids{2, 0, 2, 1};
    return weighted(t, ad::gather_rows(t.param(a), ids));
  });
  cases.emplace_back("causal_softmax", [&](ad::Tape& t) { return weighted(t, ad::softmax_rows(ad::causal_fill(t.param(square)))); });
  cases.emplace_back("cross_entropy", [&](ad::Tape& t) {
    const std::vector<int> targets{1, -1, 2};
    return ad::cross_entropy(ad::matmul(t.param(a), ad::transpose(t.param(c))), targets);
  });

  for (auto& [name, builder] : cases) {
    CAPTURE(name);
    GradCheckOptions opts;
    opts.probes_per_param = 0;
    opts.floor = 1e-8;
    GradReport report = check_gradients(builder, params, opts);
    CAPTURE(report.worst_parameter);
    CHECK(report.max_relative_error < 1e-6);
  }
}

TEST_CASE("mask_rows writes exact zeros") {
  ad::Tape t;
  Matrix a{{-1.0, 2.0}, {-3.0, 4.0}};
  const std::vector<std::uint8_t> keep{0, 1};
  Matrix out = ad::mask_rows(t.constant(a), keep).value();
  CHECK(!std::signbit(out(0, 0)));
  CHECK(out(0, 1) == 0.0);
  CHECK(out(1, 0) == -3.0);
  CHECK_THROWS_AS(ad::mask_rows(t.constant(a), std::vector<std::uint8_t>{1}), ShapeError);
}

TEST_CASE("cross_entropy equals log V for uniform logits") {
  ad::Tape t;
  Matrix logits(4, 11, 0.25);
  ad::Var l = ad::cross_entropy(t.constant(logits), std::vector<int>{0, 3, 10, -1});
  CHECK(l.value()(0, 0) == doctest::Approx(std::log(11.0)).epsilon(1e-14));
  CHECK_THROWS_AS(ad::cross_entropy(t.constant(logits), std::vector<int>{-1, -1, -1, -1}),
                  InvalidArgument);
}

TEST_CASE("shared parameter receives summed gradient") {
  Matrix w{{2.0}};
  ad::Tape t;
  ad::Var x = t.param(w);
  ad::Var y = ad::add(ad::hadamard(x, x), x);  // w^2 + w
  t.backward(ad::sum(y));
  CHECK(t.param_grad(w)(0, 0) == doctest::Approx(5.0));
  CHECK(t.param_grad(Matrix{{1.0}}).rows() == 1);
}
