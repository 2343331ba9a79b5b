// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/autograd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "rsalign/errors.hpp"

namespace rsalign::ad {

namespace {

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                     " and " + b.shape_string());
  }
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw InvalidArgument("autograd: unbound variable");
  return *a.tape;
}

Tape& tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw InvalidArgument("autograd: variables from different tapes");
  return tape_of(a);
}

constexpr double kMaskedScore = -1e9;

}  // namespace

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix m) {
  Node n;
  n.value = std::move(m);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(const Matrix& m) {
  if (auto it = param_nodes_.find(&m); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = m;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  const std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&m, id);
  return {this, id};
}

Var Tape::push(Matrix value, std::span<const std::size_t> parents, Backward back) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    n.needs_grad = std::any_of(parents.begin(), parents.end(),
                               [&](std::size_t p) { return nodes_[p].needs_grad; });
    if (n.needs_grad) n.back = std::move(back);
  }
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Matrix& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Matrix(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  if (!nodes_[id].needs_grad) return;
  grad_slot(id) += g;
}

void Tape::backward(Var loss) {
  if (!record_) throw InvalidArgument("Tape::backward: tape was not recording");
  if (loss.tape != this) throw InvalidArgument("Tape::backward: foreign variable");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw ShapeError("Tape::backward: loss must be 1x1, got " + lv.shape_string());
  }
  grad_slot(loss.id)(0, 0) += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.back) continue;
    // Closures only touch parents (smaller ids) and never push nodes, so
    // these references stay valid.
    n.back(*this, n.value, n.grad);
  }
}

Matrix Tape::param_grad(const Matrix& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end() || !nodes_[it->second].has_grad) {
    return Matrix(p.rows(), p.cols());
  }
  return nodes_[it->second].grad;
}

std::vector<const Matrix*> Tape::bound_params() const {
  std::vector<const Matrix*> out;
  out.reserve(param_nodes_.size());
  for (const auto& [ptr, id] : param_nodes_) out.push_back(ptr);
  return out;
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const std::array parents{a.id, b.id};
  return t.push(rsalign::matmul(a.value(), b.value()), parents,
                [a, b](Tape& tp, const Matrix&, const Matrix& g) {
                  if (tp.needs_grad(a.id))
                    tp.accumulate(a.id, rsalign::matmul(g, b.value().transposed()));
                  if (tp.needs_grad(b.id))
                    tp.accumulate(b.id, rsalign::matmul(a.value().transposed(), g));
                });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require(a.value().same_shape(b.value()), "add", a.value(), b.value());
  const std::array parents{a.id, b.id};
  return t.push(a.value() + b.value(), parents, [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a.id, g);
    tp.accumulate(b.id, g);
  });
}

Var add_bias(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  require(bv.rows() == 1 && bv.cols() == av.cols(), "add_bias", av, bv);
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  const std::array parents{a.id, bias.id};
  return t.push(std::move(out), parents, [a, bias](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a.id, g);
    if (tp.needs_grad(bias.id)) {
      Matrix gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      tp.accumulate(bias.id, gb);
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  const std::array parents{a.id};
  return t.push(a.value() * s, parents,
                [a, s](Tape& tp, const Matrix&, const Matrix& g) { tp.accumulate(a.id, g * s); });
}

Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a, s);
  const Matrix& sv = s.value();
  if (sv.rows() != 1 || sv.cols() != 1) throw ShapeError("scale_by: scalar must be 1x1");
  const std::array parents{a.id, s.id};
  return t.push(a.value() * sv(0, 0), parents, [a, s](Tape& tp, const Matrix&, const Matrix& g) {
    const double k = s.value()(0, 0);
    tp.accumulate(a.id, g * k);
    if (tp.needs_grad(s.id)) {
      double acc = 0.0;
      const Matrix& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      tp.accumulate(s.id, Matrix(1, 1, acc));
    }
  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  require(av.same_shape(bv), "hadamard", av, bv);
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::array parents{a.id, b.id};
  return t.push(std::move(out), parents, [a, b](Tape& tp, const Matrix&, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    if (tp.needs_grad(a.id)) {
      Matrix ga(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i];
      tp.accumulate(a.id, ga);
    }
    if (tp.needs_grad(b.id)) {
      Matrix gb(g.rows(), g.cols());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
      tp.accumulate(b.id, gb);
    }
  });
}

Var mul_rows(Var a, Var col) {
  Tape& t = tape_of(a, col);
  const Matrix& av = a.value();
  const Matrix& cv = col.value();
  require(cv.cols() == 1 && cv.rows() == av.rows(), "mul_rows", av, cv);
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (auto& v : out.row(r)) v *= cv(r, 0);
  const std::array parents{a.id, col.id};
  return t.push(std::move(out), parents, [a, col](Tape& tp, const Matrix&, const Matrix& g) {
    const Matrix& av = a.value();
    const Matrix& cv = col.value();
    if (tp.needs_grad(a.id)) {
      Matrix ga = g;
      for (std::size_t r = 0; r < ga.rows(); ++r)
        for (auto& v : ga.row(r)) v *= cv(r, 0);
      tp.accumulate(a.id, ga);
    }
    if (tp.needs_grad(col.id)) {
      Matrix gc(cv.rows(), 1);
      for (std::size_t r = 0; r < g.rows(); ++r) gc(r, 0) = dot(g.row(r), av.row(r));
      tp.accumulate(col.id, gc);
    }
  });
}

Var mask_rows(Var a, std::span<const std::uint8_t> keep) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (keep.size() != av.rows()) {
    throw ShapeError("mask_rows: mask of length " + std::to_string(keep.size()) + " for " +
                     av.shape_string());
  }
  Matrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    if (keep[r]) std::copy(av.row(r).begin(), av.row(r).end(), out.row(r).begin());
  const std::array parents{a.id};
  std::vector<std::uint8_t> bits(keep.begin(), keep.end());
  return t.push(std::move(out), parents,
                [a, bits = std::move(bits)](Tape& tp, const Matrix&, const Matrix& g) {
                  Matrix& ga = tp.grad_slot(a.id);
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    if (!bits[r]) continue;
                    for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) += g(r, c);
                  }
                });
}

namespace {

template <typename F, typename D>
Var elementwise(Var a, F f, D df) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  const std::array parents{a.id};
  return t.push(std::move(out), parents, [a, df](Tape& tp, const Matrix&, const Matrix& g) {
    const Matrix& av = a.value();
    Matrix ga(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * df(av[i]);
    tp.accumulate(a.id, ga);
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var exp(Var a) {
  return elementwise(a, [](double x) { return std::exp(x); },
                     [](double x) { return std::exp(x); });
}

Var tanh(Var a) {
  return elementwise(a, [](double x) { return std::tanh(x); },
                     [](double x) {
                       const double th = std::tanh(x);
                       return 1.0 - th * th;
                     });
}

Var gelu(Var a) {
  return elementwise(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x) {
        const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + th) +
               0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
}

Var silu(Var a) {
  return elementwise(a, [](double x) { return x * sigmoid(x); },
                     [](double x) {
                       const double s = sigmoid(x);
                       return s + x * s * (1.0 - s);
                     });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  const std::array parents{a.id};
  return t.push(rsalign::softmax_rows(a.value()), parents,
                [a](Tape& tp, const Matrix& y, const Matrix& g) {
                  Matrix ga(g.rows(), g.cols());
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    const double s = dot(g.row(r), y.row(r));
                    for (std::size_t c = 0; c < g.cols(); ++c)
                      ga(r, c) = y(r, c) * (g(r, c) - s);
                  }
                  tp.accumulate(a.id, ga);
                });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x, gain);
  tape_of(x, bias);
  const Matrix& xv = x.value();
  const std::size_t n = xv.cols();
  require(gain.value().rows() == 1 && gain.value().cols() == n, "layer_norm(gain)", xv,
          gain.value());
  require(bias.value().rows() == 1 && bias.value().cols() == n, "layer_norm(bias)", xv,
          bias.value());
  Matrix xhat(xv.rows(), n);
  Matrix inv_std(xv.rows(), 1);
  Matrix out(xv.rows(), n);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std(r, 0) = inv;
    for (std::size_t c = 0; c < n; ++c) {
      xhat(r, c) = (row[c] - mean) * inv;
      out(r, c) = xhat(r, c) * gv(0, c) + bv(0, c);
    }
  }
  const std::array parents{x.id, gain.id, bias.id};
  return t.push(std::move(out), parents,
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape& tp, const Matrix&, const Matrix& g) {
                  const std::size_t n = g.cols();
                  const Matrix& gv = gain.value();
                  if (tp.needs_grad(gain.id) || tp.needs_grad(bias.id)) {
                    Matrix dg(1, n);
                    Matrix db(1, n);
                    for (std::size_t r = 0; r < g.rows(); ++r)
                      for (std::size_t c = 0; c < n; ++c) {
                        dg(0, c) += g(r, c) * xhat(r, c);
                        db(0, c) += g(r, c);
                      }
                    tp.accumulate(gain.id, dg);
                    tp.accumulate(bias.id, db);
                  }
                  if (tp.needs_grad(x.id)) {
                    Matrix dx(g.rows(), n);
                    const double nn = static_cast<double>(n);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      double sum_d = 0.0;
                      double sum_dx = 0.0;
                      for (std::size_t c = 0; c < n; ++c) {
                        const double d = g(r, c) * gv(0, c);
                        sum_d += d;
                        sum_dx += d * xhat(r, c);
                      }
                      for (std::size_t c = 0; c < n; ++c) {
                        const double d = g(r, c) * gv(0, c);
                        dx(r, c) = inv_std(r, 0) / nn * (nn * d - sum_d - xhat(r, c) * sum_dx);
                      }
                    }
                    tp.accumulate(x.id, dx);
                  }
                });
}

Var l2_normalize_rows(Var a) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out = av;
  Matrix norms(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const double nrm = l2_norm(av.row(r));
    if (nrm == 0.0) throw DomainError("l2_normalize_rows: zero-norm row " + std::to_string(r));
    norms(r, 0) = nrm;
    for (auto& v : out.row(r)) v /= nrm;
  }
  const std::array parents{a.id};
  return t.push(std::move(out), parents,
                [a, norms = std::move(norms)](Tape& tp, const Matrix& y, const Matrix& g) {
                  Matrix ga(g.rows(), g.cols());
                  for (std::size_t r = 0; r < g.rows(); ++r) {
                    const double yg = dot(y.row(r), g.row(r));
                    for (std::size_t c = 0; c < g.cols(); ++c)
                      ga(r, c) = (g(r, c) - y(r, c) * yg) / norms(r, 0);
                  }
                  tp.accumulate(a.id, ga);
                });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  const std::array parents{a.id};
  return t.push(a.value().transposed(), parents,
                [a](Tape& tp, const Matrix&, const Matrix& g) {
                  tp.accumulate(a.id, g.transposed());
                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> parents;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    require(p.cols() == cols, "concat_rows", parts[0].value(), p.value());
    rows += p.rows();
    parents.push_back(p.id);
  }
  Matrix out(rows, cols);
  std::size_t r0 = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    std::copy(pv.values().begin(), pv.values().end(), out.values().begin() + r0 * cols);
    r0 += pv.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return t.push(std::move(out), parents,
                [keep = std::move(keep)](Tape& tp, const Matrix&, const Matrix& g) {
                  std::size_t r0 = 0;
                  for (const Var& p : keep) {
                    const std::size_t pr = p.rows();
                    if (tp.needs_grad(p.id)) {
                      Matrix gp(pr, g.cols());
                      std::copy(g.values().begin() + r0 * g.cols(),
                                g.values().begin() + (r0 + pr) * g.cols(), gp.values().begin());
                      tp.accumulate(p.id, gp);
                    }
                    r0 += pr;
                  }
                });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> parents;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    require(p.rows() == rows, "concat_cols", parts[0].value(), p.value());
    cols += p.cols();
    parents.push_back(p.id);
  }
  Matrix out(rows, cols);
  std::size_t c0 = 0;
  for (const Var& p : parts) {
    const Matrix& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(pv.row(r).begin(), pv.row(r).end(), out.row(r).begin() + c0);
    c0 += pv.cols();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return t.push(std::move(out), parents,
                [keep = std::move(keep)](Tape& tp, const Matrix&, const Matrix& g) {
                  std::size_t c0 = 0;
                  for (const Var& p : keep) {
                    const std::size_t pc = p.cols();
                    if (tp.needs_grad(p.id)) {
                      Matrix gp(g.rows(), pc);
                      for (std::size_t r = 0; r < g.rows(); ++r)
                        std::copy(g.row(r).begin() + c0, g.row(r).begin() + c0 + pc,
                                  gp.row(r).begin());
                      tp.accumulate(p.id, gp);
                    }
                    c0 += pc;
                  }
                });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (begin > end || end > av.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + av.shape_string());
  }
  const std::size_t cols = av.cols();
  Matrix out(end - begin, cols);
  std::copy(av.values().begin() + begin * cols, av.values().begin() + end * cols,
            out.values().begin());
  const std::array parents{a.id};
  return t.push(std::move(out), parents,
                [a, begin](Tape& tp, const Matrix&, const Matrix& g) {
                  Matrix& ga = tp.grad_slot(a.id);
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) ga(begin + r, c) += g(r, c);
                });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (begin > end || end > av.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + av.shape_string());
  }
  Matrix out(av.rows(), end - begin);
  for (std::size_t r = 0; r < av.rows(); ++r)
    std::copy(av.row(r).begin() + begin, av.row(r).begin() + end, out.row(r).begin());
  const std::array parents{a.id};
  return t.push(std::move(out), parents,
                [a, begin](Tape& tp, const Matrix&, const Matrix& g) {
                  Matrix& ga = tp.grad_slot(a.id);
                  for (std::size_t r = 0; r < g.rows(); ++r)
                    for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
                });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Tape& t = tape_of(table);
  const Matrix& tv = table.value();
  Matrix out(ids.size(), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw DomainError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                        std::to_string(tv.rows()) + " rows");
    }
    std::copy(tv.row(ids[i]).begin(), tv.row(ids[i]).end(), out.row(i).begin());
  }
  const std::array parents{table.id};
  std::vector<int> keep(ids.begin(), ids.end());
  return t.push(std::move(out), parents,
                [table, keep = std::move(keep)](Tape& tp, const Matrix&, const Matrix& g) {
                  Matrix& gt = tp.grad_slot(table.id);
                  for (std::size_t i = 0; i < keep.size(); ++i)
                    for (std::size_t c = 0; c < g.cols(); ++c) gt(keep[i], c) += g(i, c);
                });
}

Var causal_fill(Var scores) {
  Tape& t = tape_of(scores);
  Matrix out = scores.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = r + 1; c < out.cols(); ++c) out(r, c) = kMaskedScore;
  const std::array parents{scores.id};
  return t.push(std::move(out), parents,
                [scores](Tape& tp, const Matrix&, const Matrix& g) {
                  Matrix gs = g;
                  for (std::size_t r = 0; r < gs.rows(); ++r)
                    for (std::size_t c = r + 1; c < gs.cols(); ++c) gs(r, c) = 0.0;
                  tp.accumulate(scores.id, gs);
                });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::array parents{a.id};
  return t.push(Matrix(1, 1, s), parents, [a](Tape& tp, const Matrix&, const Matrix& g) {
    tp.accumulate(a.id, Matrix(a.rows(), a.cols(), g(0, 0)));
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  const Matrix& lv = logits.value();
  if (targets.size() != lv.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + lv.shape_string());
  }
  Matrix probs(lv.rows(), lv.cols());
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= lv.cols()) {
      throw DomainError("cross_entropy: target " + std::to_string(targets[r]) +
                        " outside vocabulary of " + std::to_string(lv.cols()));
    }
    auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    total += lse - row[targets[r]];
    for (std::size_t c = 0; c < row.size(); ++c) probs(r, c) = std::exp(row[c] - lse);
    ++counted;
  }
  if (counted == 0) throw InvalidArgument("cross_entropy: no target rows");
  const double inv = 1.0 / static_cast<double>(counted);
  const std::array parents{logits.id};
  std::vector<int> keep(targets.begin(), targets.end());
  return t.push(Matrix(1, 1, total * inv), parents,
                [logits, inv, keep = std::move(keep), probs = std::move(probs)](
                    Tape& tp, const Matrix&, const Matrix& g) {
                  Matrix gl(probs.rows(), probs.cols());
                  const double k = g(0, 0) * inv;
                  for (std::size_t r = 0; r < probs.rows(); ++r) {
                    if (keep[r] < 0) continue;
                    for (std::size_t c = 0; c < probs.cols(); ++c) gl(r, c) = probs(r, c) * k;
                    gl(r, keep[r]) -= k;
                  }
                  tp.accumulate(logits.id, gl);
                });
}

}  // namespace rsalign::ad
