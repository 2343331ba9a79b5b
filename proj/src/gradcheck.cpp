// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rsalign/errors.hpp"
#include "rsalign/rng.hpp"

namespace rsalign {

std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                         std::span<const double> x, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("finite_diff_gradient: eps must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_gradient: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const LossBuilder& loss) {
  ad::Tape tape(false);
  const double v = loss(tape).value()(0, 0);
  if (!std::isfinite(v)) throw NumericError("gradient check: non-finite loss");
  return v;
}

}  // namespace

GradReport check_gradients(const LossBuilder& loss, std::span<const ParamRef> params,
                           const GradCheckOptions& options) {
  ad::Tape tape(true);
  ad::Var l = loss(tape);
  tape.backward(l);

  Rng rng(options.seed);
  GradReport report;
  for (const ParamRef& p : params) {
    Matrix& m = *p.value;
    const Matrix analytic = tape.param_grad(m);
    std::vector<std::size_t> indices;
    if (options.probes_per_param == 0 || options.probes_per_param >= m.size()) {
      indices.resize(m.size());
      std::iota(indices.begin(), indices.end(), std::size_t{0});
    } else {
      for (std::size_t i = 0; i < options.probes_per_param; ++i)
        indices.push_back(static_cast<std::size_t>(rng.below(m.size())));
    }
    for (std::size_t idx : indices) {
      const double saved = m[idx];
      m[idx] = saved + options.eps;
      const double up = evaluate(loss);
      m[idx] = saved - options.eps;
      const double down = evaluate(loss);
      m[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double err = relative_error(analytic[idx], numeric, options.floor);
      ++report.probes;
      if (err > report.max_relative_error || report.probes == 1) {
        report.max_relative_error = err;
        report.worst_parameter = p.name;
        report.worst_index = idx;
        report.analytic = analytic[idx];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

void merge_reports(GradReport& a, const GradReport& b) {
  const std::size_t total = a.probes + b.probes;
  if (a.probes == 0 || b.max_relative_error > a.max_relative_error) {
    a = b;
  }
  a.probes = total;
}

}  // namespace rsalign
