// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rsalign/autograd.hpp"
#include "rsalign/matrix.hpp"

namespace rsalign {

// Named reference to a trainable matrix owned by some parameter struct.
struct ParamRef {
  std::string name;
  Matrix* value = nullptr;
};

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) per
// coordinate. Throws NumericError if f returns a non-finite value.
std::vector<double> finite_diff_gradient(const std::function<double(std::span<const double>)>& f,
                                         std::span<const double> x, double eps);

struct GradReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t probes = 0;
};

struct GradCheckOptions {
  std::size_t probes_per_param = 4;  // 0 probes every entry
  double eps = 1e-5;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-5;
  std::uint64_t seed = 0;
};

// Builds the scalar loss on the given tape; the function binds parameters
// through Tape::param so their gradients can be read back.
using LossBuilder = std::function<ad::Var(ad::Tape&)>;

double relative_error(double analytic, double numeric, double floor);

// Compares analytic gradients against central finite differences at randomly
// chosen entries of every parameter in `params`. Entries are restored after
// probing.
GradReport check_gradients(const LossBuilder& loss, std::span<const ParamRef> params,
                           const GradCheckOptions& options);

// Merges b into a, keeping the worse of the two.
void merge_reports(GradReport& a, const GradReport& b);

}  // namespace rsalign
