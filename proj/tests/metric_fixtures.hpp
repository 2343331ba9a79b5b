// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rsalign/metrics.hpp"

// Hand-counted caption and box cases shared by the unit and acceptance tests.
// Expected values are written as the rational (or closed-form) results of the
// counting by hand.
namespace rsalign::fixtures {

struct CaptionCase {
  std::string candidate;
  std::vector<std::string> references;
  double bleu1;
  double rouge1;
  double meteor;
};

inline std::vector<CaptionCase> caption_cases() {
  return {
      {"a a a a", {"a b c d"}, 1.0 / 4.0, 1.0 / 4.0, 1.0 / 8.0},
      {"a b", {"a c"}, 1.0 / 2.0, 1.0 / 2.0, 1.0 / 4.0},
      {"the cat sat", {"the cat sat down"}, std::exp(-1.0 / 3.0), 6.0 / 7.0, 265.0 / 351.0},
      {"the quick brown fox", {"the quick brown fox"}, 1.0, 1.0, 127.0 / 128.0},
      {"x y", {"a b"}, 0.0, 0.0, 0.0},
      {"the cat", {"a cat", "the dog sat"}, 1.0, 1.0 / 2.0, 1.0 / 4.0},
      {"sat the cat", {"the cat sat"}, 1.0, 1.0, 23.0 / 27.0},
      {"cat", {"the cat sat", "a cat"}, std::exp(-1.0), 2.0 / 3.0, 5.0 / 19.0},
  };
}

struct BoxCase {
  metrics::Box a;
  metrics::Box b;
  double iou;
};

inline std::vector<BoxCase> box_cases() {
  return {
      {{0, 0, 1, 1}, {0, 0, 1, 1}, 1.0},
      {{0, 0, 1, 1}, {0.5, 0, 1, 1}, 0.5},
      {{0, 0, 0.25, 0.25}, {0.5, 0.5, 1, 1}, 0.0},
      {{0, 0, 0.5, 0.5}, {0.25, 0.25, 0.75, 0.75}, 1.0 / 7.0},
      {{0, 0, 0.5, 1}, {0.5, 0, 1, 1}, 0.0},
      {{0.2, 0.2, 0.2, 0.2}, {0.2, 0.2, 0.2, 0.2}, 0.0},
      {{0, 0, 0.5, 0.5}, {0, 0, 0.25, 0.5}, 0.5},
  };
}

inline metrics::CaptionPair to_pair(const CaptionCase& c) {
  metrics::CaptionPair p{metrics::tokenize(c.candidate), {}};
  for (const auto& r : c.references) p.references.push_back(metrics::tokenize(r));
  return p;
}

}  // namespace rsalign::fixtures
