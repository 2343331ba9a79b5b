// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rsalign::metrics {

// Axis-aligned box in normalized image coordinates.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;
};

// Throws DomainError unless coordinates are finite, inside [0, 1] and ordered.
void validate_box(const Box& b);

using Tokens = std::vector<std::string>;

struct CaptionPair {
  Tokens candidate;
  std::vector<Tokens> references;  // at least one
};

// Lower-cases, splits on whitespace and strips punctuation at word edges.
Tokens tokenize(std::string_view text);

// Exact-match fraction after case folding and trimming.
double accuracy(std::span<const std::string> predictions, std::span<const std::string> labels);

// The caption scores return 0 for an empty candidate and throw
// InvalidArgument when there is no reference.

// Unigram precision with counts clipped by the maximum reference count, times
// the brevity penalty against the reference closest in length (ties go to
// the shorter one).
double bleu1(const CaptionPair& pair);
// Unigram F1, best over references.
double rouge1(const CaptionPair& pair);
// Exact-match METEOR: F_mean = 10PR / (R + 9P) times 1 - 0.5 (chunks /
// matches)^3, best over references. The alignment walks the candidate left
// to right and prefers the reference position that extends the current
// chunk, otherwise the earliest free one.
double meteor_simplified(const CaptionPair& pair);

// Intersection over union; 0 when the union has zero area.
double iou(const Box& a, const Box& b);
double precision_at_iou(std::span<const Box> predictions, std::span<const Box> truths,
                        double threshold = 0.5);

// First bracket group "[x_min, y_min, x_max, y_max]" of four decimals whose
// coordinates form a valid box.
std::optional<Box> parse_box(std::string_view text);

}  // namespace rsalign::metrics
