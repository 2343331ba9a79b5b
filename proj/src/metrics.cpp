// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <regex>

#include "rsalign/errors.hpp"

namespace rsalign::metrics {

namespace {

std::string fold(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::map<std::string, std::size_t> counts(const Tokens& t) {
  std::map<std::string, std::size_t> m;
  for (const auto& w : t) ++m[w];
  return m;
}

std::size_t overlap(const Tokens& a, const Tokens& b) {
  const auto cb = counts(b);
  std::size_t n = 0;
  for (const auto& [w, k] : counts(a)) {
    auto it = cb.find(w);
    if (it != cb.end()) n += std::min(k, it->second);
  }
  return n;
}

void require_refs(const CaptionPair& p, const char* what) {
  if (p.references.empty()) throw InvalidArgument(std::string(what) + ": no references");
}

double meteor_single(const Tokens& cand, const Tokens& ref) {
  std::vector<bool> used(ref.size(), false);
  std::size_t matches = 0, chunks = 0;
  std::size_t prev_ref = std::numeric_limits<std::size_t>::max();
  bool prev_matched = false;
  for (const auto& w : cand) {
    std::size_t pick = ref.size();
    if (prev_matched && prev_ref + 1 < ref.size() && !used[prev_ref + 1] && ref[prev_ref + 1] == w) {
      pick = prev_ref + 1;
    } else {
      for (std::size_t j = 0; j < ref.size(); ++j)
        if (!used[j] && ref[j] == w) {
          pick = j;
          break;
        }
    }
    if (pick == ref.size()) {
      prev_matched = false;
      continue;
    }
    if (!(prev_matched && pick == prev_ref + 1)) ++chunks;
    used[pick] = true;
    ++matches;
    prev_ref = pick;
    prev_matched = true;
  }
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(cand.size());
  const double r = m / static_cast<double>(ref.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

}  // namespace

void validate_box(const Box& b) {
  for (double v : {b.x_min, b.y_min, b.x_max, b.y_max}) {
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw DomainError("box coordinate " + std::to_string(v) + " outside [0, 1]");
    }
  }
  if (b.x_min > b.x_max || b.y_min > b.y_max) {
    throw DomainError("box corners out of order");
  }
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) out.push_back(fold(text.substr(b, e - b)));
    i = j;
  }
  return out;
}

double accuracy(std::span<const std::string> predictions, std::span<const std::string> labels) {
  if (predictions.size() != labels.size()) {
    throw InvalidArgument("accuracy: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw InvalidArgument("accuracy: no samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += fold(predictions[i]) == fold(labels[i]);
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double bleu1(const CaptionPair& pair) {
  require_refs(pair, "bleu1");
  if (pair.candidate.empty()) return 0.0;
  std::map<std::string, std::size_t> max_ref;
  for (const auto& ref : pair.references)
    for (const auto& [w, k] : counts(ref)) max_ref[w] = std::max(max_ref[w], k);
  std::size_t clipped = 0;
  for (const auto& [w, k] : counts(pair.candidate)) {
    auto it = max_ref.find(w);
    if (it != max_ref.end()) clipped += std::min(k, it->second);
  }
  const std::size_t c = pair.candidate.size();
  std::size_t r = pair.references.front().size();
  for (const auto& ref : pair.references) {
    const auto d = [&](std::size_t n) { return n > c ? n - c : c - n; };
    if (d(ref.size()) < d(r) || (d(ref.size()) == d(r) && ref.size() < r)) r = ref.size();
  }
  const double precision = static_cast<double>(clipped) / static_cast<double>(c);
  const double bp = c > r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return precision * bp;
}

double rouge1(const CaptionPair& pair) {
  require_refs(pair, "rouge1");
  if (pair.candidate.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : pair.references) {
    if (ref.empty()) continue;
    const auto n = static_cast<double>(overlap(pair.candidate, ref));
    if (n == 0.0) continue;
    const double p = n / static_cast<double>(pair.candidate.size());
    const double r = n / static_cast<double>(ref.size());
    best = std::max(best, 2.0 * p * r / (p + r));
  }
  return best;
}

double meteor_simplified(const CaptionPair& pair) {
  require_refs(pair, "meteor_simplified");
  if (pair.candidate.empty()) return 0.0;
  double best = 0.0;
  for (const auto& ref : pair.references) best = std::max(best, meteor_single(pair.candidate, ref));
  return best;
}

double iou(const Box& a, const Box& b) {
  validate_box(a);
  validate_box(b);
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double precision_at_iou(std::span<const Box> predictions, std::span<const Box> truths,
                        double threshold) {
  if (predictions.size() != truths.size()) {
    throw InvalidArgument("precision_at_iou: " + std::to_string(predictions.size()) +
                          " predictions for " + std::to_string(truths.size()) + " boxes");
  }
  if (truths.empty()) throw InvalidArgument("precision_at_iou: no samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) hit += iou(predictions[i], truths[i]) >= threshold;
  return static_cast<double>(hit) / static_cast<double>(truths.size());
}

std::optional<Box> parse_box(std::string_view text) {
  static const std::regex kGroup(
      R"(\[\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*,\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*,\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*,\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*\])");
  const std::string s(text);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), kGroup); it != std::sregex_iterator();
       ++it) {
    const auto& m = *it;
    Box b{std::stod(m[1]), std::stod(m[2]), std::stod(m[3]), std::stod(m[4])};
    try {
      validate_box(b);
      return b;
    } catch (const DomainError&) {
      continue;
    }
  }
  return std::nullopt;
}

}  // namespace rsalign::metrics
