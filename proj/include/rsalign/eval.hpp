// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

// Task-level scoring of generated text against ground truth.
//
// Predictions: one {"id": ..., "output": "..."} per line.
// Ground truth: one {"id": ..., <field>} per line where field is
//   classify, vqa: "label": "..." (vqa lines may add "type" for a breakdown)
//   ground:        "box": [x0, y0, x1, y1] or "boxes": [[...], ...]
//   caption:       "references": ["...", ...]
// Every truth id needs exactly one prediction; extra predictions are ignored.
namespace rsalign::eval {

enum class Task { kClassify, kVqa, kGround, kCaption };

std::optional<Task> parse_task(std::string_view name);
std::string task_name(Task task);

struct Prediction {
  std::string id;
  std::string output;
};

std::vector<Prediction> load_predictions(const std::string& path);
std::vector<nlohmann::json> load_truth(const std::string& path);

// Report fields: "task", "count" and
//   classify, vqa: "accuracy" (vqa: "per_type" when types are given)
//   ground:        "precision@0.5", "mean_iou", "unparsed"
//   caption:       "bleu1", "rouge1", "meteor_simplified" (means)
nlohmann::json evaluate(Task task, const std::vector<Prediction>& predictions,
                        const std::vector<nlohmann::json>& truth);

}  // namespace rsalign::eval
