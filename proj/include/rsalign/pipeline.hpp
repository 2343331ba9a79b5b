// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsalign/config.hpp"
#include "rsalign/eval.hpp"

// File-level commands. Each validates the configuration before touching any
// file and returns a JSON report; artifacts depend only on inputs, config and
// seed.
namespace rsalign::pipeline {

// {"text"} lines embedded with the retriever's text tower into an RSDB file.
// Report: {"count", "dim", "database"}.
nlohmann::json build_db(const RunConfig& config, const std::string& texts_path,
                        const std::string& retriever_path, const std::string& out_path);

// {"image", "text"} lines; the image's column mean is the raw feature vector.
// Report: {"pairs", "initial_loss", "final_loss", "recall@1_before", "recall@1_after", ...}.
nlohmann::json train_retriever(const RunConfig& config, const std::string& pairs_path,
                               const std::string& out_path);

// Ranked {"rank", "id", "score", "text"} rows for the image in image_path
// (any image form accepted by data::parse_image). With a retriever the image
// is embedded first; without one the feature vector is used as the query.
std::vector<nlohmann::json> retrieve(const std::string& db_path, const std::string& retriever_path,
                                     const std::string& image_path, std::size_t k);

struct TrainRequest {
  int stage = 1;
  std::string data_path;
  std::string init_path;  // optional checkpoint to continue from
  std::string out_path;
};

// Report: {"stage", "samples", "steps_run", "initial_loss", "final_loss", "checkpoint"}.
nlohmann::json train(const RunConfig& config, const TrainRequest& request);

// Greedy outputs for {"id"?, "image", "query"?, "semantics"?} lines, written
// as {"id", "output"} lines to out_path when it is non-empty.
std::vector<eval::Prediction> predict(const RunConfig& config, const std::string& checkpoint_path,
                                      const std::string& inputs_path, const std::string& out_path);

nlohmann::json evaluate(eval::Task task, const std::vector<eval::Prediction>& predictions,
                        const std::string& truth_path);

// Finite-difference check of the model and the retriever at the configured
// sizes. Report: {"passed", "max_relative_error", "probes", "tolerance",
// "model": {...}, "retriever": {...}}.
nlohmann::json grad_check(const RunConfig& config, std::size_t probes_per_param);
inline constexpr double kGradTolerance = 1e-4;

// Writes a deterministic demo corpus as JSONL. kind: "retrieval" ({image,
// text}), "texts" ({text}), "caption" or "instruction". Report: {"kind", "count", "path"}.
nlohmann::json synth(const RunConfig& config, const std::string& kind, std::size_t count,
                     const std::string& out_path);

// Writes text to path, replacing it. Throws IoError.
void write_text(const std::string& path, const std::string& text);

}  // namespace rsalign::pipeline
