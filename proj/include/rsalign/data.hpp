// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "rsalign/dual_encoder.hpp"
#include "rsalign/model.hpp"
#include "rsalign/semantic_db.hpp"

// Line-delimited JSON inputs. Every parse failure is a FormatError naming the
// 1-based line and carrying the byte offset of that line.
namespace rsalign::data {

// An image is a nested array of patch rows, a flat array (one patch) or a
// string naming a JSON file that holds either form. Relative paths resolve
// against base_dir.
Matrix parse_image(const nlohmann::json& value, const std::string& base_dir);

// Column mean of the patch rows, used as the retriever's image features.
std::vector<double> retrieval_feature(const Matrix& patches);

// Supplies descriptions for samples that carry no "semantics" list.
struct SemanticSource {
  const SemanticDatabase* database = nullptr;
  const DualEncoderParams* retriever = nullptr;
  std::size_t top_k = 5;

  bool available() const noexcept { return database != nullptr && retriever != nullptr; }
};

std::vector<std::string> retrieve_texts(const SemanticSource& source, const Matrix& patches);

enum class SampleKind {
  kCaption,      // {image, caption, query?, semantics?}
  kInstruction,  // {image, query, response, semantics?}
  kPrompt,       // {image, query?, semantics?}; the response stays empty
};

struct Record {
  std::string id;  // "id" as text, or the 1-based line number
  Sample sample;
  nlohmann::json raw;
};

std::vector<Record> load_samples(const std::string& path, const ModelConfig& config,
                                 SampleKind kind, const SemanticSource& source);

// {"image": ..., "text": "..."} pairs for retriever training.
struct PairRecord {
  std::vector<double> features;
  std::string text;
};
std::vector<PairRecord> load_pairs(const std::string& path);

// {"text": "..."} lines for database construction.
std::vector<std::string> load_texts(const std::string& path);

std::string id_text(const nlohmann::json& id);

}  // namespace rsalign::data
