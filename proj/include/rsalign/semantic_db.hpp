// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rsalign {

// One scene description and its embedding. Embeddings are L2-normalized at
// ingest and then rounded to float32, the precision of the file format, so an
// in-memory database and its reloaded copy hold identical values.
struct SemanticRecord {
  std::uint64_t id = 0;
  std::string text;
  std::vector<double> embedding;
};

struct RetrievalResult {
  std::uint64_t id = 0;
  double score = 0.0;  // cosine similarity

  friend bool operator==(const RetrievalResult&, const RetrievalResult&) = default;
};

// Store of semantic descriptions queried by exact cosine similarity.
//
// RSDB file layout (all integers little-endian):
//   "RSDB" | version u16 | dim u32 | count u64 |
//   count x { id u64 | text length u32 | UTF-8 text | dim x float32 }
class SemanticDatabase {
 public:
  static constexpr std::uint16_t kFormatVersion = 1;

  explicit SemanticDatabase(std::uint32_t dim);

  std::uint32_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const std::vector<SemanticRecord>& records() const noexcept { return records_; }
  // Throws InvalidArgument for an unknown id.
  const SemanticRecord& record(std::uint64_t id) const;

  // Normalizes and appends; returns the new id (last id + 1, or 0).
  std::uint64_t ingest(std::string text, std::span<const double> embedding);

  // Top min(k, size) records by cosine similarity, score descending, ties by
  // ascending id. Flat scan over every record.
  std::vector<RetrievalResult> retrieve_top_k(std::span<const double> query,
                                              std::size_t k) const;

  std::vector<char> serialize() const;
  static SemanticDatabase deserialize(std::span<const char> bytes,
                                      std::optional<std::uint32_t> expected_dim = {});

  void save(const std::string& path) const;
  static SemanticDatabase load(const std::string& path,
                               std::optional<std::uint32_t> expected_dim = {});

 private:
  std::uint32_t dim_;
  std::vector<SemanticRecord> records_;
  std::vector<double> norms_;  // L2 norm of each stored (float-rounded) embedding
};

// Line-delimited JSON ingestion: {"text": "...", "embedding": [..]} per line.
// Blank lines are skipped. Errors name the 1-based line number. Returns the
// number of records ingested.
std::size_t ingest_jsonl(SemanticDatabase& db, std::istream& in);

}  // namespace rsalign
