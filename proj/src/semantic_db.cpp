// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/semantic_db.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "rsalign/binary_io.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/matrix.hpp"

namespace rsalign {

namespace {

constexpr char kMagic[] = "RSDB";

bool ranks_before(const RetrievalResult& a, const RetrievalResult& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

}  // namespace

SemanticDatabase::SemanticDatabase(std::uint32_t dim) : dim_(dim) {
  if (dim == 0) throw InvalidArgument("SemanticDatabase: dimension must be positive");
}

const SemanticRecord& SemanticDatabase::record(std::uint64_t id) const {
  auto it = std::lower_bound(records_.begin(), records_.end(), id,
                             [](const SemanticRecord& r, std::uint64_t v) { return r.id < v; });
  if (it == records_.end() || it->id != id) {
    throw InvalidArgument("SemanticDatabase: no record with id " + std::to_string(id));
  }
  return *it;
}

std::uint64_t SemanticDatabase::ingest(std::string text, std::span<const double> embedding) {
  if (embedding.size() != dim_) {
    throw ShapeError("ingest: embedding of length " + std::to_string(embedding.size()) +
                     " into database of dim " + std::to_string(dim_));
  }
  if (text.empty()) throw InvalidArgument("ingest: empty description text");
  const double norm = l2_norm(embedding);
  if (norm == 0.0 || !std::isfinite(norm)) throw DomainError("ingest: zero or non-finite embedding");

  SemanticRecord rec;
  rec.id = records_.empty() ? 0 : records_.back().id + 1;
  rec.text = std::move(text);
  rec.embedding.reserve(dim_);
  for (double v : embedding) rec.embedding.push_back(static_cast<float>(v / norm));
  norms_.push_back(l2_norm(rec.embedding));
  records_.push_back(std::move(rec));
  return records_.back().id;
}

std::vector<RetrievalResult> SemanticDatabase::retrieve_top_k(std::span<const double> query,
                                                              std::size_t k) const {
  if (query.size() != dim_) {
    throw ShapeError("retrieve_top_k: query of length " + std::to_string(query.size()) +
                     " against database of dim " + std::to_string(dim_));
  }
  const double qnorm = l2_norm(query);
  if (qnorm == 0.0) throw DomainError("retrieve_top_k: zero query vector");
  std::vector<RetrievalResult> all;
  all.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    const double s = dot(query, records_[i].embedding) / (qnorm * norms_[i]);
    all.push_back({records_[i].id, std::clamp(s, -1.0, 1.0)});
  }
  const std::size_t n = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(),
                    ranks_before);
  all.resize(n);
  return all;
}

std::vector<char> SemanticDatabase::serialize() const {
  bin::Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kFormatVersion);
  w.u32(dim_);
  w.u64(records_.size());
  for (const auto& r : records_) {
    w.u64(r.id);
    w.u32(static_cast<std::uint32_t>(r.text.size()));
    w.bytes(r.text);
    for (double v : r.embedding) w.f32(static_cast<float>(v));
  }
  return w.buffer();
}

SemanticDatabase SemanticDatabase::deserialize(std::span<const char> bytes,
                                               std::optional<std::uint32_t> expected_dim) {
  bin::Reader r(bytes);
  if (r.bytes(std::min<std::size_t>(4, r.remaining()), "magic") != std::string_view(kMagic, 4)) {
    r.fail_at("bad magic, expected \"RSDB\"", 0);
  }
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16("format version");
  if (version != kFormatVersion) {
    r.fail_at("unsupported RSDB version " + std::to_string(version), version_at);
  }
  const std::size_t dim_at = r.offset();
  const std::uint32_t dim = r.u32("dim");
  if (dim == 0) r.fail_at("dimension is zero", dim_at);
  if (expected_dim && *expected_dim != dim) {
    r.fail_at("dimension " + std::to_string(dim) + " disagrees with expected " +
                  std::to_string(*expected_dim),
              dim_at);
  }
  const std::uint64_t count = r.u64("record count");
  SemanticDatabase db(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t rec_at = r.offset();
    SemanticRecord rec;
    rec.id = r.u64("record id");
    if (!db.records_.empty() && rec.id <= db.records_.back().id) {
      r.fail_at("record ids not strictly increasing", rec_at);
    }
    const std::uint32_t len = r.u32("text length");
    if (len == 0) r.fail("empty description text");
    rec.text = r.bytes(len, "text");
    rec.embedding.reserve(dim);
    const std::size_t emb_at = r.offset();
    for (std::uint32_t d = 0; d < dim; ++d) {
      const float f = r.f32("embedding");
      if (!std::isfinite(f)) r.fail_at("non-finite embedding value", emb_at);
      rec.embedding.push_back(f);
    }
    const double norm = l2_norm(rec.embedding);
    if (std::abs(norm - 1.0) > 1e-5) r.fail_at("embedding is not unit-norm", emb_at);
    db.norms_.push_back(norm);
    db.records_.push_back(std::move(rec));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last record");
  return db;
}

void SemanticDatabase::save(const std::string& path) const { bin::write_file(path, serialize()); }

SemanticDatabase SemanticDatabase::load(const std::string& path,
                                        std::optional<std::uint32_t> expected_dim) {
  return deserialize(bin::read_file(path), expected_dim);
}

std::size_t ingest_jsonl(SemanticDatabase& db, std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t count = 0;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::uint64_t line_at = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto text = j.at("text").get<std::string>();
      const auto emb = j.at("embedding").get<std::vector<double>>();
      db.ingest(text, emb);
      ++count;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what(), line_at);
    } catch (const Error& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what(), line_at);
    }
  }
  return count;
}

}  // namespace rsalign
