// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/data.hpp"

#include <filesystem>
#include <fstream>
#include <functional>

#include "rsalign/binary_io.hpp"
#include "rsalign/errors.hpp"

namespace rsalign::data {

namespace {

using nlohmann::json;

std::string parent_dir(const std::string& path) {
  return std::filesystem::path(path).parent_path().string();
}

// Calls fn(json, line_no) for every non-blank line, converting failures into
// FormatError with the line's position.
void for_each_line(const std::string& path,
                   const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw InvalidArgument("expected a JSON object");
      fn(j, line_no);
    } catch (const json::exception& e) {
      throw FormatError(path + ": line " + std::to_string(line_no) + ": " + e.what(), at);
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(path + ": line " + std::to_string(line_no) + ": " + e.what(), at);
    }
  }
}

Matrix image_from_array(const json& a) {
  if (!a.is_array() || a.empty()) throw InvalidArgument("image must be a non-empty array");
  if (a.front().is_array()) {
    const std::size_t cols = a.front().size();
    if (cols == 0) throw InvalidArgument("image patch rows must be non-empty");
    Matrix m(a.size(), cols);
    for (std::size_t r = 0; r < a.size(); ++r) {
      if (!a[r].is_array() || a[r].size() != cols) {
        throw InvalidArgument("image patch row " + std::to_string(r) + " has the wrong length");
      }
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = a[r][c].get<double>();
    }
    return m;
  }
  Matrix m(1, a.size());
  for (std::size_t c = 0; c < a.size(); ++c) m(0, c) = a[c].get<double>();
  return m;
}

std::string required_string(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw InvalidArgument(std::string("missing string field \"") + key + "\"");
  }
  return j[key].get<std::string>();
}

}  // namespace

std::string id_text(const json& id) { return id.is_string() ? id.get<std::string>() : id.dump(); }

Matrix parse_image(const json& value, const std::string& base_dir) {
  Matrix m;
  if (value.is_string()) {
    std::filesystem::path p(value.get<std::string>());
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    const auto bytes = bin::read_file(p.string());
    const json a = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (a.is_discarded()) throw InvalidArgument("image file " + p.string() + " is not JSON");
    m = image_from_array(a);
  } else {
    m = image_from_array(value);
  }
  if (!m.all_finite()) throw DomainError("image contains non-finite values");
  return m;
}

std::vector<double> retrieval_feature(const Matrix& patches) {
  if (patches.rows() == 0) throw ShapeError("retrieval_feature: image has no patches");
  std::vector<double> f(patches.cols(), 0.0);
  for (std::size_t r = 0; r < patches.rows(); ++r)
    for (std::size_t c = 0; c < patches.cols(); ++c) f[c] += patches(r, c);
  for (auto& v : f) v /= static_cast<double>(patches.rows());
  return f;
}

std::vector<std::string> retrieve_texts(const SemanticSource& source, const Matrix& patches) {
  if (!source.available()) {
    throw InvalidArgument("sample has no \"semantics\" and no database/retriever is configured");
  }
  const auto query = encode_image(*source.retriever, retrieval_feature(patches));
  std::vector<std::string> texts;
  for (const auto& r : source.database->retrieve_top_k(query, source.top_k))
    texts.push_back(source.database->record(r.id).text);
  return texts;
}

std::vector<Record> load_samples(const std::string& path, const ModelConfig& config,
                                 SampleKind kind, const SemanticSource& source) {
  const std::string base = parent_dir(path);
  std::vector<Record> out;
  for_each_line(path, [&](const json& j, std::size_t line_no) {
    if (!j.contains("image")) throw InvalidArgument("missing field \"image\"");
    Record rec;
    rec.id = j.contains("id") ? id_text(j["id"]) : std::to_string(line_no);
    rec.sample.patches = parse_image(j["image"], base);
    if (rec.sample.patches.cols() != config.patch_dim) {
      throw ShapeError("image patches have width " + std::to_string(rec.sample.patches.cols()) +
                       ", model expects " + std::to_string(config.patch_dim));
    }
    std::string query;
    if (kind == SampleKind::kInstruction) {
      query = required_string(j, "query");
      rec.sample.response = encode_text(config, required_string(j, "response"));
    } else {
      if (j.contains("query")) query = required_string(j, "query");
      if (kind == SampleKind::kCaption) {
        rec.sample.response = encode_text(config, required_string(j, "caption"));
      }
    }
    rec.sample.query = encode_text(config, query);
    std::vector<std::string> semantics;
    if (j.contains("semantics")) {
      semantics = j["semantics"].get<std::vector<std::string>>();
    } else {
      semantics = retrieve_texts(source, rec.sample.patches);
    }
    rec.sample.semantics = semantic_token_ids(config, semantics);
    rec.raw = j;
    out.push_back(std::move(rec));
  });
  return out;
}

std::vector<PairRecord> load_pairs(const std::string& path) {
  const std::string base = parent_dir(path);
  std::vector<PairRecord> out;
  for_each_line(path, [&](const json& j, std::size_t) {
    if (!j.contains("image")) throw InvalidArgument("missing field \"image\"");
    out.push_back({retrieval_feature(parse_image(j["image"], base)), required_string(j, "text")});
  });
  return out;
}

std::vector<std::string> load_texts(const std::string& path) {
  std::vector<std::string> out;
  for_each_line(path, [&](const json& j, std::size_t) {
    std::string t = required_string(j, "text");
    if (t.empty()) throw InvalidArgument("empty text");
    out.push_back(std::move(t));
  });
  return out;
}

}  // namespace rsalign::data
