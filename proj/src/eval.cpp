// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/eval.hpp"

#include <fstream>
#include <map>

#include "rsalign/data.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/metrics.hpp"

namespace rsalign::eval {

namespace {

using nlohmann::json;

std::vector<std::pair<json, std::uint64_t>> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::pair<json, std::uint64_t>> out;
  std::string line;
  std::size_t line_no = 0;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id")) {
      throw FormatError(path + ": line " + std::to_string(line_no) +
                            ": expected a JSON object with an \"id\"",
                        at);
    }
    out.emplace_back(std::move(j), at);
  }
  return out;
}

metrics::Box to_box(const json& a) {
  if (!a.is_array() || a.size() != 4) throw InvalidArgument("box must have 4 numbers");
  metrics::Box b{a[0].get<double>(), a[1].get<double>(), a[2].get<double>(), a[3].get<double>()};
  metrics::validate_box(b);
  return b;
}

std::vector<metrics::Box> truth_boxes(const json& t) {
  std::vector<metrics::Box> out;
  if (t.contains("box")) out.push_back(to_box(t["box"]));
  if (t.contains("boxes")) {
    for (const auto& b : t["boxes"]) out.push_back(to_box(b));
  }
  if (out.empty()) throw InvalidArgument("missing \"box\" or \"boxes\"");
  return out;
}

std::string text_field(const json& t, const char* key) {
  if (!t.contains(key) || !t[key].is_string()) {
    throw InvalidArgument(std::string("missing string field \"") + key + "\"");
  }
  return t[key].get<std::string>();
}

}  // namespace

std::optional<Task> parse_task(std::string_view name) {
  if (name == "classify") return Task::kClassify;
  if (name == "vqa") return Task::kVqa;
  if (name == "ground") return Task::kGround;
  if (name == "caption") return Task::kCaption;
  return std::nullopt;
}

std::string task_name(Task task) {
  switch (task) {
    case Task::kClassify: return "classify";
    case Task::kVqa: return "vqa";
    case Task::kGround: return "ground";
    case Task::kCaption: return "caption";
  }
  return "unknown";
}

std::vector<Prediction> load_predictions(const std::string& path) {
  std::vector<Prediction> out;
  for (auto& [j, at] : read_lines(path)) {
    if (!j.contains("output") || !j["output"].is_string()) {
      throw FormatError(path + ": prediction without a string \"output\"", at);
    }
    out.push_back({data::id_text(j["id"]), j["output"].get<std::string>()});
  }
  return out;
}

std::vector<json> load_truth(const std::string& path) {
  std::vector<json> out;
  for (auto& [j, at] : read_lines(path)) out.push_back(std::move(j));
  return out;
}

json evaluate(Task task, const std::vector<Prediction>& predictions, const std::vector<json>& truth) {
  std::map<std::string, const std::string*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.id, &p.output).second) {
      throw FormatError("duplicate prediction id " + p.id, 0);
    }
  }
  std::vector<std::string> outputs;
  for (const auto& t : truth) {
    const std::string id = data::id_text(t.at("id"));
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw FormatError("no prediction for id " + id, 0);
    outputs.push_back(*it->second);
  }

  json report{{"task", task_name(task)}, {"count", truth.size()}};
  const double n = static_cast<double>(truth.size());
  switch (task) {
    case Task::kClassify:
    case Task::kVqa: {
      std::vector<std::string> labels;
      std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> types;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        labels.push_back(text_field(truth[i], "label"));
        if (task == Task::kVqa && truth[i].contains("type")) {
          auto& [p, l] = types[text_field(truth[i], "type")];
          p.push_back(outputs[i]);
          l.push_back(labels.back());
        }
      }
      report["accuracy"] = truth.empty() ? 0.0 : metrics::accuracy(outputs, labels);
      if (!types.empty()) {
        json per = json::object();
        for (const auto& [name, pl] : types) per[name] = metrics::accuracy(pl.first, pl.second);
        report["per_type"] = per;
      }
      break;
    }
    case Task::kGround: {
      std::size_t hits = 0;
      std::size_t unparsed = 0;
      double iou_sum = 0.0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto boxes = truth_boxes(truth[i]);
        const auto pred = metrics::parse_box(outputs[i]);
        if (!pred) {
          ++unparsed;
          continue;
        }
        double best = 0.0;
        for (const auto& b : boxes) best = std::max(best, metrics::iou(*pred, b));
        iou_sum += best;
        if (best >= 0.5) ++hits;
      }
      report["precision@0.5"] = truth.empty() ? 0.0 : static_cast<double>(hits) / n;
      report["mean_iou"] = truth.empty() ? 0.0 : iou_sum / n;
      report["unparsed"] = unparsed;
      break;
    }
    case Task::kCaption: {
      double b = 0.0, r = 0.0, m = 0.0;
      for (std::size_t i = 0; i < truth.size(); ++i) {
        metrics::CaptionPair pair;
        pair.candidate = metrics::tokenize(outputs[i]);
        if (!truth[i].contains("references") || !truth[i]["references"].is_array()) {
          throw InvalidArgument("missing \"references\" list");
        }
        for (const auto& ref : truth[i]["references"]) {
          pair.references.push_back(metrics::tokenize(ref.get<std::string>()));
        }
        b += metrics::bleu1(pair);
        r += metrics::rouge1(pair);
        m += metrics::meteor_simplified(pair);
      }
      report["bleu1"] = truth.empty() ? 0.0 : b / n;
      report["rouge1"] = truth.empty() ? 0.0 : r / n;
      report["meteor_simplified"] = truth.empty() ? 0.0 : m / n;
      break;
    }
  }
  return report;
}

}  // namespace rsalign::eval
