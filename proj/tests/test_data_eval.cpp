// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli_harness.hpp"
#include "doctest.h"
#include "json.hpp"
#include "metric_fixtures.hpp"
#include "rsalign/data.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/eval.hpp"

using namespace rsalign;
using nlohmann::json;
using cli_harness::spit;
using cli_harness::Workdir;

namespace {

ModelConfig byte_config() {
  ModelConfig c;
  c.patch_dim = 3;
  return c;
}

int format_line(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    const std::string w = e.what();
    const auto at = w.find("line ");
    return at == std::string::npos ? -1 : std::stoi(w.substr(at + 5));
  }
  return 0;
}

}  // namespace

TEST_CASE("image forms") {
  Workdir dir("data_images");
  const Matrix nested = data::parse_image(json::parse("[[1, 2], [3, 4], [5, 6]]"), "");
  CHECK(nested.rows() == 3);
  CHECK(nested(2, 1) == 6.0);
  const Matrix flat = data::parse_image(json::parse("[1, 2, 3]"), "");
  CHECK(flat.rows() == 1);
  CHECK(flat.cols() == 3);

  spit(dir.file("img.json"), "[[0.5, 1.5], [2.5, 3.5]]");
  const Matrix from_file = data::parse_image(json("img.json"), dir.file(""));
  CHECK(from_file(1, 0) == 2.5);

  const auto f = data::retrieval_feature(from_file);
  CHECK(f == std::vector<double>{1.5, 2.5});

  CHECK_THROWS_AS(data::parse_image(json::parse("[[1, 2], [3]]"), ""), InvalidArgument);
  CHECK_THROWS_AS(data::parse_image(json::parse("[]"), ""), InvalidArgument);
  CHECK_THROWS_AS(data::parse_image(json("missing.json"), dir.file("")), IoError);
}

TEST_CASE("sample loading") {
  Workdir dir("data_samples");
  const ModelConfig cfg = byte_config();
  spit(dir.file("ins.jsonl"),
       R"({"id": "q1", "image": [[1, 2, 3]], "query": "scene?", "response": "forest", "semantics": ["forest dense"]})"
       "\n\n"
       R"({"image": [1, 2, 3], "query": "side?", "response": "north", "semantics": []})"
       "\n");
  const auto recs = data::load_samples(dir.file("ins.jsonl"), cfg, data::SampleKind::kInstruction, {});
  REQUIRE(recs.size() == 2);
  CHECK(recs[0].id == "q1");
  CHECK(recs[1].id == "3");
  CHECK(recs[0].sample.query == encode_text(cfg, "scene?"));
  CHECK(recs[0].sample.response == encode_text(cfg, "forest"));
  const std::vector<std::string> sem{"forest dense"};
  CHECK(recs[0].sample.semantics == semantic_token_ids(cfg, sem));
  CHECK(recs[1].sample.semantics == std::vector<int>{cfg.sep_id()});

  spit(dir.file("cap.jsonl"), R"({"image": [[0, 0, 0]], "caption": "a b", "semantics": []})" "\n");
  const auto caps = data::load_samples(dir.file("cap.jsonl"), cfg, data::SampleKind::kCaption, {});
  CHECK(caps[0].sample.query.empty());
  CHECK(caps[0].sample.response == encode_text(cfg, "a b"));
  const auto prompts = data::load_samples(dir.file("cap.jsonl"), cfg, data::SampleKind::kPrompt, {});
  CHECK(prompts[0].sample.response.empty());
}

TEST_CASE("sample errors name the line") {
  Workdir dir("data_errors");
  const ModelConfig cfg = byte_config();
  const std::string ok = R"({"image": [[1, 2, 3]], "query": "q", "response": "r", "semantics": []})";
  auto line_of = [&](const std::string& second) {
    spit(dir.file("x.jsonl"), ok + "\n" + second + "\n");
    return format_line([&] { data::load_samples(dir.file("x.jsonl"), cfg, data::SampleKind::kInstruction, {}); });
  };
  CHECK(line_of("{not json") == 2);
  CHECK(line_of("[1, 2]") == 2);
  CHECK(line_of(R"({"image": [[1, 2]], "query": "q", "response": "r", "semantics": []})") == 2);
  CHECK(line_of(R"({"image": [[1, 2, 3]], "response": "r", "semantics": []})") == 2);
  // No semantics and no database to fetch them from.
  CHECK(line_of(R"({"image": [[1, 2, 3]], "query": "q", "response": "r"})") == 2);
  CHECK(line_of(R"({"image": [[1, 2, 3]], "query": "q", "response": "r", "semantics": "x"})") == 2);

  spit(dir.file("t.jsonl"), "{\"text\": \"a\"}\n{\"text\": \"\"}\n");
  CHECK(format_line([&] { data::load_texts(dir.file("t.jsonl")); }) == 2);
  CHECK_THROWS_AS(data::load_texts(dir.file("absent.jsonl")), IoError);
}

TEST_CASE("missing semantics are retrieved") {
  const DualEncoderParams retriever = DualEncoderParams::init({3, 4, 32}, 1);
  SemanticDatabase db(4);
  for (const char* t : {"forest dense", "water sparse", "desert"})
    db.ingest(t, encode_text(retriever, tokenize_words(t, 32)));
  data::SemanticSource source{&db, &retriever, 2};
  Matrix patches(2, 3);
  patches(0, 0) = 1.0;
  patches(1, 2) = -1.0;
  const auto texts = data::retrieve_texts(source, patches);
  REQUIRE(texts.size() == 2);
  const auto expected =
      db.retrieve_top_k(encode_image(retriever, data::retrieval_feature(patches)), 2);
  CHECK(texts[0] == db.record(expected[0].id).text);
  CHECK(texts[1] == db.record(expected[1].id).text);
}

TEST_CASE("task parsing") {
  for (const char* name : {"classify", "vqa", "ground", "caption"}) {
    REQUIRE(eval::parse_task(name).has_value());
    CHECK(eval::task_name(*eval::parse_task(name)) == name);
  }
  CHECK_FALSE(eval::parse_task("detect").has_value());
}

TEST_CASE("classification and vqa accuracy") {
  const std::vector<json> truth{{{"id", 1}, {"label", "Forest"}, {"type", "presence"}},
                                {{"id", 2}, {"label", "river"}, {"type", "presence"}},
                                {{"id", 3}, {"label", "yes"}, {"type", "comparison"}},
                                {{"id", 4}, {"label", "no"}, {"type", "comparison"}}};
  const std::vector<eval::Prediction> preds{{"1", " forest "}, {"2", "lake"}, {"3", "yes"}, {"4", "no"}, {"9", "x"}};
  const json r = eval::evaluate(eval::Task::kVqa, preds, truth);
  CHECK(r["accuracy"] == 0.75);
  CHECK(r["per_type"]["presence"] == 0.5);
  CHECK(r["per_type"]["comparison"] == 1.0);
  CHECK(r["count"] == 4);
  CHECK_FALSE(eval::evaluate(eval::Task::kClassify, preds, truth).contains("per_type"));

  CHECK_THROWS_AS(eval::evaluate(eval::Task::kVqa, {{"1", "a"}}, truth), FormatError);
  CHECK_THROWS_AS(eval::evaluate(eval::Task::kVqa, {{"1", "a"}, {"1", "b"}}, truth), FormatError);
}

TEST_CASE("grounding report") {
  const std::vector<json> truth{
      {{"id", "a"}, {"box", {0.0, 0.0, 1.0, 1.0}}},
      {{"id", "b"}, {"boxes", {{0.0, 0.0, 0.5, 0.5}, {0.5, 0.5, 1.0, 1.0}}}},
      {{"id", "c"}, {"box", {0.0, 0.0, 0.5, 1.0}}},
      {{"id", "d"}, {"box", {0.0, 0.0, 1.0, 1.0}}},
  };
  const std::vector<eval::Prediction> preds{
      {"a", "the box is [0.5, 0, 1, 1]"},  // iou 1/2
      {"b", "[0.5, 0.5, 1.0, 1.0]"},       // matches the second box
      {"c", "[0.5, 0, 1, 1]"},             // disjoint, touching
      {"d", "no idea"},
  };
  const json r = eval::evaluate(eval::Task::kGround, preds, truth);
  CHECK(r["precision@0.5"] == 0.5);
  CHECK(r["mean_iou"].get<double>() == doctest::Approx(1.5 / 4.0).epsilon(1e-15));
  CHECK(r["unparsed"] == 1);
}

TEST_CASE("caption report averages the kernels") {
  std::vector<json> truth;
  std::vector<eval::Prediction> preds;
  double b = 0, g = 0, m = 0;
  const auto cases = fixtures::caption_cases();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    truth.push_back({{"id", i}, {"references", cases[i].references}});
    preds.push_back({std::to_string(i), cases[i].candidate});
    b += cases[i].bleu1;
    g += cases[i].rouge1;
    m += cases[i].meteor;
  }
  const json r = eval::evaluate(eval::Task::kCaption, preds, truth);
  const double n = static_cast<double>(cases.size());
  CHECK(r["bleu1"].get<double>() == doctest::Approx(b / n).epsilon(1e-12));
  CHECK(r["rouge1"].get<double>() == doctest::Approx(g / n).epsilon(1e-12));
  CHECK(r["meteor_simplified"].get<double>() == doctest::Approx(m / n).epsilon(1e-12));

  truth[0].erase("references");
  CHECK_THROWS_AS(eval::evaluate(eval::Task::kCaption, preds, truth), InvalidArgument);
}
