// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/pipeline.hpp"

#include <fstream>

#include "rsalign/binary_io.hpp"
#include "rsalign/data.hpp"
#include "rsalign/dual_encoder.hpp"
#include "rsalign/errors.hpp"
#include "rsalign/rng.hpp"
#include "rsalign/semantic_db.hpp"
#include "rsalign/synthetic.hpp"

namespace rsalign::pipeline {

namespace {

using nlohmann::json;

void require_trainable(const RunConfig& config, const char* command) {
  config.validate();
  if (!config.trainable()) {
    throw ConfigError({std::string(command) + ": profile \"" + config.profile +
                       "\" is for parameter arithmetic only"});
  }
}

json image_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (double v : m.row(r)) row.push_back(v);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string jsonl(const std::vector<json>& lines) {
  std::string out;
  for (const auto& l : lines) out += l.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
  return out;
}

// Database and retriever named by the config, when both are set.
struct LoadedSource {
  std::optional<DualEncoderParams> retriever;
  std::optional<SemanticDatabase> database;
  data::SemanticSource source;
};

void load_source(const RunConfig& config, LoadedSource& out) {
  if (config.database_path.empty() || config.retriever_path.empty()) return;
  out.retriever = DualEncoderParams::load(config.retriever_path);
  out.database = SemanticDatabase::load(config.database_path, out.retriever->dims.embed_dim);
  out.source = {&*out.database, &*out.retriever, config.retrieval.top_k};
}

}  // namespace

void write_text(const std::string& path, const std::string& text) {
  bin::write_file(path, std::span<const char>(text.data(), text.size()));
}

json build_db(const RunConfig& config, const std::string& texts_path,
              const std::string& retriever_path, const std::string& out_path) {
  config.validate();
  const DualEncoderParams retriever = DualEncoderParams::load(retriever_path);
  const auto texts = data::load_texts(texts_path);
  SemanticDatabase db(retriever.dims.embed_dim);
  for (const auto& t : texts) {
    db.ingest(t, encode_text(retriever, tokenize_words(t, retriever.dims.vocab)));
  }
  db.save(out_path);
  return {{"count", db.size()}, {"dim", db.dim()}, {"database", out_path}};
}

json train_retriever(const RunConfig& config, const std::string& pairs_path,
                     const std::string& out_path) {
  config.validate();
  const auto records = data::load_pairs(pairs_path);
  if (records.empty()) throw InvalidArgument("train-retriever: no pairs in " + pairs_path);
  DualEncoderDims dims{static_cast<std::uint32_t>(records.front().features.size()),
                       config.retrieval.embed_dim, config.retrieval.vocab};
  std::vector<ContrastivePair> pairs;
  for (const auto& r : records) {
    if (r.features.size() != dims.image_dim) {
      throw ShapeError("train-retriever: image feature widths differ");
    }
    pairs.push_back({r.features, tokenize_words(r.text, dims.vocab)});
  }
  RetrieverTrainOptions opts;
  opts.epochs = config.retrieval.epochs;
  opts.lr = config.retrieval.lr;
  opts.seed = config.seed;
  RetrieverTrainLog log;
  const double before = retrieval_recall_at_1(DualEncoderParams::init(dims, config.seed), pairs);
  const DualEncoderParams p = train_retriever(pairs, dims, opts, &log);
  p.save(out_path);
  return {{"pairs", pairs.size()},
          {"image_dim", dims.image_dim},
          {"embed_dim", dims.embed_dim},
          {"vocab", dims.vocab},
          {"epochs", opts.epochs},
          {"initial_loss", log.loss_per_epoch.empty() ? log.final_loss : log.loss_per_epoch.front()},
          {"final_loss", log.final_loss},
          {"recall@1_before", before},
          {"recall@1_after", retrieval_recall_at_1(p, pairs)},
          {"retriever", out_path}};
}

std::vector<json> retrieve(const std::string& db_path, const std::string& retriever_path,
                           const std::string& image_path, std::size_t k) {
  const auto bytes = bin::read_file(image_path);
  const json image = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (image.is_discarded()) throw FormatError(image_path + ": not JSON", 0);
  std::vector<double> query = data::retrieval_feature(data::parse_image(image, ""));
  std::optional<std::uint32_t> dim;
  if (!retriever_path.empty()) {
    const DualEncoderParams retriever = DualEncoderParams::load(retriever_path);
    if (query.size() != retriever.dims.image_dim) {
      throw ShapeError("retrieve: image features have width " + std::to_string(query.size()) +
                       ", retriever expects " + std::to_string(retriever.dims.image_dim));
    }
    query = encode_image(retriever, query);
    dim = retriever.dims.embed_dim;
  }
  const SemanticDatabase db = SemanticDatabase::load(db_path, dim);
  std::vector<json> rows;
  std::size_t rank = 0;
  for (const auto& r : db.retrieve_top_k(query, k)) {
    rows.push_back({{"rank", ++rank}, {"id", r.id}, {"score", r.score}, {"text", db.record(r.id).text}});
  }
  return rows;
}

json train(const RunConfig& config, const TrainRequest& request) {
  require_trainable(config, "train");
  if (request.stage != 1 && request.stage != 2) {
    throw ConfigError({"train: stage must be 1 or 2"});
  }
  const TrainStage stage = request.stage == 1 ? TrainStage::kAlignment : TrainStage::kInstruction;
  Model model = request.init_path.empty() ? Model(config.model, config.seed)
                                          : Model::load(request.init_path);
  LoadedSource src;
  load_source(config, src);
  const auto records = data::load_samples(
      request.data_path, model.config(),
      stage == TrainStage::kAlignment ? data::SampleKind::kCaption : data::SampleKind::kInstruction,
      src.source);
  if (records.empty()) throw InvalidArgument("train: no samples in " + request.data_path);
  std::vector<Sample> samples;
  for (const auto& r : records) samples.push_back(r.sample);
  const TrainLog log = rsalign::train(model, samples, config.train_options(stage));
  model.save(request.out_path);
  return {{"stage", request.stage},
          {"samples", samples.size()},
          {"steps_run", log.steps_run},
          {"initial_loss", log.initial_loss},
          {"final_loss", log.final_loss},
          {"checkpoint", request.out_path}};
}

std::vector<eval::Prediction> predict(const RunConfig& config, const std::string& checkpoint_path,
                                      const std::string& inputs_path, const std::string& out_path) {
  config.validate();
  const Model model = Model::load(checkpoint_path);
  LoadedSource src;
  load_source(config, src);
  const auto records =
      data::load_samples(inputs_path, model.config(), data::SampleKind::kPrompt, src.source);
  std::vector<eval::Prediction> out;
  std::vector<json> lines;
  for (const auto& r : records) {
    const auto ids = model.generate(r.sample.patches, r.sample.query, r.sample.semantics,
                                    config.max_new_tokens);
    out.push_back({r.id, decode_text(model.config(), ids)});
    lines.push_back({{"id", out.back().id}, {"output", out.back().output}});
  }
  if (!out_path.empty()) write_text(out_path, jsonl(lines));
  return out;
}

json evaluate(eval::Task task, const std::vector<eval::Prediction>& predictions,
              const std::string& truth_path) {
  return eval::evaluate(task, predictions, eval::load_truth(truth_path));
}

json grad_check(const RunConfig& config, std::size_t probes_per_param) {
  require_trainable(config, "grad-check");
  const GradReport model = check_model_gradients(config.model, config.seed, probes_per_param);

  // Contrastive loss over a small random batch at the configured retriever sizes.
  Rng rng(config.seed + 17);
  const DualEncoderDims dims{static_cast<std::uint32_t>(config.model.patch_dim),
                             config.retrieval.embed_dim, config.retrieval.vocab};
  DualEncoderParams retriever = DualEncoderParams::init(dims, config.seed);
  std::vector<ContrastivePair> batch;
  for (int i = 0; i < 4; ++i) {
    const Matrix f = random_normal(1, dims.image_dim, 1.0, rng);
    batch.push_back({std::vector<double>(f.values().begin(), f.values().end()),
                     {static_cast<int>(rng.below(dims.vocab)), static_cast<int>(i % dims.vocab)}});
  }
  auto refs = retriever.params();
  GradCheckOptions opts;
  opts.probes_per_param = probes_per_param;
  opts.seed = config.seed;
  const GradReport enc = check_gradients(
      [&](ad::Tape& t) { return contrastive_loss(t, retriever, batch); }, refs, opts);

  auto section = [](const GradReport& r) {
    return json{{"max_relative_error", r.max_relative_error},
                {"probes", r.probes},
                {"worst_parameter", r.worst_parameter},
                {"worst_index", r.worst_index},
                {"analytic", r.analytic},
                {"numeric", r.numeric}};
  };
  GradReport all = model;
  merge_reports(all, enc);
  return {{"passed", all.max_relative_error < kGradTolerance},
          {"max_relative_error", all.max_relative_error},
          {"probes", all.probes},
          {"tolerance", kGradTolerance},
          {"model", section(model)},
          {"retriever", section(enc)}};
}

json synth(const RunConfig& config, const std::string& kind, std::size_t count,
           const std::string& out_path) {
  config.validate();
  constexpr std::size_t kPatches = 4;
  const std::size_t width = config.model.patch_dim;
  std::vector<json> lines;
  if (kind == "retrieval" || kind == "texts") {
    const auto corpus = synthetic::retrieval_corpus(count, width, config.seed);
    for (std::size_t i = 0; i < count; ++i) {
      if (kind == "texts") {
        lines.push_back({{"text", corpus.texts[i]}});
      } else {
        lines.push_back({{"id", i}, {"image", corpus.features[i]}, {"text", corpus.texts[i]}});
      }
    }
  } else if (kind == "caption" || kind == "instruction") {
    const auto items = kind == "caption"
                           ? synthetic::caption_corpus(count, kPatches, width, config.seed)
                           : synthetic::instruction_corpus(count, kPatches, width, config.seed);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      json l{{"id", i}, {"image", image_json(it.patches)}, {"query", it.query}, {"semantics", it.semantics}};
      if (kind == "caption") {
        l["caption"] = it.response;
        l["references"] = json::array({it.response});
      } else {
        l["response"] = it.response;
        l["label"] = it.response;
      }
      lines.push_back(std::move(l));
    }
  } else {
    throw ConfigError({"synth: unknown kind \"" + kind +
                       "\" (expected retrieval, texts, caption or instruction)"});
  }
  write_text(out_path, jsonl(lines));
  return {{"kind", kind}, {"count", count}, {"path", out_path}};
}

}  // namespace rsalign::pipeline
