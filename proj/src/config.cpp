// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/config.hpp"

#include <cmath>

#include "json.hpp"
#include "rsalign/config_json.hpp"
#include "rsalign/errors.hpp"

namespace rsalign {

namespace {

using nlohmann::json;

// Reads j[key] into out when present, noting type problems.
template <typename T>
void read(const json& j, const char* key, T& out, std::vector<std::string>& problems,
          const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  bool ok = false;
  if constexpr (std::is_same_v<T, bool>) {
    ok = v.is_boolean();
  } else if constexpr (std::is_same_v<T, std::string>) {
    ok = v.is_string();
  } else if constexpr (std::is_floating_point_v<T>) {
    ok = v.is_number();
  } else {
    ok = v.is_number_integer() && v.get<long long>() >= 0;
  }
  if (!ok) {
    problems.push_back(where + "." + key + ": unexpected value " + v.dump());
    return;
  }
  out = v.get<T>();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                std::vector<std::string>& problems, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known |= key == a;
    if (!known) problems.push_back(where + "." + key + ": unknown key");
  }
}

void read_stage(const json& j, StageSettings& s, std::vector<std::string>& problems,
                const std::string& where) {
  if (!j.is_object()) {
    problems.push_back(where + ": expected an object");
    return;
  }
  check_keys(j,
             {"steps", "batch_size", "lr_visual", "lr_prompter", "lr_lm", "weight_decay",
              "train_projector", "target_loss"},
             problems, where);
  read(j, "steps", s.steps, problems, where);
  read(j, "batch_size", s.batch_size, problems, where);
  read(j, "lr_visual", s.lr_visual, problems, where);
  read(j, "lr_prompter", s.lr_prompter, problems, where);
  read(j, "lr_lm", s.lr_lm, problems, where);
  read(j, "weight_decay", s.weight_decay, problems, where);
  read(j, "train_projector", s.train_projector, problems, where);
  if (j.contains("target_loss")) {
    if (j["target_loss"].is_null()) {
      s.target_loss.reset();
    } else {
      double t = 0.0;
      read(j, "target_loss", t, problems, where);
      s.target_loss = t;
    }
  }
}

json stage_json(const StageSettings& s) {
  json j{{"steps", s.steps},       {"batch_size", s.batch_size},
         {"lr_visual", s.lr_visual}, {"lr_prompter", s.lr_prompter},
         {"lr_lm", s.lr_lm},       {"weight_decay", s.weight_decay},
         {"train_projector", s.train_projector}};
  j["target_loss"] = s.target_loss ? json(*s.target_loss) : json(nullptr);
  return j;
}

void stage_problems(const StageSettings& s, const std::string& where,
                    std::vector<std::string>& out) {
  if (s.batch_size == 0) out.push_back(where + ".batch_size must be >= 1");
  for (auto [v, name] : {std::pair{s.lr_visual, "lr_visual"}, std::pair{s.lr_prompter, "lr_prompter"},
                         std::pair{s.lr_lm, "lr_lm"}, std::pair{s.weight_decay, "weight_decay"}}) {
    if (!std::isfinite(v) || v < 0.0) out.push_back(where + "." + name + " must be >= 0");
  }
}

}  // namespace

RunConfig RunConfig::from_profile(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "toy") {
    c.model.patch_dim = 16;
    c.stage1.steps = 300;
    c.stage1.lr_prompter = 3e-3;
    c.stage2.steps = 2000;
    c.stage2.lr_visual = c.stage2.lr_prompter = c.stage2.lr_lm = 3e-3;
    c.stage2.target_loss = 0.05;
    return c;
  }
  if (name == "paper") {
    ModelConfig& m = c.model;
    m.hidden = 3584;
    m.expert_rank = 512;
    m.ffn_inner = 18944;
    m.expert_stride = 4;
    m.num_levels = 3;
    m.num_agg_tokens = 144;
    m.lm_blocks = 28;
    m.lm_heads = 28;
    m.prompter_heads = 28;
    m.visual_dim = 1152;
    m.visual_blocks = 27;
    m.visual_heads = 16;
    m.patch_dim = 588;  // 14 x 14 x 3
    m.max_positions = 4096;
    c.retrieval.top_k = 5;
    c.stage1.lr_prompter = 1e-5;
    c.stage1.steps = 0;
    c.stage2.lr_visual = 1e-6;
    c.stage2.lr_prompter = 1e-5;
    c.stage2.lr_lm = 1e-5;
    c.stage2.steps = 0;
    return c;
  }
  throw ConfigError({"profile: unknown profile \"" + name + "\" (expected toy or paper)"});
}

RunConfig RunConfig::from_json(const std::string& text) {
  const json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError({"config: not valid JSON"});
  if (!j.is_object()) throw ConfigError({"config: top level must be an object"});
  std::vector<std::string> problems;
  std::string profile = "toy";
  read(j, "profile", profile, problems, "config");
  RunConfig c;
  try {
    c = from_profile(profile);
  } catch (const ConfigError& e) {
    problems.insert(problems.end(), e.problems().begin(), e.problems().end());
    c = from_profile("toy");
  }
  check_keys(j,
             {"profile", "seed", "model", "retrieval", "stage1", "stage2", "max_new_tokens",
              "paths"},
             problems, "config");
  read(j, "seed", c.seed, problems, "config");
  read(j, "max_new_tokens", c.max_new_tokens, problems, "config");
  if (j.contains("model")) model_config_from_json(j["model"], c.model, problems, "model");
  if (j.contains("retrieval")) {
    const json& r = j["retrieval"];
    if (!r.is_object()) {
      problems.emplace_back("retrieval: expected an object");
    } else {
      check_keys(r, {"top_k", "embed_dim", "vocab", "epochs", "lr"}, problems, "retrieval");
      read(r, "top_k", c.retrieval.top_k, problems, "retrieval");
      read(r, "embed_dim", c.retrieval.embed_dim, problems, "retrieval");
      read(r, "vocab", c.retrieval.vocab, problems, "retrieval");
      read(r, "epochs", c.retrieval.epochs, problems, "retrieval");
      read(r, "lr", c.retrieval.lr, problems, "retrieval");
    }
  }
  if (j.contains("stage1")) read_stage(j["stage1"], c.stage1, problems, "stage1");
  if (j.contains("stage2")) read_stage(j["stage2"], c.stage2, problems, "stage2");
  if (j.contains("paths")) {
    const json& p = j["paths"];
    if (!p.is_object()) {
      problems.emplace_back("paths: expected an object");
    } else {
      check_keys(p, {"database", "retriever", "checkpoint"}, problems, "paths");
      read(p, "database", c.database_path, problems, "paths");
      read(p, "retriever", c.retriever_path, problems, "paths");
      read(p, "checkpoint", c.checkpoint_path, problems, "paths");
    }
  }
  // Validation problems are only meaningful once parsing succeeded field by field.
  for (auto& p : c.problems()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

std::vector<std::string> RunConfig::problems() const {
  std::vector<std::string> out;
  for (auto& p : model.problems()) out.push_back("model: " + p);
  if (retrieval.top_k == 0) out.emplace_back("retrieval.top_k (k) must be >= 1");
  if (retrieval.embed_dim == 0) out.emplace_back("retrieval.embed_dim must be >= 1");
  if (retrieval.vocab == 0) out.emplace_back("retrieval.vocab must be >= 1");
  if (!std::isfinite(retrieval.lr) || retrieval.lr < 0.0) {
    out.emplace_back("retrieval.lr must be >= 0");
  }
  stage_problems(stage1, "stage1", out);
  stage_problems(stage2, "stage2", out);
  return out;
}

void RunConfig::validate() const {
  if (auto p = problems(); !p.empty()) throw ConfigError(std::move(p));
}

std::string RunConfig::to_json() const {
  json j;
  j["profile"] = profile;
  j["seed"] = seed;
  j["model"] = model_config_to_json(model);
  j["retrieval"] = {{"top_k", retrieval.top_k},
                    {"embed_dim", retrieval.embed_dim},
                    {"vocab", retrieval.vocab},
                    {"epochs", retrieval.epochs},
                    {"lr", retrieval.lr}};
  j["stage1"] = stage_json(stage1);
  j["stage2"] = stage_json(stage2);
  j["max_new_tokens"] = max_new_tokens;
  j["paths"] = {{"database", database_path},
                {"retriever", retriever_path},
                {"checkpoint", checkpoint_path}};
  return j.dump(2);
}

TrainOptions RunConfig::train_options(TrainStage stage) const {
  const StageSettings& s = stage == TrainStage::kAlignment ? stage1 : stage2;
  TrainOptions o;
  o.stage = stage;
  o.seed = seed;
  o.steps = s.steps;
  o.batch_size = s.batch_size;
  o.lr_visual = s.lr_visual;
  o.lr_prompter = s.lr_prompter;
  o.lr_lm = s.lr_lm;
  o.weight_decay = s.weight_decay;
  o.train_projector = s.train_projector;
  o.target_loss = s.target_loss;
  return o;
}

}  // namespace rsalign
