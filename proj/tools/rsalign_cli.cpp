// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end over the C API.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "rsalign/rsalign.h"

namespace {

struct Options {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string database;
  std::string retriever;
  std::string report;

  std::string input;
  std::string out;
  std::string image;
  std::size_t k = 0;
  bool k_set = false;
  int stage = 1;
  std::string init;
  std::string task;
  std::string truth;
  std::string predictions;
  std::string checkpoint;
  std::string predictions_out;
  std::size_t probes = 4;
  std::string kind;
  std::size_t count = 32;
};

int fail(rsa_status status) {
  std::cerr << "error: " << rsa_last_error() << "\n";
  return static_cast<int>(status);
}

// Owns a string returned by the library.
struct Text {
  char* ptr = nullptr;
  ~Text() { rsa_string_free(ptr); }
  std::string str() const { return ptr == nullptr ? std::string() : std::string(ptr); }
};

const char* or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

rsa_status load_config(const Options& o, rsa_config** out) {
  rsa_status s = RSA_OK;
  if (o.config_path.empty()) {
    s = rsa_config_from_profile("toy", out);
  } else {
    std::ifstream in(o.config_path, std::ios::binary);
    if (!in) {
      std::cerr << "error: cannot open " << o.config_path << "\n";
      return RSA_ERR_IO;
    }
    std::stringstream buf;
    buf << in.rdbuf();
    s = rsa_config_from_json(buf.str().c_str(), out);
  }
  if (s != RSA_OK) return static_cast<rsa_status>(fail(s));
  if (o.seed_set) rsa_config_set_seed(*out, o.seed);
  rsa_config_set_paths(*out, or_null(o.database), or_null(o.retriever));
  return RSA_OK;
}

// Prints the command output and mirrors it into --report when given.
int finish(rsa_status status, const Text& text, const Options& o, bool lines) {
  std::string s = text.str();
  if (!lines && !s.empty()) s += "\n";
  if (!s.empty()) std::cout << s;
  if (!o.report.empty() && (status == RSA_OK || !s.empty())) {
    std::ofstream f(o.report, std::ios::binary | std::ios::trunc);
    f << s;
    if (!f) {
      std::cerr << "error: cannot write " << o.report << "\n";
      return RSA_ERR_IO;
    }
  }
  return status == RSA_OK ? 0 : fail(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented multi-level alignment toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option_function<std::uint64_t>(
      "--seed", [&](const std::uint64_t& s) { o.seed = s, o.seed_set = true; }, "Random seed");
  app.add_option("--database", o.database, "RSDB file used to fill missing semantics");
  app.add_option("--retriever", o.retriever, "RSDE retriever checkpoint");
  app.add_option("--report", o.report, "Also write the command output to this file");

  auto* build_db = app.add_subcommand("build-db", "Embed {text} lines into an RSDB database");
  build_db->add_option("--input", o.input, "JSONL of {\"text\"}")->required();
  build_db->add_option("--out", o.out, "RSDB output path")->required();

  auto* train_ret = app.add_subcommand("train-retriever", "Train the dual encoder on {image, text} pairs");
  train_ret->add_option("--input", o.input, "JSONL of {\"image\", \"text\"}")->required();
  train_ret->add_option("--out", o.out, "RSDE output path")->required();

  auto* retrieve = app.add_subcommand("retrieve", "Top-k descriptions for one image");
  retrieve->add_option("--db", o.database, "RSDB file")->required();
  retrieve->add_option("--image", o.image, "JSON image or feature vector")->required();
  retrieve->add_option_function<std::size_t>(
      "--k", [&](const std::size_t& k) { o.k = k, o.k_set = true; }, "Results (default: config top_k)");

  auto* train = app.add_subcommand("train", "Stage 1 alignment or stage 2 instruction tuning");
  train->add_option("--stage", o.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--data", o.input, "Training JSONL")->required();
  train->add_option("--init", o.init, "Checkpoint to continue from");
  train->add_option("--out", o.out, "RSCK output path")->required();

  auto* predict = app.add_subcommand("predict", "Generate answers for {image, query} lines");
  predict->add_option("--checkpoint", o.checkpoint, "RSCK model")->required();
  predict->add_option("--input", o.input, "JSONL inputs")->required();
  predict->add_option("--out", o.predictions_out, "Write {id, output} lines here");

  auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
  eval->add_option("--task", o.task, "classify, vqa, ground or caption")
      ->required()
      ->check(CLI::IsMember({"classify", "vqa", "ground", "caption"}));
  eval->add_option("--truth", o.truth, "Ground-truth JSONL")->required();
  auto* preds_opt = eval->add_option("--predictions", o.predictions, "Prediction JSONL");
  auto* ckpt_opt = eval->add_option("--checkpoint", o.checkpoint, "Generate predictions with this model");
  preds_opt->excludes(ckpt_opt);
  eval->add_option("--predictions-out", o.predictions_out, "Save generated predictions");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient check");
  grad->add_option("--probes", o.probes, "Probes per parameter (0 = every entry)");

  auto* synth = app.add_subcommand("synth", "Write a deterministic demo corpus");
  synth->add_option("--kind", o.kind, "retrieval, texts, caption or instruction")
      ->required()
      ->check(CLI::IsMember({"retrieval", "texts", "caption", "instruction"}));
  synth->add_option("--count", o.count, "Number of lines");
  synth->add_option("--out", o.out, "JSONL output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : RSA_ERR_CONFIG;
  }
  if (eval->parsed() && o.predictions.empty() && o.checkpoint.empty()) {
    std::cerr << "error: eval needs --predictions or --checkpoint\n";
    return RSA_ERR_CONFIG;
  }

  rsa_config* config = nullptr;
  if (rsa_status s = load_config(o, &config); s != RSA_OK) return static_cast<int>(s);
  struct Guard {
    rsa_config* c;
    ~Guard() { rsa_config_free(c); }
  } guard{config};

  Text text;
  if (build_db->parsed()) {
    if (o.retriever.empty()) {
      std::cerr << "error: build-db needs --retriever\n";
      return RSA_ERR_CONFIG;
    }
    return finish(rsa_cmd_build_db(config, o.input.c_str(), o.retriever.c_str(), o.out.c_str(), &text.ptr),
                  text, o, false);
  }
  if (train_ret->parsed()) {
    return finish(rsa_cmd_train_retriever(config, o.input.c_str(), o.out.c_str(), &text.ptr), text, o, false);
  }
  if (retrieve->parsed()) {
    const std::size_t k = o.k_set ? o.k : rsa_config_top_k(config);
    return finish(rsa_cmd_retrieve(o.database.c_str(), or_null(o.retriever), o.image.c_str(), k, &text.ptr),
                  text, o, true);
  }
  if (train->parsed()) {
    return finish(rsa_cmd_train(config, o.stage, o.input.c_str(), or_null(o.init), o.out.c_str(), &text.ptr),
                  text, o, false);
  }
  if (predict->parsed()) {
    return finish(rsa_cmd_predict(config, o.checkpoint.c_str(), o.input.c_str(), or_null(o.predictions_out),
                                  &text.ptr),
                  text, o, true);
  }
  if (eval->parsed()) {
    return finish(rsa_cmd_eval(config, o.task.c_str(), or_null(o.predictions), or_null(o.checkpoint),
                               o.truth.c_str(), or_null(o.predictions_out), &text.ptr),
                  text, o, false);
  }
  if (grad->parsed()) {
    return finish(rsa_cmd_grad_check(config, o.probes, &text.ptr), text, o, false);
  }
  return finish(rsa_cmd_synth(config, o.kind.c_str(), o.count, o.out.c_str(), &text.ptr), text, o, false);
}
