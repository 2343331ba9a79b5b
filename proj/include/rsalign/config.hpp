// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rsalign/model.hpp"

namespace rsalign {

struct RetrievalSettings {
  std::size_t top_k = 5;         // k
  std::uint32_t embed_dim = 32;  // dual-encoder embedding width
  std::uint32_t vocab = 4096;    // hashed word vocabulary of the text tower
  std::size_t epochs = 200;
  double lr = 0.03;
};

struct StageSettings {
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  double lr_visual = 0.0;
  double lr_prompter = 3e-3;
  double lr_lm = 3e-3;
  double weight_decay = 0.01;
  bool train_projector = true;
  std::optional<double> target_loss;
};

// Everything a command needs besides its file arguments. Built from a named
// profile, then overridden by a JSON document and finally by flags.
//
// JSON shape (every key optional):
//   {"profile": "toy" | "paper", "seed": u64,
//    "model": {ModelConfig fields},
//    "retrieval": {"top_k", "embed_dim", "vocab", "epochs", "lr"},
//    "stage1": {StageSettings fields}, "stage2": {...},
//    "max_new_tokens": n,
//    "paths": {"database", "retriever", "checkpoint"}}
struct RunConfig {
  std::string profile = "toy";
  std::uint64_t seed = 0;
  ModelConfig model;
  RetrievalSettings retrieval;
  StageSettings stage1;
  StageSettings stage2;
  std::size_t max_new_tokens = 32;
  std::string database_path;
  std::string retriever_path;
  std::string checkpoint_path;

  // "toy": desk-scale dimensions. "paper": published sizes, usable for
  // parameter arithmetic only.
  static RunConfig from_profile(const std::string& name);
  // Throws ConfigError listing every problem found (parse and validation).
  static RunConfig from_json(const std::string& text);

  bool trainable() const noexcept { return profile != "paper"; }
  std::vector<std::string> problems() const;
  void validate() const;
  std::string to_json() const;
  TrainOptions train_options(TrainStage stage) const;
};

}  // namespace rsalign
