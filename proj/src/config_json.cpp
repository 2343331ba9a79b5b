// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsalign/config_json.hpp"

#include <utility>

namespace rsalign {

namespace {

using Field = std::pair<const char*, std::size_t ModelConfig::*>;

constexpr Field kFields[] = {
    {"patch_dim", &ModelConfig::patch_dim},
    {"visual_dim", &ModelConfig::visual_dim},
    {"visual_blocks", &ModelConfig::visual_blocks},
    {"visual_heads", &ModelConfig::visual_heads},
    {"hidden", &ModelConfig::hidden},
    {"lm_blocks", &ModelConfig::lm_blocks},
    {"lm_heads", &ModelConfig::lm_heads},
    {"ffn_inner", &ModelConfig::ffn_inner},
    {"expert_rank", &ModelConfig::expert_rank},
    {"expert_stride", &ModelConfig::expert_stride},
    {"num_levels", &ModelConfig::num_levels},
    {"num_agg_tokens", &ModelConfig::num_agg_tokens},
    {"prompter_heads", &ModelConfig::prompter_heads},
    {"vocab", &ModelConfig::vocab},
    {"max_positions", &ModelConfig::max_positions},
    {"max_semantic_tokens", &ModelConfig::max_semantic_tokens},
};

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, member] : kFields) j[name] = config.*member;
  return j;
}

void model_config_from_json(const nlohmann::json& j, ModelConfig& config,
                            std::vector<std::string>& problems, const std::string& where) {
  if (!j.is_object()) {
    problems.push_back(where + ": expected an object");
    return;
  }
  for (const auto& [key, value] : j.items()) {
    const Field* field = nullptr;
    for (const auto& f : kFields)
      if (key == f.first) field = &f;
    if (field == nullptr) {
      problems.push_back(where + "." + key + ": unknown key");
    } else if (!value.is_number_integer() || value.get<long long>() < 0) {
      // Negative values land here too, so "<= 0" checks see them as invalid.
      problems.push_back(where + "." + key + ": expected a non-negative integer, got " +
                         value.dump());
    } else {
      config.*(field->second) = value.get<std::size_t>();
    }
  }
}

}  // namespace rsalign
