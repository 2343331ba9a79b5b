// Copyright 2026 The rsalign Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "rsalign/model.hpp"

namespace rsalign {

nlohmann::json model_config_to_json(const ModelConfig& config);

// Overwrites the fields present in `j`. Unknown keys and values of the wrong
// type are appended to `problems` with the key path prefixed by `where`.
void model_config_from_json(const nlohmann::json& j, ModelConfig& config,
                            std::vector<std::string>& problems,
                            const std::string& where = "model");

}  // namespace rsalign
