#pragma once

#include <string>

#include "json.hpp"
#include "pyratten/network.hpp"

namespace pyratten {

struct TrainConfig;

// JSON mirrors the struct field names. Parsing starts from the defaults and
// rejects unknown keys with a ConfigError.
nlohmann::json to_json(const PyramidAttentionConfig& cfg);
nlohmann::json to_json(const NetworkConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);

PyramidAttentionConfig attention_config_from_json(const nlohmann::json& j);
NetworkConfig network_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

// {"network": {...}, "train": {...}} filled with defaults.
nlohmann::json default_run_document();

// Recursively copies `user` into `doc`; every key in `user` must already
// exist in `doc`.
void merge_strict(nlohmann::json& doc, const nlohmann::json& user,
                  const std::string& path = "");

// Applies one "a.b.c=value" override. The value is parsed as JSON when
// possible, otherwise taken as a string. The path must exist in `doc`.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace pyratten
