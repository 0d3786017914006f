#include "pyratten/config.hpp"

#include <set>

#include "pyratten/training.hpp"

namespace pyratten {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError(std::string("unknown ") + what + " key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const PyramidAttentionConfig& cfg) {
  return json{{"scales", cfg.scales},
              {"patch_size", cfg.patch_size},
              {"embed_channels", cfg.embed_channels},
              {"feature_channels", cfg.feature_channels}};
}

json to_json(const NetworkConfig& cfg) {
  return json{{"in_channels", cfg.in_channels},
              {"feature_channels", cfg.feature_channels},
              {"num_blocks", cfg.num_blocks},
              {"attention_positions", cfg.attention_positions},
              {"attention", [&] {
                 // Derived from the network width.
                 json a = to_json(cfg.attention);
                 a.erase("feature_channels");
                 return a;
               }()}};
}

json to_json(const TrainConfig& cfg) {
  return json{{"batch_size", cfg.batch_size},
              {"patch_size", cfg.patch_size},
              {"lr0", cfg.lr0},
              {"lr_halve_every", cfg.lr_halve_every},
              {"beta1", cfg.beta1},
              {"beta2", cfg.beta2},
              {"eps", cfg.eps},
              {"sigma", cfg.sigma},
              {"epochs", cfg.epochs},
              {"steps_per_epoch", cfg.steps_per_epoch},
              {"seed", cfg.seed},
              {"augment", cfg.augment},
              {"checkpoint_every", cfg.checkpoint_every}};
}

PyramidAttentionConfig attention_config_from_json(const json& j) {
  reject_unknown(j, {"scales", "patch_size", "embed_channels", "feature_channels"},
                 "attention");
  PyramidAttentionConfig cfg;
  read(j, "scales", cfg.scales);
  read(j, "patch_size", cfg.patch_size);
  read(j, "embed_channels", cfg.embed_channels);
  read(j, "feature_channels", cfg.feature_channels);
  return cfg;
}

NetworkConfig network_config_from_json(const json& j) {
  reject_unknown(j,
                 {"in_channels", "feature_channels", "num_blocks", "attention_positions",
                  "attention"},
                 "network");
  NetworkConfig cfg;
  read(j, "in_channels", cfg.in_channels);
  read(j, "feature_channels", cfg.feature_channels);
  read(j, "num_blocks", cfg.num_blocks);
  read(j, "attention_positions", cfg.attention_positions);
  if (j.contains("attention")) {
    cfg.attention = attention_config_from_json(j.at("attention"));
    if (!j.at("attention").contains("feature_channels")) {
      cfg.attention.feature_channels = cfg.feature_channels;
    }
  } else {
    cfg.attention.feature_channels = cfg.feature_channels;
  }
  cfg.validate();
  return cfg;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"batch_size", "patch_size", "lr0", "lr_halve_every", "beta1", "beta2", "eps",
                  "sigma", "epochs", "steps_per_epoch", "seed", "augment", "checkpoint_every"},
                 "train");
  TrainConfig cfg;
  read(j, "batch_size", cfg.batch_size);
  read(j, "patch_size", cfg.patch_size);
  read(j, "lr0", cfg.lr0);
  read(j, "lr_halve_every", cfg.lr_halve_every);
  read(j, "beta1", cfg.beta1);
  read(j, "beta2", cfg.beta2);
  read(j, "eps", cfg.eps);
  read(j, "sigma", cfg.sigma);
  read(j, "epochs", cfg.epochs);
  read(j, "steps_per_epoch", cfg.steps_per_epoch);
  read(j, "seed", cfg.seed);
  read(j, "augment", cfg.augment);
  read(j, "checkpoint_every", cfg.checkpoint_every);
  cfg.validate();
  return cfg;
}

json default_run_document() {
  return json{{"network", to_json(NetworkConfig{})}, {"train", to_json(TrainConfig{})}};
}

void merge_strict(json& doc, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config" + (path.empty() ? "" : " '" + path + "'") +
                                           " must be a JSON object");
  for (const auto& [key, value] : user.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!doc.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    json& slot = doc[key];
    if (slot.is_object() && value.is_object()) {
      merge_strict(slot, value, full);
    } else {
      slot = value;
    }
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (!node->is_object() || !node->contains(key)) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

}  // namespace pyratten
