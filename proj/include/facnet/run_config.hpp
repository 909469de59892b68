#pragma once

// Run configuration shared by the command-line tool: model, training, loss,
// localization and synthetic-data settings plus file paths, read from one JSON
// document and patched with dotted `section.key=value` overrides.
//
//   {
//     "schema_version": 1,
//     "model":    {"embed_dims": [1024, 1024], "kernel_size": 3, "delta": 5.0,
//                  "temperatures": [1, 2, 5], "use_background": true, "dropout_rate": 0.5},
//     "train":    {"learning_rate": 1e-4, "epochs": 100, "batch_size": 16, "beta1": 0.9,
//                  "beta2": 0.999, "adam_eps": 1e-8, "seed": 0, "max_snippets": null,
//                  "precision": "f32", "checkpoint_interval": 0, "stream_mode": "separate"},
//     "loss":     {"cw": 1.0, "ca": 0.1, "mil": 0.1},
//     "localize": {"class_reject_threshold": 0.1, "thresholds": [0.1, ..., 0.9], "nms_tiou": 0.5,
//                  "fusion_weight": 0.5, "oic_context_ratio": 0.25, "include_class_conf": false},
//     "synth":    {"num_classes": 5, "num_train": 40, ...},
//     "threads": 1
//   }
//
// Every section and key is optional; unknown keys are rejected. The class
// count and feature width come from the dataset, not from this file.

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "facnet/data.hpp"
#include "facnet/localize.hpp"
#include "facnet/trainer.hpp"

namespace facnet {

inline constexpr int kRunConfigSchemaVersion = 1;

enum class StreamMode { Separate, Concat };

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  LocalizeConfig localize;
  SynthConfig synth;
  StreamMode stream_mode = StreamMode::Separate;

  void validate() const {
    model.validate();
    train.validate();
    loss.validate();
    localize.validate();
    synth.validate();
  }
};

namespace detail {

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(section + "." + key + ": wrong type (got " + obj.at(key).dump() + ")");
  }
}

inline void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [k, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      throw ConfigError(where + ": unknown key '" + k + "'");
    }
  }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& doc) {
  using detail::check_keys;
  using detail::read_field;
  check_keys(doc, {"schema_version", "model", "train", "loss", "localize", "synth", "threads"}, "config");
  RunConfig rc;
  if (doc.contains("schema_version") && doc.at("schema_version") != kRunConfigSchemaVersion) {
    throw ConfigError("config: unsupported schema_version " + doc.at("schema_version").dump());
  }

  if (doc.contains("model")) {
    const auto& m = doc.at("model");
    check_keys(m, {"embed_dims", "kernel_size", "delta", "temperatures", "use_background", "dropout_rate"}, "model");
    read_field(m, "embed_dims", rc.model.embed_dims, "model");
    read_field(m, "kernel_size", rc.model.kernel_size, "model");
    read_field(m, "delta", rc.model.delta, "model");
    read_field(m, "temperatures", rc.model.temperatures, "model");
    read_field(m, "use_background", rc.model.use_background, "model");
    read_field(m, "dropout_rate", rc.model.dropout_rate, "model");
  }

  if (doc.contains("train")) {
    const auto& t = doc.at("train");
    check_keys(t, {"learning_rate", "epochs", "batch_size", "beta1", "beta2", "adam_eps", "seed", "max_snippets",
                   "precision", "checkpoint_interval", "stream_mode"},
               "train");
    read_field(t, "learning_rate", rc.train.learning_rate, "train");
    read_field(t, "epochs", rc.train.epochs, "train");
    read_field(t, "batch_size", rc.train.batch_size, "train");
    read_field(t, "beta1", rc.train.beta1, "train");
    read_field(t, "beta2", rc.train.beta2, "train");
    read_field(t, "adam_eps", rc.train.adam_eps, "train");
    read_field(t, "seed", rc.train.seed, "train");
    read_field(t, "checkpoint_interval", rc.train.checkpoint_interval, "train");
    if (t.contains("max_snippets") && !t.at("max_snippets").is_null()) {
      std::size_t n = 0;
      read_field(t, "max_snippets", n, "train");
      rc.train.max_snippets = n;
    }
    if (t.contains("precision")) {
      const auto p = t.at("precision").get<std::string>();
      if (p == "f32") {
        rc.train.precision = Precision::F32;
      } else if (p == "f64") {
        rc.train.precision = Precision::F64;
      } else {
        throw ConfigError("train.precision must be \"f32\" or \"f64\"");
      }
    }
    if (t.contains("stream_mode")) {
      const auto s = t.at("stream_mode").get<std::string>();
      if (s == "separate") {
        rc.stream_mode = StreamMode::Separate;
      } else if (s == "concat") {
        rc.stream_mode = StreamMode::Concat;
      } else {
        throw ConfigError("train.stream_mode must be \"separate\" or \"concat\"");
      }
    }
  }

  if (doc.contains("loss")) {
    const auto& l = doc.at("loss");
    check_keys(l, {"cw", "ca", "mil"}, "loss");
    read_field(l, "cw", rc.loss.cw, "loss");
    read_field(l, "ca", rc.loss.ca, "loss");
    read_field(l, "mil", rc.loss.mil, "loss");
  }

  if (doc.contains("localize")) {
    const auto& l = doc.at("localize");
    check_keys(l, {"class_reject_threshold", "thresholds", "nms_tiou", "fusion_weight", "oic_context_ratio",
                   "include_class_conf"},
               "localize");
    read_field(l, "class_reject_threshold", rc.localize.class_reject_threshold, "localize");
    read_field(l, "thresholds", rc.localize.thresholds, "localize");
    read_field(l, "nms_tiou", rc.localize.nms_tiou, "localize");
    read_field(l, "fusion_weight", rc.localize.fusion_weight, "localize");
    read_field(l, "oic_context_ratio", rc.localize.oic_context_ratio, "localize");
    read_field(l, "include_class_conf", rc.localize.include_class_conf, "localize");
  }

  if (doc.contains("synth")) {
    const auto& s = doc.at("synth");
    check_keys(s, {"num_classes", "num_train", "num_test", "feature_dim", "num_streams", "min_snippets", "max_snippets",
                   "min_instances", "max_instances", "min_instance_length", "max_instance_length", "margin", "noise",
                   "fps", "snippet_stride", "seed"},
               "synth");
    auto& c = rc.synth;
    read_field(s, "num_classes", c.num_classes, "synth");
    read_field(s, "num_train", c.num_train, "synth");
    read_field(s, "num_test", c.num_test, "synth");
    read_field(s, "feature_dim", c.feature_dim, "synth");
    read_field(s, "num_streams", c.num_streams, "synth");
    read_field(s, "min_snippets", c.min_snippets, "synth");
    read_field(s, "max_snippets", c.max_snippets, "synth");
    read_field(s, "min_instances", c.min_instances, "synth");
    read_field(s, "max_instances", c.max_instances, "synth");
    read_field(s, "min_instance_length", c.min_instance_length, "synth");
    read_field(s, "max_instance_length", c.max_instance_length, "synth");
    read_field(s, "margin", c.margin, "synth");
    read_field(s, "noise", c.noise, "synth");
    read_field(s, "fps", c.fps, "synth");
    read_field(s, "snippet_stride", c.snippet_stride, "synth");
    read_field(s, "seed", c.seed, "synth");
  }

  if (doc.contains("threads")) {
    read_field(doc, "threads", rc.train.threads, "config");
  }
  return rc;
}

/// Applies `section.key=value` to a config document. The value is parsed as
/// JSON when possible, otherwise taken as a string.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "': empty key segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part)) (*node)[part] = nlohmann::json::object();
    node = &(*node)[part];
    if (!node->is_object()) throw ConfigError("override '" + assignment + "': '" + part + "' is not a section");
    start = dot + 1;
  }
}

inline nlohmann::json read_config_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace facnet
