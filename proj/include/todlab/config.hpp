#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "todlab/finetune.hpp"
#include "todlab/pretrain.hpp"

// Layered run configuration: built-in defaults, then a JSON file, then
// `--set key=value` overrides, in that precedence. The defaults document is
// the schema: unknown keys and type mismatches are errors at every layer.

namespace todlab {

namespace detail {

inline std::string type_label(const nlohmann::json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer() || v.is_number_unsigned()) return "integer";
  if (v.is_number_float()) return "number";
  if (v.is_string()) return "string";
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  return v.type_name();
}

inline void check_assignable(const nlohmann::json& slot, const nlohmann::json& value,
                             const std::string& key) {
  const bool ok =
      (slot.is_boolean() && value.is_boolean()) ||
      ((slot.is_number_integer() || slot.is_number_unsigned()) &&
       (value.is_number_integer() || value.is_number_unsigned())) ||
      (slot.is_number_float() && value.is_number()) ||  // ints widen to float
      (slot.is_string() && value.is_string());
  check(ok, "config: type mismatch for " + key + ": expected " + type_label(slot) +
                ", got " + type_label(value));
}

}  // namespace detail

// Merges patch into base. Base defines the key set and the value types;
// nested objects merge recursively.
inline void merge_config(nlohmann::json& base, const nlohmann::json& patch,
                         const std::string& prefix = "") {
  check(patch.is_object(), "config: expected a JSON object" +
                               (prefix.empty() ? "" : " at " + prefix));
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    check(base.contains(key), "config: unknown key: " + path);
    nlohmann::json& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, path);
    } else {
      detail::check_assignable(slot, value, path);
      if (slot.is_number_float() && value.is_number_integer())
        slot = double(value.get<long long>());
      else
        slot = value;
    }
  }
}

// Applies one "dotted.path=value" assignment. Values for string-typed slots
// are taken verbatim; everything else must parse as a JSON scalar of the
// slot's type.
inline void apply_override(nlohmann::json& base, const std::string& assignment) {
  const auto eq = assignment.find('=');
  check(eq != std::string::npos && eq > 0,
        "config: override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  nlohmann::json* slot = &base;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    check(!key.empty(), "config: empty key segment in " + path);
    check(slot->is_object() && slot->contains(key), "config: unknown key: " + path);
    slot = &(*slot)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  check(!slot->is_object(), "config: " + path + " is a section, not a value");

  if (slot->is_string()) {
    *slot = raw;
    return;
  }
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  check(!value.is_discarded(),
        "config: cannot parse value for " + path + ": " + raw);
  detail::check_assignable(*slot, value, path);
  if (slot->is_number_float() && value.is_number_integer())
    *slot = double(value.get<long long>());
  else
    *slot = value;
}

inline nlohmann::json resolve_config(nlohmann::json defaults, const nlohmann::json& file,
                                     const std::vector<std::string>& overrides) {
  merge_config(defaults, file);
  for (const auto& o : overrides) apply_override(defaults, o);
  return defaults;
}

// A config file may be empty or whitespace-only, which means "all defaults".
inline nlohmann::json resolve_config_file(nlohmann::json defaults,
                                          const std::string& path,
                                          const std::vector<std::string>& overrides) {
  nlohmann::json file = nlohmann::json::object();
  if (!path.empty()) {
    const std::string text = read_text_file(path);
    if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
      file = nlohmann::json::parse(text, nullptr, false);
      check(!file.is_discarded(), "config: " + path + " is not valid JSON");
    }
  }
  return resolve_config(std::move(defaults), file, overrides);
}

// ---------------------------------------------------------------------------
// Pre-training run document

inline nlohmann::json pretrain_defaults() {
  return {
      {"corpus", ""},
      {"output_dir", ""},
      {"seed", 13},
      {"encoder",
       {{"layers", 4},
        {"hidden_dim", 128},
        {"heads", 4},
        {"ffn_dim", 512},
        {"max_len", 512},
        {"dropout", 0.2},
        {"pooling", "cls"}}},
      {"pretrain",
       {{"epochs", 30},
        {"sync_interval", 10},
        {"mlm_ratio", 0.15},
        {"distill_layers", 0},
        {"future_policy", "all"},
        {"teacher_input", "context_plus_future"},
        {"batch_size", 32},
        {"learning_rate", 5e-5},
        {"warmup_steps", 0},
        {"normalize_reps", false},
        {"checkpoint_every", 1},
        {"min_freq", 1}}}};
}

struct PretrainRun {
  std::string corpus;
  std::string output_dir;
  std::uint64_t seed = 13;
  EncoderConfig encoder;  // vocab_size filled in once the corpus is loaded
  PretrainConfig pretrain;

  static PretrainRun from_json(const nlohmann::json& j) {
    PretrainRun r;
    r.corpus = j.at("corpus").get<std::string>();
    r.output_dir = j.at("output_dir").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& e = j.at("encoder");
    r.encoder.layers = e.at("layers").get<int>();
    r.encoder.hidden_dim = e.at("hidden_dim").get<int>();
    r.encoder.heads = e.at("heads").get<int>();
    r.encoder.ffn_dim = e.at("ffn_dim").get<int>();
    r.encoder.max_len = e.at("max_len").get<int>();
    r.encoder.dropout = e.at("dropout").get<double>();
    r.encoder.pooling = parse_pooling(e.at("pooling").get<std::string>());
    const auto& p = j.at("pretrain");
    r.pretrain.epochs = p.at("epochs").get<int>();
    r.pretrain.sync_interval = p.at("sync_interval").get<int>();
    r.pretrain.mlm_ratio = p.at("mlm_ratio").get<double>();
    r.pretrain.distill_layers = p.at("distill_layers").get<int>();
    r.pretrain.future_policy = parse_future_policy(p.at("future_policy").get<std::string>());
    r.pretrain.teacher_input = parse_teacher_input(p.at("teacher_input").get<std::string>());
    r.pretrain.batch_size = p.at("batch_size").get<int>();
    r.pretrain.learning_rate = p.at("learning_rate").get<double>();
    r.pretrain.warmup_steps = p.at("warmup_steps").get<int>();
    r.pretrain.normalize_reps = p.at("normalize_reps").get<bool>();
    r.pretrain.checkpoint_every = p.at("checkpoint_every").get<int>();
    r.pretrain.min_freq = p.at("min_freq").get<int>();
    return r;
  }
};

// ---------------------------------------------------------------------------
// Fine-tuning run document (flat; the task fixes the head shape)

inline nlohmann::json finetune_defaults() {
  return {{"seed", 13},
          {"batch_size", 0},  // 0 = task default
          {"learning_rate", 5e-5},
          {"max_epochs", 50},
          {"eval_every", 50},
          {"patience", 10},
          {"freeze_encoder", false}};
}

struct FinetuneRun {
  std::uint64_t seed = 13;
  FinetuneConfig cfg;

  static FinetuneRun from_json(const nlohmann::json& j) {
    FinetuneRun r;
    r.seed = j.at("seed").get<std::uint64_t>();
    r.cfg.batch_size = j.at("batch_size").get<int>();
    r.cfg.learning_rate = j.at("learning_rate").get<double>();
    r.cfg.max_epochs = j.at("max_epochs").get<int>();
    r.cfg.eval_every = j.at("eval_every").get<int>();
    r.cfg.patience = j.at("patience").get<int>();
    r.cfg.freeze_encoder = j.at("freeze_encoder").get<bool>();
    return r;
  }
};

}  // namespace todlab
