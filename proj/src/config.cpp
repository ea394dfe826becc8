// SPDX-License-Identifier: Apache-2.0
#include "uacal/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "uacal/error.hpp"

namespace uacal {
namespace {

using Json = nlohmann::ordered_json;

Json phase_to_json(const PhaseConfig& p) {
  return Json{{"learning_rate", p.learning_rate}, {"weight_decay", p.weight_decay},
              {"warmup_ratio", p.warmup_ratio},   {"epochs", p.epochs},
              {"batch_size", p.batch_size},       {"grad_clip", p.grad_clip},
              {"full_sequence", p.full_sequence}};
}

PhaseConfig phase_from_json(const Json& j) {
  PhaseConfig p;
  p.learning_rate = j.at("learning_rate").get<double>();
  p.weight_decay = j.at("weight_decay").get<double>();
  p.warmup_ratio = j.at("warmup_ratio").get<double>();
  p.epochs = j.at("epochs").get<int>();
  p.batch_size = j.at("batch_size").get<int>();
  p.grad_clip = j.at("grad_clip").get<double>();
  p.full_sequence = j.at("full_sequence").get<bool>();
  return p;
}

void flatten(const Json& j, const std::string& prefix,
             std::vector<std::pair<std::string, Json>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    }
    return;
  }
  out.emplace_back(prefix, j);
}

Json::json_pointer pointer_of(const std::string& dotted) {
  std::string path;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const auto dot = dotted.find('.', start);
    const auto end = dot == std::string::npos ? dotted.size() : dot;
    path += "/" + dotted.substr(start, end - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return Json::json_pointer(path);
}

bool same_kind(const Json& expected, const Json& value) {
  if (expected.is_boolean()) return value.is_boolean();
  if (expected.is_number_integer()) return value.is_number_integer();
  if (expected.is_number()) return value.is_number();
  if (expected.is_string()) return value.is_string();
  if (expected.is_array()) {
    if (!value.is_array()) return false;
    for (const auto& v : value) {
      if (!v.is_string()) return false;
    }
    return true;
  }
  return false;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  require(ec == std::errc() && ptr == end && !text.empty(), ErrorCode::config_error,
          "config: --" + key + " expects a number, got '" + text + "'");
  return value;
}

Json parse_override(const std::string& key, const Json& expected, const std::string& text) {
  if (expected.is_boolean()) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    fail(ErrorCode::config_error, "config: --" + key + " expects true|false, got '" + text + "'");
  }
  if (expected.is_number_unsigned()) return parse_number<std::uint64_t>(key, text);
  if (expected.is_number_integer()) return parse_number<std::int64_t>(key, text);
  if (expected.is_number()) return parse_number<double>(key, text);
  if (expected.is_array()) {
    Json items = Json::array();
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) items.push_back(item);
    }
    return items;
  }
  return text;
}

}  // namespace

UncertaintyOptions MetricOptions::uncertainty_options() const {
  UncertaintyOptions o;
  o.predicate.kind = parse_predicate_kind(predicate);
  o.predicate.threshold = rouge_threshold;
  o.length_normalized = length_normalized;
  o.uniform_weights = uniform_weights;
  o.use_untempered = use_untempered;
  return o;
}

void RunConfig::validate() const {
  world_config().validate();
  model_config(kReservedTokens + 1).validate();
  lora.validate(model_config(kReservedTokens + 1));
  pretrain_config().validate();
  finetune_config(loss).validate();
  gen_config().validate();
  (void)metrics.uncertainty_options();
  require(metrics.rouge_threshold > 0.0 && metrics.rouge_threshold <= 1.0,
          ErrorCode::config_error, "config: metrics.rouge_threshold must lie in (0, 1]");
  require(metrics.ece_bins >= 1, ErrorCode::config_error, "config: metrics.ece_bins must be >= 1");
}

WorldConfig RunConfig::world_config() const {
  WorldConfig w = world;
  w.seed = seed;
  return w;
}

ModelConfig RunConfig::model_config(int vocab_size) const {
  ModelConfig m = model;
  m.vocab_size = vocab_size;
  m.seed = seed;
  return m;
}

namespace {
TrainConfig phase_train_config(const PhaseConfig& p, std::uint64_t seed) {
  TrainConfig t;
  t.learning_rate = p.learning_rate;
  t.weight_decay = p.weight_decay;
  t.warmup_ratio = p.warmup_ratio;
  t.epochs = p.epochs;
  t.batch_size = p.batch_size;
  t.grad_clip = p.grad_clip;
  t.seed = seed;
  return t;
}
}  // namespace

TrainConfig RunConfig::pretrain_config() const {
  TrainConfig t = phase_train_config(pretrain, seed);
  t.loss_kind = LossKind::clm;
  t.target = GradTarget::base;
  return t;
}

TrainConfig RunConfig::finetune_config(LossKind kind) const {
  TrainConfig t = phase_train_config(finetune, seed);
  t.loss_kind = kind;
  t.anneal = anneal;
  t.target = GradTarget::adapters;
  return t;
}

GenConfig RunConfig::gen_config() const {
  GenConfig g = generate;
  g.seed = seed;
  return g;
}

Json config_to_json(const RunConfig& cfg) {
  Json j;
  j["seed"] = cfg.seed;
  j["world"] = Json{{"n_entities", cfg.world.n_entities},
                    {"n_attributes", cfg.world.n_attributes},
                    {"n_pretrain_pairs", cfg.world.n_pretrain_pairs},
                    {"n_finetune_pairs", cfg.world.n_finetune_pairs},
                    {"n_eval_pairs", cfg.world.n_eval_pairs},
                    {"n_ood_pairs", cfg.world.n_ood_pairs},
                    {"ambiguity_rate", cfg.world.ambiguity_rate},
                    {"name_pool", cfg.world.name_pool}};
  j["model"] = Json{{"d_model", cfg.model.d_model},
                    {"n_layers", cfg.model.n_layers},
                    {"n_heads", cfg.model.n_heads},
                    {"context_len", cfg.model.context_len},
                    {"d_ff", cfg.model.d_ff}};
  j["lora"] = Json{{"rank", cfg.lora.rank},
                   {"alpha", cfg.lora.alpha},
                   {"dropout", cfg.lora.dropout},
                   {"target_maps", cfg.lora.target_maps}};
  j["pretrain"] = phase_to_json(cfg.pretrain);
  j["finetune"] = phase_to_json(cfg.finetune);
  j["loss"] = std::string(loss_kind_name(cfg.loss));
  j["anneal"] = Json{{"beta_early", cfg.anneal.beta_early},
                     {"beta_late", cfg.anneal.beta_late},
                     {"switch_fraction", cfg.anneal.switch_fraction}};
  j["generate"] = Json{{"max_new_tokens", cfg.generate.max_new_tokens},
                       {"temperature", cfg.generate.temperature},
                       {"num_samples", cfg.generate.num_samples},
                       {"record_untempered", cfg.generate.record_untempered}};
  j["metrics"] = Json{{"predicate", cfg.metrics.predicate},
                      {"rouge_threshold", cfg.metrics.rouge_threshold},
                      {"length_normalized", cfg.metrics.length_normalized},
                      {"uniform_weights", cfg.metrics.uniform_weights},
                      {"use_untempered", cfg.metrics.use_untempered},
                      {"ece_bins", cfg.metrics.ece_bins}};
  return j;
}

std::vector<std::pair<std::string, Json>> config_leaves() {
  std::vector<std::pair<std::string, Json>> out;
  flatten(config_to_json(RunConfig{}), "", out);
  return out;
}

RunConfig config_from_json(const Json& j) {
  require(j.is_object(), ErrorCode::config_error, "config: top level must be an object");
  Json merged = config_to_json(RunConfig{});
  std::vector<std::pair<std::string, Json>> given;
  flatten(j, "", given);
  for (const auto& [key, value] : given) {
    const auto ptr = pointer_of(key);
    require(merged.contains(ptr) && !merged.at(ptr).is_object(), ErrorCode::config_error,
            "config: unknown key '" + key + "'");
    require(same_kind(merged.at(ptr), value), ErrorCode::config_error,
            "config: key '" + key + "' has the wrong type");
    merged[ptr] = value;
  }

  RunConfig cfg;
  cfg.seed = merged.at("seed").get<std::uint64_t>();
  const auto& w = merged.at("world");
  cfg.world.n_entities = w.at("n_entities").get<int>();
  cfg.world.n_attributes = w.at("n_attributes").get<int>();
  cfg.world.n_pretrain_pairs = w.at("n_pretrain_pairs").get<int>();
  cfg.world.n_finetune_pairs = w.at("n_finetune_pairs").get<int>();
  cfg.world.n_eval_pairs = w.at("n_eval_pairs").get<int>();
  cfg.world.n_ood_pairs = w.at("n_ood_pairs").get<int>();
  cfg.world.ambiguity_rate = w.at("ambiguity_rate").get<double>();
  cfg.world.name_pool = w.at("name_pool").get<int>();
  const auto& m = merged.at("model");
  cfg.model.d_model = m.at("d_model").get<int>();
  cfg.model.n_layers = m.at("n_layers").get<int>();
  cfg.model.n_heads = m.at("n_heads").get<int>();
  cfg.model.context_len = m.at("context_len").get<int>();
  cfg.model.d_ff = m.at("d_ff").get<int>();
  const auto& l = merged.at("lora");
  cfg.lora.rank = l.at("rank").get<int>();
  cfg.lora.alpha = l.at("alpha").get<double>();
  cfg.lora.dropout = l.at("dropout").get<double>();
  cfg.lora.target_maps = l.at("target_maps").get<std::vector<std::string>>();
  cfg.pretrain = phase_from_json(merged.at("pretrain"));
  cfg.finetune = phase_from_json(merged.at("finetune"));
  cfg.loss = parse_loss_kind(merged.at("loss").get<std::string>());
  const auto& a = merged.at("anneal");
  cfg.anneal.beta_early = a.at("beta_early").get<double>();
  cfg.anneal.beta_late = a.at("beta_late").get<double>();
  cfg.anneal.switch_fraction = a.at("switch_fraction").get<double>();
  const auto& g = merged.at("generate");
  cfg.generate.max_new_tokens = g.at("max_new_tokens").get<int>();
  cfg.generate.temperature = g.at("temperature").get<double>();
  cfg.generate.num_samples = g.at("num_samples").get<int>();
  cfg.generate.record_untempered = g.at("record_untempered").get<bool>();
  const auto& x = merged.at("metrics");
  cfg.metrics.predicate = x.at("predicate").get<std::string>();
  cfg.metrics.rouge_threshold = x.at("rouge_threshold").get<double>();
  cfg.metrics.length_normalized = x.at("length_normalized").get<bool>();
  cfg.metrics.uniform_weights = x.at("uniform_weights").get<bool>();
  cfg.metrics.use_untempered = x.at("use_untempered").get<bool>();
  cfg.metrics.ece_bins = x.at("ece_bins").get<int>();
  cfg.validate();
  return cfg;
}

RunConfig apply_overrides(const RunConfig& cfg, const std::map<std::string, std::string>& overrides) {
  Json j = config_to_json(cfg);
  for (const auto& [key, text] : overrides) {
    const auto ptr = pointer_of(key);
    require(j.contains(ptr) && !j.at(ptr).is_object(), ErrorCode::config_error,
            "config: unknown key '" + key + "'");
    j[ptr] = parse_override(key, j.at(ptr), text);
  }
  return config_from_json(j);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::io_error, "config: cannot open " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    fail(ErrorCode::parse_error, "config: " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace uacal
