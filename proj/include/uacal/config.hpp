// SPDX-License-Identifier: Apache-2.0
//
// RunConfig: one declarative JSON document holding every experiment knob.
// Keys are dotted paths ("finetune.learning_rate"); unknown keys are errors.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "uacal/generate.hpp"
#include "uacal/model.hpp"
#include "uacal/synthworld.hpp"
#include "uacal/trainer.hpp"
#include "uacal/uncertainty.hpp"

namespace uacal {

/// Optimizer settings for one training phase.
struct PhaseConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.001;
  double warmup_ratio = 0.03;
  int epochs = 3;
  int batch_size = 8;
  double grad_clip = 1.0;
  bool full_sequence = false;  // supervise every next-token prediction
};

struct MetricOptions {
  std::string predicate = "exact_normalized";
  double rouge_threshold = 0.7;
  bool length_normalized = false;
  bool uniform_weights = false;
  bool use_untempered = false;
  int ece_bins = 10;

  UncertaintyOptions uncertainty_options() const;
};

struct RunConfig {
  std::uint64_t seed = 0;  // shared by world, init, shuffling, dropout and sampling
  WorldConfig world;
  ModelConfig model{.vocab_size = 0, .context_len = 32};  // vocab_size comes from the vocabulary
  LoraConfig lora;
  PhaseConfig pretrain{.learning_rate = 3e-3, .weight_decay = 0.01, .epochs = 40,
                       .batch_size = 16, .full_sequence = true};
  PhaseConfig finetune{.learning_rate = 1e-3};
  LossKind loss = LossKind::ua_clm;
  AnnealSchedule anneal;
  GenConfig generate;
  MetricOptions metrics;

  void validate() const;

  WorldConfig world_config() const;
  ModelConfig model_config(int vocab_size) const;
  TrainConfig pretrain_config() const;
  TrainConfig finetune_config(LossKind kind) const;
  GenConfig gen_config() const;
};

nlohmann::ordered_json config_to_json(const RunConfig& cfg);

/// Fields absent from j keep their default; unknown keys and wrong types are
/// rejected with the offending dotted key.
RunConfig config_from_json(const nlohmann::ordered_json& j);

/// Dotted key -> default value, for every leaf of the config.
std::vector<std::pair<std::string, nlohmann::ordered_json>> config_leaves();

/// Applies "key" -> "text" overrides. Text is parsed against the type of the
/// default value; list fields take comma-separated items.
RunConfig apply_overrides(const RunConfig& cfg,
                          const std::map<std::string, std::string>& overrides);

RunConfig load_config(const std::filesystem::path& path);

}  // namespace uacal
