// SPDX-License-Identifier: Apache-2.0
//
// Greedy and temperature-sampled decoding with per-token telemetry.
//
// Telemetry covers every decoding step, including the step that emits the
// stop token; the stop token itself is not part of the response text.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "uacal/model.hpp"
#include "uacal/synthworld.hpp"

namespace uacal {

struct GenConfig {
  int max_new_tokens = 16;
  double temperature = 0.3;
  int num_samples = 5;
  std::uint64_t seed = 0;
  int stop_token = kEosId;
  bool record_untempered = false;  // also store untempered sample log-probs

  void validate() const;
};

/// One decoded continuation. ids exclude the stop token; token_logprobs and
/// token_entropies have one entry per step (ids.size() + 1 when stopped).
struct Decoded {
  std::vector<int> ids;
  std::vector<double> token_logprobs;
  std::vector<double> token_entropies;
  bool stopped = false;

  double logprob() const;
};

struct SampleRecord {
  std::string text;
  double logprob = 0.0;             // under the distribution actually sampled from
  double logprob_untempered = 0.0;  // under temperature 1 (recorded on request)
  int n_tokens = 0;                 // decoding steps, stop step included
};

struct GenerationRecord {
  std::string id;
  std::string prompt;
  std::vector<int> response_ids;
  std::string response;
  std::vector<double> token_logprobs;
  std::vector<double> token_entropies;
  std::vector<SampleRecord> samples;
};

/// Argmax decoding (lowest id on ties). Log-probs and entropies are taken from
/// the untempered distribution, which greedy decoding is invariant to.
Decoded greedy_decode(const ModelParams& params, const TokenSequence& prompt,
                      const GenConfig& cfg);

/// Sample from softmax(logits / temperature) on the stream seeded by
/// (cfg.seed, stream_index). token_logprobs are tempered; untempered_logprob
/// receives the temperature-1 sequence log-prob when non-null.
Decoded sample_decode(const ModelParams& params, const TokenSequence& prompt,
                      const GenConfig& cfg, std::uint64_t stream_index,
                      double* untempered_logprob = nullptr);

/// cfg.num_samples streams 0..M-1, decoded together. Equal to calling
/// sample_decode for every stream.
std::vector<Decoded> multi_sample(const ModelParams& params, const TokenSequence& prompt,
                                  const GenConfig& cfg,
                                  std::vector<double>* untempered_logprobs = nullptr);

/// Greedy response plus M samples for one dataset item.
GenerationRecord generate_record(const ModelParams& params, const Vocab& vocab,
                                 const QAItem& item, const GenConfig& cfg);

nlohmann::ordered_json generation_to_json(const GenerationRecord& rec, bool with_untempered);
GenerationRecord generation_from_json(const nlohmann::ordered_json& j);

}  // namespace uacal
