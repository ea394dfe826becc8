// SPDX-License-Identifier: Apache-2.0
#include "uacal/generate.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "uacal/error.hpp"
#include "uacal/losses.hpp"
#include "uacal/numeric.hpp"

namespace uacal {
namespace {

void check_prompt(const ModelParams& params, const TokenSequence& prompt) {
  require(!prompt.empty(), ErrorCode::invalid_argument, "decode: empty prompt");
  require(static_cast<int>(prompt.size()) < params.config.context_len,
          ErrorCode::invalid_argument,
          "decode: prompt of " + std::to_string(prompt.size()) +
              " tokens leaves no room in a context of " +
              std::to_string(params.config.context_len));
}

int steps_allowed(const ModelParams& params, const TokenSequence& prompt, const GenConfig& cfg) {
  return std::min(cfg.max_new_tokens,
                  params.config.context_len - static_cast<int>(prompt.size()));
}

struct StepDist {
  std::vector<double> logp;
  double entropy = 0.0;

  StepDist(std::span<const double> logits, double inv_temperature) : logp(logits.size()) {
    for (std::size_t k = 0; k < logits.size(); ++k) logp[k] = logits[k] * inv_temperature;
    const double lse = log_sum_exp(logp);
    for (double& v : logp) v -= lse;
    for (double v : logp) {
      if (v > -745.0) entropy -= std::exp(v) * v;
    }
    entropy = std::max(entropy, 0.0);
  }
};

// Inverse-CDF draw; falls back to the last non-zero entry on round-off.
int draw(const std::vector<double>& logp, double u) {
  double acc = 0.0;
  int last = 0;
  for (std::size_t k = 0; k < logp.size(); ++k) {
    const double p = std::exp(logp[k]);
    if (p <= 0.0) continue;
    last = static_cast<int>(k);
    acc += p;
    if (u < acc) return last;
  }
  return last;
}

// Decodes a set of sample streams together, one batched forward per step.
std::vector<Decoded> decode_streams(const ModelParams& params, const TokenSequence& prompt,
                                    const GenConfig& cfg, std::span<const std::uint64_t> streams,
                                    std::vector<double>* untempered) {
  cfg.validate();
  check_prompt(params, prompt);
  const int max_steps = steps_allowed(params, prompt, cfg);
  const double inv_t = 1.0 / cfg.temperature;
  const std::size_t n = streams.size();
  std::vector<Decoded> out(n);
  std::vector<std::mt19937_64> rngs;
  for (std::uint64_t s : streams) rngs.emplace_back(mix_seed(cfg.seed, s));
  if (untempered) untempered->assign(n, 0.0);

  std::vector<TokenSequence> seqs(n, prompt);
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), std::size_t{0});
  for (int step = 0; step < max_steps && !active.empty(); ++step) {
    std::vector<TokenSequence> batch;
    for (std::size_t i : active) batch.push_back(seqs[i]);
    const ForwardPass pass = forward(params, batch);
    std::vector<std::size_t> still;
    for (std::size_t b = 0; b < active.size(); ++b) {
      const std::size_t i = active[b];
      const auto logits = pass.row(static_cast<int>(b), static_cast<int>(seqs[i].size()) - 1);
      const StepDist dist(logits, inv_t);
      const int tok = draw(dist.logp, unit_uniform(rngs[i]()));
      out[i].token_logprobs.push_back(dist.logp[tok]);
      out[i].token_entropies.push_back(dist.entropy);
      if (untempered) (*untempered)[i] += StepDist(logits, 1.0).logp[tok];
      if (tok == cfg.stop_token) {
        out[i].stopped = true;
        continue;
      }
      out[i].ids.push_back(tok);
      seqs[i].push_back(tok);
      still.push_back(i);
    }
    active = std::move(still);
  }
  return out;
}

}  // namespace

void GenConfig::validate() const {
  require(max_new_tokens > 0, ErrorCode::config_error, "gen config: max_new_tokens must be > 0");
  require(std::isfinite(temperature) && temperature > 0.0, ErrorCode::config_error,
          "gen config: temperature must be > 0");
  require(num_samples >= 1, ErrorCode::config_error, "gen config: num_samples must be >= 1");
  require(stop_token >= 0, ErrorCode::config_error, "gen config: stop_token must be >= 0");
}

double Decoded::logprob() const {
  return std::accumulate(token_logprobs.begin(), token_logprobs.end(), 0.0);
}

Decoded greedy_decode(const ModelParams& params, const TokenSequence& prompt,
                      const GenConfig& cfg) {
  cfg.validate();
  check_prompt(params, prompt);
  const int max_steps = steps_allowed(params, prompt, cfg);
  Decoded out;
  TokenSequence seq = prompt;
  for (int step = 0; step < max_steps; ++step) {
    const std::vector<TokenSequence> batch{seq};
    const ForwardPass pass = forward(params, batch);
    const auto logits = pass.row(0, static_cast<int>(seq.size()) - 1);
    const int tok = argmax_lowest(logits);
    const StepDist dist(logits, 1.0);
    out.token_logprobs.push_back(dist.logp[tok]);
    out.token_entropies.push_back(dist.entropy);
    if (tok == cfg.stop_token) {
      out.stopped = true;
      break;
    }
    out.ids.push_back(tok);
    seq.push_back(tok);
  }
  return out;
}

Decoded sample_decode(const ModelParams& params, const TokenSequence& prompt,
                      const GenConfig& cfg, std::uint64_t stream_index,
                      double* untempered_logprob) {
  const std::uint64_t streams[1] = {stream_index};
  std::vector<double> untempered;
  auto out = decode_streams(params, prompt, cfg, streams,
                            untempered_logprob ? &untempered : nullptr);
  if (untempered_logprob) *untempered_logprob = untempered[0];
  return std::move(out[0]);
}

std::vector<Decoded> multi_sample(const ModelParams& params, const TokenSequence& prompt,
                                  const GenConfig& cfg, std::vector<double>* untempered_logprobs) {
  cfg.validate();
  std::vector<std::uint64_t> streams(static_cast<std::size_t>(cfg.num_samples));
  std::iota(streams.begin(), streams.end(), std::uint64_t{0});
  return decode_streams(params, prompt, cfg, streams, untempered_logprobs);
}

GenerationRecord generate_record(const ModelParams& params, const Vocab& vocab,
                                 const QAItem& item, const GenConfig& cfg) {
  const TokenSequence prompt = encode_prompt(vocab, item.prompt);
  GenerationRecord rec;
  rec.id = item.id;
  rec.prompt = item.prompt;
  Decoded greedy = greedy_decode(params, prompt, cfg);
  rec.response_ids = greedy.ids;
  rec.response = vocab.decode(greedy.ids);
  rec.token_logprobs = std::move(greedy.token_logprobs);
  rec.token_entropies = std::move(greedy.token_entropies);

  std::vector<double> untempered;
  const auto samples =
      multi_sample(params, prompt, cfg, cfg.record_untempered ? &untempered : nullptr);
  for (std::size_t m = 0; m < samples.size(); ++m) {
    SampleRecord s;
    s.text = vocab.decode(samples[m].ids);
    s.logprob = samples[m].logprob();
    s.n_tokens = static_cast<int>(samples[m].token_logprobs.size());
    if (cfg.record_untempered) s.logprob_untempered = untempered[m];
    rec.samples.push_back(std::move(s));
  }
  return rec;
}

nlohmann::ordered_json generation_to_json(const GenerationRecord& rec, bool with_untempered) {
  nlohmann::ordered_json j;
  j["id"] = rec.id;
  j["prompt"] = rec.prompt;
  j["response"] = rec.response;
  j["token_logprobs"] = rec.token_logprobs;
  j["token_entropies"] = rec.token_entropies;
  auto samples = nlohmann::ordered_json::array();
  for (const auto& s : rec.samples) {
    nlohmann::ordered_json js;
    js["text"] = s.text;
    js["logprob"] = s.logprob;
    js["n_tokens"] = s.n_tokens;
    if (with_untempered) js["logprob_untempered"] = s.logprob_untempered;
    samples.push_back(std::move(js));
  }
  j["samples"] = std::move(samples);
  return j;
}

GenerationRecord generation_from_json(const nlohmann::ordered_json& j) {
  GenerationRecord rec;
  try {
    rec.id = j.at("id").get<std::string>();
    rec.prompt = j.at("prompt").get<std::string>();
    rec.response = j.at("response").get<std::string>();
    rec.token_logprobs = j.at("token_logprobs").get<std::vector<double>>();
    rec.token_entropies = j.at("token_entropies").get<std::vector<double>>();
    for (const auto& js : j.at("samples")) {
      SampleRecord s;
      s.text = js.at("text").get<std::string>();
      s.logprob = js.at("logprob").get<double>();
      s.n_tokens = js.value("n_tokens", 0);
      s.logprob_untempered = js.value("logprob_untempered", 0.0);
      rec.samples.push_back(std::move(s));
    }
  } catch (const nlohmann::ordered_json::exception& e) {
    fail(ErrorCode::parse_error, std::string("generation record: ") + e.what());
  }
  require(rec.token_logprobs.size() == rec.token_entropies.size(), ErrorCode::parse_error,
          "generation record '" + rec.id + "': telemetry length mismatch");
  return rec;
}

}  // namespace uacal
