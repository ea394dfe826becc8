// SPDX-License-Identifier: Apache-2.0
//
// Tiny decoder-only transformer with frozen base weights and low-rank
// adapters. Pre-norm blocks, learned positions, GELU feed-forward, untied
// output head. Sequences in a batch are stacked row-wise; attention is
// restricted to each sequence's own causal prefix.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace uacal {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using TokenSequence = std::vector<int>;

struct ModelConfig {
  int vocab_size = 256;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 2;
  int context_len = 64;
  int d_ff = 256;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// The six linear maps of a block; names follow the common q_proj/... scheme.
enum class LinearMap : int { q_proj, k_proj, v_proj, o_proj, up_proj, down_proj };
inline constexpr int kLinearMapCount = 6;

std::string_view linear_map_name(LinearMap map);
LinearMap parse_linear_map(std::string_view name);

struct LoraConfig {
  int rank = 32;
  double alpha = 64.0;
  double dropout = 0.1;
  std::vector<std::string> target_maps{"q_proj", "k_proj", "v_proj", "up_proj", "down_proj"};

  void validate(const ModelConfig& model) const;
  double scale() const { return alpha / rank; }
  bool operator==(const LoraConfig&) const = default;
};

/// Low-rank update: W x + scale * B (A x). a is r x d_in, b is d_out x r.
struct LoraPair {
  Matrix a;
  Matrix b;
};

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  Matrix ln2_gain, ln2_bias;
  std::array<Matrix, kLinearMapCount> linear;  // each d_out x d_in
};

struct BaseParams {
  Matrix token_embedding;     // V x d
  Matrix position_embedding;  // context_len x d
  std::vector<LayerParams> layers;
  Matrix final_gain, final_bias;
  Matrix lm_head;  // V x d

  /// Visits every array in serialization order as f(name, matrix).
  template <class Self, class F>
  static void visit(Self& self, F&& f);
  template <class F>
  void for_each(F&& f) { visit(*this, f); }
  template <class F>
  void for_each(F&& f) const { visit(*this, f); }
};

using LayerAdapters = std::array<std::optional<LoraPair>, kLinearMapCount>;

struct AdapterParams {
  std::vector<LayerAdapters> layers;

  /// Visits a and b of every present adapter as f(name, matrix).
  template <class Self, class F>
  static void visit(Self& self, F&& f);
  template <class F>
  void for_each(F&& f) { visit(*this, f); }
  template <class F>
  void for_each(F&& f) const { visit(*this, f); }
};

struct ModelParams {
  ModelConfig config;
  std::optional<LoraConfig> lora;
  BaseParams base;
  AdapterParams adapters;
  bool merged = false;

  bool has_adapters() const { return lora.has_value(); }
};

/// Gradients for one trainable set. Arrays of the non-trained set are empty.
struct Gradients {
  BaseParams base;
  AdapterParams adapters;
};

enum class GradTarget { adapters, base };

/// Random base weights plus freshly attached adapters (B = 0).
ModelParams init_model(const ModelConfig& cfg, const LoraConfig& lora);

/// Random base weights, no adapters; used for pretraining.
ModelParams init_base_model(const ModelConfig& cfg);

/// Attaches zero-output adapters to a base-only model. A is drawn from seed.
void attach_adapters(ModelParams& params, const LoraConfig& lora, std::uint64_t seed);

/// Folds scale * B A into every adapted weight; the result has no adapters.
ModelParams merge_adapters(const ModelParams& params);

struct ForwardOptions {
  bool use_adapters = true;
  bool training = false;  // enables adapter dropout
  std::uint64_t dropout_seed = 0;
};

/// Output of a forward pass plus the activations backward() needs.
struct ForwardPass {
  Matrix logits;                   // sum(T_b) x V, sequences stacked
  std::vector<int> offsets;        // row offset of each sequence; size B + 1

  std::span<const double> row(int sequence, int position) const {
    const auto r = offsets[sequence] + position;
    return {logits.data() + static_cast<std::ptrdiff_t>(r) * logits.cols(),
            static_cast<std::size_t>(logits.cols())};
  }

  struct LinearCache {
    Matrix input;          // pre-dropout input
    Matrix mask;           // 0 or 1/keep per element; empty when dropout inactive
    Matrix dropped;        // input * mask
    Matrix projected;      // dropped * A^T
    bool adapted = false;
  };
  struct LayerCache {
    Matrix x_in, ln1_hat, ln1_out;
    Eigen::VectorXd ln1_rstd;
    Matrix q, k, v, attn_concat;
    std::vector<Matrix> attn_probs;  // [sequence * n_heads + head], T x T
    Matrix x_mid, ln2_hat, ln2_out;
    Eigen::VectorXd ln2_rstd;
    Matrix up_pre, up_act;
    std::array<LinearCache, kLinearMapCount> lin;
  };
  std::vector<TokenSequence> tokens;
  std::vector<LayerCache> layers;
  Matrix final_hat, final_out;
  Eigen::VectorXd final_rstd;
  bool used_adapters = false;
};

ForwardPass forward(const ModelParams& params, std::span<const TokenSequence> batch,
                    const ForwardOptions& options = {});

/// Reverse-mode gradients of a scalar whose gradient w.r.t. the stacked logits
/// is dlogits. target = adapters produces adapter gradients only.
Gradients backward(const ModelParams& params, const ForwardPass& pass, const Matrix& dlogits,
                   GradTarget target = GradTarget::adapters);

// ---------------------------------------------------------------------------

template <class Self, class F>
void BaseParams::visit(Self& self, F&& f) {
  f(std::string("token_embedding"), self.token_embedding);
  f(std::string("position_embedding"), self.position_embedding);
  for (std::size_t l = 0; l < self.layers.size(); ++l) {
    auto& layer = self.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    f(prefix + "ln1.gain", layer.ln1_gain);
    f(prefix + "ln1.bias", layer.ln1_bias);
    for (int m = 0; m < kLinearMapCount; ++m) {
      f(prefix + std::string(linear_map_name(static_cast<LinearMap>(m))) + ".weight",
        layer.linear[m]);
    }
    f(prefix + "ln2.gain", layer.ln2_gain);
    f(prefix + "ln2.bias", layer.ln2_bias);
  }
  f(std::string("final_norm.gain"), self.final_gain);
  f(std::string("final_norm.bias"), self.final_bias);
  f(std::string("lm_head"), self.lm_head);
}

template <class Self, class F>
void AdapterParams::visit(Self& self, F&& f) {
  for (std::size_t l = 0; l < self.layers.size(); ++l) {
    for (int m = 0; m < kLinearMapCount; ++m) {
      auto& slot = self.layers[l][m];
      if (!slot) continue;
      const std::string prefix = "layers." + std::to_string(l) + "." +
                                 std::string(linear_map_name(static_cast<LinearMap>(m)));
      f(prefix + ".lora_a", slot->a);
      f(prefix + ".lora_b", slot->b);
    }
  }
}

}  // namespace uacal
