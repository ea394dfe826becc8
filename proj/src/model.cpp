// SPDX-License-Identifier: Apache-2.0
#include "uacal/model.hpp"

#include <cmath>
#include <random>

#include "uacal/error.hpp"

namespace uacal {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

int map_in_dim(const ModelConfig& cfg, LinearMap m) {
  return m == LinearMap::down_proj ? cfg.d_ff : cfg.d_model;
}

int map_out_dim(const ModelConfig& cfg, LinearMap m) {
  return m == LinearMap::up_proj ? cfg.d_ff : cfg.d_model;
}

Matrix normal_matrix(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& hat,
                Eigen::VectorXd& rstd, Matrix& out) {
  const auto n = x.rows();
  const auto d = x.cols();
  hat.resize(n, d);
  out.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double s = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = s;
    hat.row(r) = (x.row(r).array() - mean) * s;
    out.row(r) = hat.row(r).cwiseProduct(gain) + bias;
  }
}

// Returns dx; accumulates gain/bias gradients when the pointers are set.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& hat, const Eigen::VectorXd& rstd,
                           const Matrix& gain, Matrix* dgain, Matrix* dbias) {
  const auto n = dy.rows();
  const auto d = static_cast<double>(dy.cols());
  Matrix dx(n, dy.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::RowVectorXd dhat = dy.row(r).cwiseProduct(gain);
    const double mean_dhat = dhat.sum() / d;
    const double mean_dhat_hat = dhat.dot(hat.row(r)) / d;
    dx.row(r) = rstd[r] * (dhat.array() - mean_dhat - hat.row(r).array() * mean_dhat_hat);
  }
  if (dgain) *dgain += dy.cwiseProduct(hat).colwise().sum();
  if (dbias) *dbias += dy.colwise().sum();
  return dx;
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

struct Linear {
  const Matrix& weight;
  const LoraPair* adapter;
  double scale;
};

Linear linear_of(const ModelParams& p, int layer, LinearMap m, bool use_adapters) {
  const LoraPair* adapter = nullptr;
  if (use_adapters && !p.adapters.layers.empty()) {
    const auto& slot = p.adapters.layers[layer][static_cast<int>(m)];
    if (slot) adapter = &*slot;
  }
  return {p.base.layers[layer].linear[static_cast<int>(m)], adapter,
          p.lora ? p.lora->scale() : 0.0};
}

Matrix apply_linear(const Linear& lin, const Matrix& x, ForwardPass::LinearCache& cache,
                    double dropout, std::mt19937_64* rng) {
  Matrix y(x.rows(), lin.weight.rows());
  y.noalias() = x * lin.weight.transpose();
  cache.input = x;
  cache.adapted = lin.adapter != nullptr;
  if (!lin.adapter) return y;
  const Matrix* src = &x;
  if (rng && dropout > 0.0) {
    std::bernoulli_distribution keep(1.0 - dropout);
    const double inv_keep = 1.0 / (1.0 - dropout);
    cache.mask.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      cache.mask.data()[i] = keep(*rng) ? inv_keep : 0.0;
    }
    cache.dropped = x.cwiseProduct(cache.mask);
    src = &cache.dropped;
  }
  cache.projected.noalias() = *src * lin.adapter->a.transpose();
  y.noalias() += lin.scale * (cache.projected * lin.adapter->b.transpose());
  return y;
}

// dy -> dx; accumulates weight or adapter gradients as requested.
Matrix linear_backward(const Linear& lin, const ForwardPass::LinearCache& cache, const Matrix& dy,
                       Matrix* dweight, LoraPair* dadapter) {
  Matrix dx(dy.rows(), lin.weight.cols());
  dx.noalias() = dy * lin.weight;
  if (dweight) dweight->noalias() += dy.transpose() * cache.input;
  if (!cache.adapted) return dx;
  const Matrix dproj = lin.scale * (dy * lin.adapter->b);  // rows x r
  const Matrix& src = cache.dropped.size() ? cache.dropped : cache.input;
  if (dadapter) {
    dadapter->b.noalias() += lin.scale * (dy.transpose() * cache.projected);
    dadapter->a.noalias() += dproj.transpose() * src;
  }
  Matrix dsrc = dproj * lin.adapter->a;
  if (cache.mask.size()) dsrc = dsrc.cwiseProduct(cache.mask);
  dx += dsrc;
  return dx;
}

Gradients zero_like(const ModelParams& params, GradTarget target) {
  Gradients g;
  const auto n_layers = params.base.layers.size();
  if (target == GradTarget::base) {
    g.base = params.base;
    g.base.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  } else {
    g.base.layers.resize(n_layers);
    g.adapters = params.adapters;
    g.adapters.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  }
  return g;
}

}  // namespace

std::string_view linear_map_name(LinearMap map) {
  switch (map) {
    case LinearMap::q_proj: return "q_proj";
    case LinearMap::k_proj: return "k_proj";
    case LinearMap::v_proj: return "v_proj";
    case LinearMap::o_proj: return "o_proj";
    case LinearMap::up_proj: return "up_proj";
    case LinearMap::down_proj: return "down_proj";
  }
  return "?";
}

LinearMap parse_linear_map(std::string_view name) {
  for (int m = 0; m < kLinearMapCount; ++m) {
    if (linear_map_name(static_cast<LinearMap>(m)) == name) return static_cast<LinearMap>(m);
  }
  fail(ErrorCode::config_error, "unknown linear map '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  require(vocab_size > 0 && d_model > 0 && n_layers > 0 && n_heads > 0 && d_ff > 0,
          ErrorCode::config_error, "model config: sizes must be positive");
  require(d_model % n_heads == 0, ErrorCode::config_error,
          "model config: d_model must be divisible by n_heads");
  require(context_len >= 2, ErrorCode::config_error, "model config: context_len must be >= 2");
}

void LoraConfig::validate(const ModelConfig& model) const {
  require(rank > 0, ErrorCode::config_error, "lora config: rank must be positive");
  require(alpha > 0.0, ErrorCode::config_error, "lora config: alpha must be positive");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::config_error,
          "lora config: dropout must lie in [0, 1)");
  require(!target_maps.empty(), ErrorCode::config_error, "lora config: no target maps");
  for (const auto& name : target_maps) {
    const LinearMap m = parse_linear_map(name);
    const int limit = std::min(map_in_dim(model, m), map_out_dim(model, m));
    require(rank <= limit, ErrorCode::config_error,
            "lora config: rank " + std::to_string(rank) + " exceeds dimension " +
                std::to_string(limit) + " of " + name);
  }
}

ModelParams init_base_model(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ModelParams p;
  p.config = cfg;
  const int d = cfg.d_model;
  const double residual_std = kInitStd / std::sqrt(2.0 * cfg.n_layers);
  p.base.token_embedding = normal_matrix(cfg.vocab_size, d, kInitStd, rng);
  p.base.position_embedding = normal_matrix(cfg.context_len, d, kInitStd, rng);
  p.base.layers.resize(cfg.n_layers);
  for (auto& layer : p.base.layers) {
    layer.ln1_gain = Matrix::Ones(1, d);
    layer.ln1_bias = Matrix::Zero(1, d);
    layer.ln2_gain = Matrix::Ones(1, d);
    layer.ln2_bias = Matrix::Zero(1, d);
    for (int m = 0; m < kLinearMapCount; ++m) {
      const auto map = static_cast<LinearMap>(m);
      const bool residual = map == LinearMap::o_proj || map == LinearMap::down_proj;
      layer.linear[m] = normal_matrix(map_out_dim(cfg, map), map_in_dim(cfg, map),
                                      residual ? residual_std : kInitStd, rng);
    }
  }
  p.base.final_gain = Matrix::Ones(1, d);
  p.base.final_bias = Matrix::Zero(1, d);
  p.base.lm_head = normal_matrix(cfg.vocab_size, d, kInitStd, rng);
  return p;
}

void attach_adapters(ModelParams& params, const LoraConfig& lora, std::uint64_t seed) {
  require(!params.merged, ErrorCode::state_error, "attach_adapters: model already merged");
  require(!params.lora, ErrorCode::state_error, "attach_adapters: adapters already attached");
  lora.validate(params.config);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  params.lora = lora;
  params.adapters.layers.assign(params.config.n_layers, LayerAdapters{});
  for (auto& layer : params.adapters.layers) {
    for (const auto& name : lora.target_maps) {
      const LinearMap m = parse_linear_map(name);
      const int d_in = map_in_dim(params.config, m);
      const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      LoraPair pair;
      pair.a.resize(lora.rank, d_in);
      for (Eigen::Index i = 0; i < pair.a.size(); ++i) pair.a.data()[i] = dist(rng);
      pair.b = Matrix::Zero(map_out_dim(params.config, m), lora.rank);
      layer[static_cast<int>(m)] = std::move(pair);
    }
  }
}

ModelParams init_model(const ModelConfig& cfg, const LoraConfig& lora) {
  ModelParams p = init_base_model(cfg);
  attach_adapters(p, lora, cfg.seed);
  return p;
}

ModelParams merge_adapters(const ModelParams& params) {
  require(!params.merged, ErrorCode::state_error, "merge_adapters: adapters already merged");
  ModelParams out;
  out.config = params.config;
  out.base = params.base;
  out.merged = true;
  if (!params.lora) return out;
  const double scale = params.lora->scale();
  for (std::size_t l = 0; l < params.adapters.layers.size(); ++l) {
    for (int m = 0; m < kLinearMapCount; ++m) {
      const auto& slot = params.adapters.layers[l][m];
      if (slot) out.base.layers[l].linear[m].noalias() += scale * (slot->b * slot->a);
    }
  }
  return out;
}

ForwardPass forward(const ModelParams& params, std::span<const TokenSequence> batch,
                    const ForwardOptions& options) {
  const ModelConfig& cfg = params.config;
  require(!batch.empty(), ErrorCode::invalid_argument, "forward: empty batch");
  ForwardPass pass;
  pass.tokens.assign(batch.begin(), batch.end());
  pass.offsets.reserve(batch.size() + 1);
  pass.offsets.push_back(0);
  for (const auto& seq : batch) {
    require(!seq.empty(), ErrorCode::invalid_argument, "forward: empty sequence");
    require(static_cast<int>(seq.size()) <= cfg.context_len, ErrorCode::invalid_argument,
            "forward: sequence length " + std::to_string(seq.size()) + " exceeds context " +
                std::to_string(cfg.context_len));
    for (int id : seq) {
      require(id >= 0 && id < cfg.vocab_size, ErrorCode::invalid_argument,
              "forward: token id " + std::to_string(id) + " out of range");
    }
    pass.offsets.push_back(pass.offsets.back() + static_cast<int>(seq.size()));
  }
  const int n = pass.offsets.back();
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_adapters = options.use_adapters && params.has_adapters();
  pass.used_adapters = use_adapters;

  std::mt19937_64 dropout_rng(options.dropout_seed);
  const double dropout = (options.training && use_adapters) ? params.lora->dropout : 0.0;
  std::mt19937_64* rng = dropout > 0.0 ? &dropout_rng : nullptr;

  Matrix x(n, d);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    for (std::size_t t = 0; t < batch[s].size(); ++t) {
      x.row(pass.offsets[s] + t) = params.base.token_embedding.row(batch[s][t]) +
                                   params.base.position_embedding.row(t);
    }
  }

  pass.layers.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = params.base.layers[l];
    auto& c = pass.layers[l];
    auto lin = [&](LinearMap m) { return linear_of(params, l, m, use_adapters); };
    auto& lc = c.lin;
    c.x_in = x;
    layer_norm(x, lp.ln1_gain, lp.ln1_bias, c.ln1_hat, c.ln1_rstd, c.ln1_out);
    c.q = apply_linear(lin(LinearMap::q_proj), c.ln1_out, lc[0], dropout, rng);
    c.k = apply_linear(lin(LinearMap::k_proj), c.ln1_out, lc[1], dropout, rng);
    c.v = apply_linear(lin(LinearMap::v_proj), c.ln1_out, lc[2], dropout, rng);

    c.attn_concat.resize(n, d);
    c.attn_probs.resize(batch.size() * heads);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const int off = pass.offsets[s];
      const int len = pass.offsets[s + 1] - off;
      for (int h = 0; h < heads; ++h) {
        const auto q = c.q.block(off, h * dh, len, dh);
        const auto k = c.k.block(off, h * dh, len, dh);
        const auto v = c.v.block(off, h * dh, len, dh);
        Matrix probs = (q * k.transpose()) * att_scale;
        for (int i = 0; i < len; ++i) {
          double mx = probs(i, 0);
          for (int j = 1; j <= i; ++j) mx = std::max(mx, probs(i, j));
          double sum = 0.0;
          for (int j = 0; j <= i; ++j) {
            probs(i, j) = std::exp(probs(i, j) - mx);
            sum += probs(i, j);
          }
          for (int j = 0; j <= i; ++j) probs(i, j) /= sum;
          for (int j = i + 1; j < len; ++j) probs(i, j) = 0.0;
        }
        c.attn_concat.block(off, h * dh, len, dh).noalias() = probs * v;
        c.attn_probs[s * heads + h] = std::move(probs);
      }
    }
    x = c.x_in + apply_linear(lin(LinearMap::o_proj), c.attn_concat, lc[3], dropout, rng);
    c.x_mid = x;

    layer_norm(x, lp.ln2_gain, lp.ln2_bias, c.ln2_hat, c.ln2_rstd, c.ln2_out);
    c.up_pre = apply_linear(lin(LinearMap::up_proj), c.ln2_out, lc[4], dropout, rng);
    c.up_act = c.up_pre.unaryExpr([](double v) { return gelu(v); });
    x = c.x_mid + apply_linear(lin(LinearMap::down_proj), c.up_act, lc[5], dropout, rng);
  }

  layer_norm(x, params.base.final_gain, params.base.final_bias, pass.final_hat, pass.final_rstd,
             pass.final_out);
  pass.logits.resize(n, cfg.vocab_size);
  pass.logits.noalias() = pass.final_out * params.base.lm_head.transpose();
  return pass;
}

Gradients backward(const ModelParams& params, const ForwardPass& pass, const Matrix& dlogits,
                   GradTarget target) {
  const ModelConfig& cfg = params.config;
  require(dlogits.rows() == pass.logits.rows() && dlogits.cols() == pass.logits.cols(),
          ErrorCode::shape_mismatch,
          "backward: gradient shape " + std::to_string(dlogits.rows()) + "x" +
              std::to_string(dlogits.cols()) + " does not match logits " +
              std::to_string(pass.logits.rows()) + "x" + std::to_string(pass.logits.cols()));
  require(static_cast<int>(pass.layers.size()) == cfg.n_layers, ErrorCode::state_error,
          "backward: forward pass state missing");
  if (target == GradTarget::adapters) {
    require(params.has_adapters() && pass.used_adapters, ErrorCode::state_error,
            "backward: adapter gradients requested but no adapters were active");
  }
  const bool full = target == GradTarget::base;
  Gradients g = zero_like(params, target);

  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool use_adapters = pass.used_adapters;

  if (full) g.base.lm_head.noalias() += dlogits.transpose() * pass.final_out;
  Matrix dfinal = dlogits * params.base.lm_head;
  Matrix dx = layer_norm_backward(dfinal, pass.final_hat, pass.final_rstd, params.base.final_gain,
                                  full ? &g.base.final_gain : nullptr,
                                  full ? &g.base.final_bias : nullptr);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams& lp = params.base.layers[l];
    const auto& c = pass.layers[l];
    LayerParams* gl = full ? &g.base.layers[l] : nullptr;
    auto lin = [&](LinearMap m) { return linear_of(params, l, m, use_adapters); };
    auto dweight = [&](LinearMap m) -> Matrix* {
      return full ? &gl->linear[static_cast<int>(m)] : nullptr;
    };
    auto dadapter = [&](LinearMap m) -> LoraPair* {
      if (full) return nullptr;
      auto& slot = g.adapters.layers[l][static_cast<int>(m)];
      return slot ? &*slot : nullptr;
    };

    // Feed-forward branch.
    Matrix dup_act = linear_backward(lin(LinearMap::down_proj), c.lin[5], dx,
                                     dweight(LinearMap::down_proj), dadapter(LinearMap::down_proj));
    Matrix dup_pre(dup_act.rows(), dup_act.cols());
    for (Eigen::Index i = 0; i < dup_pre.size(); ++i) {
      dup_pre.data()[i] = dup_act.data()[i] * gelu_grad(c.up_pre.data()[i]);
    }
    Matrix dln2 = linear_backward(lin(LinearMap::up_proj), c.lin[4], dup_pre,
                                  dweight(LinearMap::up_proj), dadapter(LinearMap::up_proj));
    dx += layer_norm_backward(dln2, c.ln2_hat, c.ln2_rstd, lp.ln2_gain,
                              full ? &gl->ln2_gain : nullptr, full ? &gl->ln2_bias : nullptr);

    // Attention branch.
    Matrix dconcat = linear_backward(lin(LinearMap::o_proj), c.lin[3], dx,
                                     dweight(LinearMap::o_proj), dadapter(LinearMap::o_proj));
    Matrix dq = Matrix::Zero(dx.rows(), d);
    Matrix dk = Matrix::Zero(dx.rows(), d);
    Matrix dv = Matrix::Zero(dx.rows(), d);
    const auto n_seq = pass.offsets.size() - 1;
    for (std::size_t s = 0; s < n_seq; ++s) {
      const int off = pass.offsets[s];
      const int len = pass.offsets[s + 1] - off;
      for (int h = 0; h < heads; ++h) {
        const Matrix& probs = c.attn_probs[s * heads + h];
        const auto q = c.q.block(off, h * dh, len, dh);
        const auto k = c.k.block(off, h * dh, len, dh);
        const auto v = c.v.block(off, h * dh, len, dh);
        const auto dout = dconcat.block(off, h * dh, len, dh);
        dv.block(off, h * dh, len, dh).noalias() = probs.transpose() * dout;
        Matrix dprobs = dout * v.transpose();
        Matrix dscores(len, len);
        for (int i = 0; i < len; ++i) {
          const double dot = dprobs.row(i).dot(probs.row(i));
          dscores.row(i) = probs.row(i).cwiseProduct(dprobs.row(i)) -
                           dot * probs.row(i);
        }
        dscores *= att_scale;
        dq.block(off, h * dh, len, dh).noalias() = dscores * k;
        dk.block(off, h * dh, len, dh).noalias() = dscores.transpose() * q;
      }
    }
    Matrix dln1 = linear_backward(lin(LinearMap::q_proj), c.lin[0], dq,
                                  dweight(LinearMap::q_proj), dadapter(LinearMap::q_proj));
    dln1 += linear_backward(lin(LinearMap::k_proj), c.lin[1], dk, dweight(LinearMap::k_proj),
                            dadapter(LinearMap::k_proj));
    dln1 += linear_backward(lin(LinearMap::v_proj), c.lin[2], dv, dweight(LinearMap::v_proj),
                            dadapter(LinearMap::v_proj));
    dx += layer_norm_backward(dln1, c.ln1_hat, c.ln1_rstd, lp.ln1_gain,
                              full ? &gl->ln1_gain : nullptr, full ? &gl->ln1_bias : nullptr);
  }

  if (full) {
    for (std::size_t s = 0; s + 1 < pass.offsets.size(); ++s) {
      const auto& seq = pass.tokens[s];
      for (std::size_t t = 0; t < seq.size(); ++t) {
        const auto row = dx.row(pass.offsets[s] + t);
        g.base.token_embedding.row(seq[t]) += row;
        g.base.position_embedding.row(t) += row;
      }
    }
  }
  return g;
}

}  // namespace uacal
