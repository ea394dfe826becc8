// SPDX-License-Identifier: Apache-2.0
#include "uacal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "uacal/error.hpp"
#include "uacal/numeric.hpp"

namespace uacal {
namespace {

constexpr const char* kLogHeader =
    "step,loss,lr,n_correct,n_incorrect,entropy_correct,entropy_incorrect,prob_correct,"
    "prob_incorrect";

struct Trainable {
  std::vector<Matrix*> params;
  std::vector<bool> decay;
};

bool decays(const std::string& name) {
  const auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !ends_with("gain") && !ends_with("bias");
}

template <class Set>
void collect(Set& set, std::vector<Matrix*>& out, std::vector<bool>* decay) {
  set.for_each([&](const std::string& name, Matrix& m) {
    out.push_back(&m);
    if (decay) decay->push_back(decays(name));
  });
}

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate > 0.0, ErrorCode::config_error, "train config: learning_rate must be > 0");
  require(warmup_ratio >= 0.0 && warmup_ratio < 1.0, ErrorCode::config_error,
          "train config: warmup_ratio must lie in [0, 1)");
  require(weight_decay >= 0.0, ErrorCode::config_error, "train config: weight_decay must be >= 0");
  require(epochs >= 0, ErrorCode::config_error, "train config: epochs must be >= 0");
  require(batch_size > 0, ErrorCode::config_error, "train config: batch_size must be > 0");
  if (loss_kind == LossKind::annealed) anneal.validate();
}

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
  require(total_steps > 0, ErrorCode::invalid_argument, "lr_at: total_steps must be positive");
  require(step >= 0 && step <= total_steps, ErrorCode::invalid_argument,
          "lr_at: step outside [0, total_steps]");
  const auto warmup = static_cast<std::int64_t>(
      std::ceil(cfg.warmup_ratio * static_cast<double>(total_steps) - 1e-9));
  if (step < warmup) {
    return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const auto decay_steps = total_steps - warmup;
  if (decay_steps <= 0) return cfg.learning_rate;
  return cfg.learning_rate * static_cast<double>(total_steps - step) /
         static_cast<double>(decay_steps);
}

void adamw_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                const std::vector<bool>& decay, AdamState& state, double lr,
                double weight_decay) {
  require(params.size() == grads.size() && params.size() == decay.size(),
          ErrorCode::shape_mismatch, "adamw_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i]->rows() == grads[i]->rows() && params[i]->cols() == grads[i]->cols(),
            ErrorCode::shape_mismatch, "adamw_step: shape mismatch at array " + std::to_string(i));
    require(grads[i]->allFinite(), ErrorCode::non_finite,
            "adamw_step: non-finite gradient in array " + std::to_string(i));
  }
  if (state.m.empty()) {
    for (const Matrix* p : params) {
      state.m.push_back(Matrix::Zero(p->rows(), p->cols()));
      state.v.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  require(state.m.size() == params.size(), ErrorCode::shape_mismatch,
          "adamw_step: optimizer state does not match parameters");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = *grads[i];
    Matrix& m = state.m[i];
    Matrix& v = state.v[i];
    if (decay[i] && weight_decay > 0.0) p *= (1.0 - lr * weight_decay);
    m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
    v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + kAdamEps);
  }
}

std::vector<int> batch_labels(std::span<const TrainExample> batch) {
  std::vector<int> labels;
  for (const auto& ex : batch) {
    const int n = static_cast<int>(ex.ids.size());
    for (int t = 0; t < n; ++t) {
      const int target = t + 1;
      labels.push_back(target < n && target >= ex.supervise_from ? ex.ids[target]
                                                                 : kIgnoreLabel);
    }
  }
  return labels;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << kLogHeader << '\n';
  char buf[512];
  for (const auto& r : steps) {
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%d,%d,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<long long>(r.step), r.loss, r.lr, r.n_correct, r.n_incorrect,
                  r.entropy_correct, r.entropy_incorrect, r.prob_correct, r.prob_incorrect);
    out << buf;
  }
  return out.str();
}

TrainLog TrainLog::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(std::getline(in, line) && line == kLogHeader, ErrorCode::parse_error,
          "train log: unexpected header");
  TrainLog log;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    StepRecord r;
    long long step = 0;
    const int got = std::sscanf(line.c_str(), "%lld,%lf,%lf,%d,%d,%lf,%lf,%lf,%lf", &step, &r.loss,
                                &r.lr, &r.n_correct, &r.n_incorrect, &r.entropy_correct,
                                &r.entropy_incorrect, &r.prob_correct, &r.prob_incorrect);
    require(got == 9, ErrorCode::parse_error, "train log: malformed line " + std::to_string(line_no));
    r.step = step;
    log.steps.push_back(r);
  }
  return log;
}

TrainResult train(ModelParams& params, std::span<const TrainExample> dataset,
                  const TrainConfig& cfg, const TrainCallbacks& callbacks) {
  cfg.validate();
  require(!dataset.empty(), ErrorCode::invalid_argument, "train: empty dataset");
  if (cfg.target == GradTarget::adapters) {
    require(params.has_adapters(), ErrorCode::state_error,
            "train: adapter training requested on a model without adapters");
  }
  TrainResult result;

  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& ids = dataset[i].ids;
    if (ids.size() < 2 || static_cast<int>(ids.size()) > params.config.context_len) {
      ++result.skipped;
      continue;
    }
    usable.push_back(i);
  }
  require(!usable.empty(), ErrorCode::invalid_argument, "train: no usable sequences");
  if (cfg.epochs == 0) return result;

  Trainable trainable;
  if (cfg.target == GradTarget::adapters) {
    collect(params.adapters, trainable.params, &trainable.decay);
  } else {
    collect(params.base, trainable.params, &trainable.decay);
  }
  AdamState adam;

  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  const auto batches_per_epoch = static_cast<std::int64_t>((usable.size() + batch_size - 1) / batch_size);
  const std::int64_t total_steps = batches_per_epoch * cfg.epochs;
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, 0x5eed));
  LossContext ctx;
  ctx.total_steps = total_steps;
  ctx.schedule = cfg.anneal;

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = usable;
    // Fisher-Yates with the raw engine output keeps the order toolchain-independent.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng() % i]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      std::vector<TrainExample> batch;
      std::vector<TokenSequence> seqs;
      std::vector<int> seq_ids;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(dataset[order[i]]);
        seqs.push_back(batch.back().ids);
        seq_ids.insert(seq_ids.end(), batch.back().ids.size(), static_cast<int>(i - start));
      }
      const std::vector<int> labels = batch_labels(batch);

      ForwardOptions fopt;
      fopt.use_adapters = true;
      fopt.training = true;
      fopt.dropout_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(step) + 1);
      const ForwardPass pass = forward(params, seqs, fopt);

      ctx.step = step;
      const LossValue loss = compute_loss(cfg.loss_kind, pass.logits, labels, seq_ids, ctx);
      const TokenStats stats = token_stats(pass.logits, labels);
      Gradients grads = backward(params, pass, loss.grad, cfg.target);

      std::vector<Matrix*> gptr;
      if (cfg.target == GradTarget::adapters) {
        collect(grads.adapters, gptr, nullptr);
      } else {
        collect(grads.base, gptr, nullptr);
      }
      if (cfg.grad_clip > 0.0) {
        double sq = 0.0;
        for (const Matrix* g : gptr) sq += g->squaredNorm();
        const double norm = std::sqrt(sq);
        if (norm > cfg.grad_clip) {
          for (Matrix* g : gptr) *g *= cfg.grad_clip / norm;
        }
      }
      const double lr = lr_at(step, total_steps, cfg);
      std::vector<const Matrix*> gconst(gptr.begin(), gptr.end());
      adamw_step(trainable.params, gconst, trainable.decay, adam, lr, cfg.weight_decay);

      StepRecord rec;
      rec.step = step;
      rec.loss = loss.value;
      rec.lr = lr;
      rec.n_correct = stats.n_correct;
      rec.n_incorrect = stats.n_incorrect;
      rec.entropy_correct = stats.entropy_correct;
      rec.entropy_incorrect = stats.entropy_incorrect;
      rec.prob_correct = stats.prob_correct;
      rec.prob_incorrect = stats.prob_incorrect;
      result.log.steps.push_back(rec);
      ++step;
    }
    if (callbacks.on_epoch_end) callbacks.on_epoch_end(epoch, params, step);
  }
  result.steps = step;
  return result;
}

}  // namespace uacal
