// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "uacal/losses.hpp"
#include "uacal/model.hpp"

namespace uacal {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 0.001;
  double warmup_ratio = 0.03;
  int epochs = 3;
  int batch_size = 8;
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::ua_clm;
  AnnealSchedule anneal;
  double grad_clip = 1.0;  // global norm; <= 0 disables
  GradTarget target = GradTarget::adapters;

  void validate() const;
};

/// Linear warmup from 0 to the peak over ceil(warmup_ratio * total) steps,
/// then linear decay to 0 at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One decoupled-weight-decay Adam update. decay[i] selects which arrays
/// receive weight decay. Rejects non-finite gradients without touching state.
void adamw_step(std::span<Matrix* const> params, std::span<const Matrix* const> grads,
                const std::vector<bool>& decay, AdamState& state, double lr,
                double weight_decay);

/// A training sequence; rows predicting ids[t] for t >= supervise_from are
/// supervised (supervise_from = 1 supervises every next-token prediction).
struct TrainExample {
  TokenSequence ids;
  int supervise_from = 1;
};

/// Labels for the stacked rows of a batch (kIgnoreLabel where unsupervised).
std::vector<int> batch_labels(std::span<const TrainExample> batch);

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  int n_correct = 0;
  int n_incorrect = 0;
  double entropy_correct = 0.0;
  double entropy_incorrect = 0.0;
  double prob_correct = 0.0;
  double prob_incorrect = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;

  std::string to_csv() const;
  static TrainLog from_csv(const std::string& text);
};

struct TrainResult {
  TrainLog log;
  int skipped = 0;  // examples longer than the context window
  std::int64_t steps = 0;
};

struct TrainCallbacks {
  std::function<void(int epoch, const ModelParams&, std::int64_t step)> on_epoch_end;
};

/// Trains params in place: adapters only (target = adapters) or the base
/// model (target = base). E seeded shuffles over the data.
TrainResult train(ModelParams& params, std::span<const TrainExample> dataset,
                  const TrainConfig& cfg, const TrainCallbacks& callbacks = {});

}  // namespace uacal
