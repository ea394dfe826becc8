// SPDX-License-Identifier: Apache-2.0
#include "uacal/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "uacal/error.hpp"
#include "uacal/numeric.hpp"

namespace uacal {
namespace {

std::span<const double> row_of(const Matrix& m, Eigen::Index r) {
  return {m.data() + r * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Softmax, log-softmax and entropy of one row.
struct RowDist {
  std::vector<double> p;
  std::vector<double> logp;
  double entropy = 0.0;

  explicit RowDist(std::span<const double> z) : p(z.size()), logp(z.size()) {
    const double lse = log_sum_exp(z);
    for (std::size_t k = 0; k < z.size(); ++k) {
      logp[k] = z[k] - lse;
      p[k] = std::exp(logp[k]);
      entropy -= p[k] * logp[k];
    }
    entropy = std::max(entropy, 0.0);
  }

  // d H / d z_k = -p_k (log p_k + H)
  double dentropy(std::size_t k) const { return -p[k] * (logp[k] + entropy); }
};

void check_labels(const Matrix& logits, std::span<const int> labels, const char* who) {
  require(static_cast<Eigen::Index>(labels.size()) == logits.rows(), ErrorCode::shape_mismatch,
          std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
              std::to_string(logits.rows()) + " rows");
  for (int label : labels) {
    require(label == kIgnoreLabel || (label >= 0 && label < logits.cols()),
            ErrorCode::invalid_argument,
            std::string(who) + ": label " + std::to_string(label) + " out of range");
  }
  require(logits.allFinite(), ErrorCode::non_finite, std::string(who) + ": non-finite logits");
}

int count_supervised(std::span<const int> labels) {
  return static_cast<int>(std::count_if(labels.begin(), labels.end(),
                                        [](int l) { return l != kIgnoreLabel; }));
}

}  // namespace

std::string_view loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::clm: return "clm";
    case LossKind::ua_clm: return "ua_clm";
    case LossKind::annealed: return "annealed";
    case LossKind::ult: return "ult";
  }
  return "?";
}

LossKind parse_loss_kind(std::string_view name) {
  for (LossKind k : {LossKind::clm, LossKind::ua_clm, LossKind::annealed, LossKind::ult}) {
    if (loss_kind_name(k) == name) return k;
  }
  fail(ErrorCode::config_error,
       "unknown loss kind '" + std::string(name) + "' (expected clm|ua_clm|annealed|ult)");
}

int argmax_lowest(std::span<const double> row) {
  int best = 0;
  for (std::size_t k = 1; k < row.size(); ++k) {
    if (row[k] > row[best]) best = static_cast<int>(k);
  }
  return best;
}

CorrectnessMask correctness_mask(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels, "correctness_mask");
  CorrectnessMask mask;
  mask.predicted_ids.resize(labels.size());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int pred = argmax_lowest(row_of(logits, r));
    mask.predicted_ids[r] = pred;
    if (labels[r] == kIgnoreLabel) continue;
    (pred == labels[r] ? mask.correct : mask.incorrect).push_back(static_cast<int>(r));
  }
  return mask;
}

LossValue clm_loss(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels, "clm_loss");
  const int n = count_supervised(labels);
  require(n > 0, ErrorCode::invalid_argument, "clm_loss: no supervised positions");
  LossValue out;
  out.grad = Matrix::Zero(logits.rows(), logits.cols());
  const double inv_n = 1.0 / n;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (labels[r] == kIgnoreLabel) continue;
    const RowDist d(row_of(logits, r));
    out.value -= d.logp[labels[r]] * inv_n;
    for (Eigen::Index k = 0; k < logits.cols(); ++k) out.grad(r, k) = d.p[k] * inv_n;
    out.grad(r, labels[r]) -= inv_n;
  }
  return out;
}

LossValue ua_clm_loss(const Matrix& logits, std::span<const int> labels) {
  return ua_clm_loss(logits, labels, correctness_mask(logits, labels));
}

LossValue ua_clm_loss(const Matrix& logits, std::span<const int> labels,
                      const CorrectnessMask& mask) {
  check_labels(logits, labels, "ua_clm_loss");
  require(count_supervised(labels) > 0, ErrorCode::invalid_argument,
          "ua_clm_loss: no supervised positions");
  require(mask.predicted_ids.size() == labels.size(), ErrorCode::shape_mismatch,
          "ua_clm_loss: mask does not match the logits");
  LossValue out;
  out.grad = Matrix::Zero(logits.rows(), logits.cols());
  const auto V = logits.cols();

  // One row of either set. `incorrect` selects the utility.
  auto accumulate = [&](int r, bool incorrect, double weight) {
    const RowDist d(row_of(logits, r));
    const int a = mask.predicted_ids[r];
    const double pa = d.p[a];
    const double th = std::tanh(d.entropy);
    const double t = std::clamp(th, kScaledEntropyEps, 1.0 - kScaledEntropyEps);
    const double dt_dh = (th == t) ? 1.0 - th * th : 0.0;

    double coef_p = 0.0;  // d loss / d pa
    double coef_h = 0.0;  // d loss / d H
    if (incorrect) {
      out.value -= weight * pa * std::log(t);
      coef_p = -weight * std::log(t);
      coef_h = -weight * pa / t * dt_dh;
    } else {
      out.value -= weight * (1.0 - pa) * std::log1p(-t);
      coef_p = weight * std::log1p(-t);
      coef_h = weight * (1.0 - pa) / (1.0 - t) * dt_dh;
    }
    for (Eigen::Index k = 0; k < V; ++k) {
      const double dpa = pa * ((k == a ? 1.0 : 0.0) - d.p[k]);
      out.grad(r, k) += coef_p * dpa + coef_h * d.dentropy(k);
    }
  };

  if (!mask.incorrect.empty()) {
    const double w = 1.0 / static_cast<double>(mask.incorrect.size());
    for (int r : mask.incorrect) accumulate(r, true, w);
  }
  if (!mask.correct.empty()) {
    const double w = 1.0 / static_cast<double>(mask.correct.size());
    for (int r : mask.correct) accumulate(r, false, w);
  }
  return out;
}

void AnnealSchedule::validate() const {
  require(beta_early >= 0.0 && beta_late >= 0.0, ErrorCode::config_error,
          "anneal schedule: betas must be non-negative");
  require(switch_fraction > 0.0 && switch_fraction < 1.0, ErrorCode::config_error,
          "anneal schedule: switch_fraction must lie in (0, 1)");
}

double AnnealSchedule::beta_at(std::int64_t step, std::int64_t total_steps) const {
  return static_cast<double>(step) <= switch_fraction * static_cast<double>(total_steps)
             ? beta_early
             : beta_late;
}

LossValue annealed_loss(std::int64_t step, std::int64_t total_steps, const Matrix& logits,
                        std::span<const int> labels, const AnnealSchedule& schedule) {
  schedule.validate();
  require(step >= 0 && step < total_steps, ErrorCode::invalid_argument,
          "annealed_loss: step " + std::to_string(step) + " outside [0, " +
              std::to_string(total_steps) + ")");
  LossValue out = clm_loss(logits, labels);
  const double beta = schedule.beta_at(step, total_steps);
  const LossValue ua = ua_clm_loss(logits, labels);
  out.value += beta * ua.value;
  out.grad += beta * ua.grad;
  return out;
}

LossValue unlikelihood_loss(const Matrix& logits, std::span<const int> labels,
                            std::span<const int> sequence_ids) {
  LossValue out = clm_loss(logits, labels);
  require(sequence_ids.empty() || sequence_ids.size() == labels.size(), ErrorCode::shape_mismatch,
          "unlikelihood_loss: sequence ids do not match labels");
  const double inv_n = 1.0 / count_supervised(labels);
  std::vector<int> seen;
  int current_seq = sequence_ids.empty() ? 0 : sequence_ids[0];
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int seq = sequence_ids.empty() ? 0 : sequence_ids[r];
    if (seq != current_seq) {
      seen.clear();
      current_seq = seq;
    }
    const int label = labels[r];
    if (label == kIgnoreLabel) continue;
    bool any = false;
    for (int c : seen) any = any || c != label;
    if (any) {
      const RowDist d(row_of(logits, r));
      for (int c : seen) {
        if (c == label) continue;
        const double pc = std::min(d.p[c], kUnlikelihoodClamp);
        out.value -= inv_n * std::log1p(-pc);
        if (d.p[c] >= kUnlikelihoodClamp) continue;
        const double coef = inv_n * d.p[c] / (1.0 - d.p[c]);
        for (Eigen::Index k = 0; k < logits.cols(); ++k) {
          out.grad(r, k) += coef * ((k == c ? 1.0 : 0.0) - d.p[k]);
        }
      }
    }
    if (std::find(seen.begin(), seen.end(), label) == seen.end()) seen.push_back(label);
  }
  return out;
}

LossValue compute_loss(LossKind kind, const Matrix& logits, std::span<const int> labels,
                       std::span<const int> sequence_ids, const LossContext& ctx) {
  switch (kind) {
    case LossKind::clm: return clm_loss(logits, labels);
    case LossKind::ua_clm: return ua_clm_loss(logits, labels);
    case LossKind::annealed:
      return annealed_loss(ctx.step, ctx.total_steps, logits, labels, ctx.schedule);
    case LossKind::ult: return unlikelihood_loss(logits, labels, sequence_ids);
  }
  fail(ErrorCode::invalid_argument, "compute_loss: unknown loss kind");
}

TokenStats token_stats(const Matrix& logits, std::span<const int> labels) {
  const CorrectnessMask mask = correctness_mask(logits, labels);
  TokenStats s;
  s.n_correct = static_cast<int>(mask.correct.size());
  s.n_incorrect = static_cast<int>(mask.incorrect.size());
  auto fill = [&](const std::vector<int>& rows, double& h, double& p) {
    if (rows.empty()) return;
    for (int r : rows) {
      const RowDist d(row_of(logits, r));
      h += d.entropy;
      p += d.p[mask.predicted_ids[r]];
    }
    h /= static_cast<double>(rows.size());
    p /= static_cast<double>(rows.size());
  };
  fill(mask.correct, s.entropy_correct, s.prob_correct);
  fill(mask.incorrect, s.entropy_incorrect, s.prob_incorrect);
  return s;
}

}  // namespace uacal
