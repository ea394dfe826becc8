// SPDX-License-Identifier: Apache-2.0
//
// Correctness criteria, ranking and calibration metrics, and the per-run
// CalibrationReport built from them.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "uacal/text.hpp"
#include "uacal/uncertainty.hpp"

namespace uacal {

inline constexpr double kAccuracyThreshold = 0.3;

/// Best ROUGE-L F1 over the references strictly above 0.3.
bool is_accurate(std::string_view candidate, std::span<const std::string> references);
bool exact_match(std::string_view candidate, std::span<const std::string> references);

/// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie).
double auroc(std::span<const double> scores, std::span<const bool> positives);

/// Average precision from a descending-score sweep, tied scores entering together.
double aupr(std::span<const double> scores, std::span<const bool> positives);

/// Mean retained accuracy over rejection of the k = 0..N-1 most uncertain
/// records; among tied uncertainties the earlier record is rejected first.
double auarc(std::span<const double> uncertainties, std::span<const bool> correct);

/// Accuracy after rejecting the k most uncertain records, for k = 0..N-1.
std::vector<double> accuracy_rejection_curve(std::span<const double> uncertainties,
                                             std::span<const bool> correct);

/// Equal-width bins over (0, 1]; bin b holds confidences in (b/n, (b+1)/n].
double ece(std::span<const double> confidences, std::span<const bool> correct, int n_bins = 10);

double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
/// Ranks starting at 1, ties receiving their mean rank.
std::vector<double> average_ranks(std::span<const double> values);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};
/// ROC curve from (0,0) to (1,1), one point per distinct score.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const bool> positives);

// ---------------------------------------------------------------------------

struct EvalRecord {
  std::string id;
  std::string response;
  std::vector<std::string> references;
  bool correct = false;
  bool exact = false;
  double rouge_l = 0.0;
  bool ood = false;
  UncertaintyReport uncertainty;
};

/// Scores a response against its references with the accuracy criterion.
EvalRecord make_eval_record(std::string id, std::string response,
                            std::vector<std::string> references, bool ood,
                            const UncertaintyReport& uncertainty);

nlohmann::ordered_json eval_record_to_json(const EvalRecord& rec);
EvalRecord eval_record_from_json(const nlohmann::ordered_json& j);

/// Metrics for one uncertainty score. Undefined values (a single class, zero
/// variance) are left empty.
struct MetricRow {
  UncertaintyMetric metric{};
  std::optional<double> auroc;     // incorrect vs correct, in-domain records
  std::optional<double> auarc;
  std::optional<double> spearman;  // against per-record ROUGE-L
  std::optional<double> pearson;
  std::optional<double> ood_auroc;  // ood vs in-domain records
  std::optional<double> ood_aupr;
};

struct CalibrationReport {
  int n_records = 0;  // in-domain
  int n_ood = 0;
  double accuracy = 0.0;
  double exact_match_rate = 0.0;
  double mean_rouge_l = 0.0;
  double ece = 0.0;  // confidence = 1 / perplexity
  std::vector<MetricRow> rows;  // kAllUncertaintyMetrics order
};

CalibrationReport evaluate_records(std::span<const EvalRecord> records, int ece_bins = 10);

nlohmann::ordered_json report_to_json(const CalibrationReport& report);
CalibrationReport report_from_json(const nlohmann::ordered_json& j);
std::string report_to_csv(const CalibrationReport& report);
std::string report_to_markdown(const CalibrationReport& report, std::string_view title);

/// Field-wise b - a over every populated numeric field; fields empty on either
/// side are reported as empty.
struct ReportDelta {
  std::string title;
  nlohmann::ordered_json deltas;
};
ReportDelta compare_reports(const CalibrationReport& a, const CalibrationReport& b);
std::string delta_to_markdown(const ReportDelta& delta, std::string_view label_a,
                              std::string_view label_b);

}  // namespace uacal
