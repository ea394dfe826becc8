// SPDX-License-Identifier: Apache-2.0
#include "uacal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <sstream>

#include "uacal/error.hpp"

namespace uacal {
namespace {

using ojson = nlohmann::ordered_json;

void check_sizes(std::size_t a, std::size_t b, const char* who) {
  require(a == b, ErrorCode::shape_mismatch,
          std::string(who) + ": " + std::to_string(a) + " scores for " + std::to_string(b) +
              " labels");
}

void check_finite(std::span<const double> v, const char* who) {
  for (double x : v) {
    require(std::isfinite(x), ErrorCode::non_finite, std::string(who) + ": non-finite score");
  }
}

// Indices sorted by descending score; stable so equal scores keep record order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

std::optional<double> guarded(auto&& f) {
  try {
    return f();
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct Flags {
  explicit Flags(std::size_t n) : data(std::make_unique<bool[]>(n)), size(n) {}
  std::span<const bool> span() const { return {data.get(), size}; }
  std::unique_ptr<bool[]> data;
  std::size_t size;
};

ojson opt_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

std::optional<double> opt_from(const ojson& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

ojson subtract(const ojson& a, const ojson& b) {
  if (a.is_number() && b.is_number()) return b.get<double>() - a.get<double>();
  if (a.is_object() && b.is_object()) {
    ojson out = ojson::object();
    for (const auto& [key, value] : a.items()) {
      if (b.contains(key)) out[key] = subtract(value, b.at(key));
    }
    return out;
  }
  if (a.is_array() && b.is_array() && a.size() == b.size()) {
    ojson out = ojson::array();
    for (std::size_t i = 0; i < a.size(); ++i) out.push_back(subtract(a[i], b[i]));
    return out;
  }
  if (a.is_string() && a == b) return a;
  return nullptr;
}

}  // namespace

bool is_accurate(std::string_view candidate, std::span<const std::string> references) {
  return rouge_l_best(candidate, references) > kAccuracyThreshold;
}

bool exact_match(std::string_view candidate, std::span<const std::string> references) {
  const std::string norm = normalize_text(candidate);
  return std::any_of(references.begin(), references.end(),
                     [&](const std::string& r) { return normalize_text(r) == norm; });
}

double auroc(std::span<const double> scores, std::span<const bool> positives) {
  check_sizes(scores.size(), positives.size(), "auroc");
  check_finite(scores, "auroc");
  const auto n_pos = static_cast<double>(std::count(positives.begin(), positives.end(), true));
  const auto n_neg = static_cast<double>(positives.size()) - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorCode::invalid_argument,
          "auroc: needs at least one positive and one negative");
  const auto ranks = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (positives[i]) rank_sum += ranks[i];
  }
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double aupr(std::span<const double> scores, std::span<const bool> positives) {
  check_sizes(scores.size(), positives.size(), "aupr");
  check_finite(scores, "aupr");
  const auto n_pos = static_cast<double>(std::count(positives.begin(), positives.end(), true));
  require(n_pos > 0, ErrorCode::invalid_argument, "aupr: no positives");
  const auto order = descending_order(scores);
  double tp = 0.0, seen = 0.0, area = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += positives[order[j]] ? 1.0 : 0.0;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / n_pos;
    area += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return area;
}

std::vector<double> accuracy_rejection_curve(std::span<const double> uncertainties,
                                             std::span<const bool> correct) {
  check_sizes(uncertainties.size(), correct.size(), "auarc");
  check_finite(uncertainties, "auarc");
  require(!uncertainties.empty(), ErrorCode::invalid_argument, "auarc: no records");
  // Rejection order: highest uncertainty first, ties in record order.
  const auto order = descending_order(uncertainties);
  const std::size_t n = order.size();
  std::vector<double> correct_kept(n + 1, 0.0);  // correct among order[k..n)
  for (std::size_t k = n; k-- > 0;) correct_kept[k] = correct_kept[k + 1] + (correct[order[k]] ? 1.0 : 0.0);
  std::vector<double> curve;
  curve.reserve(n);
  for (std::size_t k = 0; k < n; ++k) curve.push_back(correct_kept[k] / static_cast<double>(n - k));
  return curve;
}

double auarc(std::span<const double> uncertainties, std::span<const bool> correct) {
  const auto curve = accuracy_rejection_curve(uncertainties, correct);
  return std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(curve.size());
}

double ece(std::span<const double> confidences, std::span<const bool> correct, int n_bins) {
  check_sizes(confidences.size(), correct.size(), "ece");
  require(n_bins > 0, ErrorCode::invalid_argument, "ece: n_bins must be positive");
  require(!confidences.empty(), ErrorCode::invalid_argument, "ece: no records");
  std::vector<double> conf_sum(n_bins, 0.0), acc_sum(n_bins, 0.0), count(n_bins, 0.0);
  for (std::size_t i = 0; i < confidences.size(); ++i) {
    const double c = confidences[i];
    require(std::isfinite(c) && c > 0.0 && c <= 1.0, ErrorCode::invalid_argument,
            "ece: confidence " + std::to_string(c) + " outside (0, 1]");
    int b = static_cast<int>(std::ceil(c * n_bins)) - 1;
    b = std::clamp(b, 0, n_bins - 1);
    if (b > 0 && c <= static_cast<double>(b) / n_bins) --b;
    if (b < n_bins - 1 && c > static_cast<double>(b + 1) / n_bins) ++b;
    conf_sum[b] += c;
    acc_sum[b] += correct[i] ? 1.0 : 0.0;
    count[b] += 1.0;
  }
  double total = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    if (count[b] == 0.0) continue;
    total += count[b] * std::abs(acc_sum[b] / count[b] - conf_sum[b] / count[b]);
  }
  return total / static_cast<double>(confidences.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_sizes(x.size(), y.size(), "pearson");
  require(x.size() >= 2, ErrorCode::invalid_argument, "pearson: needs at least two points");
  check_finite(x, "pearson");
  check_finite(y, "pearson");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  require(sxx > 0.0 && syy > 0.0, ErrorCode::invalid_argument, "pearson: zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && values[idx[j]] == values[idx[i]]) ++j;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[idx[k]] = rank;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  check_sizes(x.size(), y.size(), "spearman");
  check_finite(x, "spearman");
  check_finite(y, "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const bool> positives) {
  check_sizes(scores.size(), positives.size(), "roc_curve");
  const auto n_pos = static_cast<double>(std::count(positives.begin(), positives.end(), true));
  const auto n_neg = static_cast<double>(positives.size()) - n_pos;
  require(n_pos > 0 && n_neg > 0, ErrorCode::invalid_argument,
          "roc_curve: needs at least one positive and one negative");
  const auto order = descending_order(scores);
  std::vector<RocPoint> curve{{0.0, 0.0}};
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (positives[order[j]] ? tp : fp) += 1.0;
      ++j;
    }
    curve.push_back({fp / n_neg, tp / n_pos});
    i = j;
  }
  return curve;
}

// ---------------------------------------------------------------------------

EvalRecord make_eval_record(std::string id, std::string response,
                            std::vector<std::string> references, bool ood,
                            const UncertaintyReport& uncertainty) {
  EvalRecord r;
  r.id = std::move(id);
  r.response = std::move(response);
  r.references = std::move(references);
  r.rouge_l = rouge_l_best(r.response, r.references);
  r.correct = r.rouge_l > kAccuracyThreshold;
  r.exact = exact_match(r.response, r.references);
  r.ood = ood;
  r.uncertainty = uncertainty;
  return r;
}

ojson eval_record_to_json(const EvalRecord& rec) {
  ojson j;
  j["id"] = rec.id;
  j["response"] = rec.response;
  j["references"] = rec.references;
  j["correct"] = rec.correct;
  j["exact"] = rec.exact;
  j["rouge_l"] = rec.rouge_l;
  j["ood"] = rec.ood;
  j["uncertainty"] = uncertainty_to_json(rec.uncertainty);
  return j;
}

EvalRecord eval_record_from_json(const ojson& j) {
  EvalRecord rec;
  try {
    rec.id = j.at("id").get<std::string>();
    rec.response = j.at("response").get<std::string>();
    rec.references = j.at("references").get<std::vector<std::string>>();
    rec.correct = j.at("correct").get<bool>();
    rec.exact = j.at("exact").get<bool>();
    rec.rouge_l = j.at("rouge_l").get<double>();
    rec.ood = j.at("ood").get<bool>();
    rec.uncertainty = uncertainty_from_json(j.at("uncertainty"));
  } catch (const ojson::exception& e) {
    fail(ErrorCode::parse_error, std::string("eval record: ") + e.what());
  }
  return rec;
}

CalibrationReport evaluate_records(std::span<const EvalRecord> records, int ece_bins) {
  std::vector<const EvalRecord*> in_domain;
  for (const auto& r : records) {
    if (!r.ood) in_domain.push_back(&r);
  }
  require(!in_domain.empty(), ErrorCode::invalid_argument,
          "evaluate: no in-domain records to score");
  CalibrationReport rep;
  rep.n_records = static_cast<int>(in_domain.size());
  rep.n_ood = static_cast<int>(records.size() - in_domain.size());

  // std::vector<bool> is not contiguous, so flags live in plain arrays.
  Flags correct(in_domain.size()), incorrect(in_domain.size()), is_ood(records.size());
  std::vector<double> rouge, confidence;
  for (std::size_t i = 0; i < in_domain.size(); ++i) {
    const EvalRecord* r = in_domain[i];
    rep.accuracy += r->correct ? 1.0 : 0.0;
    rep.exact_match_rate += r->exact ? 1.0 : 0.0;
    rep.mean_rouge_l += r->rouge_l;
    rouge.push_back(r->rouge_l);
    confidence.push_back(r->uncertainty.confidence);
    correct.data[i] = r->correct;
    incorrect.data[i] = !r->correct;
  }
  for (std::size_t i = 0; i < records.size(); ++i) is_ood.data[i] = records[i].ood;
  const double n = static_cast<double>(in_domain.size());
  rep.accuracy /= n;
  rep.exact_match_rate /= n;
  rep.mean_rouge_l /= n;
  rep.ece = ece(confidence, correct.span(), ece_bins);

  for (UncertaintyMetric metric : kAllUncertaintyMetrics) {
    MetricRow row;
    row.metric = metric;
    std::vector<double> scores;
    for (const EvalRecord* r : in_domain) scores.push_back(metric_value(r->uncertainty, metric));
    row.auroc = guarded([&] { return auroc(scores, incorrect.span()); });
    row.auarc = guarded([&] { return auarc(scores, correct.span()); });
    row.spearman = guarded([&] { return spearman(scores, rouge); });
    row.pearson = guarded([&] { return pearson(scores, rouge); });
    if (rep.n_ood > 0) {
      std::vector<double> all_scores;
      for (const auto& r : records) all_scores.push_back(metric_value(r.uncertainty, metric));
      row.ood_auroc = guarded([&] { return auroc(all_scores, is_ood.span()); });
      row.ood_aupr = guarded([&] { return aupr(all_scores, is_ood.span()); });
    }
    rep.rows.push_back(row);
  }
  return rep;
}

ojson report_to_json(const CalibrationReport& report) {
  ojson j;
  j["n_records"] = report.n_records;
  j["n_ood"] = report.n_ood;
  j["accuracy"] = report.accuracy;
  j["exact_match_rate"] = report.exact_match_rate;
  j["mean_rouge_l"] = report.mean_rouge_l;
  j["ece"] = report.ece;
  ojson metrics = ojson::object();
  for (const auto& row : report.rows) {
    ojson m;
    m["auroc"] = opt_json(row.auroc);
    m["auarc"] = opt_json(row.auarc);
    m["spearman_rouge_l"] = opt_json(row.spearman);
    m["pearson_rouge_l"] = opt_json(row.pearson);
    m["ood_auroc"] = opt_json(row.ood_auroc);
    m["ood_aupr"] = opt_json(row.ood_aupr);
    metrics[std::string(uncertainty_metric_name(row.metric))] = std::move(m);
  }
  j["metrics"] = std::move(metrics);
  return j;
}

CalibrationReport report_from_json(const ojson& j) {
  CalibrationReport rep;
  try {
    rep.n_records = j.at("n_records").get<int>();
    rep.n_ood = j.at("n_ood").get<int>();
    rep.accuracy = j.at("accuracy").get<double>();
    rep.exact_match_rate = j.at("exact_match_rate").get<double>();
    rep.mean_rouge_l = j.at("mean_rouge_l").get<double>();
    rep.ece = j.at("ece").get<double>();
    const auto& metrics = j.at("metrics");
    for (UncertaintyMetric metric : kAllUncertaintyMetrics) {
      const auto& m = metrics.at(std::string(uncertainty_metric_name(metric)));
      MetricRow row;
      row.metric = metric;
      row.auroc = opt_from(m, "auroc");
      row.auarc = opt_from(m, "auarc");
      row.spearman = opt_from(m, "spearman_rouge_l");
      row.pearson = opt_from(m, "pearson_rouge_l");
      row.ood_auroc = opt_from(m, "ood_auroc");
      row.ood_aupr = opt_from(m, "ood_aupr");
      rep.rows.push_back(row);
    }
  } catch (const ojson::exception& e) {
    fail(ErrorCode::parse_error, std::string("calibration report: ") + e.what());
  }
  return rep;
}

std::string report_to_csv(const CalibrationReport& report) {
  std::ostringstream out;
  out << "family";
  for (const auto& row : report.rows) out << ',' << uncertainty_metric_name(row.metric);
  out << ",value\n";
  auto family = [&](const char* name, auto field) {
    out << name;
    for (const auto& row : report.rows) out << ',' << fmt(row.*field);
    out << ",\n";
  };
  family("auroc", &MetricRow::auroc);
  family("auarc", &MetricRow::auarc);
  family("spearman_rouge_l", &MetricRow::spearman);
  family("pearson_rouge_l", &MetricRow::pearson);
  family("ood_auroc", &MetricRow::ood_auroc);
  family("ood_aupr", &MetricRow::ood_aupr);
  auto scalar = [&](const char* name, double v) {
    out << name << std::string(report.rows.size(), ',') << ',' << fmt(v) << '\n';
  };
  scalar("ece", report.ece);
  scalar("accuracy", report.accuracy);
  scalar("exact_match_rate", report.exact_match_rate);
  scalar("mean_rouge_l", report.mean_rouge_l);
  return out.str();
}

std::string report_to_markdown(const CalibrationReport& report, std::string_view title) {
  std::ostringstream out;
  out << "## " << title << "\n\n";
  out << "| metric | AUROC | AUARC | Spearman (ROUGE-L) | Pearson (ROUGE-L) | OOD AUROC | OOD AUPR |\n";
  out << "|---|---|---|---|---|---|---|\n";
  for (const auto& row : report.rows) {
    out << "| " << uncertainty_metric_name(row.metric) << " | " << fmt(row.auroc) << " | "
        << fmt(row.auarc) << " | " << fmt(row.spearman) << " | " << fmt(row.pearson) << " | "
        << fmt(row.ood_auroc) << " | " << fmt(row.ood_aupr) << " |\n";
  }
  out << "\n| records | ood records | accuracy | exact match | mean ROUGE-L | ECE |\n";
  out << "|---|---|---|---|---|---|\n";
  out << "| " << report.n_records << " | " << report.n_ood << " | " << fmt(report.accuracy)
      << " | " << fmt(report.exact_match_rate) << " | " << fmt(report.mean_rouge_l) << " | "
      << fmt(report.ece) << " |\n";
  return out.str();
}

ReportDelta compare_reports(const CalibrationReport& a, const CalibrationReport& b) {
  ReportDelta d;
  d.deltas = subtract(report_to_json(a), report_to_json(b));
  return d;
}

std::string delta_to_markdown(const ReportDelta& delta, std::string_view label_a,
                              std::string_view label_b) {
  std::ostringstream out;
  out << "## " << label_b << " minus " << label_a << "\n\n";
  auto num = [](const ojson& v) -> std::string {
    if (!v.is_number()) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%+.6f", v.get<double>());
    return buf;
  };
  out << "| metric | AUROC | AUARC | Spearman (ROUGE-L) | Pearson (ROUGE-L) | OOD AUROC | OOD AUPR |\n";
  out << "|---|---|---|---|---|---|---|\n";
  if (delta.deltas.contains("metrics")) {
    for (const auto& [name, m] : delta.deltas.at("metrics").items()) {
      out << "| " << name;
      for (const char* key :
           {"auroc", "auarc", "spearman_rouge_l", "pearson_rouge_l", "ood_auroc", "ood_aupr"}) {
        out << " | " << (m.contains(key) ? num(m.at(key)) : "");
      }
      out << " |\n";
    }
  }
  out << "\n| accuracy | exact match | mean ROUGE-L | ECE |\n|---|---|---|---|\n";
  out << "| " << num(delta.deltas.value("accuracy", ojson())) << " | "
      << num(delta.deltas.value("exact_match_rate", ojson())) << " | "
      << num(delta.deltas.value("mean_rouge_l", ojson())) << " | "
      << num(delta.deltas.value("ece", ojson())) << " |\n";
  return out.str();
}

}  // namespace uacal
