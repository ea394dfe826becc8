// SPDX-License-Identifier: Apache-2.0
//
// Markdown report and SVG plots built from persisted evaluation records and
// training logs.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uacal/metrics.hpp"
#include "uacal/trainer.hpp"

namespace uacal {

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::optional<double> x_min, x_max, y_min, y_max;  // data range when empty
  bool markers_only = false;
  bool diagonal = false;  // dashed y = x reference line
};

/// Self-contained SVG line or scatter plot with a legend.
std::string svg_plot(const PlotSpec& spec, std::span<const PlotSeries> series);

/// One model's evaluation, optionally with the training log that produced it.
struct ReportArm {
  std::string label;
  std::vector<EvalRecord> records;
  std::optional<TrainLog> log;
};

struct ReportFile {
  std::string name;
  std::string content;
};

/// report.md plus ROC, accuracy-rejection, accuracy-vs-ECE and token-entropy
/// plots. Deltas in the Markdown are taken against the first arm.
std::vector<ReportFile> build_report(std::span<const ReportArm> arms, int ece_bins = 10);

}  // namespace uacal
