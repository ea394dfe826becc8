// SPDX-License-Identifier: Apache-2.0
#include "uacal/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "uacal/error.hpp"

namespace uacal {
namespace {

constexpr double kWidth = 680.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 180.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 55.0;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};

std::string escape_xml(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v, const char* format = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, v);
  return buf;
}

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

Range data_range(std::span<const PlotSeries> series, bool use_x, std::optional<double> lo,
                 std::optional<double> hi) {
  double mn = INFINITY;
  double mx = -INFINITY;
  for (const auto& s : series) {
    for (double v : use_x ? s.x : s.y) {
      if (!std::isfinite(v)) continue;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
  }
  if (!std::isfinite(mn)) {
    mn = 0.0;
    mx = 1.0;
  }
  Range r{lo.value_or(mn), hi.value_or(mx)};
  if (r.hi <= r.lo) {
    const double pad = std::max(std::abs(r.lo) * 0.05, 0.5);
    r.lo -= pad;
    r.hi += pad;
  }
  return r;
}

}  // namespace

std::string svg_plot(const PlotSpec& spec, std::span<const PlotSeries> series) {
  for (const auto& s : series) {
    require(s.x.size() == s.y.size(), ErrorCode::shape_mismatch,
            "svg_plot: series '" + s.label + "' has mismatched x and y");
  }
  const Range xr = data_range(series, true, spec.x_min, spec.x_max);
  const Range yr = data_range(series, false, spec.y_min, spec.y_max);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * plot_w; };
  auto py = [&](double y) { return kTop + plot_h - (y - yr.lo) / (yr.hi - yr.lo) * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << escape_xml(spec.title) << "</text>\n";
  out << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << plot_w << "\" height=\""
      << plot_h << "\" fill=\"none\" stroke=\"#444\"/>\n";

  constexpr int kTicks = 5;
  for (int t = 0; t <= kTicks; ++t) {
    const double fx = xr.lo + (xr.hi - xr.lo) * t / kTicks;
    const double fy = yr.lo + (yr.hi - yr.lo) * t / kTicks;
    out << "<line x1=\"" << px(fx) << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << px(fx)
        << "\" y2=\"" << kTop + plot_h + 5 << "\" stroke=\"#444\"/>\n";
    out << "<text x=\"" << px(fx) << "\" y=\"" << kTop + plot_h + 18
        << "\" text-anchor=\"middle\">" << num(fx, "%.3g") << "</text>\n";
    out << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py(fy) << "\" x2=\"" << kLeft
        << "\" y2=\"" << py(fy) << "\" stroke=\"#444\"/>\n";
    out << "<line x1=\"" << kLeft << "\" y1=\"" << py(fy) << "\" x2=\"" << kLeft + plot_w
        << "\" y2=\"" << py(fy) << "\" stroke=\"#eee\"/>\n";
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\">"
        << num(fy, "%.3g") << "</text>\n";
  }
  out << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 12
      << "\" text-anchor=\"middle\">" << escape_xml(spec.x_label) << "</text>\n";
  out << "<text transform=\"translate(18," << kTop + plot_h / 2
      << ") rotate(-90)\" text-anchor=\"middle\">" << escape_xml(spec.y_label) << "</text>\n";

  if (spec.diagonal) {
    const double lo = std::max(xr.lo, yr.lo);
    const double hi = std::min(xr.hi, yr.hi);
    if (hi > lo) {
      out << "<line x1=\"" << px(lo) << "\" y1=\"" << py(lo) << "\" x2=\"" << px(hi)
          << "\" y2=\"" << py(hi) << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
    }
  }

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (!spec.markers_only) {
      std::ostringstream path;
      bool pen_down = false;
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
          pen_down = false;
          continue;
        }
        path << (pen_down ? " L" : " M") << num(px(s.x[i]), "%.2f") << ' '
             << num(py(s.y[i]), "%.2f");
        pen_down = true;
      }
      out << "<path d=\"" << path.str() << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.6\"/>\n";
    } else {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
        out << "<circle cx=\"" << num(px(s.x[i]), "%.2f") << "\" cy=\""
            << num(py(s.y[i]), "%.2f") << "\" r=\"5\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = kTop + 10 + 20.0 * static_cast<double>(k);
    const double lx = kLeft + plot_w + 15;
    out << "<rect x=\"" << lx << "\" y=\"" << ly - 8 << "\" width=\"14\" height=\"10\" fill=\""
        << color << "\"/>\n";
    out << "<text x=\"" << lx + 20 << "\" y=\"" << ly + 1 << "\">" << escape_xml(s.label)
        << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

struct Flagged {
  std::vector<double> scores;
  std::unique_ptr<bool[]> flags;
  std::size_t n = 0;
  std::span<const bool> span() const { return {flags.get(), n}; }
};

Flagged in_domain(const std::vector<EvalRecord>& records, UncertaintyMetric metric,
                  bool flag_incorrect) {
  Flagged f;
  for (const auto& r : records) {
    if (!r.ood) ++f.n;
  }
  f.flags = std::make_unique<bool[]>(f.n);
  std::size_t i = 0;
  for (const auto& r : records) {
    if (r.ood) continue;
    f.scores.push_back(metric_value(r.uncertainty, metric));
    f.flags[i++] = flag_incorrect ? !r.correct : r.correct;
  }
  return f;
}

PlotSpec labeled_spec(std::string title, std::string x_label, std::string y_label) {
  PlotSpec spec;
  spec.title = std::move(title);
  spec.x_label = std::move(x_label);
  spec.y_label = std::move(y_label);
  return spec;
}

std::string file_stem(UncertaintyMetric metric) { return std::string(uncertainty_metric_name(metric)); }

std::string slug(std::string_view label) {
  std::string out;
  for (char c : label) {
    out += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
  }
  return out;
}

}  // namespace

std::vector<ReportFile> build_report(std::span<const ReportArm> arms, int ece_bins) {
  require(!arms.empty(), ErrorCode::invalid_argument, "report: no evaluations given");
  std::vector<ReportFile> files;
  std::vector<CalibrationReport> reports;
  for (const auto& arm : arms) reports.push_back(evaluate_records(arm.records, ece_bins));

  for (UncertaintyMetric metric : kAllUncertaintyMetrics) {
    std::vector<PlotSeries> roc;
    std::vector<PlotSeries> arc;
    for (const auto& arm : arms) {
      const Flagged incorrect = in_domain(arm.records, metric, true);
      PlotSeries r{arm.label, {}, {}};
      try {
        for (const auto& p : roc_curve(incorrect.scores, incorrect.span())) {
          r.x.push_back(p.fpr);
          r.y.push_back(p.tpr);
        }
      } catch (const Error&) {
        // single-class split: no curve for this arm
      }
      roc.push_back(std::move(r));

      const Flagged correct = in_domain(arm.records, metric, false);
      PlotSeries a{arm.label, {}, {}};
      if (correct.n > 0) {
        const auto curve = accuracy_rejection_curve(correct.scores, correct.span());
        for (std::size_t k = 0; k < curve.size(); ++k) {
          a.x.push_back(static_cast<double>(k) / static_cast<double>(correct.n));
          a.y.push_back(curve[k]);
        }
      }
      arc.push_back(std::move(a));
    }
    const std::string name(uncertainty_metric_name(metric));
    files.push_back({"roc_" + file_stem(metric) + ".svg",
                     svg_plot({.title = "ROC, hallucination detection by " + name,
                               .x_label = "false positive rate",
                               .y_label = "true positive rate",
                               .x_min = 0.0, .x_max = 1.0, .y_min = 0.0, .y_max = 1.0,
                               .diagonal = true},
                              roc)});
    files.push_back({"arc_" + file_stem(metric) + ".svg",
                     svg_plot({.title = "Accuracy-rejection, " + name,
                               .x_label = "fraction rejected",
                               .y_label = "accuracy of retained",
                               .x_min = 0.0, .x_max = 1.0, .y_min = 0.0, .y_max = 1.0},
                              arc)});
  }

  std::vector<PlotSeries> scatter;
  for (std::size_t k = 0; k < arms.size(); ++k) {
    scatter.push_back({arms[k].label, {reports[k].ece}, {reports[k].accuracy}});
  }
  PlotSpec scatter_spec = labeled_spec("Accuracy vs ECE", "ECE", "accuracy");
  scatter_spec.x_min = 0.0;
  scatter_spec.y_min = 0.0;
  scatter_spec.y_max = 1.0;
  scatter_spec.markers_only = true;
  files.push_back({"accuracy_vs_ece.svg", svg_plot(scatter_spec, scatter)});

  std::vector<std::string> entropy_plots;
  for (const auto& arm : arms) {
    if (!arm.log || arm.log->steps.empty()) continue;
    PlotSeries correct{"correct (C)", {}, {}};
    PlotSeries incorrect{"incorrect (C~)", {}, {}};
    for (const auto& s : arm.log->steps) {
      const double step = static_cast<double>(s.step);
      correct.x.push_back(step);
      correct.y.push_back(s.n_correct > 0 ? s.entropy_correct : NAN);
      incorrect.x.push_back(step);
      incorrect.y.push_back(s.n_incorrect > 0 ? s.entropy_incorrect : NAN);
    }
    const std::vector<PlotSeries> series{correct, incorrect};
    const std::string name = "entropy_" + slug(arm.label) + ".svg";
    PlotSpec spec = labeled_spec("Token entropy during training, " + arm.label,
                                 "optimizer step", "mean token entropy (nats)");
    spec.y_min = 0.0;
    files.push_back({name, svg_plot(spec, series)});
    entropy_plots.push_back(name);
  }

  std::ostringstream md;
  md << "# Calibration report\n\n";
  for (std::size_t k = 0; k < arms.size(); ++k) {
    md << report_to_markdown(reports[k], arms[k].label) << '\n';
  }
  for (std::size_t k = 1; k < arms.size(); ++k) {
    md << delta_to_markdown(compare_reports(reports[0], reports[k]), arms[0].label,
                            arms[k].label)
       << '\n';
  }
  md << "## Plots\n\n";
  for (UncertaintyMetric metric : kAllUncertaintyMetrics) {
    md << "- ![ROC " << uncertainty_metric_name(metric) << "](roc_" << file_stem(metric)
       << ".svg)\n";
    md << "- ![Accuracy-rejection " << uncertainty_metric_name(metric) << "](arc_"
       << file_stem(metric) << ".svg)\n";
  }
  md << "- ![Accuracy vs ECE](accuracy_vs_ece.svg)\n";
  for (const auto& name : entropy_plots) md << "- ![Token entropy](" << name << ")\n";
  files.insert(files.begin(), ReportFile{"report.md", md.str()});
  return files;
}

}  // namespace uacal
