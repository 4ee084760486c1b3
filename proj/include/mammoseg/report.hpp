#pragma once

#include <string>
#include <vector>

#include "mammoseg/gan.hpp"
#include "mammoseg/metrics.hpp"

namespace mammoseg {

/// Per-sample segmentation scores plus the statistics backing the figures.
struct EvalReport {
  std::vector<std::string> names;
  std::vector<double> dice;
  std::vector<double> iou;
};

struct SummaryStat {
  std::string metric;
  double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
  std::int64_t n = 0;
};

SummaryStat summarize(const std::string& metric, const std::vector<double>& values);

// CSV emission. Doubles print with max_digits10 precision, so reading an
// emitted file reproduces the in-memory rows exactly.
void write_per_sample_csv(const EvalReport& report, const std::string& path);
EvalReport read_per_sample_csv(const std::string& path);

void write_summary_csv(const std::vector<SummaryStat>& stats,
                       const std::vector<std::string>& notes, const std::string& path);

void write_confusion_csv(const ConfusionMatrix& m, const std::string& path);
ConfusionMatrix read_confusion_csv(const std::string& path);

void write_roc_csv(const RocCurve& roc, const std::string& path);
RocCurve read_roc_csv(const std::string& path);

void write_seg_loss_csv(const std::vector<EpochStats>& rows, const std::string& path);
std::vector<EpochStats> read_seg_loss_csv(const std::string& path);

// Standalone SVG figures (no external assets). Boxplots follow the Tukey
// convention: median line, Q1/Q3 box, whiskers to the farthest points within
// 1.5 IQR, outliers as dots. Quartiles interpolate linearly.
void write_boxplot_svg(const std::vector<std::pair<std::string, std::vector<double>>>& series,
                       const std::string& title, const std::string& path);

void write_roc_svg(const RocCurve& roc, const std::string& title, const std::string& path);

void write_curves_svg(const std::vector<std::pair<std::string, std::vector<double>>>& curves,
                      const std::string& title, const std::string& y_label,
                      const std::string& path);

}  // namespace mammoseg
