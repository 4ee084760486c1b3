#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mammoseg/image.hpp"

namespace mammoseg {

/// Pixel-overlap degrees between a ground-truth region A and a prediction B:
/// TP = |A n B|, FP = |~A n B|, FN = |A n ~B|, TN = |~A n ~B|.
struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;
  std::int64_t total() const { return tp + fp + fn + tn; }
};

ConfusionCounts overlap_counts(const BinaryMask& gt, const BinaryMask& pred);

struct DiceIou {
  double dice = 1.0;
  double iou = 1.0;
};

// dice = 2TP/(2TP+FP+FN), iou = TP/(TP+FP+FN); both 1 when TP+FP+FN = 0
// (the empty-match convention).
DiceIou dice_and_iou(const ConfusionCounts& c);

/// Square count matrix, rows = ground truth, columns = prediction.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<std::int64_t> counts;  // row-major classes x classes

  explicit ConfusionMatrix(int n) : classes(n), counts(std::size_t(n) * std::size_t(n), 0) {}
  std::int64_t& at(int truth, int pred) { return counts[std::size_t(truth) * classes + pred]; }
  std::int64_t at(int truth, int pred) const {
    return counts[std::size_t(truth) * classes + pred];
  }
  std::int64_t row_sum(int truth) const;
  std::int64_t total() const;
  std::int64_t diagonal_sum() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred,
                                 int classes);

// Macro average of per-class recalls, in percent. Requires every ground-truth
// class to be populated.
double overall_accuracy_macro(const ConfusionMatrix& m);

// Plain fraction of correct predictions, in percent.
double overall_accuracy_micro(const ConfusionMatrix& m);

struct RocCurve {
  std::vector<std::pair<double, double>> points;  // (FPR, TPR), (0,0) .. (1,1)
  double auc = 0.0;
};

// One-vs-rest with micro-averaged pooling of the per-class scores; threshold
// sweep over distinct scores with ties grouped; AUC by the trapezoid rule.
RocCurve roc_auc(const std::vector<std::vector<double>>& scores, const std::vector<int>& truth);

// Pooled binary ROC over (score, positive) pairs.
RocCurve roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& positive);

// Linear-interpolation quantile of sorted data at fraction p in [0,1].
double quantile_sorted(const std::vector<double>& sorted, double p);

}  // namespace mammoseg
