#include "mammoseg/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace mammoseg {

ConfusionCounts overlap_counts(const BinaryMask& gt, const BinaryMask& pred) {
  if (gt.width != pred.width || gt.height != pred.height)
    throw ContractError("overlap_counts needs masks of equal extents");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    const bool a = gt.values[i] != 0;
    const bool b = pred.values[i] != 0;
    if (a && b)
      ++c.tp;
    else if (!a && b)
      ++c.fp;
    else if (a && !b)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

DiceIou dice_and_iou(const ConfusionCounts& c) {
  const std::int64_t denom = c.tp + c.fp + c.fn;
  if (denom == 0) return DiceIou{1.0, 1.0};
  DiceIou r;
  r.dice = 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
  r.iou = double(c.tp) / double(denom);
  return r;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int p = 0; p < classes; ++p) s += at(truth, p);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (std::int64_t v : counts) s += v;
  return s;
}

std::int64_t ConfusionMatrix::diagonal_sum() const {
  std::int64_t s = 0;
  for (int i = 0; i < classes; ++i) s += at(i, i);
  return s;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred,
                                 int classes) {
  if (truth.size() != pred.size())
    throw ContractError("confusion_matrix needs one prediction per ground-truth label");
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= classes || pred[i] < 0 || pred[i] >= classes)
      throw ContractError("confusion_matrix label out of range");
    ++m.at(truth[i], pred[i]);
  }
  return m;
}

double overall_accuracy_macro(const ConfusionMatrix& m) {
  double acc = 0.0;
  for (int c = 0; c < m.classes; ++c) {
    const std::int64_t row = m.row_sum(c);
    if (row == 0) throw ContractError("overall accuracy undefined with an empty class");
    acc += double(m.at(c, c)) / double(row);
  }
  return 100.0 * acc / double(m.classes);
}

double overall_accuracy_micro(const ConfusionMatrix& m) {
  const std::int64_t total = m.total();
  if (total == 0) throw ContractError("overall accuracy undefined on an empty matrix");
  return 100.0 * double(m.diagonal_sum()) / double(total);
}

RocCurve roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size())
    throw ContractError("roc needs one score per truth value");
  std::int64_t p_total = 0, n_total = 0;
  for (int v : positive) (v ? p_total : n_total)++;
  if (p_total == 0 || n_total == 0)
    throw ContractError("roc needs both positive and negative samples");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  std::int64_t tp = 0, fp = 0;
  double auc = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    // group tied scores into a single sweep point
    const double s = scores[order[i]];
    std::int64_t dtp = 0, dfp = 0;
    while (i < order.size() && scores[order[i]] == s) {
      (positive[order[i]] ? dtp : dfp)++;
      ++i;
    }
    const double fpr0 = double(fp) / double(n_total);
    const double tpr0 = double(tp) / double(p_total);
    tp += dtp;
    fp += dfp;
    const double fpr1 = double(fp) / double(n_total);
    const double tpr1 = double(tp) / double(p_total);
    auc += (fpr1 - fpr0) * (tpr0 + tpr1) / 2.0;
    curve.points.emplace_back(fpr1, tpr1);
  }
  curve.auc = auc;
  return curve;
}

RocCurve roc_auc(const std::vector<std::vector<double>>& scores, const std::vector<int>& truth) {
  if (scores.size() != truth.size())
    throw ContractError("roc needs one score row per sample");
  if (scores.empty()) throw ContractError("roc needs at least one sample");
  const std::size_t classes = scores[0].size();
  bool multi = false;
  for (std::size_t i = 1; i < truth.size(); ++i) multi = multi || truth[i] != truth[0];
  if (!multi) throw ContractError("roc needs more than one ground-truth class");

  std::vector<double> pooled;
  std::vector<int> positive;
  pooled.reserve(scores.size() * classes);
  positive.reserve(scores.size() * classes);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != classes) throw ContractError("ragged roc score rows");
    for (std::size_t c = 0; c < classes; ++c) {
      pooled.push_back(scores[i][c]);
      positive.push_back(truth[i] == int(c) ? 1 : 0);
    }
  }
  return roc_auc_binary(pooled, positive);
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw ContractError("quantile of empty data");
  if (sorted.size() == 1) return sorted[0];
  const double pos = p * double(sorted.size() - 1);
  const std::size_t lo = std::size_t(pos);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - double(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace mammoseg
