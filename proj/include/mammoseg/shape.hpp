#pragma once

#include <memory>
#include <vector>

#include "mammoseg/dataset.hpp"
#include "mammoseg/metrics.hpp"
#include "mammoseg/nets.hpp"

namespace mammoseg {

// w_c = 1 - n_c / N.
std::vector<double> class_weights(const std::vector<std::int64_t>& counts);

/// k-fold assignment per sample; folds partition the index set with
/// per-class proportions within one sample of the global ones.
struct FoldPlan {
  int k = 0;
  std::vector<int> fold_of;

  std::vector<std::vector<std::size_t>> fold_indices() const;
};

// Shuffled within-class round-robin assignment. Every class needs >= k
// samples.
FoldPlan stratified_kfold(const std::vector<int>& labels, int k, Rng& rng);

struct ShapeTrainConfig {
  double learning_rate = 1e-3;
  double rms_decay = 0.9;
  double momentum = 0.9;
  double optim_eps = 1e-8;
  int batch_size = 16;
  int epochs = 50;
  int folds = 5;
  double loss_eps = 1e-7;
  std::uint64_t seed = 42;

  void validate() const;
};

// Mask batch as a (N,1,S,S) tensor of {0,1} values, resized when needed.
template <typename T>
Tensor<T> batch_mask_inputs(const std::vector<const BinaryMask*>& masks, int size);

/// RMSProp training of one classifier on the given samples; returns the
/// trained network and appends mean per-epoch losses to epoch_loss.
template <typename T>
std::unique_ptr<Classifier<T>> train_classifier(const ClassifierSpec& spec,
                                                const ShapeTrainConfig& cfg, Rng rng,
                                                const std::vector<const BinaryMask*>& masks,
                                                const std::vector<int>& labels,
                                                std::vector<double>* epoch_loss);

struct FoldResult {
  int fold = 0;
  ConfusionMatrix confusion{4};
  std::vector<std::size_t> eval_indices;
  std::vector<std::vector<double>> eval_scores;
  std::vector<int> eval_truth;
  std::vector<double> epoch_loss;
};

struct CrossValResult {
  std::vector<FoldResult> folds;
  ConfusionMatrix pooled{4};
  RocCurve mean_roc;        // micro-averaged pooling of all held-out scores
  double macro_accuracy = 0;  // percent, over the pooled confusion
  double micro_accuracy = 0;
};

// Stratified cross-validation; fold f trains from seed cfg.seed + f.
template <typename T>
CrossValResult crossvalidate_classifier(const ClassifierSpec& spec, const ShapeTrainConfig& cfg,
                                        const std::vector<const BinaryMask*>& masks,
                                        const std::vector<int>& labels);

// Inference with dropout off; the mask is resized to the network input size.
// Returns the argmax label and the softmax row.
template <typename T>
std::pair<int, std::vector<double>> classify_mask(Classifier<T>& net, const BinaryMask& mask);

}  // namespace mammoseg
