#include "mammoseg/shape.hpp"

#include <algorithm>
#include <cmath>

#include "mammoseg/optim.hpp"

namespace mammoseg {

std::vector<double> class_weights(const std::vector<std::int64_t>& counts) {
  std::int64_t total = 0;
  for (std::int64_t c : counts) {
    if (c < 0) throw ContractError("class counts must be >= 0");
    total += c;
  }
  if (total <= 0) throw ContractError("class weights need a positive total count");
  std::vector<double> w;
  w.reserve(counts.size());
  for (std::int64_t c : counts) w.push_back(1.0 - double(c) / double(total));
  return w;
}

std::vector<std::vector<std::size_t>> FoldPlan::fold_indices() const {
  std::vector<std::vector<std::size_t>> folds(std::size_t(k));
  for (std::size_t i = 0; i < fold_of.size(); ++i)
    folds[std::size_t(fold_of[i])].push_back(i);
  return folds;
}

FoldPlan stratified_kfold(const std::vector<int>& labels, int k, Rng& rng) {
  if (k < 2) throw ConfigError("stratified k-fold needs k >= 2");
  int classes = 0;
  for (int l : labels) {
    if (l < 0) throw ContractError("labels must be non-negative");
    classes = std::max(classes, l + 1);
  }
  std::vector<std::vector<std::size_t>> by_class(std::size_t(classes));
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[std::size_t(labels[i])].push_back(i);
  for (int c = 0; c < classes; ++c)
    if (by_class[std::size_t(c)].size() < std::size_t(k))
      throw ConfigError("class " + std::string(shape_label_name(c)) + " has " +
                        std::to_string(by_class[std::size_t(c)].size()) +
                        " samples, fewer than k=" + std::to_string(k));

  FoldPlan plan;
  plan.k = k;
  plan.fold_of.assign(labels.size(), 0);
  for (auto& members : by_class) {
    for (std::size_t i = members.size(); i > 1; --i)
      std::swap(members[i - 1], members[rng.below(i)]);
    for (std::size_t pos = 0; pos < members.size(); ++pos)
      plan.fold_of[members[pos]] = int(pos % std::size_t(k));
  }
  return plan;
}

void ShapeTrainConfig::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("classifier learning_rate must be positive");
  if (!(rms_decay > 0 && rms_decay < 1) || !(momentum >= 0 && momentum < 1))
    throw ConfigError("rmsprop decay/momentum out of range");
  if (batch_size < 1 || epochs < 0 || folds < 2)
    throw ConfigError("classifier batch/epoch/fold configuration out of range");
  if (!(loss_eps > 0) || !(optim_eps > 0)) throw ConfigError("epsilon guards must be positive");
}

template <typename T>
Tensor<T> batch_mask_inputs(const std::vector<const BinaryMask*>& masks, int size) {
  if (masks.empty()) throw ContractError("empty mask batch");
  Tensor<T> x({std::int64_t(masks.size()), 1, size, size});
  std::int64_t o = 0;
  for (const BinaryMask* m : masks) {
    if (m->width == size && m->height == size) {
      for (std::uint8_t v : m->values) x[o++] = v ? T(1) : T(0);
    } else {
      BinaryMask r = resize_bilinear(*m, size, size);
      for (std::uint8_t v : r.values) x[o++] = v ? T(1) : T(0);
    }
  }
  return x;
}

template <typename T>
std::unique_ptr<Classifier<T>> train_classifier(const ClassifierSpec& spec,
                                                const ShapeTrainConfig& cfg, Rng rng,
                                                const std::vector<const BinaryMask*>& masks,
                                                const std::vector<int>& labels,
                                                std::vector<double>* epoch_loss) {
  cfg.validate();
  if (masks.size() != labels.size() || masks.empty())
    throw ContractError("classifier training needs one label per mask");

  auto net = std::make_unique<Classifier<T>>(spec, rng);
  auto opt = Optimizer<T>::rmsprop(
      net->params().all(),
      RmsPropConfig{cfg.learning_rate, cfg.rms_decay, cfg.momentum, cfg.optim_eps});

  std::vector<std::int64_t> counts(std::size_t(spec.classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= spec.classes) throw ContractError("label out of range");
    ++counts[std::size_t(l)];
  }
  const std::vector<double> wd = class_weights(counts);
  std::vector<T> weights(wd.begin(), wd.end());

  std::vector<std::size_t> order(masks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.below(i)]);
    double loss_sum = 0;
    int steps = 0;
    for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg.batch_size)) {
      std::vector<const BinaryMask*> batch;
      std::vector<int> batch_labels;
      for (std::size_t i = at; i < std::min(order.size(), at + std::size_t(cfg.batch_size));
           ++i) {
        batch.push_back(masks[order[i]]);
        batch_labels.push_back(labels[order[i]]);
      }
      Tape<T> tape;
      Var x = tape.input(batch_mask_inputs<T>(batch, spec.image_size));
      Var probs = net->forward(tape, x, /*train=*/true, rng);
      Var loss = weighted_nll(tape, probs, batch_labels, weights, T(cfg.loss_eps));
      const double lv = double(tape.value(loss)[0]);
      if (!std::isfinite(lv))
        throw std::runtime_error("non-finite classifier loss at epoch " +
                                 std::to_string(epoch + 1));
      loss_sum += lv;
      ++steps;
      net->params().zero_grads();
      tape.backward(loss);
      opt.step();
    }
    if (epoch_loss) epoch_loss->push_back(loss_sum / std::max(1, steps));
  }
  return net;
}

template <typename T>
CrossValResult crossvalidate_classifier(const ClassifierSpec& spec, const ShapeTrainConfig& cfg,
                                        const std::vector<const BinaryMask*>& masks,
                                        const std::vector<int>& labels) {
  cfg.validate();
  Rng fold_rng(cfg.seed);
  const FoldPlan plan = stratified_kfold(labels, cfg.folds, fold_rng);

  CrossValResult cv;
  cv.pooled = ConfusionMatrix(spec.classes);
  std::vector<std::vector<double>> all_scores;
  std::vector<int> all_truth;

  for (int f = 0; f < cfg.folds; ++f) {
    std::vector<const BinaryMask*> train_masks;
    std::vector<int> train_labels;
    FoldResult fr;
    fr.fold = f;
    fr.confusion = ConfusionMatrix(spec.classes);
    for (std::size_t i = 0; i < masks.size(); ++i) {
      if (plan.fold_of[i] == f) {
        fr.eval_indices.push_back(i);
      } else {
        train_masks.push_back(masks[i]);
        train_labels.push_back(labels[i]);
      }
    }

    auto net = train_classifier<T>(spec, cfg, Rng(cfg.seed + std::uint64_t(f)), train_masks,
                                   train_labels, &fr.epoch_loss);

    for (std::size_t i : fr.eval_indices) {
      auto [pred, probs] = classify_mask<T>(*net, *masks[i]);
      ++fr.confusion.at(labels[i], pred);
      ++cv.pooled.at(labels[i], pred);
      fr.eval_scores.push_back(probs);
      fr.eval_truth.push_back(labels[i]);
      all_scores.push_back(std::move(probs));
      all_truth.push_back(labels[i]);
    }
    cv.folds.push_back(std::move(fr));
  }
  cv.mean_roc = roc_auc(all_scores, all_truth);
  cv.macro_accuracy = overall_accuracy_macro(cv.pooled);
  cv.micro_accuracy = overall_accuracy_micro(cv.pooled);
  return cv;
}

template <typename T>
std::pair<int, std::vector<double>> classify_mask(Classifier<T>& net, const BinaryMask& mask) {
  Tape<T> tape;
  Rng off(0);  // dropout inactive: never drawn from
  Var x = tape.input(batch_mask_inputs<T>({&mask}, net.spec().image_size));
  Var probs = net.forward(tape, x, /*train=*/false, off);
  const Tensor<T>& p = tape.value(probs);
  std::vector<double> row;
  int best = 0;
  for (std::int64_t c = 0; c < p.size(1); ++c) {
    row.push_back(double(p[c]));
    if (row.back() > row[std::size_t(best)]) best = int(c);
  }
  return {best, row};
}

#define MAMMOSEG_INSTANTIATE_SHAPE(T)                                                        \
  template Tensor<T> batch_mask_inputs<T>(const std::vector<const BinaryMask*>&, int);       \
  template std::unique_ptr<Classifier<T>> train_classifier<T>(                               \
      const ClassifierSpec&, const ShapeTrainConfig&, Rng,                                   \
      const std::vector<const BinaryMask*>&, const std::vector<int>&, std::vector<double>*); \
  template CrossValResult crossvalidate_classifier<T>(                                       \
      const ClassifierSpec&, const ShapeTrainConfig&, const std::vector<const BinaryMask*>&, \
      const std::vector<int>&);                                                              \
  template std::pair<int, std::vector<double>> classify_mask<T>(Classifier<T>&,              \
                                                                const BinaryMask&);

MAMMOSEG_INSTANTIATE_SHAPE(float)
MAMMOSEG_INSTANTIATE_SHAPE(double)

#undef MAMMOSEG_INSTANTIATE_SHAPE

}  // namespace mammoseg
