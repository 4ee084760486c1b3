#include "mammoseg/gan.hpp"

#include <algorithm>
#include <cmath>

#include "mammoseg/metrics.hpp"

namespace mammoseg {

void GanTrainConfig::validate() const {
  if (lambda_dice < 0) throw ConfigError("lambda_dice must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(log_eps > 0) || !(dice_eps > 0) || !(optim_eps > 0))
    throw ConfigError("epsilon guards must be positive");
  if (!(threshold > 0 && threshold < 1)) throw ConfigError("threshold must be in (0, 1)");
}

template <typename T>
GenLossParts<T> generator_loss(Tape<T>& tape, Var d_fake, Var target, Var pred01,
                               const GanTrainConfig& cfg) {
  GenLossParts<T> parts;
  parts.adv = neg_mean_log(tape, d_fake, T(cfg.log_eps));
  parts.recon = cfg.reconstruction == ReconLoss::dice
                    ? dice_loss(tape, target, pred01, T(cfg.dice_eps))
                    : mean_abs_diff(tape, target, pred01);
  parts.loss = add(tape, parts.adv, affine(tape, parts.recon, T(cfg.lambda_dice), T(0)));
  return parts;
}

template <typename T>
Var discriminator_loss(Tape<T>& tape, Var d_real, Var d_fake, T eps) {
  Var real_term = neg_mean_log(tape, d_real, eps);
  Var fake_term = neg_mean_log(tape, affine(tape, d_fake, T(-1), T(1)), eps);
  return add(tape, real_term, fake_term);
}

template <typename T>
Tensor<T> batch_rois(const std::vector<const SegSample*>& samples) {
  if (samples.empty()) throw ContractError("empty batch");
  const int w = samples[0]->roi.width, h = samples[0]->roi.height;
  Tensor<T> x({std::int64_t(samples.size()), 1, h, w});
  std::int64_t o = 0;
  for (const SegSample* s : samples) {
    if (s->roi.width != w || s->roi.height != h)
      throw ContractError("batch samples must share extents");
    for (double v : s->roi.values) x[o++] = T(v);
  }
  return x;
}

template <typename T>
Tensor<T> batch_masks(const std::vector<const SegSample*>& samples) {
  if (samples.empty()) throw ContractError("empty batch");
  const int w = samples[0]->mask.width, h = samples[0]->mask.height;
  Tensor<T> y({std::int64_t(samples.size()), 1, h, w});
  std::int64_t o = 0;
  for (const SegSample* s : samples) {
    if (s->mask.width != w || s->mask.height != h)
      throw ContractError("batch samples must share extents");
    for (std::uint8_t v : s->mask.values) y[o++] = v ? T(1) : T(0);
  }
  return y;
}

template <typename T>
GanTrainer<T>::GanTrainer(const GeneratorSpec& gspec, const DiscriminatorSpec& dspec,
                          const GanTrainConfig& cfg)
    : cfg_(cfg),
      rng_(cfg.seed),
      gen_((cfg.validate(), gspec), rng_),
      disc_(dspec, rng_),
      opt_g_(Optimizer<T>::adam(gen_.params().all(),
                                AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2,
                                           cfg.optim_eps})),
      opt_d_(Optimizer<T>::adam(disc_.params().all(),
                                AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2,
                                           cfg.optim_eps})) {
  if (gspec.image_size != dspec.image_size)
    throw ConfigError("generator and discriminator image sizes must match");
}

namespace {

template <typename T>
void check_finite(const Tape<T>& tape, Var v, const char* term) {
  const T value = tape.value(v)[0];
  if (!std::isfinite(double(value)))
    throw std::runtime_error(std::string("non-finite loss: ") + term + " = " +
                             std::to_string(double(value)));
}

}  // namespace

template <typename T>
StepStats GanTrainer<T>::train_step(const Tensor<T>& x, const Tensor<T>& y) {
  if (!x.same_shape(y))
    throw ContractError("roi batch " + x.shape_str() + " vs mask batch " + y.shape_str());

  // (1) generator forward with dropout active
  Tape<T> gtape;
  Var xg = gtape.input(x);
  Var g_tanh = gen_.forward(gtape, xg, /*bn_train=*/true, rng_);
  Var g01 = affine(gtape, g_tanh, T(0.5), T(0.5));  // tanh range to [0,1]

  StepStats stats;

  // (2) discriminator step on (x,y) real vs (x, detached fake)
  {
    Tape<T> dtape;
    Var xd = dtape.input(x);
    Var d_real = disc_.forward(dtape, concat_channels(dtape, xd, dtape.input(y)), true);
    Var d_fake =
        disc_.forward(dtape, concat_channels(dtape, xd, dtape.input(gtape.value(g01))), true);
    Var dloss = discriminator_loss(dtape, d_real, d_fake, T(cfg_.log_eps));
    check_finite(dtape, dloss, "discriminator loss (Eq. 3)");
    stats.disc_loss = double(dtape.value(dloss)[0]);
    disc_.params().zero_grads();
    dtape.backward(dloss);
    opt_d_.step();
  }

  // (3) generator step against the refreshed discriminator
  {
    Var d_fake = disc_.forward(gtape, concat_channels(gtape, gtape.input(x), g01), true);
    GenLossParts<T> parts = generator_loss(gtape, d_fake, gtape.input(y), g01, cfg_);
    check_finite(gtape, parts.adv, "generator adversarial term");
    check_finite(gtape, parts.recon, "generator reconstruction term");
    stats.gen_loss = double(gtape.value(parts.loss)[0]);
    stats.adv_term = double(gtape.value(parts.adv)[0]);
    stats.dice_term = double(gtape.value(parts.recon)[0]);
    gen_.params().zero_grads();
    disc_.params().zero_grads();
    gtape.backward(parts.loss);
    opt_g_.step();
    disc_.params().zero_grads();  // discard the side-effect gradients
  }
  return stats;
}

template <typename T>
EpochStats GanTrainer<T>::train_epoch(const std::vector<SegSample>& data) {
  if (data.empty()) throw ContractError("cannot train on an empty dataset");
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i)
    std::swap(order[i], order[rng_.below(i + 1)]);

  EpochStats epoch;
  int steps = 0;
  for (std::size_t at = 0; at < order.size(); at += std::size_t(cfg_.batch_size)) {
    std::vector<const SegSample*> batch;
    for (std::size_t i = at; i < std::min(order.size(), at + std::size_t(cfg_.batch_size)); ++i)
      batch.push_back(&data[order[i]]);
    StepStats s = train_step(batch_rois<T>(batch), batch_masks<T>(batch));
    epoch.gen_loss += s.gen_loss;
    epoch.disc_loss += s.disc_loss;
    epoch.dice_term += s.dice_term;
    epoch.adv_term += s.adv_term;
    ++steps;
  }
  epoch.gen_loss /= steps;
  epoch.disc_loss /= steps;
  epoch.dice_term /= steps;
  epoch.adv_term /= steps;
  ++epochs_done_;
  epoch.epoch = epochs_done_;
  return epoch;
}

template <typename T>
BinaryMask segment_roi(Generator<T>& gen, const GrayImage& roi, Rng rng, double threshold) {
  const int size = gen.spec().image_size;
  if (roi.width != size || roi.height != size)
    throw ContractError("segment_roi expects a preprocessed " + std::to_string(size) + "x" +
                        std::to_string(size) + " ROI");
  Tensor<T> x({1, 1, size, size});
  for (std::size_t i = 0; i < roi.values.size(); ++i) x[std::int64_t(i)] = T(roi.values[i]);

  Tape<T> tape;
  Var out = gen.forward(tape, tape.input(std::move(x)), /*bn_train=*/false, rng);
  const Tensor<T>& t = tape.value(out);

  BinaryMask mask(size, size);
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    const double v = 0.5 * (double(t[std::int64_t(i)]) + 1.0);
    mask.values[i] = v >= threshold ? 1 : 0;
  }
  return morph_cleanup(mask);
}

template <typename T>
SegScore evaluate_segmenter(Generator<T>& gen, const std::vector<SegSample>& samples,
                            Rng base_rng, double threshold) {
  SegScore score;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    BinaryMask pred = segment_roi(gen, samples[i].roi, base_rng.derive(i), threshold);
    DiceIou di = dice_and_iou(overlap_counts(samples[i].mask, pred));
    score.dice.push_back(di.dice);
    score.iou.push_back(di.iou);
    score.mean_dice += di.dice;
    score.mean_iou += di.iou;
  }
  if (!samples.empty()) {
    score.mean_dice /= double(samples.size());
    score.mean_iou /= double(samples.size());
  }
  return score;
}

#define MAMMOSEG_INSTANTIATE_GAN(T)                                                      \
  template struct GenLossParts<T>;                                                       \
  template GenLossParts<T> generator_loss<T>(Tape<T>&, Var, Var, Var,                    \
                                             const GanTrainConfig&);                     \
  template Var discriminator_loss<T>(Tape<T>&, Var, Var, T);                             \
  template Tensor<T> batch_rois<T>(const std::vector<const SegSample*>&);                \
  template Tensor<T> batch_masks<T>(const std::vector<const SegSample*>&);               \
  template class GanTrainer<T>;                                                          \
  template BinaryMask segment_roi<T>(Generator<T>&, const GrayImage&, Rng, double);      \
  template SegScore evaluate_segmenter<T>(Generator<T>&, const std::vector<SegSample>&,  \
                                          Rng, double);

MAMMOSEG_INSTANTIATE_GAN(float)
MAMMOSEG_INSTANTIATE_GAN(double)

#undef MAMMOSEG_INSTANTIATE_GAN

}  // namespace mammoseg
