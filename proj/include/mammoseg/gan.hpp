#pragma once

#include <string>
#include <vector>

#include "mammoseg/image.hpp"
#include "mammoseg/nets.hpp"
#include "mammoseg/optim.hpp"

namespace mammoseg {

enum class ReconLoss { dice, l1 };

struct GanTrainConfig {
  double lambda_dice = 150.0;
  ReconLoss reconstruction = ReconLoss::dice;
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double optim_eps = 1e-8;
  int batch_size = 8;
  int epochs = 150;
  double log_eps = 1e-7;
  double dice_eps = 1e-7;
  double threshold = 0.5;  // binarization of the rescaled tanh output
  std::uint64_t seed = 42;

  void validate() const;
};

/// Conditioning ROI x paired with its ground-truth mask y.
struct SegSample {
  GrayImage roi;
  BinaryMask mask;
};

// Adversarial plus weighted reconstruction objective of the generator.
// d_fake are discriminator scores in (0,1); target/pred01 live in [0,1].
// Returns (loss, adv_term, recon_term) variables.
template <typename T>
struct GenLossParts {
  Var loss;
  Var adv;
  Var recon;
};

template <typename T>
GenLossParts<T> generator_loss(Tape<T>& tape, Var d_fake, Var target, Var pred01,
                               const GanTrainConfig& cfg);

template <typename T>
Var discriminator_loss(Tape<T>& tape, Var d_real, Var d_fake, T eps);

struct StepStats {
  double gen_loss = 0;
  double disc_loss = 0;
  double dice_term = 0;  // reconstruction term before the lambda weighting
  double adv_term = 0;
};

struct EpochStats {
  int epoch = 0;
  double gen_loss = 0;
  double disc_loss = 0;
  double dice_term = 0;
  double adv_term = 0;
};

/// Owns the generator/discriminator pair, both Adam optimizers and the
/// single RNG stream that all training randomness is drawn from, so a
/// checkpointed (weights, moments, rng, epoch) tuple resumes exactly.
template <typename T>
class GanTrainer {
 public:
  GanTrainer(const GeneratorSpec& gspec, const DiscriminatorSpec& dspec,
             const GanTrainConfig& cfg);

  // One concurrent optimization step: D on (x,y) vs (x, detached G(x,z)),
  // then G against the refreshed D.
  StepStats train_step(const Tensor<T>& x, const Tensor<T>& y);

  // Shuffles, batches, and returns per-step-averaged losses.
  EpochStats train_epoch(const std::vector<SegSample>& data);

  Generator<T>& generator() { return gen_; }
  Discriminator<T>& discriminator() { return disc_; }
  Optimizer<T>& gen_optimizer() { return opt_g_; }
  Optimizer<T>& disc_optimizer() { return opt_d_; }
  Rng& rng() { return rng_; }
  void set_rng(Rng r) { rng_ = r; }
  int epochs_done() const { return epochs_done_; }
  void set_epochs_done(int e) { epochs_done_ = e; }
  const GanTrainConfig& config() const { return cfg_; }

 private:
  GanTrainConfig cfg_;
  Rng rng_;
  Generator<T> gen_;
  Discriminator<T> disc_;
  Optimizer<T> opt_g_;
  Optimizer<T> opt_d_;
  int epochs_done_ = 0;
};

// (N,1,S,S) conditioning batch and {0,1} target batch from samples.
template <typename T>
Tensor<T> batch_rois(const std::vector<const SegSample*>& samples);
template <typename T>
Tensor<T> batch_masks(const std::vector<const SegSample*>& samples);

// Forward with dropout active (the test-time z), rescale tanh output to
// [0,1], threshold, then morphological cleanup. Deterministic given the rng.
template <typename T>
BinaryMask segment_roi(Generator<T>& gen, const GrayImage& roi, Rng rng,
                       double threshold = 0.5);

/// Mean test Dice/IoU of a generator over samples, after post-processing.
struct SegScore {
  double mean_dice = 0;
  double mean_iou = 0;
  std::vector<double> dice;
  std::vector<double> iou;
};

template <typename T>
SegScore evaluate_segmenter(Generator<T>& gen, const std::vector<SegSample>& samples,
                            Rng base_rng, double threshold = 0.5);

}  // namespace mammoseg
