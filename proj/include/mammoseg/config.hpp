#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mammoseg/gan.hpp"
#include "mammoseg/nets.hpp"
#include "mammoseg/phantom.hpp"
#include "mammoseg/shape.hpp"

namespace mammoseg {

/// Every tunable of the pipeline as one JSON document. Defaults are the
/// published hyperparameters. Unknown keys are rejected and all values are
/// range-checked at load time.
struct RunConfig {
  std::uint64_t seed = 42;

  struct Preprocess {
    double gaussian_sigma = 0.5;
    int equalize_bins = 256;
  } preprocess;

  struct GeneratorCfg {
    int image_size = 256;
    int base_filters = 32;
    double dropout_p = 0.5;
    double init_std = 0.02;
  } generator;

  struct DiscriminatorCfg {
    int base_filters = 32;
  } discriminator;

  struct BatchNormCfg {
    double eps = 1e-5;
    double momentum = 0.1;
  } batchnorm;

  struct GanCfg {
    double lambda_dice = 150.0;
    std::string reconstruction_loss = "dice";  // dice | l1
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int batch_size = 8;
    int epochs = 150;
    double log_eps = 1e-7;
    double dice_eps = 1e-7;
    double optimizer_eps = 1e-8;
    double threshold = 0.5;
  } gan;

  struct ClassifierCfg {
    int image_size = 64;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    double squared_avg_decay = 0.9;
    int batch_size = 16;
    int epochs = 50;
    int folds = 5;
    double dropout_p = 0.5;
    double loss_eps = 1e-7;
    double optimizer_eps = 1e-8;
  } classifier;

  struct PhantomCfg {
    int image_size = 256;
    double contrast = 0.35;
    double noise_sigma = 0.05;
    std::array<int, 4> class_counts{50, 50, 50, 50};
  } phantom;

  static RunConfig defaults() { return RunConfig{}; }
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::string& path);

  nlohmann::json to_json() const;
  std::string resolved_text() const;  // pretty-printed document
  std::uint64_t hash() const;         // FNV-1a 64 over the resolved document

  void validate() const;

  // Materialized module configurations.
  GeneratorSpec generator_spec() const;
  DiscriminatorSpec discriminator_spec() const;
  ClassifierSpec classifier_spec() const;
  GanTrainConfig gan_config() const;
  ShapeTrainConfig shape_config() const;
  PhantomSpec phantom_spec() const;

  // smooth -> equalize -> resize to the generator input size
  GrayImage prepare_roi(const GrayImage& img) const;
};

}  // namespace mammoseg
