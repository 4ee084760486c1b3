#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mammoseg/ops.hpp"

namespace mammoseg {

/// Encoder-decoder generator plan. The default (256 input, 32 base filters)
/// materializes 8+8 layers with a 1x1 bottleneck and 13,607,425 parameters;
/// smaller power-of-two inputs shrink the depth to keep the 1x1 bottleneck.
struct GeneratorSpec {
  int image_size = 256;
  int in_channels = 1;
  int base_filters = 32;
  double dropout_p = 0.5;
  double init_std = 0.02;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  int depth() const;
  std::vector<int> encoder_channels() const;  // base, 2x, 4x, then capped at 8x
  void validate() const;
};

/// Five-layer patch discriminator over the (ROI, mask) channel pair. For the
/// default 256 input: strides 2,2,2,1,1, a 30x30 output grid and a 70x70
/// receptive field.
struct DiscriminatorSpec {
  int image_size = 256;
  int in_channels = 2;
  int base_filters = 32;
  double init_std = 0.02;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::vector<int> channel_plan() const;  // [b, 2b, 4b, 8b, 1]
  std::vector<int> strides() const;
  int output_extent() const;
  void validate() const;
};

/// Mask-shape classifier: 9x9/5x5 same-padded and 4x4 valid convolutions
/// (no biases), 4x4/4 max-pools, dense 128 + dropout, softmax over 4 classes.
/// The default materializes exactly 767,684 parameters.
struct ClassifierSpec {
  int image_size = 64;
  int in_channels = 1;
  std::vector<int> conv_filters{64, 128, 256};
  int pool_k = 4;
  int pool_stride = 4;
  int dense_units = 128;
  int classes = 4;
  double dropout_p = 0.5;

  std::vector<int> spatial_trace() const;
  void validate() const;
};

// r <- r + (k-1)*jump, jump <- jump*stride, over the layers in order.
int analytic_receptive_field(const std::vector<int>& kernels, const std::vector<int>& strides);

template <typename T>
class Generator {
 public:
  Generator(const GeneratorSpec& spec, Rng& rng);

  // Dropout stays active at inference: it realizes the model's noise input z.
  Var forward(Tape<T>& tape, Var x, bool bn_train, Rng& z_rng);

  const GeneratorSpec& spec() const { return spec_; }
  ParameterSet<T>& params() { return params_; }
  std::int64_t parameter_count() const { return params_.total_elements(); }
  std::string count_table() const;
  std::map<std::string, Tensor<T>*> state_tensors();  // parameters + running stats

 private:
  struct Layer {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    std::unique_ptr<BatchNormStats<T>> stats;
  };

  GeneratorSpec spec_;
  ParameterSet<T> params_;
  std::vector<Layer> enc_;
  std::vector<Layer> dec_;
};

template <typename T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorSpec& spec, Rng& rng);

  Var forward(Tape<T>& tape, Var roi_and_mask, bool bn_train);

  const DiscriminatorSpec& spec() const { return spec_; }
  ParameterSet<T>& params() { return params_; }
  std::int64_t parameter_count() const { return params_.total_elements(); }
  std::map<std::string, Tensor<T>*> state_tensors();

 private:
  struct Layer {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
    Parameter<T>* gamma = nullptr;
    Parameter<T>* beta = nullptr;
    std::unique_ptr<BatchNormStats<T>> stats;
    int stride = 1;
  };

  DiscriminatorSpec spec_;
  ParameterSet<T> params_;
  std::vector<Layer> layers_;
};

template <typename T>
class Classifier {
 public:
  Classifier(const ClassifierSpec& spec, Rng& rng);

  // Returns the softmax probability rows. Dropout only acts in train mode.
  Var forward(Tape<T>& tape, Var x, bool train, Rng& rng);

  const ClassifierSpec& spec() const { return spec_; }
  ParameterSet<T>& params() { return params_; }
  std::int64_t parameter_count() const { return params_.total_elements(); }
  std::string count_table() const;
  std::map<std::string, Tensor<T>*> state_tensors();

 private:
  ClassifierSpec spec_;
  ParameterSet<T> params_;
  std::vector<Parameter<T>*> conv_w_;
  Parameter<T>* fc1_w_ = nullptr;
  Parameter<T>* fc1_b_ = nullptr;
  Parameter<T>* fc2_w_ = nullptr;
  Parameter<T>* fc2_b_ = nullptr;
};

}  // namespace mammoseg
