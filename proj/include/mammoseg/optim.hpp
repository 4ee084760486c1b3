#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mammoseg/tape.hpp"

namespace mammoseg {

enum class OptimKind { adam, rmsprop_momentum };

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct RmsPropConfig {
  double lr = 1e-3;
  double decay = 0.9;     // squared-average decay
  double momentum = 0.9;  // update buffer decay
  double eps = 1e-8;
};

/// Adam (bias-corrected) or RMSProp-with-momentum over a fixed parameter set.
/// Gradients are read, never modified; the caller zeroes them between steps.
template <typename T>
class Optimizer {
 public:
  static Optimizer adam(std::vector<Parameter<T>*> params, const AdamConfig& cfg);
  static Optimizer rmsprop(std::vector<Parameter<T>*> params, const RmsPropConfig& cfg);

  void step();

  OptimKind kind() const { return kind_; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

  // Moment buffers exposed for checkpointing, keyed "<param>.<slot>" where
  // slot is m/v (adam) or sq/buf (rmsprop).
  void visit_state(const std::function<void(const std::string&, Tensor<T>&)>& fn);

 private:
  Optimizer() = default;

  OptimKind kind_ = OptimKind::adam;
  AdamConfig adam_{};
  RmsPropConfig rms_{};
  std::int64_t t_ = 0;
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> slot0_;  // m or sq
  std::vector<Tensor<T>> slot1_;  // v or buf
};

}  // namespace mammoseg
