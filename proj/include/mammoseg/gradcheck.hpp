#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mammoseg/ops.hpp"

namespace mammoseg {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 1e-4;
  bool pass() const { return max_rel_err <= tolerance; }
};

/// Rebuilds the loss on a fresh tape; must be deterministic across calls.
using LossBuilder = std::function<Var(Tape<double>&)>;

/// Max relative error between reverse-mode and central-difference gradients
/// over every element of every parameter. h is the half step.
double gradcheck_max_rel_error(const std::vector<Parameter<double>*>& params,
                               const LossBuilder& build, double h = 1e-4);

/// Central-difference sweep of every primitive layer kind on small tensors.
std::vector<GradCheckReport> layer_gradcheck_suite(int seeds);

/// Full generator objective (adversarial + weighted dice) on a reduced
/// generator/discriminator pair, 16x16 input, 64-bit.
GradCheckReport composite_generator_gradcheck();

/// Weighted cross-entropy through a reduced classifier, 16x16 input, 64-bit.
GradCheckReport classifier_gradcheck();

}  // namespace mammoseg
