#pragma once

#include <optional>
#include <vector>

#include "mammoseg/rng.hpp"
#include "mammoseg/tape.hpp"

namespace mammoseg {

enum class Act { relu, leaky_relu, tanh, sigmoid, softmax_rows };

/// Per-channel running statistics owned by a batchnorm layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;

  explicit BatchNormStats(std::int64_t channels)
      : mean(std::vector<std::int64_t>{channels}), var(std::vector<std::int64_t>{channels}) {
    var.fill(T(1));
  }
};

// Convolution family. Weights are (out_ch, in_ch, k, k) for conv2d and
// (in_ch, out_ch, k, k) for conv_transpose2d, which makes conv_transpose2d
// the exact adjoint of conv2d over the same weight storage.
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::optional<Var> b, int stride, int padding);

template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var x, Var w, std::optional<Var> b, int stride, int padding);

template <typename T>
Var batchnorm2d(Tape<T>& tape, Var x, Var gamma, Var beta, bool train,
                BatchNormStats<T>& stats, T eps, T momentum);

template <typename T>
Var activation(Tape<T>& tape, Var x, Act kind, T leak_slope = T(0.2));

// Gradient is routed to the first maximal element in row-major window order.
template <typename T>
Var maxpool2d(Tape<T>& tape, Var x, int k, int stride);

// Inverted scaling: survivors are multiplied by 1/(1-p). Draw order is the
// element order, one uniform per element, taken from the caller's stream.
template <typename T>
Var dropout(Tape<T>& tape, Var x, T p, Rng& rng, bool active);

template <typename T>
Var dense(Tape<T>& tape, Var x, Var w, Var b);

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b);

template <typename T>
Var flatten2(Tape<T>& tape, Var x);

template <typename T>
Var affine(Tape<T>& tape, Var x, T scale, T shift);

template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b);

template <typename T>
Var sum(Tape<T>& tape, Var x);

template <typename T>
Var mean(Tape<T>& tape, Var x);

// Scalar ratio a/b of two one-element tensors.
template <typename T>
Var s_div(Tape<T>& tape, Var a, Var b);

// -mean(log(x + eps)), the guarded adversarial log term.
template <typename T>
Var neg_mean_log(Tape<T>& tape, Var x, T eps);

// mean |a - b| with sign(0) = 0 in the backward pass.
template <typename T>
Var mean_abs_diff(Tape<T>& tape, Var a, Var b);

// mean over rows of -w[label] * log(prob[label] + eps).
template <typename T>
Var weighted_nll(Tape<T>& tape, Var probs, const std::vector<int>& labels,
                 const std::vector<T>& class_weights, T eps);

// 1 - 2*sum(y.g) / (sum(y) + sum(g) + eps); 0 when both masks are empty.
template <typename T>
Var dice_loss(Tape<T>& tape, Var target, Var pred, T eps);

}  // namespace mammoseg
