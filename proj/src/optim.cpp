#include "mammoseg/optim.hpp"

#include <cmath>

namespace mammoseg {

template <typename T>
Optimizer<T> Optimizer<T>::adam(std::vector<Parameter<T>*> params, const AdamConfig& cfg) {
  Optimizer<T> o;
  o.kind_ = OptimKind::adam;
  o.adam_ = cfg;
  o.params_ = std::move(params);
  for (Parameter<T>* p : o.params_) {
    o.slot0_.emplace_back(p->value.shape());
    o.slot1_.emplace_back(p->value.shape());
  }
  return o;
}

template <typename T>
Optimizer<T> Optimizer<T>::rmsprop(std::vector<Parameter<T>*> params, const RmsPropConfig& cfg) {
  Optimizer<T> o;
  o.kind_ = OptimKind::rmsprop_momentum;
  o.rms_ = cfg;
  o.params_ = std::move(params);
  for (Parameter<T>* p : o.params_) {
    o.slot0_.emplace_back(p->value.shape());
    o.slot1_.emplace_back(p->value.shape());
  }
  return o;
}

template <typename T>
void Optimizer<T>::step() {
  ++t_;
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    Parameter<T>& p = *params_[pi];
    Tensor<T>& s0 = slot0_[pi];
    Tensor<T>& s1 = slot1_[pi];
    if (!s0.same_shape(p.value))
      throw ContractError("optimizer moment shape mismatch for " + p.name);
    const std::int64_t n = p.value.numel();
    if (kind_ == OptimKind::adam) {
      const T b1 = T(adam_.beta1), b2 = T(adam_.beta2), eps = T(adam_.eps);
      const T corr1 = T(1) - T(std::pow(adam_.beta1, double(t_)));
      const T corr2 = T(1) - T(std::pow(adam_.beta2, double(t_)));
      const T lr = T(adam_.lr);
      for (std::int64_t i = 0; i < n; ++i) {
        const T g = p.grad[i];
        s0[i] = b1 * s0[i] + (T(1) - b1) * g;
        s1[i] = b2 * s1[i] + (T(1) - b2) * g * g;
        const T mhat = s0[i] / corr1;
        const T vhat = s1[i] / corr2;
        p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    } else {
      const T a = T(rms_.decay), mom = T(rms_.momentum), eps = T(rms_.eps), lr = T(rms_.lr);
      for (std::int64_t i = 0; i < n; ++i) {
        const T g = p.grad[i];
        s0[i] = a * s0[i] + (T(1) - a) * g * g;
        s1[i] = mom * s1[i] + g / (std::sqrt(s0[i]) + eps);
        p.value[i] -= lr * s1[i];
      }
    }
  }
}

template <typename T>
void Optimizer<T>::visit_state(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  const char* n0 = kind_ == OptimKind::adam ? ".m" : ".sq";
  const char* n1 = kind_ == OptimKind::adam ? ".v" : ".buf";
  for (std::size_t pi = 0; pi < params_.size(); ++pi) {
    fn(params_[pi]->name + n0, slot0_[pi]);
    fn(params_[pi]->name + n1, slot1_[pi]);
  }
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace mammoseg
