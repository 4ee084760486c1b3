#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mammoseg/tensor.hpp"

namespace mammoseg {

/// Trainable tensor with a persistent gradient buffer of identical shape.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// Named parameters of one network, in registration order. Names are unique.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> init) {
    if (index_.count(name)) throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter<T>>(name, std::move(init)));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  Parameter<T>& at(const std::string& name) {
    Parameter<T>* p = find(name);
    if (!p) throw ContractError("unknown parameter: " + name);
    return *p;
  }

  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t count() const { return params_.size(); }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto& p : params_) p->grad.zero();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Records primitive operations of one forward pass in topological order;
/// a backward sweep replays them in reverse and accumulates dloss/dparam
/// into each reachable Parameter::grad (+=, so repeated sweeps add up).
/// Nodes live in a deque, so value()/grad() references stay valid while
/// further operations are recorded.
template <typename T>
class Tape {
 public:
  // Tracked leaf whose gradient lands in the parameter.
  Var leaf(Parameter<T>& p) {
    nodes_.push_back(Node{p.value, Tensor<T>(), &p, true});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  // Untracked constant input (no gradient flows into it).
  Var input(Tensor<T> v) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), nullptr, false});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  // Fresh op output. Callers record a matching backward closure when
  // needs_grad is true.
  Var node(Tensor<T> v, bool needs_grad) {
    nodes_.push_back(Node{std::move(v), Tensor<T>(), nullptr, needs_grad});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  // Copy of a value with the gradient path severed.
  Var detach(Var x) { return input(value(x)); }

  const Tensor<T>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  Tensor<T>& grad(Var v) { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  void record(std::function<void(Tape&)> back) { ops_.push_back(std::move(back)); }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss) {
    if (!loss.valid() || value(loss).numel() != 1)
      throw ContractError("backward requires a scalar loss");
    for (Node& n : nodes_) {
      if (!n.needs_grad) continue;
      if (n.grad.defined())
        n.grad.zero();
      else
        n.grad = Tensor<T>(n.value.shape());
    }
    if (!needs_grad(loss)) return;  // constant loss: nothing reachable
    grad(loss)[0] = T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)(*this);
    for (Node& n : nodes_) {
      if (!n.param) continue;
      const Tensor<T>& g = n.grad;
      for (std::int64_t i = 0; i < g.numel(); ++i) n.param->grad[i] += g[i];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Parameter<T>* param;
    bool needs_grad;
  };

  std::deque<Node> nodes_;
  std::vector<std::function<void(Tape&)>> ops_;
};

}  // namespace mammoseg
