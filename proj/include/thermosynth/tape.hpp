#pragma once

#include "thermosynth/tensor.hpp"

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace thermosynth {

/// Learnable tensor with its accumulated gradient.
template <typename Scalar>
struct Parameter {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = true;
};

/// Named, ordered collection of parameters. Ordering is lexicographic by name,
/// which fixes serialization and optimizer iteration order.
template <typename Scalar>
class ParameterSet {
 public:
  Parameter<Scalar>& add(const std::string& name, Tensor<Scalar> value) {
    auto [it, inserted] = params_.try_emplace(name);
    if (!inserted) throw std::logic_error("duplicate parameter name: " + name);
    it->second.grad = Tensor<Scalar>(value.shape());
    it->second.value = std::move(value);
    return it->second;
  }

  Parameter<Scalar>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  [[nodiscard]] const Parameter<Scalar>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }
  [[nodiscard]] bool contains(const std::string& name) const { return params_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  [[nodiscard]] auto begin() const { return params_.begin(); }
  [[nodiscard]] auto end() const { return params_.end(); }
  [[nodiscard]] std::size_t size() const { return params_.size(); }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.grad.set_zero();
  }
  void set_requires_grad(bool on) {
    for (auto& [name, p] : params_) p.requires_grad = on;
  }

  /// Copy values from `other`, which must hold exactly the same names and shapes.
  template <typename Other>
  void assign_values(const ParameterSet<Other>& other) {
    if (other.size() != size()) throw ShapeError("parameter set size mismatch");
    for (auto& [name, p] : params_) {
      const auto& src = other.at(name);
      require_shape(src.value.shape(), p.value.shape(), name.c_str());
      p.value = src.value.template cast<Scalar>();
    }
  }

 private:
  std::map<std::string, Parameter<Scalar>> params_;
};

/// Reverse-mode autodiff tape. Each recorded node owns its value; backward
/// closures read input values through the tape and accumulate into input
/// gradients. Parameter nodes accumulate directly into Parameter::grad.
template <typename Scalar>
class Tape {
 public:
  struct Var {
    int id = -1;
  };
  using BackwardFn = std::function<void(Tape&, const Tensor<Scalar>&)>;

  Var constant(Tensor<Scalar> value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf whose gradient is retained (e.g. input images for gradient penalties).
  Var input(Tensor<Scalar> value) { return push(std::move(value), true, nullptr, {}); }

  Var parameter(Parameter<Scalar>& p) {
    Node node;
    node.value_ref = &p.value;
    node.requires_grad = p.requires_grad && parameter_gradients_;
    if (node.requires_grad) node.param = &p;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Read-only binding; never receives gradients.
  Var parameter(const Parameter<Scalar>& p) {
    Node node;
    node.value_ref = &p.value;
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Record an op result. `fn` runs only when some input requires a gradient.
  Var record(Tensor<Scalar> value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_[v.id].requires_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr, {});
  }

  [[nodiscard]] const Tensor<Scalar>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.value_ref ? *n.value_ref : n.value;
  }
  [[nodiscard]] const Shape& shape(Var v) const { return value(v).shape(); }
  [[nodiscard]] bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Gradient buffer of `v`, allocated on first access.
  Tensor<Scalar>& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.param) return n.param->grad;
    if (n.grad.empty()) n.grad = Tensor<Scalar>(value(v).shape());
    return n.grad;
  }

  void backward(Var out) {
    Tensor<Scalar> seed(shape(out), Scalar(1));
    backward(out, seed);
  }

  void backward(Var out, const Tensor<Scalar>& seed) {
    require_shape(seed.shape(), shape(out), "backward seed");
    if (!nodes_[out.id].requires_grad) return;
    grad(out).vec() += seed.vec();
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  /// When off, parameters bind read-only (e.g. for input-gradient passes).
  void set_parameter_gradients(bool on) { parameter_gradients_ = on; }

  [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<Scalar> value;
    const Tensor<Scalar>* value_ref = nullptr;
    Tensor<Scalar> grad;
    bool requires_grad = false;
    Parameter<Scalar>* param = nullptr;
    BackwardFn backward;
  };

  Var push(Tensor<Scalar> value, bool requires_grad, BackwardFn fn, Node&& base) {
    Node node = std::move(base);
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool parameter_gradients_ = true;
};

template <typename Scalar>
using Var = typename Tape<Scalar>::Var;

}  // namespace thermosynth
