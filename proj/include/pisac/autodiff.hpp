#pragma once

// Reverse-mode differentiation over dense row-major real tensors.
//
// Evaluation is eager: every primitive computes its value when it is
// recorded on a Tape, and the tape order is a topological order of the
// graph. Tape::backward() walks the tape once in reverse, so accumulation
// order (and therefore every gradient bit) is fixed by construction order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>

#include "pisac/errors.hpp"
#include "pisac/widened.hpp"

namespace pisac::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream o;
  o << "[";
  for (std::size_t i = 0; i < s.size(); ++i) o << (i ? "," : "") << s[i];
  o << "]";
  return o.str();
}

struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() : values(1, 0.0) {}
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), values(numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != numel(shape)) {
      throw DimensionError("Tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
  }

  static Tensor scalar(double x) { return Tensor(Shape{}, std::vector<double>{x}); }

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  double item() const {
    if (values.size() != 1) throw DimensionError("Tensor::item on " + shape_str(shape));
    return values[0];
  }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
  }
};

class Tape;

/// Handle to a node on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  const Tensor& grad() const;
  double item() const { return value().item(); }
  Tape* tape_ptr() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Called with the gradient of the node's output; accumulates into parents.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, false, nullptr, "leaf"});
    return {this, nodes_.size() - 1};
  }
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(double x) { return constant(Tensor::scalar(x)); }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const char* tag(std::size_t id) const { return nodes_.at(id).tag; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient of the last backward() root with respect to node `id`
  /// (zeros if no path reached it).
  const Tensor& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape, 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Mutable gradient buffer of `id`, zero-initialized on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
      n.grad = Tensor(n.value.shape, 0.0);
      n.has_grad = true;
    }
    return n.grad;
  }

  /// Records an operation output. `parents` decides whether the node needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn, const char* tag) {
    bool rg = false;
    for (const Var& p : parents) {
      if (p.tape_ptr() != this) throw std::logic_error("Tape::record: parent from a different tape");
      rg = rg || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), rg, std::move(fn), tag);
  }
  Var record(Tensor value, const std::vector<Var>& parents, BackwardFn fn, const char* tag) {
    bool rg = false;
    for (const Var& p : parents) {
      if (p.tape_ptr() != this) throw std::logic_error("Tape::record: parent from a different tape");
      rg = rg || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), rg, std::move(fn), tag);
  }

  /// Reverse sweep from a scalar root. Gradients from a previous sweep are cleared.
  void backward(const Var& root) {
    if (root.tape_ptr() != this) throw std::logic_error("Tape::backward: root from a different tape");
    if (value(root.id()).size() != 1) {
      throw DimensionError("backward: root must be a scalar, got " + shape_str(value(root.id()).shape));
    }
    for (auto& n : nodes_) n.has_grad = false;
    grad_buffer(root.id()).values[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.requires_grad || !n.backward) continue;
      // The closure only touches parents (lower ids), so `n.grad` stays valid.
      n.backward(*this, n.grad);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
    const char* tag = "";
  };

  Var push(Tensor value, bool rg, BackwardFn fn, const char* tag) {
    nodes_.push_back(Node{std::move(value), {}, rg, false, rg ? std::move(fn) : BackwardFn{}, tag});
    return {this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }

}  // namespace pisac::ad
