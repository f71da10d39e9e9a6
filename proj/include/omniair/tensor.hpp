#pragma once

// Dense f64 tensors and a tape-based reverse-mode differentiation core.
//
// A Tape records every operation applied to Var handles. Calling
// Tape::backward on a scalar Var walks the tape in reverse and accumulates
// exact analytic gradients into every node that requires one. Ops follow
// numpy broadcasting rules where noted.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace omniair {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the gradient of the loss w.r.t. this node's output and
  /// accumulates into parent gradients via Tape::grad_target.
  using BackwardFn = std::function<void(Tape&, const std::vector<double>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Appends a node computed from `parents`. The backward function is kept
  /// only when some parent requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient buffer of `v`, allocated on first use; nullptr when `v` does
  /// not require a gradient.
  std::vector<double>* grad_target(Var v);

  /// Seeds d(loss)/d(loss) = 1 and runs the reverse sweep. `loss` must have
  /// exactly one element.
  void backward(Var loss);

  /// Gradient accumulated for `v` (zeros when nothing flowed into it).
  Tensor grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// Elementwise binary ops with numpy broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var scale(Var a, double s);
Var shift(Var a, double s);

/// 2-D matrix product (m,k) x (k,n).
Var matmul(Var a, Var b);

Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(Var a, Shape shape);

// Reductions keep the reduced axis with extent 1.
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
Var sum_all(Var a);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope = 0.1);
Var abs(Var a);
Var softmax(Var a, std::size_t axis);

/// Row gather along axis 0: out[r] = a[index[r]].
Var gather(Var a, std::span<const std::size_t> index);
/// Scatter-add along axis 0: out[segment[r]] += a[r], out has `segments` rows.
Var segment_sum(Var a, std::span<const std::size_t> segment, std::size_t segments);

/// Same value, no gradient flows back through it.
Var detach(Var a);

}  // namespace omniair
