// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mlnet/tensor.hpp"

// Dynamic reverse-mode autodiff over dense tensors.
//
// A Graph is a tape: every op appends one node holding its forward value and
// a closure that pushes the node's gradient into its inputs. backward() walks
// the tape in reverse, which is a reverse topological order by construction.
// A graph belongs to one thread.
namespace mlnet::ad {

template <class Real>
class Graph;

template <class Real>
struct Var {
  Graph<Real>* graph = nullptr;
  std::size_t id = 0;

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const Real> value() const;
  /// Empty when no gradient reached this node.
  std::span<const Real> grad() const;
  Tensor<Real> tensor() const;
};

template <class Real>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  /// record=false builds no backward closures (inference mode).
  explicit Graph(bool record = true) : record_(record) { nodes_.reserve(512); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<Real> constant(Tensor<Real> t);
  /// Differentiable input (a parameter). Its gradient persists across
  /// backward() calls until zero_grads().
  Var<Real> leaf(Tensor<Real> t);
  /// Like leaf() but reads `values` in place; the storage must outlive the graph.
  Var<Real> leaf_view(Shape shape, std::span<const Real> values);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  void backward(Var<Real> loss);
  void zero_grads();

  const Shape& shape(std::size_t id) const { return nodes_[id].shape; }
  std::span<const Real> value(std::size_t id) const { return nodes_[id].view; }
  std::span<const Real> grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const char* op_name(std::size_t id) const { return nodes_[id].op; }

  /// Gradient buffer of `id`, allocated (zeroed) on first use. For backward rules.
  std::span<Real> grad_mut(std::size_t id);

  /// Appends a node. Throws NumericError if `value` holds NaN/Inf. The
  /// backward rule (a callable, or nullptr) is kept only while recording.
  template <class Backward>
  Var<Real> push(const char* op, Shape shape, std::vector<Real> value, std::span<const std::size_t> inputs,
                 Backward&& backward);

 private:
  struct Node {
    const char* op = "";
    Shape shape;
    std::vector<Real> value;      // empty for borrowed leaves
    std::span<const Real> view;  // always the node's values
    std::vector<Real> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
  };

  bool record_;
  std::vector<Node> nodes_;
};

enum class Trans { No, Yes };

// Operation set. Binary elementwise ops broadcast when one operand has a
// single element, when its shape is a suffix of the other's (repeat over
// leading axes), or a prefix (repeat over trailing axes). A suffix wins when
// both readings fit, so prefix broadcasts should spell the trailing axes as
// 1s ([T, 1] against [T, n]), which is never ambiguous.

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b, Trans ta = Trans::No, Trans tb = Trans::No);
template <class Real>
Var<Real> transpose(Var<Real> a);

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b);
template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b);
template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b);
template <class Real>
Var<Real> div(Var<Real> a, Var<Real> b);

template <class Real>
Var<Real> scale(Var<Real> a, double s);
template <class Real>
Var<Real> add_scalar(Var<Real> a, double s);

template <class Real>
Var<Real> tanh(Var<Real> a);
template <class Real>
Var<Real> sigmoid(Var<Real> a);
template <class Real>
Var<Real> leaky_relu(Var<Real> a, double slope = 0.01);
template <class Real>
Var<Real> log(Var<Real> a);
/// Gradient passes only where lo <= a <= hi.
template <class Real>
Var<Real> clamp(Var<Real> a, double lo, double hi);

/// Sum of every element; shape [] (a scalar).
template <class Real>
Var<Real> sum(Var<Real> a);
template <class Real>
Var<Real> sum_axis(Var<Real> a, std::size_t axis);
template <class Real>
Var<Real> mean_axis(Var<Real> a, std::size_t axis);
/// Backward routes to the first maximal element along `axis`.
template <class Real>
Var<Real> max_axis(Var<Real> a, std::size_t axis);

template <class Real>
Var<Real> concat(std::span<const Var<Real>> parts, std::size_t axis);
template <class Real>
Var<Real> slice(Var<Real> a, std::size_t axis, std::size_t begin, std::size_t end);
template <class Real>
Var<Real> reshape(Var<Real> a, Shape shape);

/// Fused LSTM cell. `pre` is [N, 4H] with input, forget, candidate and output
/// pre-activations; `c_prev` is [N, H], or null for a zero state (the forget
/// gate then drops out). Returns [N, 2H] = [h | c].
template <class Real>
Var<Real> lstm_cell(Var<Real> pre, const Var<Real>* c_prev);

template <class Real>
Var<Real> operator+(Var<Real> a, Var<Real> b) { return add(a, b); }
template <class Real>
Var<Real> operator-(Var<Real> a, Var<Real> b) { return sub(a, b); }
template <class Real>
Var<Real> operator*(Var<Real> a, Var<Real> b) { return mul(a, b); }

}  // namespace mlnet::ad
