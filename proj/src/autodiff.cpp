// SPDX-License-Identifier: Apache-2.0
#include "mlnet/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <type_traits>

#include "mlnet/error.hpp"
#include "mlnet/kernels.hpp"

namespace mlnet::ad {

// ---------------------------------------------------------------------------
// Var / Graph

template <class Real>
const Shape& Var<Real>::shape() const {
  return graph->shape(id);
}

template <class Real>
std::size_t Var<Real>::size() const {
  return graph->value(id).size();
}

template <class Real>
std::span<const Real> Var<Real>::value() const {
  return graph->value(id);
}

template <class Real>
std::span<const Real> Var<Real>::grad() const {
  return graph->grad(id);
}

template <class Real>
Tensor<Real> Var<Real>::tensor() const {
  auto v = value();
  return Tensor<Real>(shape(), std::vector<Real>(v.begin(), v.end()));
}

template <class Real>
template <class Backward>
Var<Real> Graph<Real>::push(const char* op, Shape shape, std::vector<Real> value, std::span<const std::size_t> inputs,
                            Backward&& backward) {
  if (value.size() != numel(shape)) {
    throw ContractError(std::string(op) + ": value size does not match shape " + shape_str(shape));
  }
  if (!all_finite<Real>(value)) {
    throw NumericError(std::string(op) + ": non-finite value in forward pass (node " +
                       std::to_string(nodes_.size()) + ", shape " + shape_str(shape) + ")");
  }
  Node node;
  node.op = op;
  node.shape = std::move(shape);
  node.value = std::move(value);
  node.view = node.value;  // the heap buffer survives moves of the node
  if constexpr (!std::is_same_v<std::decay_t<Backward>, std::nullptr_t>) {
    if (record_) {
      node.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                       [this](std::size_t i) { return nodes_[i].requires_grad; });
      if (node.requires_grad) {
        node.inputs.assign(inputs.begin(), inputs.end());
        node.backward = BackwardFn(std::forward<Backward>(backward));
      }
    }
  }
  nodes_.push_back(std::move(node));
  return Var<Real>{this, nodes_.size() - 1};
}

template <class Real>
Var<Real> Graph<Real>::constant(Tensor<Real> t) {
  return push("constant", std::move(t.shape), std::move(t.data), {}, nullptr);
}

template <class Real>
Var<Real> Graph<Real>::leaf(Tensor<Real> t) {
  auto v = push("leaf", std::move(t.shape), std::move(t.data), {}, nullptr);
  nodes_[v.id].leaf = true;
  nodes_[v.id].requires_grad = record_;
  return v;
}

template <class Real>
Var<Real> Graph<Real>::leaf_view(Shape shape, std::span<const Real> values) {
  if (values.size() != numel(shape)) {
    throw ContractError("leaf: value size does not match shape " + shape_str(shape));
  }
  if (!all_finite<Real>(values)) throw NumericError("leaf: non-finite parameter value, shape " + shape_str(shape));
  Node node;
  node.op = "leaf";
  node.shape = std::move(shape);
  node.view = values;
  node.leaf = true;
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  return Var<Real>{this, nodes_.size() - 1};
}

template <class Real>
std::span<Real> Graph<Real>::grad_mut(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.view.size(), Real(0));
  return n.grad;
}

template <class Real>
void Graph<Real>::backward(Var<Real> loss) {
  if (loss.graph != this) throw ContractError("backward: loss belongs to another graph");
  if (nodes_[loss.id].view.size() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_str(nodes_[loss.id].shape));
  }
  if (!record_) throw ContractError("backward: graph was built without recording");
  for (auto& n : nodes_) {
    if (!n.leaf) n.grad.clear();
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_mut(loss.id)[0] += Real(1);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
}

template <class Real>
void Graph<Real>::zero_grads() {
  for (auto& n : nodes_) {
    if (n.leaf) std::fill(n.grad.begin(), n.grad.end(), Real(0));
  }
}

// ---------------------------------------------------------------------------
// Helpers

namespace {

template <class Real>
Graph<Real>& graph_of(Var<Real> a) {
  if (!a.graph) throw ContractError("op applied to a null Var");
  return *a.graph;
}

template <class Real>
void same_graph(Var<Real> a, Var<Real> b, const char* op) {
  if (a.graph != b.graph) throw ContractError(std::string(op) + ": operands live in different graphs");
}

std::string shapes_msg(const char* op, const Shape& a, const Shape& b) {
  return std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

bool is_prefix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.begin());
}

// Same rank, trailing axes of size 1, leading axes equal: [T, 1] against
// [T, n]. Unlike a bare prefix this cannot be mistaken for a suffix.
bool is_keepdim_prefix(const Shape& small, const Shape& big) {
  if (small.size() != big.size() || small.empty() || small.back() != 1) return false;
  std::size_t k = small.size();
  while (k > 0 && small[k - 1] == 1) --k;
  return std::equal(small.begin(), small.begin() + static_cast<std::ptrdiff_t>(k), big.begin());
}

// How an operand maps onto the output of a broadcasting binary op.
// Output element (i, j) with i < outer, j < inner reads operand element:
//   Full -> i*inner + j,  Row -> j (suffix broadcast),  Col -> i (prefix broadcast).
enum class Map { Full, Row, Col };

struct BroadcastMap {
  std::size_t outer = 1;
  std::size_t inner = 1;
  Map a = Map::Full;
  Map b = Map::Full;
};

struct Broadcast {
  Shape out;
  BroadcastMap map;
};

Broadcast plan_broadcast(const char* op, const Shape& sa, const Shape& sb) {
  Broadcast p;
  const std::size_t na = numel(sa);
  const std::size_t nb = numel(sb);
  if (sa == sb) {
    p.out = sa;
    p.map.inner = na;
    return p;
  }
  const bool a_big = na >= nb;
  const Shape& big = a_big ? sa : sb;
  const Shape& small = a_big ? sb : sa;
  const std::size_t ns = a_big ? nb : na;
  Map m;
  if (ns > 1 && is_keepdim_prefix(small, big)) {
    m = Map::Col;
    p.map.outer = ns;
    p.map.inner = numel(big) / ns;
  } else if (ns == 1 || is_suffix(small, big)) {
    m = Map::Row;
    p.map.inner = ns;
    p.map.outer = numel(big) / ns;
  } else if (is_prefix(small, big)) {
    m = Map::Col;
    p.map.outer = ns;
    p.map.inner = numel(big) / ns;
  } else {
    throw ContractError(shapes_msg(op, sa, sb));
  }
  p.out = big;
  (a_big ? p.map.b : p.map.a) = m;
  return p;
}

inline std::size_t map_index(Map m, std::size_t i, std::size_t j, std::size_t inner) {
  switch (m) {
    case Map::Row: return j;
    case Map::Col: return i;
    case Map::Full: break;
  }
  return i * inner + j;
}

// Binary elementwise op with broadcasting. `fwd(x, y)` gives the value;
// `dx(x, y, out)` / `dy(x, y, out)` the local partials.
template <class Real, class F, class DX, class DY>
Var<Real> binary(const char* op, Var<Real> a, Var<Real> b, F fwd, DX dx, DY dy) {
  same_graph(a, b, op);
  auto& g = graph_of(a);
  Broadcast plan = plan_broadcast(op, a.shape(), b.shape());
  const BroadcastMap p = plan.map;
  auto va = a.value();
  auto vb = b.value();
  std::vector<Real> out(numel(plan.out));
  for (std::size_t i = 0; i < p.outer; ++i) {
    for (std::size_t j = 0; j < p.inner; ++j) {
      out[i * p.inner + j] = fwd(va[map_index(p.a, i, j, p.inner)], vb[map_index(p.b, i, j, p.inner)]);
    }
  }
  const std::size_t ia = a.id;
  const std::size_t ib = b.id;
  return g.push(op, std::move(plan.out), std::move(out), std::array{ia, ib}, [p, ia, ib, dx, dy](Graph<Real>& g, std::size_t self) {
    auto gy = g.grad(self);
    auto y = g.value(self);
    auto va = g.value(ia);
    auto vb = g.value(ib);
    const bool need_a = g.requires_grad(ia);
    const bool need_b = g.requires_grad(ib);
    std::span<Real> ga = need_a ? g.grad_mut(ia) : std::span<Real>{};
    std::span<Real> gb = need_b ? g.grad_mut(ib) : std::span<Real>{};
    for (std::size_t i = 0; i < p.outer; ++i) {
      for (std::size_t j = 0; j < p.inner; ++j) {
        const std::size_t e = i * p.inner + j;
        const std::size_t xa = map_index(p.a, i, j, p.inner);
        const std::size_t xb = map_index(p.b, i, j, p.inner);
        if (need_a) ga[xa] += gy[e] * dx(va[xa], vb[xb], y[e]);
        if (need_b) gb[xb] += gy[e] * dy(va[xa], vb[xb], y[e]);
      }
    }
  });
}

// Unary elementwise op; `deriv(x, y)` is dy/dx.
template <class Real, class F, class D>
Var<Real> unary(const char* op, Var<Real> a, F fwd, D deriv) {
  auto& g = graph_of(a);
  auto va = a.value();
  std::vector<Real> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  const std::size_t ia = a.id;
  return g.push(op, a.shape(), std::move(out), std::array{ia}, [ia, deriv](Graph<Real>& g, std::size_t self) {
    auto gy = g.grad(self);
    auto y = g.value(self);
    auto x = g.value(ia);
    auto gx = g.grad_mut(ia);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * deriv(x[i], y[i]);
  });
}

// Splits a shape around `axis` into (outer, n, inner).
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ContractError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.n = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out = s;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

template <class Real>
Real stable_sigmoid(Real x) {
  if (x >= 0) return Real(1) / (Real(1) + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real(1) + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Linear algebra

template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b, Trans ta, Trans tb) {
  same_graph(a, b, "matmul");
  auto& g = graph_of(a);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2) throw ContractError(shapes_msg("matmul (rank 2 required)", sa, sb));
  if (ta == Trans::Yes && tb == Trans::Yes) throw ContractError("matmul: A^T * B^T is not supported");
  const bool at = ta == Trans::Yes;
  const bool bt = tb == Trans::Yes;
  const std::size_t m = at ? sa[1] : sa[0];
  const std::size_t k = at ? sa[0] : sa[1];
  const std::size_t kb = bt ? sb[1] : sb[0];
  const std::size_t n = bt ? sb[0] : sb[1];
  if (k != kb) throw ContractError(shapes_msg("matmul", sa, sb));

  std::vector<Real> out(m * n, Real(0));
  const kernels::GemmDims d{m, n, k};
  if (at) {
    kernels::gemm_tn(d, a.value().data(), b.value().data(), out.data());
  } else if (bt) {
    kernels::gemm_nt(d, a.value().data(), b.value().data(), out.data());
  } else {
    kernels::gemm_nn(d, a.value().data(), b.value().data(), out.data());
  }

  const std::size_t ia = a.id;
  const std::size_t ib = b.id;
  return g.push("matmul", {m, n}, std::move(out), std::array{ia, ib},
                [ia, ib, m, n, k, at, bt](Graph<Real>& g, std::size_t self) {
                  const Real* gc = g.grad(self).data();
                  const Real* va = g.value(ia).data();
                  const Real* vb = g.value(ib).data();
                  if (g.requires_grad(ia)) {
                    Real* ga = g.grad_mut(ia).data();
                    if (at) {
                      // A is [k,m]: dA = B * dC^T
                      kernels::gemm_nt(kernels::GemmDims{k, m, n}, vb, gc, ga);
                    } else if (bt) {
                      // B is [n,k]: dA = dC * B
                      kernels::gemm_nn(kernels::GemmDims{m, k, n}, gc, vb, ga);
                    } else {
                      // dA = dC * B^T
                      kernels::gemm_nt(kernels::GemmDims{m, k, n}, gc, vb, ga);
                    }
                  }
                  if (g.requires_grad(ib)) {
                    Real* gb = g.grad_mut(ib).data();
                    if (at) {
                      // dB = A * dC, A is [k,m]
                      kernels::gemm_nn(kernels::GemmDims{k, n, m}, va, gc, gb);
                    } else if (bt) {
                      // dB[n,k] = dC^T * A
                      kernels::gemm_tn(kernels::GemmDims{n, k, m}, gc, va, gb);
                    } else {
                      // dB[k,n] = A^T * dC
                      kernels::gemm_tn(kernels::GemmDims{k, n, m}, va, gc, gb);
                    }
                  }
                });
}

template <class Real>
Var<Real> transpose(Var<Real> a) {
  auto& g = graph_of(a);
  const Shape& s = a.shape();
  if (s.size() != 2) throw ContractError("transpose: rank 2 required, got " + shape_str(s));
  const std::size_t r = s[0];
  const std::size_t c = s[1];
  auto v = a.value();
  std::vector<Real> out(v.size());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  }
  const std::size_t ia = a.id;
  return g.push("transpose", {c, r}, std::move(out), std::array{ia}, [ia, r, c](Graph<Real>& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad_mut(ia);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += gy[j * r + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  return binary<Real>(
      "add", a, b, [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real(1); },
      [](Real, Real, Real) { return Real(1); });
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  return binary<Real>(
      "sub", a, b, [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real(1); },
      [](Real, Real, Real) { return Real(-1); });
}

template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  return binary<Real>(
      "mul", a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
      [](Real x, Real, Real) { return x; });
}

template <class Real>
Var<Real> div(Var<Real> a, Var<Real> b) {
  return binary<Real>(
      "div", a, b, [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return Real(1) / y; },
      [](Real, Real y, Real out) { return -out / y; });
}

template <class Real>
Var<Real> scale(Var<Real> a, double s) {
  const Real k = static_cast<Real>(s);
  return unary<Real>("scale", a, [k](Real x) { return k * x; }, [k](Real, Real) { return k; });
}

template <class Real>
Var<Real> add_scalar(Var<Real> a, double s) {
  const Real k = static_cast<Real>(s);
  return unary<Real>("add_scalar", a, [k](Real x) { return x + k; }, [](Real, Real) { return Real(1); });
}

template <class Real>
Var<Real> tanh(Var<Real> a) {
  return unary<Real>(
      "tanh", a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return Real(1) - y * y; });
}

template <class Real>
Var<Real> sigmoid(Var<Real> a) {
  return unary<Real>(
      "sigmoid", a, [](Real x) { return stable_sigmoid(x); }, [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
Var<Real> leaky_relu(Var<Real> a, double slope) {
  const Real k = static_cast<Real>(slope);
  return unary<Real>(
      "leaky_relu", a, [k](Real x) { return x > 0 ? x : k * x; }, [k](Real x, Real) { return x > 0 ? Real(1) : k; });
}

template <class Real>
Var<Real> log(Var<Real> a) {
  return unary<Real>(
      "log", a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

template <class Real>
Var<Real> clamp(Var<Real> a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("clamp: lo > hi");
  const Real l = static_cast<Real>(lo);
  const Real h = static_cast<Real>(hi);
  return unary<Real>(
      "clamp", a, [l, h](Real x) { return std::clamp(x, l, h); },
      [l, h](Real x, Real) { return (x >= l && x <= h) ? Real(1) : Real(0); });
}

// ---------------------------------------------------------------------------
// Reductions

template <class Real>
Var<Real> sum(Var<Real> a) {
  auto& g = graph_of(a);
  Real total = 0;
  for (Real v : a.value()) total += v;
  const std::size_t ia = a.id;
  return g.push("sum", {}, {total}, std::array{ia}, [ia](Graph<Real>& g, std::size_t self) {
    const Real gy = g.grad(self)[0];
    for (auto& x : g.grad_mut(ia)) x += gy;
  });
}

template <class Real>
Var<Real> sum_axis(Var<Real> a, std::size_t axis) {
  auto& g = graph_of(a);
  const AxisSplit s = split_axis("sum_axis", a.shape(), axis);
  auto v = a.value();
  std::vector<Real> out(s.outer * s.inner, Real(0));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.n; ++i) {
      const Real* src = v.data() + (o * s.n + i) * s.inner;
      Real* dst = out.data() + o * s.inner;
      for (std::size_t j = 0; j < s.inner; ++j) dst[j] += src[j];
    }
  }
  const std::size_t ia = a.id;
  return g.push("sum_axis", drop_axis(a.shape(), axis), std::move(out), std::array{ia}, [ia, s](Graph<Real>& g, std::size_t self) {
    auto gy = g.grad(self);
    auto gx = g.grad_mut(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.n; ++i) {
        for (std::size_t j = 0; j < s.inner; ++j) gx[(o * s.n + i) * s.inner + j] += gy[o * s.inner + j];
      }
    }
  });
}

template <class Real>
Var<Real> mean_axis(Var<Real> a, std::size_t axis) {
  const std::size_t n = split_axis("mean_axis", a.shape(), axis).n;
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(n));
}

template <class Real>
Var<Real> max_axis(Var<Real> a, std::size_t axis) {
  auto& g = graph_of(a);
  const AxisSplit s = split_axis("max_axis", a.shape(), axis);
  if (s.n == 0) throw ContractError("max_axis: empty axis");
  auto v = a.value();
  std::vector<Real> out(s.outer * s.inner);
  std::vector<std::size_t> arg(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.inner; ++j) {
      std::size_t best = 0;
      Real bv = v[o * s.n * s.inner + j];
      for (std::size_t i = 1; i < s.n; ++i) {
        const Real x = v[(o * s.n + i) * s.inner + j];
        if (x > bv) {
          bv = x;
          best = i;
        }
      }
      out[o * s.inner + j] = bv;
      arg[o * s.inner + j] = (o * s.n + best) * s.inner + j;
    }
  }
  const std::size_t ia = a.id;
  return g.push("max_axis", drop_axis(a.shape(), axis), std::move(out), std::array{ia},
                [ia, arg = std::move(arg)](Graph<Real>& g, std::size_t self) {
                  auto gy = g.grad(self);
                  auto gx = g.grad_mut(ia);
                  for (std::size_t e = 0; e < gy.size(); ++e) gx[arg[e]] += gy[e];
                });
}

// ---------------------------------------------------------------------------
// Structural

template <class Real>
Var<Real> concat(std::span<const Var<Real>> parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  auto& g = graph_of(parts[0]);
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ContractError("concat: axis out of range for " + shape_str(s0));
  const AxisSplit base = split_axis("concat", s0, axis);
  std::vector<std::size_t> chunk(parts.size());
  std::vector<std::size_t> ids(parts.size());
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    same_graph(parts[0], parts[p], "concat");
    const Shape& sp = parts[p].shape();
    Shape a = sp;
    Shape b = s0;
    if (a.size() != b.size()) throw ContractError(shapes_msg("concat", s0, sp));
    a[axis] = b[axis] = 0;
    if (a != b) throw ContractError(shapes_msg("concat", s0, sp));
    chunk[p] = sp[axis] * base.inner;
    ids[p] = parts[p].id;
    out_shape[axis] += sp[axis];
  }
  const std::size_t row = out_shape[axis] * base.inner;
  std::vector<Real> out(base.outer * row);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].value();
    for (std::size_t o = 0; o < base.outer; ++o) {
      std::copy_n(v.data() + o * chunk[p], chunk[p], out.data() + o * row + offset);
    }
    offset += chunk[p];
  }
  const std::size_t outer = base.outer;
  return g.push("concat", std::move(out_shape), std::move(out), ids,
                [ids, chunk, outer, row](Graph<Real>& g, std::size_t self) {
                  auto gy = g.grad(self);
                  std::size_t offset = 0;
                  for (std::size_t p = 0; p < ids.size(); ++p) {
                    if (g.requires_grad(ids[p])) {
                      auto gx = g.grad_mut(ids[p]);
                      for (std::size_t o = 0; o < outer; ++o) {
                        const Real* src = gy.data() + o * row + offset;
                        Real* dst = gx.data() + o * chunk[p];
                        for (std::size_t j = 0; j < chunk[p]; ++j) dst[j] += src[j];
                      }
                    }
                    offset += chunk[p];
                  }
                });
}

template <class Real>
Var<Real> slice(Var<Real> a, std::size_t axis, std::size_t begin, std::size_t end) {
  auto& g = graph_of(a);
  const AxisSplit s = split_axis("slice", a.shape(), axis);
  if (begin > end || end > s.n) {
    throw ContractError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                        ") out of bounds for shape " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  const std::size_t len = (end - begin) * s.inner;
  const std::size_t src_row = s.n * s.inner;
  const std::size_t start = begin * s.inner;
  auto v = a.value();
  std::vector<Real> out(s.outer * len);
  for (std::size_t o = 0; o < s.outer; ++o) std::copy_n(v.data() + o * src_row + start, len, out.data() + o * len);
  const std::size_t ia = a.id;
  const std::size_t outer = s.outer;
  return g.push("slice", std::move(out_shape), std::move(out), std::array{ia},
                [ia, outer, len, src_row, start](Graph<Real>& g, std::size_t self) {
                  auto gy = g.grad(self);
                  auto gx = g.grad_mut(ia);
                  for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t j = 0; j < len; ++j) gx[o * src_row + start + j] += gy[o * len + j];
                  }
                });
}

template <class Real>
Var<Real> reshape(Var<Real> a, Shape shape) {
  auto& g = graph_of(a);
  if (numel(shape) != a.size()) throw ContractError(shapes_msg("reshape", a.shape(), shape));
  auto v = a.value();
  const std::size_t ia = a.id;
  return g.push("reshape", std::move(shape), std::vector<Real>(v.begin(), v.end()), std::array{ia},
                [ia](Graph<Real>& g, std::size_t self) {
                  auto gy = g.grad(self);
                  auto gx = g.grad_mut(ia);
                  for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
                });
}

template <class Real>
Var<Real> lstm_cell(Var<Real> pre, const Var<Real>* c_prev) {
  auto& g = graph_of(pre);
  const auto& s = pre.shape();
  if (s.size() != 2 || s[1] % 4 != 0 || s[1] == 0) {
    throw ContractError("lstm_cell: pre-activations must be [N, 4H], got " + shape_str(s));
  }
  const std::size_t n = s[0];
  const std::size_t h = s[1] / 4;
  if (c_prev) {
    same_graph(pre, *c_prev, "lstm_cell");
    if (c_prev->shape() != Shape{n, h}) throw ContractError(shapes_msg("lstm_cell", s, c_prev->shape()));
  }
  auto a = pre.value();
  const std::span<const Real> cp = c_prev ? c_prev->value() : std::span<const Real>{};
  std::vector<Real> out(n * 2 * h);
  for (std::size_t r = 0; r < n; ++r) {
    const Real* ar = a.data() + r * 4 * h;
    Real* hr = out.data() + r * 2 * h;
    for (std::size_t j = 0; j < h; ++j) {
      const Real i = stable_sigmoid(ar[j]);
      const Real cand = std::tanh(ar[2 * h + j]);
      const Real o = stable_sigmoid(ar[3 * h + j]);
      Real c = i * cand;
      if (c_prev) {
        const Real fc = stable_sigmoid(ar[h + j]) * cp[r * h + j];
        c = c + fc;
      }
      hr[h + j] = c;
      hr[j] = o * std::tanh(c);
    }
  }
  const std::size_t ia = pre.id;
  const std::size_t ic = c_prev ? c_prev->id : ia;
  const bool has_c = c_prev != nullptr;
  const std::array<std::size_t, 2> ids{ia, ic};
  return g.push("lstm_cell", Shape{n, 2 * h}, std::move(out), std::span<const std::size_t>(ids.data(), has_c ? 2 : 1),
                [ia, ic, has_c, n, h](Graph<Real>& g, std::size_t self) {
                  auto gy = g.grad(self);
                  auto y = g.value(self);
                  auto a = g.value(ia);
                  const bool need_a = g.requires_grad(ia);
                  const bool need_c = has_c && g.requires_grad(ic);
                  std::span<Real> ga = need_a ? g.grad_mut(ia) : std::span<Real>{};
                  std::span<Real> gc = need_c ? g.grad_mut(ic) : std::span<Real>{};
                  auto cp = has_c ? g.value(ic) : std::span<const Real>{};
                  for (std::size_t r = 0; r < n; ++r) {
                    const Real* ar = a.data() + r * 4 * h;
                    for (std::size_t j = 0; j < h; ++j) {
                      const Real i = stable_sigmoid(ar[j]);
                      const Real f = stable_sigmoid(ar[h + j]);
                      const Real cand = std::tanh(ar[2 * h + j]);
                      const Real o = stable_sigmoid(ar[3 * h + j]);
                      const Real tc = std::tanh(y[r * 2 * h + h + j]);
                      const Real gh = gy[r * 2 * h + j];
                      const Real dc = gy[r * 2 * h + h + j] + gh * o * (Real(1) - tc * tc);
                      if (need_a) {
                        Real* gr = ga.data() + r * 4 * h;
                        gr[j] += dc * cand * i * (Real(1) - i);
                        if (has_c) gr[h + j] += dc * cp[r * h + j] * f * (Real(1) - f);
                        gr[2 * h + j] += dc * i * (Real(1) - cand * cand);
                        gr[3 * h + j] += gh * tc * o * (Real(1) - o);
                      }
                      if (need_c) gc[r * h + j] += dc * f;
                    }
                  }
                });
}

// ---------------------------------------------------------------------------

#define MLNET_INSTANTIATE_AD(R)                                                       \
  template struct Var<R>;                                                             \
  template class Graph<R>;                                                            \
  template Var<R> matmul<R>(Var<R>, Var<R>, Trans, Trans);                            \
  template Var<R> transpose<R>(Var<R>);                                               \
  template Var<R> add<R>(Var<R>, Var<R>);                                             \
  template Var<R> sub<R>(Var<R>, Var<R>);                                             \
  template Var<R> mul<R>(Var<R>, Var<R>);                                             \
  template Var<R> div<R>(Var<R>, Var<R>);                                             \
  template Var<R> scale<R>(Var<R>, double);                                           \
  template Var<R> add_scalar<R>(Var<R>, double);                                      \
  template Var<R> tanh<R>(Var<R>);                                                    \
  template Var<R> sigmoid<R>(Var<R>);                                                 \
  template Var<R> leaky_relu<R>(Var<R>, double);                                      \
  template Var<R> log<R>(Var<R>);                                                     \
  template Var<R> clamp<R>(Var<R>, double, double);                                   \
  template Var<R> sum<R>(Var<R>);                                                     \
  template Var<R> sum_axis<R>(Var<R>, std::size_t);                                   \
  template Var<R> mean_axis<R>(Var<R>, std::size_t);                                  \
  template Var<R> max_axis<R>(Var<R>, std::size_t);                                   \
  template Var<R> concat<R>(std::span<const Var<R>>, std::size_t);                    \
  template Var<R> slice<R>(Var<R>, std::size_t, std::size_t, std::size_t);            \
  template Var<R> reshape<R>(Var<R>, Shape);                                          \
  template Var<R> lstm_cell<R>(Var<R>, const Var<R>*);

MLNET_INSTANTIATE_AD(float)
MLNET_INSTANTIATE_AD(double)

#undef MLNET_INSTANTIATE_AD

}  // namespace mlnet::ad
