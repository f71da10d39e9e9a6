#include "omniair/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "omniair/kernels.hpp"

namespace omniair {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != numel(shape))
    throw std::invalid_argument("tensor: " + std::to_string(data.size()) +
                                " values do not fill shape " + shape_str(shape));
}

const Tensor& Var::value() const { return tape_->value(id_); }

// ---------------------------------------------------------------- Tape

Var Tape::leaf(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape() != this) throw std::invalid_argument("tape: operand belongs to another tape");
    needs = needs || nodes_[p.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
  return Var(this, nodes_.size() - 1);
}

std::vector<double>* Tape::grad_target(Var v) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!nodes_[loss.id()].requires_grad) return;
  nodes_[loss.id()].grad.assign(1, 1.0);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || n.grad.empty()) continue;
    // The closure may grow parent grad buffers but never this node's.
    const std::vector<double> g = std::move(n.grad);
    n.backward(*this, g);
    n.grad = g;
  }
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.empty()) return Tensor(n.value.shape, 0.0);
  return Tensor(n.value.shape, n.grad);
}

// ---------------------------------------------------------------- helpers

namespace {

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("op on an unbound Var");
  return *a.tape();
}

// Numpy broadcast plan: output shape plus per-operand strides (0 where the
// operand is broadcast).
struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a, stride_b;
  bool same = false;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t r = std::max(a.size(), b.size());
  Shape pa(r, 1), pb(r, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(r - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(r - b.size()));
  bc.out.resize(r);
  for (std::size_t d = 0; d < r; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1)
      throw std::invalid_argument(std::string(op) + ": cannot broadcast " + shape_str(a) +
                                  " with " + shape_str(b));
    bc.out[d] = pa[d] == 1 ? pb[d] : pa[d];
  }
  bc.stride_a.assign(r, 0);
  bc.stride_b.assign(r, 0);
  std::size_t sa = 1, sb = 1;
  for (std::size_t d = r; d-- > 0;) {
    if (pa[d] != 1) bc.stride_a[d] = sa;
    if (pb[d] != 1) bc.stride_b[d] = sb;
    sa *= pa[d];
    sb *= pb[d];
  }
  return bc;
}

template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const std::size_t total = numel(bc.out);
  if (bc.same) {
    for (std::size_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = bc.out.size();
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < total; ++i) {
    f(i, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += bc.stride_a[d];
      ib += bc.stride_b[d];
      if (idx[d] < bc.out[d]) break;
      ia -= bc.stride_a[d] * idx[d];
      ib -= bc.stride_b[d] * idx[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Var binary(Var a, Var b, BinOp op, const char* name) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast bc = plan_broadcast(av.shape, bv.shape, name);
  Tensor out(bc.out);
  const double* pa = av.data.data();
  const double* pb = bv.data.data();
  double* po = out.data.data();
  switch (op) {
    case BinOp::Add: for_each_broadcast(bc, [&](auto i, auto x, auto y) { po[i] = pa[x] + pb[y]; }); break;
    case BinOp::Sub: for_each_broadcast(bc, [&](auto i, auto x, auto y) { po[i] = pa[x] - pb[y]; }); break;
    case BinOp::Mul: for_each_broadcast(bc, [&](auto i, auto x, auto y) { po[i] = pa[x] * pb[y]; }); break;
    case BinOp::Div: for_each_broadcast(bc, [&](auto i, auto x, auto y) { po[i] = pa[x] / pb[y]; }); break;
  }
  return t.record(std::move(out), {a, b}, [a, b, op, bc](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    std::vector<double>* gb = tp.grad_target(b);
    const double* av = a.value().data.data();
    const double* bv = b.value().data.data();
    switch (op) {
      case BinOp::Add:
        for_each_broadcast(bc, [&](auto i, auto x, auto y) {
          if (ga) (*ga)[x] += g[i];
          if (gb) (*gb)[y] += g[i];
        });
        break;
      case BinOp::Sub:
        for_each_broadcast(bc, [&](auto i, auto x, auto y) {
          if (ga) (*ga)[x] += g[i];
          if (gb) (*gb)[y] -= g[i];
        });
        break;
      case BinOp::Mul:
        for_each_broadcast(bc, [&](auto i, auto x, auto y) {
          if (ga) (*ga)[x] += g[i] * bv[y];
          if (gb) (*gb)[y] += g[i] * av[x];
        });
        break;
      case BinOp::Div:
        for_each_broadcast(bc, [&](auto i, auto x, auto y) {
          if (ga) (*ga)[x] += g[i] / bv[y];
          if (gb) (*gb)[y] -= g[i] * av[x] / (bv[y] * bv[y]);
        });
        break;
    }
  });
}

// Elementwise unary op; `dfdx` receives (input, output).
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape);
  for (std::size_t i = 0; i < av.size(); ++i) out.data[i] = f(av.data[i]);
  const std::size_t out_id = t.size();  // id the recorded node will get
  return t.record(std::move(out), {a}, [a, dfdx, out_id](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    if (!ga) return;
    const auto& x = a.value().data;
    const auto& y = tp.value(out_id).data;
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * dfdx(x[i], y[i]);
  });
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.extent = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------- ops

Var add(Var a, Var b) { return binary(a, b, BinOp::Add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::Sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::Mul, "mul"); }
Var div(Var a, Var b) { return binary(a, b, BinOp::Div, "div"); }

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var shift(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(av.shape) + " x " +
                                shape_str(bv.shape));
  const std::size_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor out({m, n});
  kernels::parallel::gemm_acc(m, k, n, av.data, bv.data, out.data);
  return t.record(std::move(out), {a, b}, [a, b, m, k, n](Tape& tp, const std::vector<double>& g) {
    if (std::vector<double>* ga = tp.grad_target(a))
      kernels::parallel::gemm_nt_acc(m, n, k, g, b.value().data, *ga);
    if (std::vector<double>* gb = tp.grad_target(b)) {
      // dB = A^T dC; transpose A so the product runs row-major.
      const auto& ad = a.value().data;
      std::vector<double> at(k * m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) at[p * m + i] = ad[i * k + p];
      kernels::parallel::gemm_acc(k, m, n, at, g, *gb);
    }
  });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  Tape& t = tape_of(parts[0]);
  const Shape& s0 = parts[0].shape();
  Shape out_shape = s0;
  std::vector<std::size_t> extents;
  out_shape.at(axis) = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) throw std::invalid_argument("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != s0[d])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s) + " vs " +
                                    shape_str(s0));
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit sp = split_axis(out_shape, axis, "concat");
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& src = parts[p].value().data;
    const std::size_t block = extents[p] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.data.begin() + static_cast<std::ptrdiff_t>(o * sp.extent * sp.inner + offset));
    offset += block;
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [keep, extents, sp](Tape& tp, const std::vector<double>& g) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < keep.size(); ++p) {
      const std::size_t block = extents[p] * sp.inner;
      if (std::vector<double>* gp = tp.grad_target(keep[p])) {
        for (std::size_t o = 0; o < sp.outer; ++o) {
          const double* src = g.data() + o * sp.extent * sp.inner + offset;
          double* dst = gp->data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += block;
    }
  });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  const AxisSplit sp = split_axis(s, axis, "slice");
  if (start + length > sp.extent)
    throw std::invalid_argument("slice: [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") exceeds axis extent " +
                                std::to_string(sp.extent));
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const auto& src = a.value().data;
  const std::size_t block = length * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>((o * sp.extent + start) * sp.inner),
                block, out.data.begin() + static_cast<std::ptrdiff_t>(o * block));
  return t.record(std::move(out), {a}, [a, sp, start, block](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    if (!ga) return;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      double* dst = ga->data() + (o * sp.extent + start) * sp.inner;
      const double* src = g.data() + o * block;
      for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
    }
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  if (numel(shape) != a.size())
    throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape), a.value().data);
  return t.record(std::move(out), {a}, [a](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    if (!ga) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
  });
}

Var sum(Var a, std::size_t axis) {
  Tape& t = tape_of(a);
  const AxisSplit sp = split_axis(a.shape(), axis, "sum");
  Shape out_shape = a.shape();
  out_shape[axis] = 1;
  Tensor out(out_shape);
  const auto& src = a.value().data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t e = 0; e < sp.extent; ++e)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out.data[o * sp.inner + i] += src[(o * sp.extent + e) * sp.inner + i];
  return t.record(std::move(out), {a}, [a, sp](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    if (!ga) return;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t e = 0; e < sp.extent; ++e)
        for (std::size_t i = 0; i < sp.inner; ++i)
          (*ga)[(o * sp.extent + e) * sp.inner + i] += g[o * sp.inner + i];
  });
}

Var mean(Var a, std::size_t axis) {
  const std::size_t extent = split_axis(a.shape(), axis, "mean").extent;
  return scale(sum(a, axis), 1.0 / static_cast<double>(extent));
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  double acc = 0.0;
  for (double v : a.value().data) acc += v;
  return t.record(Tensor::scalar(acc), {a}, [a](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    if (!ga) return;
    for (double& v : *ga) v += g[0];
  });
}

Var sigmoid(Var a) {
  return unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(Var a, double slope) {
  return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var softmax(Var a, std::size_t axis) {
  Tape& t = tape_of(a);
  const AxisSplit sp = split_axis(a.shape(), axis, "softmax");
  Tensor out(a.shape());
  const auto& x = a.value().data;
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const auto at = [&](std::size_t e) { return (o * sp.extent + e) * sp.inner + i; };
      double mx = x[at(0)];
      for (std::size_t e = 1; e < sp.extent; ++e) mx = std::max(mx, x[at(e)]);
      double z = 0.0;
      for (std::size_t e = 0; e < sp.extent; ++e) z += (out.data[at(e)] = std::exp(x[at(e)] - mx));
      for (std::size_t e = 0; e < sp.extent; ++e) out.data[at(e)] /= z;
    }
  const std::size_t out_id = t.size();
  return t.record(std::move(out), {a}, [a, sp, out_id](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    if (!ga) return;
    const auto& y = tp.value(out_id).data;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const auto at = [&](std::size_t e) { return (o * sp.extent + e) * sp.inner + i; };
        double dot = 0.0;
        for (std::size_t e = 0; e < sp.extent; ++e) dot += g[at(e)] * y[at(e)];
        for (std::size_t e = 0; e < sp.extent; ++e) (*ga)[at(e)] += y[at(e)] * (g[at(e)] - dot);
      }
  });
}

Var gather(Var a, std::span<const std::size_t> index) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  if (s.empty()) throw std::invalid_argument("gather: rank-0 operand");
  const std::size_t rows = s[0];
  const std::size_t row = rows == 0 ? 0 : a.size() / rows;
  Shape out_shape = s;
  out_shape[0] = index.size();
  Tensor out(out_shape);
  const auto& src = a.value().data;
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows)
      throw std::invalid_argument("gather: index " + std::to_string(index[r]) + " >= " +
                                  std::to_string(rows));
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(index[r] * row), row,
                out.data.begin() + static_cast<std::ptrdiff_t>(r * row));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return t.record(std::move(out), {a}, [a, idx = std::move(idx), row](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    if (!ga) return;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      double* dst = ga->data() + idx[r] * row;
      const double* src = g.data() + r * row;
      for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
    }
  });
}

Var segment_sum(Var a, std::span<const std::size_t> segment, std::size_t segments) {
  Tape& t = tape_of(a);
  const Shape& s = a.shape();
  if (s.empty() || s[0] != segment.size())
    throw std::invalid_argument("segment_sum: " + std::to_string(segment.size()) +
                                " segment ids for operand " + shape_str(s));
  const std::size_t row = s[0] == 0 ? 0 : a.size() / s[0];
  Shape out_shape = s;
  out_shape[0] = segments;
  Tensor out(out_shape);
  const auto& src = a.value().data;
  for (std::size_t r = 0; r < segment.size(); ++r) {
    if (segment[r] >= segments)
      throw std::invalid_argument("segment_sum: segment id " + std::to_string(segment[r]) +
                                  " >= " + std::to_string(segments));
    double* dst = out.data.data() + segment[r] * row;
    for (std::size_t i = 0; i < row; ++i) dst[i] += src[r * row + i];
  }
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return t.record(std::move(out), {a}, [a, seg = std::move(seg), row](Tape& tp, const std::vector<double>& g) {
    std::vector<double>* ga = tp.grad_target(a);
    if (!ga) return;
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const double* src = g.data() + seg[r] * row;
      double* dst = ga->data() + r * row;
      for (std::size_t i = 0; i < row; ++i) dst[i] += src[i];
    }
  });
}

Var detach(Var a) { return tape_of(a).constant(a.value()); }

}  // namespace omniair
