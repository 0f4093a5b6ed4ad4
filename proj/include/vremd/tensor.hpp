#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "vremd/rng.hpp"

namespace vremd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

// Dense tensor handle with define-by-run reverse-mode differentiation.
// The graph is rebuilt on every forward pass; leaves (parameters) are the
// only nodes whose data is mutated between passes.
template <class Real>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::string label;  // parameter name, for diagnostics
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    std::vector<Real>& grad_ref() {
      if (grad.empty()) grad.assign(value.size(), Real(0));
      return grad;
    }
  };

  Tensor() : node_(nullptr) {}

  static Tensor from_data(Shape shape, std::vector<Real> data,
                          bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor data length " +
                                  std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<Real>(n, Real(0)),
                     requires_grad);
  }

  static Tensor ones(Shape shape) {
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<Real>(n, Real(1)));
  }

  static Tensor full(Shape shape, Real v) {
    auto n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<Real>(n, v));
  }

  static Tensor scalar(Real v) { return from_data({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false) {
    auto n = shape_numel(shape);
    std::vector<Real> d(n);
    for (auto& x : d) x = static_cast<Real>(rng.normal(0.0, stddev));
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  static Tensor trunc_normal(Shape shape, Rng& rng, double stddev,
                             bool requires_grad = true) {
    auto n = shape_numel(shape);
    std::vector<Real> d(n);
    for (auto& x : d) x = static_cast<Real>(rng.trunc_normal(stddev));
    return from_data(std::move(shape), std::move(d), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape[axis]; }

  std::vector<Real>& data() { return node_->value; }
  const std::vector<Real>& data() const { return node_->value; }
  std::vector<Real>& data_mut() const { return node_->value; }
  const std::vector<Real>& grad() const { return node_->grad; }
  std::vector<Real>& grad_mut() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  const char* op() const { return node_->op; }

  void set_label(std::string name) { node_->label = std::move(name); }
  const std::string& label() const { return node_->label; }

  Real& at(std::initializer_list<std::size_t> idx) {
    return node_->value[flat_index(idx)];
  }
  Real at(std::initializer_list<std::size_t> idx) const {
    return node_->value[flat_index(idx)];
  }
  Real item() const {
    if (size() != 1)
      throw std::invalid_argument("item() on non-scalar tensor " +
                                  shape_str(shape()));
    return node_->value[0];
  }

  void zero_grad() const { node_->grad.clear(); }

  bool all_finite() const {
    for (Real v : node_->value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Reverse-mode pass from a scalar. Accumulates into .grad of every
  // reachable node that requires grad.
  void backward() const {
    if (size() != 1)
      throw std::invalid_argument(
          "backward() requires a scalar loss, got shape " +
          shape_str(shape()));
    if (!node_->requires_grad) return;

    // Iterative post-order topological sort.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({node_.get(), 0});
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        Node* p = n->parents[i].get();
        ++i;
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }

    node_->grad_ref()[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* n = *it;
      if (n->backprop && !n->grad.empty()) n->backprop(*n);
    }
  }

  std::shared_ptr<Node> node() const { return node_; }

  // --- op construction helpers (used by the free functions below) ---
  static Tensor make_op(const char* op, Shape shape, std::vector<Real> value,
                        std::vector<Tensor> parents,
                        std::function<void(Node&)> backprop) {
    Tensor t = from_data(std::move(shape), std::move(value));
    t.node_->op = op;
    bool rg = false;
    for (auto& p : parents) {
      rg = rg || p.node_->requires_grad;
      t.node_->parents.push_back(p.node_);
    }
    t.node_->requires_grad = rg;
    if (rg) t.node_->backprop = std::move(backprop);
    return t;
  }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    const auto& s = node_->shape;
    if (idx.size() != s.size())
      throw std::invalid_argument("index rank mismatch for shape " +
                                  shape_str(s));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      flat = flat * s[axis] + i;
      ++axis;
    }
    return flat;
  }

  std::shared_ptr<Node> node_;
};

template <class Real>
struct NamedParam {
  std::string name;
  Tensor<Real> value;
};

template <class Real>
using ParamList = std::vector<NamedParam<Real>>;

// ---------------------------------------------------------------------------
// broadcasting
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t ea = i < out.size() - a.size()
                               ? 1
                               : a[i - (out.size() - a.size())];
    const std::size_t eb = i < out.size() - b.size()
                               ? 1
                               : b[i - (out.size() - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      throw std::invalid_argument("shape mismatch: cannot broadcast " +
                                  shape_str(a) + " with " + shape_str(b));
    out[i] = std::max(ea, eb);
  }
  return out;
}

// Row-major strides, with 0 on broadcast axes so the same flat walk reads
// the operand in place.
inline std::vector<std::size_t> broadcast_strides(const Shape& from,
                                                  const Shape& to) {
  std::vector<std::size_t> strides(to.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < from.size(); ++i) {
    const std::size_t axis = from.size() - 1 - i;
    const std::size_t out_axis = to.size() - 1 - i;
    strides[out_axis] = (from[axis] == 1 && to[out_axis] != 1) ? 0 : stride;
    stride *= from[axis];
  }
  return strides;
}

template <class Real, class F>
void broadcast_walk(const Shape& out, const Shape& a_shape,
                    const std::vector<Real>& a, const Shape& b_shape,
                    const std::vector<Real>& b, F&& f) {
  const auto sa = broadcast_strides(a_shape, out);
  const auto sb = broadcast_strides(b_shape, out);
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    f(flat, a[ia], b[ib]);
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
    }
  }
}

// Sums `grad` (laid out as `out`) back into an operand of shape `from`.
template <class Real>
void reduce_to_shape(const Shape& out, const std::vector<Real>& grad,
                     const Shape& from, std::vector<Real>& acc) {
  const auto s = broadcast_strides(from, out);
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(out.size(), 0);
  std::size_t i = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    acc[i] += grad[flat];
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      i += s[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      i -= s[d] * out[d];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

template <class Real, class Fwd, class Bwd>
Tensor<Real> binary_broadcast_op(const char* name, const Tensor<Real>& a,
                                 const Tensor<Real>& b, Fwd fwd, Bwd bwd) {
  using T = Tensor<Real>;
  const Shape out_shape = detail::broadcast_shape(a.shape(), b.shape());
  std::vector<Real> out(shape_numel(out_shape));
  detail::broadcast_walk<Real>(out_shape, a.shape(), a.data(), b.shape(),
                               b.data(), [&](std::size_t i, Real x, Real y) {
                                 out[i] = fwd(x, y);
                               });
  auto an = a.node();
  auto bn = b.node();
  return T::make_op(
      name, out_shape, std::move(out), {a, b},
      [an, bn, out_shape, bwd](typename T::Node& self) {
        const std::size_t n = self.grad.size();
        std::vector<Real> ga(n), gb(n);
        detail::broadcast_walk<Real>(out_shape, an->shape, an->value,
                                     bn->shape, bn->value,
                                     [&](std::size_t i, Real x, Real y) {
                                       auto [dx, dy] = bwd(x, y);
                                       ga[i] = self.grad[i] * dx;
                                       gb[i] = self.grad[i] * dy;
                                     });
        if (an->requires_grad)
          detail::reduce_to_shape(out_shape, ga, an->shape, an->grad_ref());
        if (bn->requires_grad)
          detail::reduce_to_shape(out_shape, gb, bn->shape, bn->grad_ref());
      });
}

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_broadcast_op<Real>(
      "add", a, b, [](Real x, Real y) { return x + y; },
      [](Real, Real) { return std::pair<Real, Real>(Real(1), Real(1)); });
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_broadcast_op<Real>(
      "sub", a, b, [](Real x, Real y) { return x - y; },
      [](Real, Real) { return std::pair<Real, Real>(Real(1), Real(-1)); });
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return binary_broadcast_op<Real>(
      "mul", a, b, [](Real x, Real y) { return x * y; },
      [](Real x, Real y) { return std::pair<Real, Real>(y, x); });
}

template <class Real, class Fwd, class Deriv>
Tensor<Real> unary_op(const char* name, const Tensor<Real>& x, Fwd fwd,
                      Deriv deriv) {
  using T = Tensor<Real>;
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x.data()[i]);
  auto xn = x.node();
  return T::make_op(name, x.shape(), std::move(out), {x},
                    [xn, deriv](typename T::Node& self) {
                      if (!xn->requires_grad) return;
                      auto& g = xn->grad_ref();
                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                        g[i] += self.grad[i] * deriv(xn->value[i], self.value[i]);
                    });
}

template <class Real>
Tensor<Real> neg(const Tensor<Real>& x) {
  return unary_op<Real>(
      "neg", x, [](Real v) { return -v; },
      [](Real, Real) { return Real(-1); });
}

template <class Real>
Tensor<Real> mul_scalar(const Tensor<Real>& x, Real c) {
  return unary_op<Real>(
      "mul_scalar", x, [c](Real v) { return c * v; },
      [c](Real, Real) { return c; });
}

template <class Real>
Tensor<Real> add_scalar(const Tensor<Real>& x, Real c) {
  return unary_op<Real>(
      "add_scalar", x, [c](Real v) { return v + c; },
      [](Real, Real) { return Real(1); });
}

template <class Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  return unary_op<Real>(
      "relu", x, [](Real v) { return v > Real(0) ? v : Real(0); },
      [](Real v, Real) { return v > Real(0) ? Real(1) : Real(0); });
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x) {
  // Exact form through erf.
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_op<Real>(
      "gelu", x,
      [](Real v) {
        const double d = static_cast<double>(v);
        return static_cast<Real>(0.5 * d * (1.0 + std::erf(d * inv_sqrt2)));
      },
      [](Real v, Real) {
        const double d = static_cast<double>(v);
        const double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * d * d);
        return static_cast<Real>(cdf + d * pdf);
      });
}

template <class Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  return unary_op<Real>(
      "tanh", x, [](Real v) { return std::tanh(v); },
      [](Real, Real y) { return Real(1) - y * y; });
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return unary_op<Real>(
      "sigmoid", x,
      [](Real v) { return Real(1) / (Real(1) + std::exp(-v)); },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <class Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) {
  return add(a, b);
}
template <class Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) {
  return sub(a, b);
}
template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) {
  return mul(a, b);
}
template <class Real>
Tensor<Real> operator*(const Tensor<Real>& a, Real c) {
  return mul_scalar(a, c);
}
template <class Real>
Tensor<Real> operator*(Real c, const Tensor<Real>& a) {
  return mul_scalar(a, c);
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// Standard product over the last two axes. Ranks above 2 are treated as
// batches; batch dims must match, or one operand may be rank-2 and is then
// shared across the other's batch.
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  using T = Tensor<Real>;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    throw std::invalid_argument("matmul requires rank >= 2, got " +
                                shape_str(sa) + " and " + shape_str(sb));
  const std::size_t m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const std::size_t k2 = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (k != k2)
    throw std::invalid_argument("matmul shape mismatch: " + shape_str(sa) +
                                " x " + shape_str(sb));
  Shape batch_shape;
  if (sa.size() > 2 && sb.size() > 2) {
    if (!std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2))
      throw std::invalid_argument("matmul batch mismatch: " + shape_str(sa) +
                                  " x " + shape_str(sb));
    batch_shape.assign(sa.begin(), sa.end() - 2);
  } else if (sa.size() > 2) {
    batch_shape.assign(sa.begin(), sa.end() - 2);
  } else {
    batch_shape.assign(sb.begin(), sb.end() - 2);
  }
  const std::size_t batches = shape_numel(batch_shape);
  const bool a_batched = sa.size() > 2;
  const bool b_batched = sb.size() > 2;

  Shape out_shape = batch_shape;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<Real> out(batches * m * n, Real(0));

  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t t = 0; t < batches; ++t) {
    const Real* pa = av.data() + (a_batched ? t * m * k : 0);
    const Real* pb = bv.data() + (b_batched ? t * k * n : 0);
    Real* po = out.data() + t * m * n;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t kk = 0; kk < k; ++kk) {
        const Real x = pa[i * k + kk];
        if (x == Real(0)) continue;
        const Real* pbr = pb + kk * n;
        Real* por = po + i * n;
        for (std::size_t j = 0; j < n; ++j) por[j] += x * pbr[j];
      }
  }

  auto an = a.node();
  auto bn = b.node();
  return T::make_op(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [an, bn, batches, m, k, n, a_batched,
       b_batched](typename T::Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
          auto& ga = an->grad_ref();
          for (std::size_t t = 0; t < batches; ++t) {
            const Real* pg = g.data() + t * m * n;
            const Real* pb = bn->value.data() + (b_batched ? t * k * n : 0);
            Real* pga = ga.data() + (a_batched ? t * m * k : 0);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t j = 0; j < n; ++j) {
                const Real gv = pg[i * n + j];
                if (gv == Real(0)) continue;
                for (std::size_t kk = 0; kk < k; ++kk)
                  pga[i * k + kk] += gv * pb[kk * n + j];
              }
          }
        }
        if (bn->requires_grad) {
          auto& gb = bn->grad_ref();
          for (std::size_t t = 0; t < batches; ++t) {
            const Real* pg = g.data() + t * m * n;
            const Real* pa = an->value.data() + (a_batched ? t * m * k : 0);
            Real* pgb = gb.data() + (b_batched ? t * k * n : 0);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t kk = 0; kk < k; ++kk) {
                const Real av = pa[i * k + kk];
                if (av == Real(0)) continue;
                for (std::size_t j = 0; j < n; ++j)
                  pgb[kk * n + j] += av * pg[i * n + j];
              }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::size_t axis) {
  using T = Tensor<Real>;
  if (axis >= x.rank())
    throw std::invalid_argument("softmax: invalid axis " +
                                std::to_string(axis) + " for shape " +
                                shape_str(x.shape()));
  const Shape& s = x.shape();
  const std::size_t extent = s[axis];
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];

  std::vector<Real> out(x.size());
  const auto& v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * extent * inner + in;
      Real mx = v[base];
      for (std::size_t e = 1; e < extent; ++e)
        mx = std::max(mx, v[base + e * inner]);
      Real sum = Real(0);
      for (std::size_t e = 0; e < extent; ++e) {
        const Real ev = std::exp(v[base + e * inner] - mx);
        out[base + e * inner] = ev;
        sum += ev;
      }
      for (std::size_t e = 0; e < extent; ++e) out[base + e * inner] /= sum;
    }

  auto xn = x.node();
  return T::make_op(
      "softmax", s, std::move(out), {x},
      [xn, extent, inner, outer](typename T::Node& self) {
        if (!xn->requires_grad) return;
        auto& gx = xn->grad_ref();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            Real dot = Real(0);
            for (std::size_t e = 0; e < extent; ++e) {
              const std::size_t i = base + e * inner;
              dot += self.grad[i] * self.value[i];
            }
            for (std::size_t e = 0; e < extent; ++e) {
              const std::size_t i = base + e * inner;
              gx[i] += self.value[i] * (self.grad[i] - dot);
            }
          }
      });
}

// Normalizes the last axis to zero mean / unit variance. Affine scale and
// shift are composed outside with mul/add.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, Real eps = Real(1e-12)) {
  using T = Tensor<Real>;
  const Shape& s = x.shape();
  const std::size_t d = s.back();
  const std::size_t rows = x.size() / d;
  std::vector<Real> out(x.size());
  std::vector<Real> inv_std(rows);
  const auto& v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = v.data() + r * d;
    Real mean = Real(0);
    for (std::size_t i = 0; i < d; ++i) mean += row[i];
    mean /= Real(d);
    Real var = Real(0);
    for (std::size_t i = 0; i < d; ++i) {
      const Real c = row[i] - mean;
      var += c * c;
    }
    var /= Real(d);
    const Real is = Real(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = (row[i] - mean) * is;
  }

  auto xn = x.node();
  return T::make_op(
      "layer_norm", s, std::move(out), {x},
      [xn, d, rows, inv_std](typename T::Node& self) {
        if (!xn->requires_grad) return;
        auto& gx = xn->grad_ref();
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* y = self.value.data() + r * d;
          const Real* g = self.grad.data() + r * d;
          Real gmean = Real(0), gydot = Real(0);
          for (std::size_t i = 0; i < d; ++i) {
            gmean += g[i];
            gydot += g[i] * y[i];
          }
          gmean /= Real(d);
          gydot /= Real(d);
          for (std::size_t i = 0; i < d; ++i)
            gx[r * d + i] += inv_std[r] * (g[i] - gmean - y[i] * gydot);
        }
      });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape new_shape) {
  using T = Tensor<Real>;
  if (shape_numel(new_shape) != x.size())
    throw std::invalid_argument("reshape " + shape_str(x.shape()) + " -> " +
                                shape_str(new_shape) + ": element count differs");
  auto xn = x.node();
  return T::make_op("reshape", std::move(new_shape),
                    std::vector<Real>(x.data()), {x},
                    [xn](typename T::Node& self) {
                      if (!xn->requires_grad) return;
                      auto& gx = xn->grad_ref();
                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                        gx[i] += self.grad[i];
                    });
}

template <class Real>
Tensor<Real> transpose(const Tensor<Real>& x, std::size_t a, std::size_t b) {
  using T = Tensor<Real>;
  if (a >= x.rank() || b >= x.rank())
    throw std::invalid_argument("transpose: axes out of range for shape " +
                                shape_str(x.shape()));
  Shape out_shape = x.shape();
  std::swap(out_shape[a], out_shape[b]);

  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1), out_strides(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) {
    in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
  }

  // perm maps output axis -> input axis
  std::vector<std::size_t> perm(rank);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[a], perm[b]);

  const auto& v = x.data();
  std::vector<Real> out(x.size());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t src = 0;
    for (std::size_t d2 = 0; d2 < rank; ++d2)
      src += idx[d2] * in_strides[perm[d2]];
    out[flat] = v[src];
    for (std::size_t d2 = rank; d2-- > 0;) {
      if (++idx[d2] < out_shape[d2]) break;
      idx[d2] = 0;
    }
  }

  auto xn = x.node();
  return T::make_op(
      "transpose", out_shape, std::move(out), {x},
      [xn, out_shape, in_strides, perm, rank](typename T::Node& self) {
        if (!xn->requires_grad) return;
        auto& gx = xn->grad_ref();
        std::vector<std::size_t> idx(rank, 0);
        for (std::size_t flat = 0; flat < self.grad.size(); ++flat) {
          std::size_t src = 0;
          for (std::size_t d2 = 0; d2 < rank; ++d2)
            src += idx[d2] * in_strides[perm[d2]];
          gx[src] += self.grad[flat];
          for (std::size_t d2 = rank; d2-- > 0;) {
            if (++idx[d2] < out_shape[d2]) break;
            idx[d2] = 0;
          }
        }
      });
}

// Matrix transpose of the last two axes.
template <class Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
  return transpose(x, x.rank() - 2, x.rank() - 1);
}

template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::size_t axis) {
  using T = Tensor<Real>;
  if (parts.empty()) throw std::invalid_argument("concat: empty input list");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size())
    throw std::invalid_argument("concat: invalid axis " +
                                std::to_string(axis));
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size())
      throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) +
                                  " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i])
        throw std::invalid_argument("concat: shape mismatch " +
                                    shape_str(s0) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }

  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];

  std::vector<Real> out(shape_numel(out_shape));
  const std::size_t out_axis = out_shape[axis];
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t e = p.shape()[axis];
    const auto& v = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(v.begin() + o * e * inner, v.begin() + (o + 1) * e * inner,
                out.begin() + (o * out_axis + offset) * inner);
    offset += e;
  }

  std::vector<Tensor<Real>> parents = parts;
  std::vector<std::shared_ptr<typename T::Node>> nodes;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    extents.push_back(p.shape()[axis]);
  }
  return T::make_op(
      "concat", out_shape, std::move(out), parents,
      [nodes, extents, inner, outer, out_axis](typename T::Node& self) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
          const std::size_t e = extents[pi];
          if (nodes[pi]->requires_grad) {
            auto& g = nodes[pi]->grad_ref();
            for (std::size_t o = 0; o < outer; ++o) {
              const std::size_t src = (o * out_axis + offset) * inner;
              const std::size_t dst = o * e * inner;
              for (std::size_t i = 0; i < e * inner; ++i)
                g[dst + i] += self.grad[src + i];
            }
          }
          offset += e;
        }
      });
}

template <class Real>
Tensor<Real> slice(const Tensor<Real>& x, std::size_t axis, std::size_t start,
                   std::size_t len) {
  using T = Tensor<Real>;
  const Shape& s = x.shape();
  if (axis >= s.size() || start + len > s[axis])
    throw std::invalid_argument("slice: range [" + std::to_string(start) +
                                "," + std::to_string(start + len) +
                                ") out of bounds on axis " +
                                std::to_string(axis) + " of " + shape_str(s));
  Shape out_shape = s;
  out_shape[axis] = len;
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];

  std::vector<Real> out(shape_numel(out_shape));
  const auto& v = x.data();
  const std::size_t e = s[axis];
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(v.begin() + (o * e + start) * inner,
              v.begin() + (o * e + start + len) * inner,
              out.begin() + o * len * inner);

  auto xn = x.node();
  return T::make_op(
      "slice", out_shape, std::move(out), {x},
      [xn, inner, outer, e, start, len](typename T::Node& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_ref();
        for (std::size_t o = 0; o < outer; ++o) {
          const std::size_t dst = (o * e + start) * inner;
          const std::size_t src = o * len * inner;
          for (std::size_t i = 0; i < len * inner; ++i)
            g[dst + i] += self.grad[src + i];
        }
      });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  using T = Tensor<Real>;
  Real total = Real(0);
  for (Real v : x.data()) total += v;
  auto xn = x.node();
  return T::make_op("sum", {1}, {total}, {x},
                    [xn](typename T::Node& self) {
                      if (!xn->requires_grad) return;
                      auto& g = xn->grad_ref();
                      for (auto& gv : g) gv += self.grad[0];
                    });
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& x, std::size_t axis,
                 bool keepdims = false) {
  using T = Tensor<Real>;
  const Shape& s = x.shape();
  if (axis >= s.size())
    throw std::invalid_argument("sum: invalid axis " + std::to_string(axis));
  std::size_t inner = 1, outer = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  const std::size_t e = s[axis];

  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i == axis) {
      if (keepdims) out_shape.push_back(1);
    } else {
      out_shape.push_back(s[i]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  std::vector<Real> out(outer * inner, Real(0));
  const auto& v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t ee = 0; ee < e; ++ee)
      for (std::size_t in = 0; in < inner; ++in)
        out[o * inner + in] += v[(o * e + ee) * inner + in];

  auto xn = x.node();
  return T::make_op(
      "sum_axis", std::move(out_shape), std::move(out), {x},
      [xn, inner, outer, e](typename T::Node& self) {
        if (!xn->requires_grad) return;
        auto& g = xn->grad_ref();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t ee = 0; ee < e; ++ee)
            for (std::size_t in = 0; in < inner; ++in)
              g[(o * e + ee) * inner + in] += self.grad[o * inner + in];
      });
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  return mul_scalar(sum(x), Real(1) / static_cast<Real>(x.size()));
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& x, std::size_t axis,
                  bool keepdims = false) {
  const Real inv = Real(1) / static_cast<Real>(x.shape()[axis]);
  return mul_scalar(sum(x, axis, keepdims), inv);
}

// ---------------------------------------------------------------------------
// bilinear sampling
// ---------------------------------------------------------------------------

// grid: (H, W, D); points: (P, 2) as (x, y) in grid pixel coordinates.
// Out-of-range points are clamped to the border. Differentiable w.r.t.
// both grid values and point coordinates.
template <class Real>
Tensor<Real> bilinear_sample(const Tensor<Real>& grid,
                             const Tensor<Real>& points) {
  using T = Tensor<Real>;
  if (grid.rank() != 3)
    throw std::invalid_argument("bilinear_sample: grid must be (H,W,D), got " +
                                shape_str(grid.shape()));
  if (points.rank() != 2 || points.shape()[1] != 2)
    throw std::invalid_argument(
        "bilinear_sample: points must be (P,2), got " +
        shape_str(points.shape()));
  const std::size_t h = grid.shape()[0], w = grid.shape()[1],
                    d = grid.shape()[2];
  const std::size_t p = points.shape()[0];

  struct Corner {
    std::size_t i00, i01, i10, i11;  // flat grid row offsets
    Real w00, w01, w10, w11;
    Real fx_active, fy_active;  // 1 when inside the clamp range
    Real dy0, dy1, fx, fy;
  };
  std::vector<Corner> corners(p);
  std::vector<Real> out(p * d, Real(0));

  const auto& gv = grid.data();
  const auto& pv = points.data();
  const Real xmax = static_cast<Real>(w - 1);
  const Real ymax = static_cast<Real>(h - 1);
  for (std::size_t q = 0; q < p; ++q) {
    Real x = pv[q * 2 + 0];
    Real y = pv[q * 2 + 1];
    const Real x_active = (x > Real(0) && x < xmax) ? Real(1) : Real(0);
    const Real y_active = (y > Real(0) && y < ymax) ? Real(1) : Real(0);
    x = std::min(std::max(x, Real(0)), xmax);
    y = std::min(std::max(y, Real(0)), ymax);
    std::size_t x0 = static_cast<std::size_t>(std::floor(x));
    std::size_t y0 = static_cast<std::size_t>(std::floor(y));
    if (x0 >= w - 1) x0 = w >= 2 ? w - 2 : 0;
    if (y0 >= h - 1) y0 = h >= 2 ? h - 2 : 0;
    const std::size_t x1 = std::min(x0 + 1, w - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const Real fx = x - static_cast<Real>(x0);
    const Real fy = y - static_cast<Real>(y0);
    Corner c;
    c.i00 = (y0 * w + x0) * d;
    c.i01 = (y0 * w + x1) * d;
    c.i10 = (y1 * w + x0) * d;
    c.i11 = (y1 * w + x1) * d;
    c.w00 = (Real(1) - fx) * (Real(1) - fy);
    c.w01 = fx * (Real(1) - fy);
    c.w10 = (Real(1) - fx) * fy;
    c.w11 = fx * fy;
    c.fx_active = x_active;
    c.fy_active = y_active;
    c.fx = fx;
    c.fy = fy;
    corners[q] = c;
    for (std::size_t k = 0; k < d; ++k)
      out[q * d + k] = c.w00 * gv[c.i00 + k] + c.w01 * gv[c.i01 + k] +
                       c.w10 * gv[c.i10 + k] + c.w11 * gv[c.i11 + k];
  }

  auto gn = grid.node();
  auto pn = points.node();
  return T::make_op(
      "bilinear_sample", {p, d}, std::move(out), {grid, points},
      [gn, pn, corners, d](typename T::Node& self) {
        const std::size_t p = corners.size();
        if (gn->requires_grad) {
          auto& gg = gn->grad_ref();
          for (std::size_t q = 0; q < p; ++q) {
            const Corner& c = corners[q];
            for (std::size_t k = 0; k < d; ++k) {
              const Real g = self.grad[q * d + k];
              gg[c.i00 + k] += g * c.w00;
              gg[c.i01 + k] += g * c.w01;
              gg[c.i10 + k] += g * c.w10;
              gg[c.i11 + k] += g * c.w11;
            }
          }
        }
        if (pn->requires_grad) {
          auto& gp = pn->grad_ref();
          for (std::size_t q = 0; q < p; ++q) {
            const Corner& c = corners[q];
            Real gx = Real(0), gy = Real(0);
            for (std::size_t k = 0; k < d; ++k) {
              const Real g = self.grad[q * d + k];
              const Real v00 = gn->value[c.i00 + k];
              const Real v01 = gn->value[c.i01 + k];
              const Real v10 = gn->value[c.i10 + k];
              const Real v11 = gn->value[c.i11 + k];
              gx += g * ((Real(1) - c.fy) * (v01 - v00) + c.fy * (v11 - v10));
              gy += g * ((Real(1) - c.fx) * (v10 - v00) + c.fx * (v11 - v01));
            }
            gp[q * 2 + 0] += gx * c.fx_active;
            gp[q * 2 + 1] += gy * c.fy_active;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// diagnostics & gradient checking
// ---------------------------------------------------------------------------

// Walks the graph below `root` in forward (topological) order and returns a
// description of the first tensor holding a non-finite value, or "" if clean.
template <class Real>
std::string first_nonfinite(const Tensor<Real>& root) {
  using Node = typename Tensor<Real>::Node;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i].get();
      ++i;
      if (!seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    for (Real v : n->value) {
      if (!std::isfinite(static_cast<double>(v))) {
        std::string name = n->label.empty() ? std::string(n->op) : n->label;
        return name + " " + shape_str(n->shape);
      }
    }
  }
  return "";
}

// Central-difference gradient of a re-runnable scalar function, one entry
// per parameter coordinate. Perturbs parameter data in place and restores it.
template <class Real>
std::vector<std::vector<Real>> finite_diff_grad(
    const std::function<Real()>& f, const std::vector<Tensor<Real>>& params,
    Real step) {
  if (step <= Real(0))
    throw std::invalid_argument("finite_diff_grad: step must be positive");
  std::vector<std::vector<Real>> grads;
  grads.reserve(params.size());
  for (auto p : params) {
    std::vector<Real> g(p.size());
    auto& d = p.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Real keep = d[i];
      d[i] = keep + step;
      const Real fp = f();
      d[i] = keep - step;
      const Real fm = f();
      d[i] = keep;
      g[i] = (fp - fm) / (Real(2) * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

template <class Real>
struct GradCheckResult {
  bool pass = true;
  Real max_rel_err = Real(0);
  std::string worst_param;
  std::size_t worst_index = 0;
  Real worst_ad = Real(0);
  Real worst_fd = Real(0);
};

// Compares reverse-mode gradients against central differences.
// rel = |a-b| / max(|a|, |b|, floor); the floor keeps near-zero gradients
// from amplifying finite-difference roundoff (which sits around 1e-10 for
// unit-scale losses at step 1e-5).
template <class Real>
GradCheckResult<Real> check_gradients(const std::function<Tensor<Real>()>& f,
                                      const ParamList<Real>& params,
                                      Real step = Real(1e-5),
                                      Real tolerance = Real(1e-4),
                                      Real floor = Real(1e-5)) {
  GradCheckResult<Real> result;
  for (const auto& p : params) p.value.zero_grad();
  Tensor<Real> loss = f();
  loss.backward();

  std::vector<Tensor<Real>> tensors;
  for (const auto& p : params) tensors.push_back(p.value);
  auto scalar_f = [&]() { return f().item(); };
  auto fd = finite_diff_grad<Real>(scalar_f, tensors, step);

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const bool has = params[pi].value.has_grad();
    for (std::size_t i = 0; i < fd[pi].size(); ++i) {
      const Real a = has ? params[pi].value.grad()[i] : Real(0);
      const Real b = fd[pi][i];
      const Real denom = std::max({std::abs(a), std::abs(b), floor});
      const Real rel = std::abs(a - b) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_param = params[pi].name;
        result.worst_index = i;
        result.worst_ad = a;
        result.worst_fd = b;
      }
    }
  }
  result.pass = result.max_rel_err < tolerance;
  return result;
}

}  // namespace vremd
