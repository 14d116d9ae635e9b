#pragma once

// Dense n-dimensional tensors with dynamic-graph reverse-mode differentiation.
// Every operation records a backward closure on its result node; backward()
// replays them in reverse topological order. Scalar type is a template
// parameter: float for training, double for gradient checking.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mrl/errors.hpp"

namespace mrl::ad {

using Shape = std::vector<std::size_t>;
using Axes = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // persistent, accumulated across backward passes
  std::vector<T> ct;    // scratch cotangent, live only inside backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
};

template <class T>
std::shared_ptr<Node<T>> make_node(Shape shape) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value.assign(numel(n->shape), T(0));
  return n;
}

template <class T>
std::vector<T>& ct_of(Node<T>& n) {
  if (n.ct.size() != n.value.size()) n.ct.assign(n.value.size(), T(0));
  return n.ct;
}

}  // namespace detail

// Disables graph recording in scope (evaluation-only forwards).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor requires float or double");

 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = detail::make_node<T>(std::move(shape));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (numel(shape) != data.size())
      fail(ErrorKind::ShapeMismatch, "tensor: shape " + shape_str(shape) + " expects " +
                                         std::to_string(numel(shape)) + " values, got " +
                                         std::to_string(data.size()));
    Tensor t;
    t.node_ = detail::make_node<T>(std::move(shape));
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return full({}, v, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  std::span<T> value() { return node_->value; }
  std::span<const T> value() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad() { return node_->grad; }

  // Allocates (if needed) and zeroes the gradient buffer.
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  T item() const {
    if (size() != 1)
      fail(ErrorKind::InvalidArgument, "item: tensor has " + std::to_string(size()) + " elements");
    return node_->value[0];
  }

  std::shared_ptr<detail::Node<T>>& node() { return node_; }
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

namespace detail {

// Marks `out` as differentiable w.r.t. `parents` when recording is on.
template <class T>
void attach(const std::shared_ptr<Node<T>>& out, std::vector<std::shared_ptr<Node<T>>> parents,
            std::function<void(Node<T>&)> backprop) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg && grad_mode()) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(backprop);
  }
}

struct BroadcastPlan {
  Shape out_shape;
  std::vector<std::size_t> a_strides;  // 0 on broadcast axes
  std::vector<std::size_t> b_strides;
};

inline BroadcastPlan make_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan plan;
  plan.out_shape.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1)
      fail(ErrorKind::ShapeMismatch,
           std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    plan.out_shape[i] = std::max(ea, eb);
  }
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  plan.a_strides.assign(rank, 0);
  plan.b_strides.assign(rank, 0);
  for (std::size_t i = 0; i < rank; ++i) {
    if (i >= rank - a.size()) {
      const std::size_t d = i - (rank - a.size());
      plan.a_strides[i] = (a[d] == 1 && plan.out_shape[i] > 1) ? 0 : sa[d];
    }
    if (i >= rank - b.size()) {
      const std::size_t d = i - (rank - b.size());
      plan.b_strides[i] = (b[d] == 1 && plan.out_shape[i] > 1) ? 0 : sb[d];
    }
  }
  return plan;
}

// Iterates the broadcast output space, handing (out index, a offset, b offset)
// to fn. Odometer walk, no per-element divisions.
template <class F>
void broadcast_walk(const BroadcastPlan& plan, F&& fn) {
  const std::size_t n = numel(plan.out_shape);
  if (n == 0) return;
  const std::size_t rank = plan.out_shape.size();
  if (rank == 0) {
    fn(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ao = 0, bo = 0;
  for (std::size_t i = 0;;) {
    fn(i, ao, bo);
    if (++i == n) break;
    std::size_t d = rank;
    while (d-- > 0) {
      ++idx[d];
      ao += plan.a_strides[d];
      bo += plan.b_strides[d];
      if (idx[d] < plan.out_shape[d]) break;
      idx[d] = 0;
      ao -= plan.a_strides[d] * plan.out_shape[d];
      bo -= plan.b_strides[d] * plan.out_shape[d];
    }
  }
}

enum class BinOp { Add, Sub, Mul };

template <class T>
Tensor<T> binary_elementwise(const Tensor<T>& a, const Tensor<T>& b, BinOp op, const char* name) {
  const auto plan = make_broadcast(a.shape(), b.shape(), name);
  auto out = make_node<T>(plan.out_shape);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* ov = out->value.data();
  const bool same = a.shape() == b.shape();
  switch (op) {
    case BinOp::Add:
      if (same)
        for (std::size_t i = 0; i < out->value.size(); ++i) ov[i] = av[i] + bv[i];
      else
        broadcast_walk(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) { ov[i] = av[ao] + bv[bo]; });
      break;
    case BinOp::Sub:
      if (same)
        for (std::size_t i = 0; i < out->value.size(); ++i) ov[i] = av[i] - bv[i];
      else
        broadcast_walk(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) { ov[i] = av[ao] - bv[bo]; });
      break;
    case BinOp::Mul:
      if (same)
        for (std::size_t i = 0; i < out->value.size(); ++i) ov[i] = av[i] * bv[i];
      else
        broadcast_walk(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) { ov[i] = av[ao] * bv[bo]; });
      break;
  }
  attach<T>(out, {a.node(), b.node()}, [plan, op](Node<T>& self) {
    const auto& ct = self.ct;
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    T* actp = pa.requires_grad ? ct_of(pa).data() : nullptr;
    T* bctp = pb.requires_grad ? ct_of(pb).data() : nullptr;
    const T* av = pa.value.data();
    const T* bv = pb.value.data();
    switch (op) {
      case BinOp::Add:
        broadcast_walk(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) {
          if (actp) actp[ao] += ct[i];
          if (bctp) bctp[bo] += ct[i];
        });
        break;
      case BinOp::Sub:
        broadcast_walk(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) {
          if (actp) actp[ao] += ct[i];
          if (bctp) bctp[bo] -= ct[i];
        });
        break;
      case BinOp::Mul:
        broadcast_walk(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) {
          if (actp) actp[ao] += ct[i] * bv[bo];
          if (bctp) bctp[bo] += ct[i] * av[ao];
        });
        break;
    }
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m x k] += dC[m x n] * B^T  (B is k x n)
template <class T>
void gemm_acc_abt(const T* dc, const T* b, T* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* dcrow = dc + i * n;
    T* darow = da + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* brow = b + kk * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      darow[kk] += acc;
    }
  }
}

// dB[k x n] += A^T * dC  (A is m x k)
template <class T>
void gemm_acc_atb(const T* a, const T* dc, T* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* dcrow = dc + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      if (av == T(0)) continue;
      T* dbrow = db + kk * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

// Decomposition of an axis-wise op: [outer, axis extent, inner] lanes.
struct AxisLanes {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

inline AxisLanes axis_lanes(const Shape& shape, std::size_t axis) {
  AxisLanes l;
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  l.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

inline std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  long a = axis;
  if (a < 0) a += static_cast<long>(rank);
  if (a < 0 || a >= static_cast<long>(rank))
    fail(ErrorKind::InvalidArgument,
         std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(a);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting).

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(a, b, detail::BinOp::Add, "add");
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(a, b, detail::BinOp::Sub, "sub");
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_elementwise(a, b, detail::BinOp::Mul, "mul");
}
template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, b);
}
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) {
  return sub(a, b);
}
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) {
  return mul(a, b);
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  auto out = detail::make_node<T>(x.shape());
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = c * xv[i];
  detail::attach<T>(out, {x.node()}, [c](detail::Node<T>& self) {
    auto& pct = detail::ct_of(*self.parents[0]);
    for (std::size_t i = 0; i < self.ct.size(); ++i) pct[i] += c * self.ct[i];
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  auto out = detail::make_node<T>(x.shape());
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = xv[i] + c;
  detail::attach<T>(out, {x.node()}, [](detail::Node<T>& self) {
    auto& pct = detail::ct_of(*self.parents[0]);
    for (std::size_t i = 0; i < self.ct.size(); ++i) pct[i] += self.ct[i];
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

// ---------------------------------------------------------------------------
// matmul: contracts the trailing two axes; leading axes broadcast.

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    fail(ErrorKind::ShapeMismatch,
         "matmul: both operands need rank >= 2, got " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (ka != kb)
    fail(ErrorKind::ShapeMismatch, "matmul: inner extents disagree: " + shape_str(sa) + " x " + shape_str(sb));
  const Shape a_lead(sa.begin(), sa.end() - 2);
  const Shape b_lead(sb.begin(), sb.end() - 2);
  auto plan = detail::make_broadcast(a_lead, b_lead, "matmul");
  Shape out_shape = plan.out_shape;
  out_shape.push_back(m);
  out_shape.push_back(n);

  auto out = detail::make_node<T>(out_shape);
  const std::size_t a_block = m * ka, b_block = ka * n, o_block = m * n;
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* ov = out->value.data();
  detail::broadcast_walk(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) {
    detail::gemm_acc(av + ao * a_block, bv + bo * b_block, ov + i * o_block, m, ka, n);
  });

  detail::attach<T>(out, {a.node(), b.node()},
                    [plan, m, ka, n, a_block, b_block, o_block](detail::Node<T>& self) {
                      detail::Node<T>& pa = *self.parents[0];
                      detail::Node<T>& pb = *self.parents[1];
                      const T* av = pa.value.data();
                      const T* bv = pb.value.data();
                      const T* ct = self.ct.data();
                      T* act = pa.requires_grad ? detail::ct_of(pa).data() : nullptr;
                      T* bct = pb.requires_grad ? detail::ct_of(pb).data() : nullptr;
                      detail::broadcast_walk(plan, [&](std::size_t i, std::size_t ao, std::size_t bo) {
                        const T* dc = ct + i * o_block;
                        if (act) detail::gemm_acc_abt(dc, bv + bo * b_block, act + ao * a_block, m, ka, n);
                        if (bct) detail::gemm_acc_atb(av + ao * a_block, dc, bct + bo * b_block, m, ka, n);
                      });
                    });
  Tensor<T> t;
  t.node() = out;
  return t;
}

// ---------------------------------------------------------------------------
// softmax along an axis, max-subtracted for stability.

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis_in) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank(), "softmax");
  for (const T v : x.value())
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteInput, "softmax: non-finite input");
  const auto lanes = detail::axis_lanes(x.shape(), axis);
  auto out = detail::make_node<T>(x.shape());
  const T* xv = x.value().data();
  T* ov = out->value.data();
  for (std::size_t o = 0; o < lanes.outer; ++o) {
    for (std::size_t in = 0; in < lanes.inner; ++in) {
      const std::size_t base = o * lanes.extent * lanes.inner + in;
      T mx = xv[base];
      for (std::size_t e = 1; e < lanes.extent; ++e) mx = std::max(mx, xv[base + e * lanes.inner]);
      T sum = T(0);
      for (std::size_t e = 0; e < lanes.extent; ++e) {
        const T ev = std::exp(xv[base + e * lanes.inner] - mx);
        ov[base + e * lanes.inner] = ev;
        sum += ev;
      }
      const T inv = T(1) / sum;
      for (std::size_t e = 0; e < lanes.extent; ++e) ov[base + e * lanes.inner] *= inv;
    }
  }
  detail::attach<T>(out, {x.node()}, [lanes](detail::Node<T>& self) {
    auto& pct = detail::ct_of(*self.parents[0]);
    const T* y = self.value.data();
    const T* ct = self.ct.data();
    for (std::size_t o = 0; o < lanes.outer; ++o) {
      for (std::size_t in = 0; in < lanes.inner; ++in) {
        const std::size_t base = o * lanes.extent * lanes.inner + in;
        T dot = T(0);
        for (std::size_t e = 0; e < lanes.extent; ++e) {
          const std::size_t i = base + e * lanes.inner;
          dot += ct[i] * y[i];
        }
        for (std::size_t e = 0; e < lanes.extent; ++e) {
          const std::size_t i = base + e * lanes.inner;
          pct[i] += y[i] * (ct[i] - dot);
        }
      }
    }
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

// ---------------------------------------------------------------------------
// Layer normalization along an axis with learnable gain/bias (variance eps).

template <class T>
Tensor<T> layer_normalize(const Tensor<T>& x, int axis_in, const Tensor<T>& gain, const Tensor<T>& bias,
                          T eps = T(1e-5)) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank(), "layer_normalize");
  const std::size_t extent = x.shape()[axis];
  if (extent < 1) fail(ErrorKind::InvalidArgument, "layer_normalize: axis extent < 1");
  if (gain.shape() != Shape{extent} || bias.shape() != Shape{extent})
    fail(ErrorKind::ShapeMismatch, "layer_normalize: gain/bias must have shape [" + std::to_string(extent) +
                                       "], got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  const auto lanes = detail::axis_lanes(x.shape(), axis);
  auto out = detail::make_node<T>(x.shape());
  const T* xv = x.value().data();
  const T* gv = gain.value().data();
  const T* bv = bias.value().data();
  T* ov = out->value.data();
  const T inv_extent = T(1) / static_cast<T>(lanes.extent);
  for (std::size_t o = 0; o < lanes.outer; ++o) {
    for (std::size_t in = 0; in < lanes.inner; ++in) {
      const std::size_t base = o * lanes.extent * lanes.inner + in;
      T mean = T(0);
      for (std::size_t e = 0; e < lanes.extent; ++e) mean += xv[base + e * lanes.inner];
      mean *= inv_extent;
      T var = T(0);
      for (std::size_t e = 0; e < lanes.extent; ++e) {
        const T d = xv[base + e * lanes.inner] - mean;
        var += d * d;
      }
      var *= inv_extent;
      const T inv_std = T(1) / std::sqrt(var + eps);
      for (std::size_t e = 0; e < lanes.extent; ++e) {
        const std::size_t i = base + e * lanes.inner;
        ov[i] = (xv[i] - mean) * inv_std * gv[e] + bv[e];
      }
    }
  }
  detail::attach<T>(out, {x.node(), gain.node(), bias.node()}, [lanes, eps, inv_extent](detail::Node<T>& self) {
    detail::Node<T>& px = *self.parents[0];
    detail::Node<T>& pg = *self.parents[1];
    detail::Node<T>& pb = *self.parents[2];
    const T* xv = px.value.data();
    const T* gv = pg.value.data();
    const T* ct = self.ct.data();
    T* xct = px.requires_grad ? detail::ct_of(px).data() : nullptr;
    T* gct = pg.requires_grad ? detail::ct_of(pg).data() : nullptr;
    T* bct = pb.requires_grad ? detail::ct_of(pb).data() : nullptr;
    std::vector<T> xhat(lanes.extent);
    for (std::size_t o = 0; o < lanes.outer; ++o) {
      for (std::size_t in = 0; in < lanes.inner; ++in) {
        const std::size_t base = o * lanes.extent * lanes.inner + in;
        T mean = T(0);
        for (std::size_t e = 0; e < lanes.extent; ++e) mean += xv[base + e * lanes.inner];
        mean *= inv_extent;
        T var = T(0);
        for (std::size_t e = 0; e < lanes.extent; ++e) {
          const T d = xv[base + e * lanes.inner] - mean;
          var += d * d;
        }
        var *= inv_extent;
        const T inv_std = T(1) / std::sqrt(var + eps);
        for (std::size_t e = 0; e < lanes.extent; ++e) xhat[e] = (xv[base + e * lanes.inner] - mean) * inv_std;
        if (gct || bct) {
          for (std::size_t e = 0; e < lanes.extent; ++e) {
            const T c = ct[base + e * lanes.inner];
            if (gct) gct[e] += c * xhat[e];
            if (bct) bct[e] += c;
          }
        }
        if (xct) {
          T m1 = T(0), m2 = T(0);
          for (std::size_t e = 0; e < lanes.extent; ++e) {
            const T u = ct[base + e * lanes.inner] * gv[e];
            m1 += u;
            m2 += u * xhat[e];
          }
          m1 *= inv_extent;
          m2 *= inv_extent;
          for (std::size_t e = 0; e < lanes.extent; ++e) {
            const T u = ct[base + e * lanes.inner] * gv[e];
            xct[base + e * lanes.inner] += inv_std * (u - m1 - xhat[e] * m2);
          }
        }
      }
    }
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

// ---------------------------------------------------------------------------
// Shape manipulation.

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    fail(ErrorKind::ShapeMismatch,
         "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = detail::make_node<T>(std::move(shape));
  out->value = std::vector<T>(x.value().begin(), x.value().end());
  detail::attach<T>(out, {x.node()}, [](detail::Node<T>& self) {
    auto& pct = detail::ct_of(*self.parents[0]);
    for (std::size_t i = 0; i < self.ct.size(); ++i) pct[i] += self.ct[i];
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const Axes& axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) fail(ErrorKind::InvalidArgument, "permute: axes size must equal rank");
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (axes[i] >= rank || seen[axes[i]]) fail(ErrorKind::InvalidArgument, "permute: invalid axis order");
    seen[axes[i]] = true;
    out_shape[i] = x.shape()[axes[i]];
  }
  // out_stride_for_input_axis[d]: stride in the output for input axis d.
  const auto out_strides = row_major_strides(out_shape);
  std::vector<std::size_t> map(rank);
  for (std::size_t i = 0; i < rank; ++i) map[axes[i]] = out_strides[i];

  auto out = detail::make_node<T>(out_shape);
  const T* xv = x.value().data();
  T* ov = out->value.data();
  const Shape in_shape = x.shape();
  const std::size_t n = x.size();
  {
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oo = 0;
    for (std::size_t i = 0;;) {
      ov[oo] = xv[i];
      if (++i == n) break;
      std::size_t d = rank;
      while (d-- > 0) {
        ++idx[d];
        oo += map[d];
        if (idx[d] < in_shape[d]) break;
        idx[d] = 0;
        oo -= map[d] * in_shape[d];
      }
    }
  }
  detail::attach<T>(out, {x.node()}, [map, in_shape, rank, n](detail::Node<T>& self) {
    auto& pct = detail::ct_of(*self.parents[0]);
    const T* ct = self.ct.data();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t oo = 0;
    for (std::size_t i = 0;;) {
      pct[i] += ct[oo];
      if (++i == n) break;
      std::size_t d = rank;
      while (d-- > 0) {
        ++idx[d];
        oo += map[d];
        if (idx[d] < in_shape[d]) break;
        idx[d] = 0;
        oo -= map[d] * in_shape[d];
      }
    }
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

// ---------------------------------------------------------------------------
// Reductions.

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  auto out = detail::make_node<T>(Shape{});
  T acc = T(0);
  for (const T v : x.value()) acc += v;
  out->value[0] = acc;
  detail::attach<T>(out, {x.node()}, [](detail::Node<T>& self) {
    auto& pct = detail::ct_of(*self.parents[0]);
    const T c = self.ct[0];
    for (auto& g : pct) g += c;
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

template <class T>
Tensor<T> mean_over_axis(const Tensor<T>& x, int axis_in, bool keepdim = true) {
  const std::size_t axis = detail::normalize_axis(axis_in, x.rank(), "mean_over_axis");
  const auto lanes = detail::axis_lanes(x.shape(), axis);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[axis] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  auto out = detail::make_node<T>(out_shape);
  const T* xv = x.value().data();
  T* ov = out->value.data();
  const T inv = T(1) / static_cast<T>(lanes.extent);
  for (std::size_t o = 0; o < lanes.outer; ++o) {
    for (std::size_t in = 0; in < lanes.inner; ++in) {
      T acc = T(0);
      const std::size_t base = o * lanes.extent * lanes.inner + in;
      for (std::size_t e = 0; e < lanes.extent; ++e) acc += xv[base + e * lanes.inner];
      ov[o * lanes.inner + in] = acc * inv;
    }
  }
  detail::attach<T>(out, {x.node()}, [lanes, inv](detail::Node<T>& self) {
    auto& pct = detail::ct_of(*self.parents[0]);
    const T* ct = self.ct.data();
    for (std::size_t o = 0; o < lanes.outer; ++o) {
      for (std::size_t in = 0; in < lanes.inner; ++in) {
        const T c = ct[o * lanes.inner + in] * inv;
        const std::size_t base = o * lanes.extent * lanes.inner + in;
        for (std::size_t e = 0; e < lanes.extent; ++e) pct[base + e * lanes.inner] += c;
      }
    }
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

// ---------------------------------------------------------------------------
// Concatenation of two tensors along an axis.

template <class T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, int axis_in) {
  if (a.rank() != b.rank()) fail(ErrorKind::ShapeMismatch, "concat: rank mismatch");
  const std::size_t axis = detail::normalize_axis(axis_in, a.rank(), "concat");
  for (std::size_t i = 0; i < a.rank(); ++i)
    if (i != axis && a.shape()[i] != b.shape()[i])
      fail(ErrorKind::ShapeMismatch,
           "concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ off-axis");
  Shape out_shape = a.shape();
  out_shape[axis] += b.shape()[axis];
  const auto la = detail::axis_lanes(a.shape(), axis);
  const auto lb = detail::axis_lanes(b.shape(), axis);
  auto out = detail::make_node<T>(out_shape);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  T* ov = out->value.data();
  const std::size_t arun = la.extent * la.inner;
  const std::size_t brun = lb.extent * lb.inner;
  for (std::size_t o = 0; o < la.outer; ++o) {
    std::copy(av + o * arun, av + (o + 1) * arun, ov + o * (arun + brun));
    std::copy(bv + o * brun, bv + (o + 1) * brun, ov + o * (arun + brun) + arun);
  }
  detail::attach<T>(out, {a.node(), b.node()}, [la, arun, brun](detail::Node<T>& self) {
    detail::Node<T>& pa = *self.parents[0];
    detail::Node<T>& pb = *self.parents[1];
    const T* ct = self.ct.data();
    T* act = pa.requires_grad ? detail::ct_of(pa).data() : nullptr;
    T* bct = pb.requires_grad ? detail::ct_of(pb).data() : nullptr;
    for (std::size_t o = 0; o < la.outer; ++o) {
      const T* src = ct + o * (arun + brun);
      if (act)
        for (std::size_t i = 0; i < arun; ++i) act[o * arun + i] += src[i];
      if (bct)
        for (std::size_t i = 0; i < brun; ++i) bct[o * brun + i] += src[arun + i];
    }
  });
  Tensor<T> t;
  t.node() = out;
  return t;
}

// ---------------------------------------------------------------------------
// Reverse pass. Accumulates into the persistent grad buffers of every
// reachable requires_grad tensor; calling twice doubles the grads.

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) fail(ErrorKind::InvalidArgument, "backward: undefined tensor");
  auto root = loss.node();
  if (numel(root->shape) != 1)
    fail(ErrorKind::InvalidArgument, "backward: loss must be scalar, got shape " + shape_str(root->shape));
  if (!root->requires_grad) return;

  using NodeT = detail::Node<T>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& top = stack.back();
    NodeT* n = top.first;
    if (top.second < n->parents.size()) {
      NodeT* p = n->parents[top.second++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  detail::ct_of(*root)[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* n = *it;
    if (n->ct.size() != n->value.size()) n->ct.assign(n->value.size(), T(0));
    if (n->backprop) n->backprop(*n);
    if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), T(0));
    for (std::size_t i = 0; i < n->grad.size(); ++i) n->grad[i] += n->ct[i];
    n->ct.clear();
    n->ct.shrink_to_fit();
  }
}

}  // namespace mrl::ad
