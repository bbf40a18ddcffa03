#pragma once

// Reverse-mode autodiff over dense row-major tensors. One Graph is a tape:
// every op appends a node holding its forward values and a backward closure.
// Scalar type T is float for training and double for gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mpnerf/errors.hpp"

namespace mpnerf::ad {

using Shape = std::vector<int>;

inline long numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Trailing-dimension broadcast of two shapes; throws on mismatch.
inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  Shape out(std::max(a.size(), b.size()));
  for (size_t i = 0; i < out.size(); ++i) {
    int da = i < a.size() ? a[a.size() - 1 - i] : 1;
    int db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw InvariantError(std::string(op) + ": shapes not broadcastable " +
                           shape_str(a) + " vs " + shape_str(b));
    out[out.size() - 1 - i] = std::max(da, db);
  }
  return out;
}

// Calls f(out_lin, a_lin, b_lin) for every element of the broadcast output.
template <class F>
void bcast_apply(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
  const long n = numel(out);
  if (sa == out && sb == out) {
    for (long i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  if (sa == out && numel(sb) == 1) {
    for (long i = 0; i < n; ++i) f(i, i, 0);
    return;
  }
  if (numel(sa) == 1 && sb == out) {
    for (long i = 0; i < n; ++i) f(i, 0, i);
    return;
  }
  const int rank = static_cast<int>(out.size());
  // Per-out-dim strides into a and b; 0 where the input broadcasts.
  std::vector<long> stra(rank, 0), strb(rank, 0);
  {
    long s = 1;
    for (int i = 0; i < static_cast<int>(sa.size()); ++i) {
      int d = rank - 1 - i;
      int dim = sa[sa.size() - 1 - i];
      stra[d] = (dim == 1) ? 0 : s;
      s *= dim;
    }
    s = 1;
    for (int i = 0; i < static_cast<int>(sb.size()); ++i) {
      int d = rank - 1 - i;
      int dim = sb[sb.size() - 1 - i];
      strb[d] = (dim == 1) ? 0 : s;
      s *= dim;
    }
  }
  std::vector<int> idx(rank, 0);
  long ia = 0, ib = 0;
  for (long io = 0; io < n; ++io) {
    f(io, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ++idx[d];
      ia += stra[d];
      ib += strb[d];
      if (idx[d] < out[d]) break;
      ia -= stra[d] * out[d];
      ib -= strb[d] * out[d];
      idx[d] = 0;
    }
  }
}

template <class T>
class Graph;

template <class T>
struct Tensor {
  Graph<T>* g = nullptr;
  int id = -1;
  Shape shape;

  bool defined() const { return g != nullptr; }
  long numel() const { return ad::numel(shape); }
  const std::vector<T>& values() const;
  // Scalar convenience for 1-element tensors.
  T item() const;
};

template <class T>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<int> inputs;
    std::function<void(Graph&, int)> backward;  // null for leaves
  };

  Tensor<T> leaf(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (ad::numel(shape) != static_cast<long>(data.size()))
      throw InvariantError("leaf: data size " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    nodes_.push_back(Node{std::move(shape), std::move(data), {}, requires_grad, {}, nullptr});
    return handle(static_cast<int>(nodes_.size()) - 1);
  }

  Tensor<T> constant(Shape shape, T fill) {
    std::vector<T> d(ad::numel(shape), fill);
    return leaf(std::move(shape), std::move(d), false);
  }

  Tensor<T> scalar(T v) { return leaf({1}, {v}, false); }

  Tensor<T> make_node(Shape shape, std::vector<T> values, std::vector<int> inputs,
                      std::function<void(Graph&, int)> backward) {
    bool rg = false;
    for (int i : inputs) rg = rg || nodes_[i].requires_grad;
    nodes_.push_back(Node{std::move(shape), std::move(values), {}, rg,
                          std::move(inputs), rg ? std::move(backward) : nullptr});
    return handle(static_cast<int>(nodes_.size()) - 1);
  }

  const std::vector<T>& values(int id) const { return nodes_[id].values; }
  const Shape& shape(int id) const { return nodes_[id].shape; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }

  // Gradient buffer, allocated on first touch.
  std::vector<T>& grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.values.size(), T(0));
    return n.grad;
  }

  // Read-only grad view; empty if the node was never reached.
  const std::vector<T>& grad(const Tensor<T>& t) const {
    static const std::vector<T> kEmpty;
    const Node& n = nodes_[t.id];
    return n.grad.empty() ? kEmpty : n.grad;
  }

  void backward(const Tensor<T>& loss) {
    if (loss.g != this) throw InvariantError("backward: tensor from another graph");
    if (loss.numel() != 1) throw InvariantError("backward: loss must be scalar");
    if (consumed_) throw InvariantError("backward: graph already consumed");
    consumed_ = true;
    // Reachability from the loss, following input edges.
    std::vector<uint8_t> reach(nodes_.size(), 0);
    std::vector<int> stack{loss.id};
    reach[loss.id] = 1;
    while (!stack.empty()) {
      int id = stack.back();
      stack.pop_back();
      for (int in : nodes_[id].inputs)
        if (!reach[in]) {
          reach[in] = 1;
          stack.push_back(in);
        }
    }
    grad_buf(loss.id)[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!reach[id] || !n.requires_grad || !n.backward) continue;
      if (n.grad.empty()) continue;  // no gradient flowed here
      n.backward(*this, id);
    }
  }

  bool consumed() const { return consumed_; }
  size_t num_nodes() const { return nodes_.size(); }

 private:
  Tensor<T> handle(int id) { return Tensor<T>{this, id, nodes_[id].shape}; }
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

template <class T>
const std::vector<T>& Tensor<T>::values() const {
  return g->values(id);
}

template <class T>
T Tensor<T>::item() const {
  if (numel() != 1) throw InvariantError("item: tensor is not scalar");
  return g->values(id)[0];
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

// Binary elementwise with broadcasting. fval computes y; fda/fdb return the
// local partials given (a, b, y).
template <class T, class FV, class FA, class FB>
Tensor<T> binary(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                 FV fval, FA fda, FB fdb) {
  if (a.g != b.g) throw InvariantError(std::string(name) + ": operands from different graphs");
  Graph<T>& g = *a.g;
  Shape out = broadcast_shape(a.shape, b.shape, name);
  std::vector<T> y(numel(out));
  const auto& av = a.values();
  const auto& bv = b.values();
  bcast_apply(out, a.shape, b.shape,
              [&](long io, long ia, long ib) { y[io] = fval(av[ia], bv[ib]); });
  Shape sa = a.shape, sb = b.shape;
  int aid = a.id, bid = b.id;
  return g.make_node(
      out, std::move(y), {a.id, b.id},
      [=](Graph<T>& gr, int self) {
        const auto& go = gr.grad_buf(self);
        const auto& yv = gr.values(self);
        const auto& avv = gr.values(aid);
        const auto& bvv = gr.values(bid);
        const Shape& os = gr.shape(self);
        bool need_a = gr.requires_grad(aid), need_b = gr.requires_grad(bid);
        std::vector<T>* ga = need_a ? &gr.grad_buf(aid) : nullptr;
        std::vector<T>* gb = need_b ? &gr.grad_buf(bid) : nullptr;
        bcast_apply(os, sa, sb, [&](long io, long ia, long ib) {
          T gout = go[io];
          if (ga) (*ga)[ia] += gout * fda(avv[ia], bvv[ib], yv[io]);
          if (gb) (*gb)[ib] += gout * fdb(avv[ia], bvv[ib], yv[io]);
        });
      });
}

// Unary elementwise. fd returns the local derivative given (x, y).
template <class T, class FV, class FD>
Tensor<T> unary(const char* /*name*/, const Tensor<T>& x, FV fval, FD fd) {
  Graph<T>& g = *x.g;
  std::vector<T> y(x.numel());
  const auto& xv = x.values();
  for (long i = 0; i < x.numel(); ++i) y[i] = fval(xv[i]);
  int xid = x.id;
  return g.make_node(x.shape, std::move(y), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.requires_grad(xid)) return;
    const auto& go = gr.grad_buf(self);
    const auto& yv = gr.values(self);
    const auto& xvv = gr.values(xid);
    auto& gx = gr.grad_buf(xid);
    for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * fd(xvv[i], yv[i]);
  });
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
T stable_softplus(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "add", a, b, [](T x, T y) { return x + y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; },
      [](T, T, T) { return T(1); }, [](T, T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; },
      [](T, T y, T) { return y; }, [](T x, T, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  for (T v : b.values())
    if (v == T(0)) throw NumericError("div: zero divisor");
  return detail::binary<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
  return detail::unary<T>("neg", x, [](T v) { return -v; },
                          [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary<T>("exp", x, [](T v) { return std::exp(v); },
                          [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x) {
  for (T v : x.values())
    if (v <= T(0)) throw NumericError("log: nonpositive operand");
  return detail::unary<T>("log", x, [](T v) { return std::log(v); },
                          [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary<T>("abs", x, [](T v) { return std::abs(v); },
                          [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary<T>("sigmoid", x,
                          [](T v) { return detail::stable_sigmoid(v); },
                          [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary<T>("softplus", x,
                          [](T v) { return detail::stable_softplus(v); },
                          [](T v, T) { return detail::stable_sigmoid(v); });
}

template <class T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
  return detail::unary<T>("clamp_min", x,
                          [lo](T v) { return v < lo ? lo : v; },
                          [lo](T v, T) { return v > lo ? T(1) : T(0); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return clamp_min(x, T(0));
}

template <class T>
Tensor<T> sin(const Tensor<T>& x) {
  return detail::unary<T>("sin", x, [](T v) { return std::sin(v); },
                          [](T v, T) { return std::cos(v); });
}

template <class T>
Tensor<T> cos(const Tensor<T>& x) {
  return detail::unary<T>("cos", x, [](T v) { return std::cos(v); },
                          [](T v, T) { return -std::sin(v); });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& x) {
  for (T v : x.values())
    if (v < T(0)) throw NumericError("sqrt: negative operand");
  return detail::unary<T>("sqrt", x, [](T v) { return std::sqrt(v); },
                          [](T, T y) { return T(1) / (T(2) * y); });
}

// Pushes values inside (-eps, eps) out to +eps so they are safe divisors.
// Saturated entries get zero gradient; callers mask them out anyway.
template <class T>
Tensor<T> clamp_away_zero(const Tensor<T>& x, T eps) {
  return detail::unary<T>("clamp_away_zero", x,
                          [eps](T v) { return (v > -eps && v < eps) ? eps : v; },
                          [eps](T v, T) { return (v > -eps && v < eps) ? T(0) : T(1); });
}

// sin(sqrt(x))/sqrt(x), series-stabilized near 0. Feeds the rotation
// exponential with x = theta^2.
template <class T>
Tensor<T> sinc_sqrt(const Tensor<T>& x) {
  auto f = [](T v) -> T {
    if (v < T(1e-8)) return T(1) - v / T(6) + v * v / T(120);
    T s = std::sqrt(v);
    return std::sin(s) / s;
  };
  auto d = [](T v, T) -> T {
    if (v < T(1e-6)) return T(-1) / T(6) + v / T(60) - v * v / T(1680);
    T s = std::sqrt(v);
    return (s * std::cos(s) - std::sin(s)) / (T(2) * s * s * s);
  };
  return detail::unary<T>("sinc_sqrt", x, f, d);
}

// (1 - cos(sqrt(x)))/x, series-stabilized near 0.
template <class T>
Tensor<T> cosc_sqrt(const Tensor<T>& x) {
  auto f = [](T v) -> T {
    if (v < T(1e-8)) return T(0.5) - v / T(24) + v * v / T(720);
    return (T(1) - std::cos(std::sqrt(v))) / v;
  };
  auto d = [](T v, T) -> T {
    if (v < T(1e-6)) return T(-1) / T(24) + v / T(360) - v * v / T(13440);
    T s = std::sqrt(v);
    return (s * std::sin(s) - T(2) * (T(1) - std::cos(s))) / (T(2) * v * v);
  };
  return detail::unary<T>("cosc_sqrt", x, f, d);
}

// Scalar-operand conveniences.
template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }
template <class T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return add(a, a.g->scalar(s)); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, T s) { return sub(a, a.g->scalar(s)); }
template <class T>
Tensor<T> operator-(T s, const Tensor<T>& a) { return sub(a.g->scalar(s), a); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return mul(a, a.g->scalar(s)); }
template <class T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return mul(a, a.g->scalar(s)); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, T s) { return div(a, a.g->scalar(s)); }
template <class T>
Tensor<T> operator/(T s, const Tensor<T>& a) { return div(a.g->scalar(s), a); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceOp { sum, mean, min, max };

template <class T>
Tensor<T> reduce(ReduceOp op, const Tensor<T>& x, const std::vector<int>& axes) {
  Graph<T>& g = *x.g;
  const int rank = static_cast<int>(x.shape.size());
  if (x.numel() == 0) throw NumericError("reduce: empty tensor");
  std::vector<uint8_t> red(rank, 0);
  for (int a : axes) {
    if (a < 0 || a >= rank) throw InvariantError("reduce: axis out of range");
    red[a] = 1;
  }
  Shape keep = x.shape;  // reduced dims collapsed to 1
  Shape out;
  long count = 1;
  for (int d = 0; d < rank; ++d) {
    if (red[d]) {
      count *= x.shape[d];
      keep[d] = 1;
    } else {
      out.push_back(x.shape[d]);
    }
  }
  if (out.empty()) out = {1};
  if (count == 0) throw NumericError("reduce: empty reduction");

  const auto& xv = x.values();
  long on = numel(keep);
  std::vector<T> y(on, op == ReduceOp::sum || op == ReduceOp::mean
                           ? T(0)
                           : (op == ReduceOp::min ? std::numeric_limits<T>::max()
                                                  : std::numeric_limits<T>::lowest()));
  std::vector<long> arg;  // first-index ties for min/max
  if (op == ReduceOp::min || op == ReduceOp::max) arg.assign(on, -1);
  bcast_apply(x.shape, x.shape, keep, [&](long ix, long, long io) {
    switch (op) {
      case ReduceOp::sum:
      case ReduceOp::mean:
        y[io] += xv[ix];
        break;
      case ReduceOp::min:
        if (xv[ix] < y[io]) { y[io] = xv[ix]; arg[io] = ix; }
        else if (arg[io] < 0) { y[io] = xv[ix]; arg[io] = ix; }
        break;
      case ReduceOp::max:
        if (xv[ix] > y[io]) { y[io] = xv[ix]; arg[io] = ix; }
        else if (arg[io] < 0) { y[io] = xv[ix]; arg[io] = ix; }
        break;
    }
  });
  if (op == ReduceOp::mean)
    for (auto& v : y) v /= T(count);

  Shape xs = x.shape;
  int xid = x.id;
  return g.make_node(out, std::move(y), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.requires_grad(xid)) return;
    const auto& go = gr.grad_buf(self);
    auto& gx = gr.grad_buf(xid);
    if (op == ReduceOp::min || op == ReduceOp::max) {
      for (long io = 0; io < static_cast<long>(go.size()); ++io)
        if (arg[io] >= 0) gx[arg[io]] += go[io];
      return;
    }
    T scale = op == ReduceOp::mean ? T(1) / T(count) : T(1);
    bcast_apply(xs, xs, keep,
                [&](long ix, long, long io) { gx[ix] += go[io] * scale; });
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<int>& axes) {
  return reduce(ReduceOp::sum, x, axes);
}
template <class T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<int>& axes) {
  return reduce(ReduceOp::mean, x, axes);
}
template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<int> axes(x.shape.size());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceOp::sum, x, axes);
}
template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
  std::vector<int> axes(x.shape.size());
  std::iota(axes.begin(), axes.end(), 0);
  return reduce(ReduceOp::mean, x, axes);
}

// ---------------------------------------------------------------------------
// Shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw InvariantError("reshape: element count mismatch " + shape_str(x.shape) +
                         " -> " + shape_str(shape));
  Graph<T>& g = *x.g;
  int xid = x.id;
  return g.make_node(std::move(shape), x.values(), {x.id},
                     [xid](Graph<T>& gr, int self) {
                       if (!gr.requires_grad(xid)) return;
                       const auto& go = gr.grad_buf(self);
                       auto& gx = gr.grad_buf(xid);
                       for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
                     });
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int len) {
  const int rank = static_cast<int>(x.shape.size());
  if (axis < 0 || axis >= rank || start < 0 || len <= 0 || start + len > x.shape[axis])
    throw InvariantError("slice: bad range");
  Shape out = x.shape;
  out[axis] = len;
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape[d];
  for (int d = axis + 1; d < rank; ++d) inner *= x.shape[d];
  const long in_ax = x.shape[axis];
  std::vector<T> y(numel(out));
  const auto& xv = x.values();
  for (long o = 0; o < outer; ++o)
    for (long a = 0; a < len; ++a)
      std::copy_n(&xv[(o * in_ax + start + a) * inner], inner,
                  &y[(o * len + a) * inner]);
  int xid = x.id;
  return x.g->make_node(out, std::move(y), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.requires_grad(xid)) return;
    const auto& go = gr.grad_buf(self);
    auto& gx = gr.grad_buf(xid);
    for (long o = 0; o < outer; ++o)
      for (long a = 0; a < len; ++a) {
        const T* src = &go[(o * len + a) * inner];
        T* dst = &gx[(o * in_ax + start + a) * inner];
        for (long i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw InvariantError("concat: no inputs");
  Graph<T>& g = *parts[0].g;
  const int rank = static_cast<int>(parts[0].shape.size());
  Shape out = parts[0].shape;
  out[axis] = 0;
  for (const auto& p : parts) {
    if (static_cast<int>(p.shape.size()) != rank)
      throw InvariantError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.shape[d] != out[d])
        throw InvariantError("concat: shape mismatch on axis " + std::to_string(d));
    out[axis] += p.shape[axis];
  }
  long outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out[d];
  for (int d = axis + 1; d < rank; ++d) inner *= out[d];
  std::vector<T> y(numel(out));
  std::vector<int> ids, axlens;
  long off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.values();
    long plen = p.shape[axis];
    for (long o = 0; o < outer; ++o)
      std::copy_n(&pv[o * plen * inner], plen * inner,
                  &y[(o * out[axis] + off) * inner]);
    ids.push_back(p.id);
    axlens.push_back(static_cast<int>(plen));
    off += plen;
  }
  long out_ax = out[axis];
  return g.make_node(out, std::move(y), ids, [=](Graph<T>& gr, int self) {
    const auto& go = gr.grad_buf(self);
    long o2 = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      long plen = axlens[k];
      if (gr.requires_grad(ids[k])) {
        auto& gx = gr.grad_buf(ids[k]);
        for (long o = 0; o < outer; ++o) {
          const T* src = &go[(o * out_ax + o2) * inner];
          T* dst = &gx[o * plen * inner];
          for (long i = 0; i < plen * inner; ++i) dst[i] += src[i];
        }
      }
      o2 += plen;
    }
  });
}

// 2-D transpose.
template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.shape.size() != 2) throw InvariantError("transpose: expects 2-D");
  int m = x.shape[0], n = x.shape[1];
  std::vector<T> y(static_cast<size_t>(m) * n);
  const auto& xv = x.values();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) y[static_cast<long>(j) * m + i] = xv[static_cast<long>(i) * n + j];
  int xid = x.id;
  return x.g->make_node({n, m}, std::move(y), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.requires_grad(xid)) return;
    const auto& go = gr.grad_buf(self);
    auto& gx = gr.grad_buf(xid);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        gx[static_cast<long>(i) * n + j] += go[static_cast<long>(j) * m + i];
  });
}

// Nearest-neighbor 2x upsample of a BxCxHxW tensor.
template <class T>
Tensor<T> upsample_nearest2(const Tensor<T>& x) {
  if (x.shape.size() != 4) throw InvariantError("upsample_nearest2: expects BxCxHxW");
  int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Shape out{b, c, 2 * h, 2 * w};
  std::vector<T> y(numel(out));
  const auto& xv = x.values();
  long plane_in = static_cast<long>(h) * w, plane_out = 4L * h * w;
  for (long bc = 0; bc < static_cast<long>(b) * c; ++bc)
    for (int i = 0; i < 2 * h; ++i)
      for (int j = 0; j < 2 * w; ++j)
        y[bc * plane_out + static_cast<long>(i) * 2 * w + j] =
            xv[bc * plane_in + static_cast<long>(i / 2) * w + j / 2];
  int xid = x.id;
  return x.g->make_node(out, std::move(y), {x.id}, [=](Graph<T>& gr, int self) {
    if (!gr.requires_grad(xid)) return;
    const auto& go = gr.grad_buf(self);
    auto& gx = gr.grad_buf(xid);
    for (long bc = 0; bc < static_cast<long>(b) * c; ++bc)
      for (int i = 0; i < 2 * h; ++i)
        for (int j = 0; j < 2 * w; ++j)
          gx[bc * plane_in + static_cast<long>(i / 2) * w + j / 2] +=
              go[bc * plane_out + static_cast<long>(i) * 2 * w + j];
  });
}

}  // namespace mpnerf::ad
