#pragma once

// The primitive catalog of the differentiation engine. Every function
// records one node: a forward value plus the rule that pushes an output
// gradient back to its inputs.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>

#include "pisac/autodiff.hpp"
#include "pisac/errors.hpp"
#include "pisac/widened.hpp"

namespace pisac::ad {

using MatMap = Eigen::Map<RealMatrix>;
using ConstMatMap = Eigen::Map<const RealMatrix>;

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const std::string& what) {
  throw DimensionError(std::string(op) + ": " + what);
}

/// Numpy-style broadcast of two shapes, with per-element source offsets.
struct Broadcast {
  Shape out;
  bool same = false;
  std::shared_ptr<std::vector<std::size_t>> a_off;
  std::shared_ptr<std::vector<std::size_t>> b_off;
};

inline Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast r;
  if (a == b) {
    r.out = a;
    r.same = true;
    return r;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape sa(rank, 1), sb(rank, 1);
  std::copy(a.begin(), a.end(), sa.begin() + (rank - a.size()));
  std::copy(b.begin(), b.end(), sb.begin() + (rank - b.size()));
  r.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (sa[i] != sb[i] && sa[i] != 1 && sb[i] != 1) {
      shape_error(op, "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    r.out[i] = std::max(sa[i], sb[i]);
  }
  // Strides of each operand in its own layout, zeroed on broadcast axes.
  std::vector<std::size_t> st_a(rank, 0), st_b(rank, 0);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t i = rank; i-- > 0;) {
    st_a[i] = sa[i] == 1 ? 0 : acc_a;
    st_b[i] = sb[i] == 1 ? 0 : acc_b;
    acc_a *= sa[i];
    acc_b *= sb[i];
  }
  const std::size_t n = numel(r.out);
  r.a_off = std::make_shared<std::vector<std::size_t>>(n);
  r.b_off = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t e = 0; e < n; ++e) {
    (*r.a_off)[e] = oa;
    (*r.b_off)[e] = ob;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < r.out[i]) {
        oa += st_a[i];
        ob += st_b[i];
        break;
      }
      oa -= st_a[i] * (r.out[i] - 1);
      ob -= st_b[i] * (r.out[i] - 1);
      idx[i] = 0;
    }
  }
  return r;
}

/// Elementwise binary op with broadcasting. `da`/`db` return the local
/// partials given (x, y).
template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, F f, DA da, DB db, const char* tag) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast bc = broadcast(x.shape, y.shape, tag);
  Tensor out(bc.out);
  const std::size_t n = out.size();
  if (bc.same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(x[(*bc.a_off)[i]], y[(*bc.b_off)[i]]);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib, bc, da, db](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(ia);
        const Tensor& yv = t.value(ib);
        const bool need_a = t.requires_grad(ia);
        const bool need_b = t.requires_grad(ib);
        const std::size_t n = g.size();
        if (need_a) {
          Tensor& ga = t.grad_buffer(ia);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t oa = bc.same ? i : (*bc.a_off)[i];
            const std::size_t ob = bc.same ? i : (*bc.b_off)[i];
            ga[oa] += g[i] * da(xv[oa], yv[ob]);
          }
        }
        if (need_b) {
          Tensor& gb = t.grad_buffer(ib);
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t oa = bc.same ? i : (*bc.a_off)[i];
            const std::size_t ob = bc.same ? i : (*bc.b_off)[i];
            gb[ob] += g[i] * db(xv[oa], yv[ob]);
          }
        }
      },
      tag);
}

/// Elementwise unary op; `df(x, y)` is the derivative given input and output.
template <class F, class DF>
Var unary(const Var& a, F f, DF df, const char* tag) {
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  const std::size_t ia = a.id();
  Tape& tape = a.tape();
  const std::size_t io = tape.size();
  return tape.record(
      std::move(out), {a},
      [ia, io, df](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(ia);
        const Tensor& yv = t.value(io);
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(xv[i], yv[i]);
      },
      tag);
}

inline void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; }, "add");
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; }, "sub");
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; }, "mul");
}

/// x * c for a constant c.
inline Var scale(const Var& a, double c) {
  return detail::unary(
      a, [c](double x) { return c * x; }, [c](double, double) { return c; }, "scale");
}

/// x + c for a constant c.
inline Var shift(const Var& a, double c) {
  return detail::unary(
      a, [c](double x) { return x + c; }, [](double, double) { return 1.0; }, "shift");
}

inline Var neg(const Var& a) { return scale(a, -1.0); }
inline Var square(const Var& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; }, "square");
}

inline Var exp(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

inline Var log(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; }, "log");
}

inline Var sqrt(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; }, "sqrt");
}

inline Var sin(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); }, "sin");
}

inline Var cos(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); }, "cos");
}

inline Var reciprocal(const Var& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; }, "reciprocal");
}

/// max(x, 0); the subgradient at 0 is 0.
inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; }, "relu");
}

/// Exponential linear unit with alpha = 1.
inline Var elu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : std::exp(x) - 1.0; },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; }, "elu");
}

inline Var sigmoid(const Var& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator+(const Var& a, double c) { return shift(a, c); }
inline Var operator-(const Var& a, double c) { return shift(a, -c); }
inline Var operator-(double c, const Var& a) { return shift(neg(a), c); }

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.value().size()) {
    detail::shape_error("reshape", shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), a.value().values);
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a}, [ia](Tape& t, const Tensor& g) { detail::accumulate(t.grad_buffer(ia), g); }, "reshape");
}

/// Swaps the last two axes.
inline Var transpose(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) detail::shape_error("transpose", "rank < 2");
  const std::size_t m = s[s.size() - 2], n = s[s.size() - 1];
  const std::size_t batch = a.value().size() / (m * n);
  Shape os = s;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  Tensor out(os);
  const auto& x = a.value();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = x[b * m * n + i * n + j];
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, batch, m, n](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) ga[b * m * n + i * n + j] += g[b * m * n + j * m + i];
          }
        }
      },
      "transpose");
}

namespace detail {

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  const long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) shape_error(op, "axis out of range");
  return static_cast<std::size_t>(axis);
}

inline std::size_t prod(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

}  // namespace detail

inline Var concat(const std::vector<Var>& parts, long axis_in) {
  if (parts.empty()) detail::shape_error("concat", "no inputs");
  const Shape& s0 = parts[0].shape();
  const std::size_t axis = detail::normalize_axis(axis_in, s0.size(), "concat");
  Shape os = s0;
  os[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) detail::shape_error("concat", "rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) detail::shape_error("concat", shape_str(s) + " vs " + shape_str(s0));
    }
    os[axis] += s[axis];
    widths.push_back(s[axis]);
  }
  const std::size_t outer = detail::prod(s0, 0, axis);
  const std::size_t inner = detail::prod(s0, axis + 1, s0.size());
  const std::size_t row = os[axis] * inner;
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& x = parts[p].value();
    const std::size_t chunk = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(x.values.begin() + o * chunk, chunk, out.values.begin() + o * row + off);
    }
    off += chunk;
  }
  std::vector<std::size_t> ids;
  for (const auto& p : parts) ids.push_back(p.id());
  return parts[0].tape().record(
      std::move(out), parts,
      [ids, widths, outer, inner, row](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          const std::size_t chunk = widths[p] * inner;
          if (t.requires_grad(ids[p])) {
            Tensor& gp = t.grad_buffer(ids[p]);
            for (std::size_t o = 0; o < outer; ++o) {
              for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += g[o * row + off + i];
            }
          }
          off += chunk;
        }
      },
      "concat");
}

/// Elements [begin, end) along `axis`.
inline Var slice(const Var& a, long axis_in, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  const std::size_t axis = detail::normalize_axis(axis_in, s.size(), "slice");
  if (begin >= end || end > s[axis]) detail::shape_error("slice", "bad range on " + shape_str(s));
  const std::size_t outer = detail::prod(s, 0, axis);
  const std::size_t inner = detail::prod(s, axis + 1, s.size());
  const std::size_t row = s[axis] * inner;
  const std::size_t chunk = (end - begin) * inner;
  Shape os = s;
  os[axis] = end - begin;
  Tensor out(os);
  const auto& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(x.values.begin() + o * row + begin * inner, chunk, out.values.begin() + o * chunk);
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, outer, row, chunk, begin, inner](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < chunk; ++i) ga[o * row + begin * inner + i] += g[o * chunk + i];
        }
      },
      "slice");
}

// ---------------------------------------------------------------------------
// Reductions

/// Sum of all elements (scalar).
inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(
      Tensor::scalar(s), {a},
      [ia](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_buffer(ia);
        for (auto& v : ga.values) v += g[0];
      },
      "sum");
}

/// Sum over one axis; the axis is removed.
inline Var sum(const Var& a, long axis_in) {
  const Shape& s = a.shape();
  const std::size_t axis = detail::normalize_axis(axis_in, s.size(), "sum");
  const std::size_t outer = detail::prod(s, 0, axis);
  const std::size_t len = s[axis];
  const std::size_t inner = detail::prod(s, axis + 1, s.size());
  Shape os = s;
  os.erase(os.begin() + axis);
  Tensor out(os);
  const auto& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x[(o * len + l) * inner + i];
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, outer, len, inner](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t l = 0; l < len; ++l) {
            for (std::size_t i = 0; i < inner; ++i) ga[(o * len + l) * inner + i] += g[o * inner + i];
          }
        }
      },
      "sum_axis");
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var mean(const Var& a, long axis) {
  const std::size_t ax = detail::normalize_axis(axis, a.shape().size(), "mean");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.shape()[ax]));
}

/// Euclidean norm over the last axis (axis removed). Gradient x / ||x||, 0 at the origin.
inline Var norm(const Var& a) {
  const Shape& s = a.shape();
  if (s.empty()) detail::shape_error("norm", "rank 0");
  const std::size_t len = s.back();
  const std::size_t outer = a.value().size() / len;
  Shape os(s.begin(), s.end() - 1);
  Tensor out(os);
  const auto& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    double acc = 0.0;
    for (std::size_t l = 0; l < len; ++l) acc += x[o * len + l] * x[o * len + l];
    out[o] = std::sqrt(acc);
  }
  const std::size_t ia = a.id();
  const std::size_t io = a.tape().size();
  return a.tape().record(
      std::move(out), {a},
      [ia, io, outer, len](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(ia);
        const Tensor& yv = t.value(io);
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t o = 0; o < outer; ++o) {
          if (yv[o] == 0.0) continue;
          for (std::size_t l = 0; l < len; ++l) ga[o * len + l] += g[o] * xv[o * len + l] / yv[o];
        }
      },
      "norm");
}

/// Minimum over the last axis (axis removed). Ties route the gradient to the lowest index.
inline Var min_last(const Var& a) {
  const Shape& s = a.shape();
  if (s.empty() || s.back() == 0) detail::shape_error("min_last", "empty last axis");
  const std::size_t len = s.back();
  const std::size_t outer = a.value().size() / len;
  Tensor out(Shape(s.begin(), s.end() - 1));
  auto arg = std::make_shared<std::vector<std::size_t>>(outer);
  const auto& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t best = 0;
    for (std::size_t l = 1; l < len; ++l) {
      if (x[o * len + l] < x[o * len + best]) best = l;
    }
    (*arg)[o] = o * len + best;
    out[o] = x[o * len + best];
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, arg](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t o = 0; o < arg->size(); ++o) ga[(*arg)[o]] += g[o];
      },
      "min_last");
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Matrix product over the last two axes. Leading (batch) axes must match,
/// or one operand may be a plain matrix shared across the other's batch.
inline Var matmul(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) detail::shape_error("matmul", "operands need rank >= 2");
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t k2 = sb[sb.size() - 2], n = sb.back();
  if (k != k2) detail::shape_error("matmul", shape_str(sa) + " x " + shape_str(sb));
  const Shape la(sa.begin(), sa.end() - 2), lb(sb.begin(), sb.end() - 2);
  Shape lead;
  if (la == lb) lead = la;
  else if (lb.empty()) lead = la;
  else if (la.empty()) lead = lb;
  else detail::shape_error("matmul", "batch axes differ: " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t batch = numel(lead);
  const std::size_t step_a = la.empty() ? 0 : m * k;
  const std::size_t step_b = lb.empty() ? 0 : k * n;
  Shape os = lead;
  os.push_back(m);
  os.push_back(n);
  Tensor out(os);
  const auto& av = a.value();
  const auto& bv = b.value();
  const bool flat = !la.empty() && lb.empty();
  if (flat) {
    // Shared right operand: one (batch*m) x k by k x n product.
    MatMap(out.values.data(), batch * m, n).noalias() =
        ConstMatMap(av.values.data(), batch * m, k) * ConstMatMap(bv.values.data(), k, n);
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      MatMap(out.values.data() + i * m * n, m, n).noalias() =
          ConstMatMap(av.values.data() + i * step_a, m, k) * ConstMatMap(bv.values.data() + i * step_b, k, n);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib, batch, m, k, n, step_a, step_b, flat](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(ia);
        const Tensor& bv = t.value(ib);
        if (t.requires_grad(ia)) {
          Tensor& ga = t.grad_buffer(ia);
          if (flat) {
            MatMap(ga.values.data(), batch * m, k).noalias() +=
                ConstMatMap(g.values.data(), batch * m, n) * ConstMatMap(bv.values.data(), k, n).transpose();
          } else {
            for (std::size_t i = 0; i < batch; ++i) {
              MatMap(ga.values.data() + i * step_a, m, k).noalias() +=
                  ConstMatMap(g.values.data() + i * m * n, m, n) *
                  ConstMatMap(bv.values.data() + i * step_b, k, n).transpose();
            }
          }
        }
        if (t.requires_grad(ib)) {
          Tensor& gb = t.grad_buffer(ib);
          if (flat) {
            MatMap(gb.values.data(), k, n).noalias() +=
                ConstMatMap(av.values.data(), batch * m, k).transpose() * ConstMatMap(g.values.data(), batch * m, n);
          } else {
            for (std::size_t i = 0; i < batch; ++i) {
              MatMap(gb.values.data() + i * step_b, k, n).noalias() +=
                  ConstMatMap(av.values.data() + i * step_a, m, k).transpose() *
                  ConstMatMap(g.values.data() + i * m * n, m, n);
            }
          }
        }
      },
      "matmul");
}

/// log det of symmetric positive definite matrices over the last two axes.
/// The input is symmetrized, (A + A^T)/2, before the Cholesky factorization,
/// so the gradient is the symmetric inverse.
inline Var logdet_spd(const Var& a) {
  const Shape& s = a.shape();
  if (s.size() < 2 || s[s.size() - 1] != s[s.size() - 2]) detail::shape_error("logdet_spd", "expects square matrices");
  const std::size_t n = s.back();
  const std::size_t batch = a.value().size() / (n * n);
  Tensor out(Shape(s.begin(), s.end() - 2));
  auto inv = std::make_shared<std::vector<double>>(batch * n * n);
  const auto& x = a.value();
  for (std::size_t i = 0; i < batch; ++i) {
    const ConstMatMap xm(x.values.data() + i * n * n, n, n);
    const RealMatrix sym = 0.5 * (xm + xm.transpose());
    Eigen::LLT<RealMatrix> llt(sym);
    if (llt.info() != Eigen::Success) throw NotPositiveDefiniteError("logdet_spd: matrix is not positive definite");
    double ld = 0.0;
    for (std::size_t j = 0; j < n; ++j) ld += std::log(llt.matrixLLT()(j, j));
    out[i] = 2.0 * ld;
    MatMap(inv->data() + i * n * n, n, n) = llt.solve(RealMatrix::Identity(n, n));
  }
  const std::size_t ia = a.id();
  return a.tape().record(
      std::move(out), {a},
      [ia, inv, batch, n](Tape& t, const Tensor& g) {
        Tensor& ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < batch; ++i) {
          for (std::size_t j = 0; j < n * n; ++j) ga[i * n * n + j] += g[i] * (*inv)[i * n * n + j];
        }
      },
      "logdet_spd");
}

/// Solves A X = B with partial pivoting. Batch axes of A and B must match.
/// Backward: gB = A^{-T} gX, gA = -gB X^T.
inline Var solve(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa[sa.size() - 1] != sa[sa.size() - 2]) detail::shape_error("solve", "A must be square");
  const std::size_t n = sa.back();
  if (sb.size() != sa.size() || sb[sb.size() - 2] != n ||
      !std::equal(sa.begin(), sa.end() - 2, sb.begin())) {
    detail::shape_error("solve", shape_str(sa) + " with " + shape_str(sb));
  }
  const std::size_t k = sb.back();
  const std::size_t batch = a.value().size() / (n * n);
  Tensor out(sb);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < batch; ++i) {
    const Eigen::PartialPivLU<RealMatrix> lu{RealMatrix(ConstMatMap(av.values.data() + i * n * n, n, n))};
    const double rc = lu.rcond();
    if (!(rc >= kSingularRcond)) throw SingularMatrixError("solve: matrix is singular");
    MatMap(out.values.data() + i * n * k, n, k) = lu.solve(ConstMatMap(bv.values.data() + i * n * k, n, k));
  }
  const std::size_t ia = a.id(), ib = b.id();
  const std::size_t io = a.tape().size();
  return a.tape().record(
      std::move(out), {a, b},
      [ia, ib, io, batch, n, k](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(ia);
        const Tensor& xv = t.value(io);
        const bool need_a = t.requires_grad(ia);
        const bool need_b = t.requires_grad(ib);
        for (std::size_t i = 0; i < batch; ++i) {
          const RealMatrix at = ConstMatMap(av.values.data() + i * n * n, n, n).transpose();
          const RealMatrix gb = Eigen::PartialPivLU<RealMatrix>(at).solve(ConstMatMap(g.values.data() + i * n * k, n, k));
          if (need_b) MatMap(t.grad_buffer(ib).values.data() + i * n * k, n, k) += gb;
          if (need_a) {
            MatMap(t.grad_buffer(ia).values.data() + i * n * n, n, n).noalias() -=
                gb * ConstMatMap(xv.values.data() + i * n * k, n, k).transpose();
          }
        }
      },
      "solve");
}

// ---------------------------------------------------------------------------
// Convolutional network layers, layout [batch, channels, length]

/// 1-D convolution, stride 1, odd kernel, zero "same" padding.
/// x: [B, Cin, L], w: [Cout, Cin, K], bias: [Cout] -> [B, Cout, L].
inline Var conv1d(const Var& x, const Var& w, const Var& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 3 || sw.size() != 3 || bias.shape().size() != 1) detail::shape_error("conv1d", "bad ranks");
  const std::size_t bsz = sx[0], cin = sx[1], len = sx[2];
  const std::size_t cout = sw[0], ks = sw[2];
  if (sw[1] != cin || bias.shape()[0] != cout || ks % 2 == 0) {
    detail::shape_error("conv1d", shape_str(sx) + " * " + shape_str(sw));
  }
  const long pad = static_cast<long>(ks / 2);
  const std::size_t cols_w = cin * ks, span = bsz * len;
  // im2col: row (c, j), column (b, l) holds x[b, c, l + j - pad].
  auto cols = std::make_shared<RealMatrix>(RealMatrix::Zero(cols_w, span));
  const auto& xv = x.value();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t j = 0; j < ks; ++j) {
      double* row = cols->data() + (c * ks + j) * span;
      const long shift = static_cast<long>(j) - pad;
      const std::size_t l0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
      const std::size_t l1 = shift > 0 ? len - static_cast<std::size_t>(shift) : len;
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* src = xv.values.data() + (b * cin + c) * len;
        for (std::size_t l = l0; l < l1; ++l) row[b * len + l] = src[static_cast<long>(l) + shift];
      }
    }
  }
  const RealMatrix y = ConstMatMap(w.value().values.data(), cout, cols_w) * (*cols);  // [Cout, B*L]
  Tensor out(Shape{bsz, cout, len});
  const auto& bv = bias.value();
  for (std::size_t b = 0; b < bsz; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      double* dst = out.values.data() + (b * cout + o) * len;
      const double* src = y.data() + o * span + b * len;
      for (std::size_t l = 0; l < len; ++l) dst[l] = src[l] + bv[o];
    }
  }
  const std::size_t ix = x.id(), iw = w.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, w, bias},
      [ix, iw, ib, cols, bsz, cin, len, cout, ks, cols_w, span, pad](Tape& t, const Tensor& g) {
        RealMatrix gy(cout, span);
        for (std::size_t b = 0; b < bsz; ++b) {
          for (std::size_t o = 0; o < cout; ++o) {
            const double* src = g.values.data() + (b * cout + o) * len;
            std::copy(src, src + len, gy.data() + o * span + b * len);
          }
        }
        if (t.requires_grad(ib)) {
          Tensor& gbias = t.grad_buffer(ib);
          for (std::size_t o = 0; o < cout; ++o) gbias[o] += gy.row(o).sum();
        }
        if (t.requires_grad(iw)) {
          MatMap(t.grad_buffer(iw).values.data(), cout, cols_w).noalias() += gy * cols->transpose();
        }
        if (t.requires_grad(ix)) {
          const RealMatrix gcols = ConstMatMap(t.value(iw).values.data(), cout, cols_w).transpose() * gy;
          Tensor& gx = t.grad_buffer(ix);
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t j = 0; j < ks; ++j) {
              const double* row = gcols.data() + (c * ks + j) * span;
              const long shift = static_cast<long>(j) - pad;
              const std::size_t l0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
              const std::size_t l1 = shift > 0 ? len - static_cast<std::size_t>(shift) : len;
              for (std::size_t b = 0; b < bsz; ++b) {
                double* dst = gx.values.data() + (b * cin + c) * len;
                for (std::size_t l = l0; l < l1; ++l) dst[static_cast<long>(l) + shift] += row[b * len + l];
              }
            }
          }
        }
      },
      "conv1d");
}

/// Max pooling, window 2, stride 2, ceil mode (a trailing odd element pools alone).
/// Ties route the gradient to the first element of the window.
inline Var maxpool1d(const Var& x) {
  const Shape& s = x.shape();
  if (s.size() != 3) detail::shape_error("maxpool1d", "expects [B, C, L]");
  const std::size_t rows = s[0] * s[1], len = s[2];
  const std::size_t olen = (len + 1) / 2;
  Tensor out(Shape{s[0], s[1], olen});
  auto arg = std::make_shared<std::vector<std::size_t>>(rows * olen);
  const auto& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < olen; ++i) {
      std::size_t best = r * len + 2 * i;
      if (2 * i + 1 < len && xv[best + 1] > xv[best]) best += 1;
      (*arg)[r * olen + i] = best;
      out[r * olen + i] = xv[best];
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(
      std::move(out), {x},
      [ix, arg](Tape& t, const Tensor& g) {
        Tensor& gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < arg->size(); ++i) gx[(*arg)[i]] += g[i];
      },
      "maxpool1d");
}

/// Mean over the length axis: [B, C, L] -> [B, C].
inline Var global_avg_pool(const Var& x) {
  if (x.shape().size() != 3) detail::shape_error("global_avg_pool", "expects [B, C, L]");
  return mean(x, 2);
}

// ---------------------------------------------------------------------------
// Convenience

inline Tensor eye(std::size_t n, double diag = 1.0) {
  Tensor t(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = diag;
  return t;
}

}  // namespace pisac::ad
