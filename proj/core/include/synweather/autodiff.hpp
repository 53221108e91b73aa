// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over dense n-d arrays. Define-by-run: every op
// returns a new node holding its value; backward() walks the recorded
// graph. Templated on the scalar so the same model code runs in f32 for
// training and f64 for finite-difference checks.
#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "synweather/gemm.hpp"
#include "synweather/tensor.hpp"

namespace synweather::ad {

template <typename T>
struct Node {
  NdArray<T> value;
  NdArray<T> grad;  // empty until backward() allocates it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backward_fn;
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

// --- graph/tape control ----------------------------------------------------

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  bool saved;
  NoGradGuard() : saved(grad_mode()) { grad_mode() = false; }
  ~NoGradGuard() { grad_mode() = saved; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
Var<T> leaf(NdArray<T> value, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Var<T> constant(NdArray<T> value) {
  return leaf(std::move(value), false);
}

namespace detail {

template <typename T>
Var<T> make_op(NdArray<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool track = grad_mode();
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (p->requires_grad) {
        track = true;
        break;
      }
  }
  if (track) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a->value.shape != b->value.shape)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a->value.shape) + " vs " + shape_str(b->value.shape));
}

}  // namespace detail

/// Seeds `root` (a scalar) with gradient 1 and propagates through the
/// recorded graph. Gradients of every reachable node that requires grad
/// are accumulated in node->grad.
template <typename T>
void backward(const Var<T>& root) {
  if (root->value.size() != 1)
    throw std::invalid_argument("backward: root must be a scalar, got " +
                                shape_str(root->value.shape));
  if (!root->requires_grad && !root->backward_fn) {
    // nothing reachable requires grad; treat as a no-op for leaves
    if (!root->requires_grad) return;
  }

  // iterative post-order topo sort
  std::vector<Node<T>*> topo;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : topo) {
    n->grad = NdArray<T>(n->value.shape);  // zero-filled
  }
  root->grad[0] = T(1);

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// --- elementwise -------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "add");
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    auto& gb = self.parents[1]->grad;
    const std::int64_t n = self.grad.size();
    if (self.parents[0]->requires_grad)
      for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    if (self.parents[1]->requires_grad)
      for (std::int64_t i = 0; i < n; ++i) gb[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "sub");
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    auto& gb = self.parents[1]->grad;
    const std::int64_t n = self.grad.size();
    if (self.parents[0]->requires_grad)
      for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    if (self.parents[1]->requires_grad)
      for (std::int64_t i = 0; i < n; ++i) gb[i] -= self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mul");
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    const std::int64_t n = self.grad.size();
    if (pa.requires_grad)
      for (std::int64_t i = 0; i < n; ++i) pa.grad[i] += self.grad[i] * pb.value[i];
    if (pb.requires_grad)
      for (std::int64_t i = 0; i < n; ++i) pb.grad[i] += self.grad[i] * pa.value[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * s;
  return detail::make_op<T>(std::move(out), {a}, [s](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] + s;
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Var<T> exp_op(const Var<T>& a) {
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = std::exp(a->value[i]);
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) ga[i] += self.grad[i] * self.value[i];
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = a->value[i] * a->value[i];
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) pa.grad[i] += T(2) * pa.value[i] * self.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) {
      const T y = self.value[i];
      ga[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const T s = T(1) / (T(1) + std::exp(-a->value[i]));
    out[i] = a->value[i] * s;
  }
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) {
      const T x = pa.value[i];
      const T s = T(1) / (T(1) + std::exp(-x));
      pa.grad[i] += self.grad[i] * s * (T(1) + x * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  NdArray<T> out(a->value.shape);
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(a->value[i]);
    out[i] = static_cast<T>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    const std::int64_t n = self.grad.size();
    for (std::int64_t i = 0; i < n; ++i) {
      const double x = static_cast<double>(pa.value[i]);
      const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
      pa.grad[i] += self.grad[i] * static_cast<T>(cdf + x * pdf);
    }
  });
}

// --- reductions / losses ----------------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  T acc = 0;
  for (std::int64_t i = 0; i < a->value.size(); ++i) acc += a->value[i];
  return detail::make_op<T>(NdArray<T>({1}, acc), {a}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    const T g = self.grad[0];
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  const std::int64_t n = a->value.size();
  T acc = 0;
  for (std::int64_t i = 0; i < n; ++i) acc += a->value[i];
  return detail::make_op<T>(NdArray<T>({1}, acc / static_cast<T>(n)), {a}, [n](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    const T g = self.grad[0] / static_cast<T>(n);
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
  });
}

/// mean((a - b)^2) as a fused op.
template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  detail::check_same_shape(a, b, "mse");
  const std::int64_t n = a->value.size();
  T acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const T d = a->value[i] - b->value[i];
    acc += d * d;
  }
  return detail::make_op<T>(NdArray<T>({1}, acc / static_cast<T>(n)), {a, b},
                            [n](Node<T>& self) {
                              auto& pa = *self.parents[0];
                              auto& pb = *self.parents[1];
                              const T g = T(2) * self.grad[0] / static_cast<T>(n);
                              for (std::int64_t i = 0; i < n; ++i) {
                                const T d = pa.value[i] - pb.value[i];
                                if (pa.requires_grad) pa.grad[i] += g * d;
                                if (pb.requires_grad) pb.grad[i] -= g * d;
                              }
                            });
}

// --- shape ops ----------------------------------------------------------------

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  NdArray<T> out = a->value.reshaped(std::move(shape));
  return detail::make_op<T>(std::move(out), {a}, [](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

namespace detail {

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

}  // namespace detail

template <typename T>
Var<T> permute(const Var<T>& a, std::vector<int> perm) {
  const Shape& in_shape = a->value.shape;
  const int r = a->value.rank();
  if (static_cast<int>(perm.size()) != r)
    throw std::invalid_argument("permute: perm rank mismatch");
  Shape out_shape(r);
  for (int i = 0; i < r; ++i) out_shape[i] = in_shape[perm[i]];
  const auto in_strides = detail::row_major_strides(in_shape);
  std::vector<std::int64_t> gather_strides(r);
  for (int i = 0; i < r; ++i) gather_strides[i] = in_strides[perm[i]];

  NdArray<T> out(out_shape);
  const std::int64_t n = out.size();
  // walk output indices as an odometer over out_shape
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[i] = a->value[src];
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      src += gather_strides[d];
      if (idx[d] < out_shape[d]) break;
      src -= gather_strides[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return detail::make_op<T>(std::move(out), {a},
                            [gather_strides, out_shape, r](Node<T>& self) {
                              auto& ga = self.parents[0]->grad;
                              const std::int64_t n = self.grad.size();
                              std::vector<std::int64_t> idx(r, 0);
                              std::int64_t src = 0;
                              for (std::int64_t i = 0; i < n; ++i) {
                                ga[src] += self.grad[i];
                                for (int d = r - 1; d >= 0; --d) {
                                  ++idx[d];
                                  src += gather_strides[d];
                                  if (idx[d] < out_shape[d]) break;
                                  src -= gather_strides[d] * out_shape[d];
                                  idx[d] = 0;
                                }
                              }
                            });
}

namespace detail {

// decompose shape around `axis` into [outer, axis_len, inner]
inline void axis_blocks(const Shape& s, int axis, std::int64_t& outer, std::int64_t& len,
                        std::int64_t& inner) {
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  len = s[axis];
  inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

template <typename T>
Var<T> slice(const Var<T>& a, int axis, std::int64_t start, std::int64_t len) {
  const Shape& s = a->value.shape;
  if (axis < 0 || axis >= a->value.rank() || start < 0 || start + len > s[axis])
    throw std::invalid_argument("slice: out of range");
  Shape out_shape = s;
  out_shape[axis] = len;
  std::int64_t outer, alen, inner;
  detail::axis_blocks(s, axis, outer, alen, inner);

  NdArray<T> out(out_shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* src = a->value.ptr() + (o * alen + start) * inner;
    T* dst = out.ptr() + o * len * inner;
    std::copy(src, src + len * inner, dst);
  }
  return detail::make_op<T>(std::move(out), {a},
                            [outer, alen, inner, start, len](Node<T>& self) {
                              auto& ga = self.parents[0]->grad;
                              for (std::int64_t o = 0; o < outer; ++o) {
                                T* dst = ga.ptr() + (o * alen + start) * inner;
                                const T* src = self.grad.ptr() + o * len * inner;
                                for (std::int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                              }
                            });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& items, int axis) {
  if (items.empty()) throw std::invalid_argument("concat: empty input");
  const int r = items[0]->value.rank();
  Shape out_shape = items[0]->value.shape;
  std::int64_t total = 0;
  for (const auto& v : items) {
    if (v->value.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && v->value.shape[i] != out_shape[i])
        throw std::invalid_argument("concat: shape mismatch on non-axis dim");
    total += v->value.shape[axis];
  }
  out_shape[axis] = total;

  std::int64_t outer, alen_out, inner;
  detail::axis_blocks(out_shape, axis, outer, alen_out, inner);

  NdArray<T> out(out_shape);
  std::vector<std::int64_t> lens;
  lens.reserve(items.size());
  for (const auto& v : items) lens.push_back(v->value.shape[axis]);

  std::int64_t off = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& val = items[k]->value;
    for (std::int64_t o = 0; o < outer; ++o) {
      const T* src = val.ptr() + o * lens[k] * inner;
      T* dst = out.ptr() + (o * alen_out + off) * inner;
      std::copy(src, src + lens[k] * inner, dst);
    }
    off += lens[k];
  }
  return detail::make_op<T>(std::move(out), items,
                            [outer, alen_out, inner, lens](Node<T>& self) {
                              std::int64_t off = 0;
                              for (std::size_t k = 0; k < self.parents.size(); ++k) {
                                auto& p = *self.parents[k];
                                if (p.requires_grad) {
                                  for (std::int64_t o = 0; o < outer; ++o) {
                                    const T* src = self.grad.ptr() + (o * alen_out + off) * inner;
                                    T* dst = p.grad.ptr() + o * lens[k] * inner;
                                    for (std::int64_t i = 0; i < lens[k] * inner; ++i)
                                      dst[i] += src[i];
                                  }
                                }
                                off += lens[k];
                              }
                            });
}

/// Tiles `a` along a new leading axis: shape S -> [reps, S...].
template <typename T>
Var<T> repeat0(const Var<T>& a, std::int64_t reps) {
  Shape out_shape = a->value.shape;
  out_shape.insert(out_shape.begin(), reps);
  NdArray<T> out(out_shape);
  const std::int64_t n = a->value.size();
  for (std::int64_t r = 0; r < reps; ++r)
    std::copy(a->value.ptr(), a->value.ptr() + n, out.ptr() + r * n);
  return detail::make_op<T>(std::move(out), {a}, [n, reps](Node<T>& self) {
    auto& ga = self.parents[0]->grad;
    for (std::int64_t r = 0; r < reps; ++r) {
      const T* src = self.grad.ptr() + r * n;
      for (std::int64_t i = 0; i < n; ++i) ga[i] += src[i];
    }
  });
}

// --- linear algebra -----------------------------------------------------------

/// y = x . W^T + b, where x is [..., K], W is [N, K], b is [N] (optional).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b = nullptr) {
  const Shape& xs = x->value.shape;
  if (xs.empty() || w->value.rank() != 2)
    throw std::invalid_argument("linear: bad ranks");
  const std::int64_t k = xs.back();
  const std::int64_t nout = w->value.shape[0];
  if (w->value.shape[1] != k)
    throw std::invalid_argument("linear: feature dim mismatch: x " + shape_str(xs) + " vs W " +
                                shape_str(w->value.shape));
  if (b && (b->value.rank() != 1 || b->value.shape[0] != nout))
    throw std::invalid_argument("linear: bias shape mismatch");
  const std::int64_t rows = x->value.size() / k;

  Shape out_shape = xs;
  out_shape.back() = nout;
  NdArray<T> out(out_shape);
  gemm(false, true, rows, nout, k, T(1), x->value.ptr(), k, w->value.ptr(), k, T(0), out.ptr(),
       nout);
  if (b) {
    for (std::int64_t r = 0; r < rows; ++r) {
      T* row = out.ptr() + r * nout;
      const T* bias = b->value.ptr();
      for (std::int64_t j = 0; j < nout; ++j) row[j] += bias[j];
    }
  }

  std::vector<Var<T>> parents = {x, w};
  if (b) parents.push_back(b);
  return detail::make_op<T>(std::move(out), std::move(parents),
                            [rows, k, nout](Node<T>& self) {
                              auto& px = *self.parents[0];
                              auto& pw = *self.parents[1];
                              const T* g = self.grad.ptr();
                              if (px.requires_grad)  // dx = g . W
                                gemm(false, false, rows, k, nout, T(1), g, nout,
                                     pw.value.ptr(), k, T(1), px.grad.ptr(), k);
                              if (pw.requires_grad)  // dW = g^T . x
                                gemm(true, false, nout, k, rows, T(1), g, nout,
                                     px.value.ptr(), k, T(1), pw.grad.ptr(), k);
                              if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                                auto& gb = self.parents[2]->grad;
                                for (std::int64_t r = 0; r < rows; ++r)
                                  for (std::int64_t j = 0; j < nout; ++j)
                                    gb[j] += g[r * nout + j];
                              }
                            });
}

/// Batched matmul: C[b] = opA(A[b]) . opB(B[b]).
/// A is [B, M, K] (or [B, K, M] when trans_a), B is [B, K, N] (or [B, N, K]).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a = false, bool trans_b = false) {
  if (a->value.rank() != 3 || b->value.rank() != 3 || a->value.shape[0] != b->value.shape[0])
    throw std::invalid_argument("bmm: expected matching 3-d batches");
  const std::int64_t batch = a->value.shape[0];
  const std::int64_t m = trans_a ? a->value.shape[2] : a->value.shape[1];
  const std::int64_t ka = trans_a ? a->value.shape[1] : a->value.shape[2];
  const std::int64_t kb = trans_b ? b->value.shape[2] : b->value.shape[1];
  const std::int64_t n = trans_b ? b->value.shape[1] : b->value.shape[2];
  if (ka != kb) throw std::invalid_argument("bmm: inner dim mismatch");
  const std::int64_t lda = a->value.shape[2];
  const std::int64_t ldb = b->value.shape[2];

  NdArray<T> out({batch, m, n});
  for (std::int64_t i = 0; i < batch; ++i)
    gemm(trans_a, trans_b, m, n, ka, T(1), a->value.ptr() + i * a->value.shape[1] * lda, lda,
         b->value.ptr() + i * b->value.shape[1] * ldb, ldb, T(0), out.ptr() + i * m * n, n);

  return detail::make_op<T>(
      std::move(out), {a, b}, [batch, m, n, ka, lda, ldb, trans_a, trans_b](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const std::int64_t a_block = pa.value.shape[1] * lda;
        const std::int64_t b_block = pb.value.shape[1] * ldb;
        for (std::int64_t i = 0; i < batch; ++i) {
          const T* g = self.grad.ptr() + i * m * n;
          const T* av = pa.value.ptr() + i * a_block;
          const T* bv = pb.value.ptr() + i * b_block;
          if (pa.requires_grad) {
            T* ga = pa.grad.ptr() + i * a_block;
            if (!trans_a)  // dA = g . opB^T -> [m,ka]
              gemm(false, !trans_b, m, ka, n, T(1), g, n, bv, ldb, T(1), ga, lda);
            else  // dA = opB . g^T -> [ka,m]
              gemm(trans_b, true, ka, m, n, T(1), bv, ldb, g, n, T(1), ga, lda);
          }
          if (pb.requires_grad) {
            T* gb = pb.grad.ptr() + i * b_block;
            if (!trans_b)  // dB = opA^T . g -> [ka,n]
              gemm(!trans_a, false, ka, n, m, T(1), av, lda, g, n, T(1), gb, ldb);
            else  // dB = g^T . opA -> [n,ka]
              gemm(true, trans_a, n, ka, m, T(1), g, n, av, lda, T(1), gb, ldb);
          }
        }
      });
}

// --- normalization / softmax ---------------------------------------------------

/// Softmax over the last dimension.
template <typename T>
Var<T> softmax_lastdim(const Var<T>& x) {
  const std::int64_t d = x->value.shape.back();
  const std::int64_t rows = x->value.size() / d;
  NdArray<T> out(x->value.shape);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x->value.ptr() + r * d;
    T* o = out.ptr() + r * d;
    T mx = in[0];
    for (std::int64_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    T sum = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const T inv = T(1) / sum;
    for (std::int64_t j = 0; j < d; ++j) o[j] *= inv;
  }
  return detail::make_op<T>(std::move(out), {x}, [rows, d](Node<T>& self) {
    auto& gx = self.parents[0]->grad;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = self.value.ptr() + r * d;
      const T* g = self.grad.ptr() + r * d;
      T dot = 0;
      for (std::int64_t j = 0; j < d; ++j) dot += g[j] * y[j];
      T* out = gx.ptr() + r * d;
      for (std::int64_t j = 0; j < d; ++j) out[j] += y[j] * (g[j] - dot);
    }
  });
}

/// LayerNorm over the last dimension; gamma/beta optional ([D]).
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma = nullptr, const Var<T>& beta = nullptr,
                  T eps = T(1e-5)) {
  const std::int64_t d = x->value.shape.back();
  const std::int64_t rows = x->value.size() / d;
  NdArray<T> out(x->value.shape);
  auto xhat = std::make_shared<NdArray<T>>(x->value.shape);
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* in = x->value.ptr() + r * d;
    T mean = 0;
    for (std::int64_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::int64_t j = 0; j < d; ++j) {
      const T c = in[j] - mean;
      var += c * c;
    }
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    T* xh = xhat->ptr() + r * d;
    T* o = out.ptr() + r * d;
    for (std::int64_t j = 0; j < d; ++j) {
      xh[j] = (in[j] - mean) * inv;
      o[j] = gamma ? xh[j] * gamma->value[j] + (beta ? beta->value[j] : T(0)) : xh[j];
    }
  }
  std::vector<Var<T>> parents = {x};
  if (gamma) parents.push_back(gamma);
  if (beta) parents.push_back(beta);
  const bool affine = static_cast<bool>(gamma);
  return detail::make_op<T>(
      std::move(out), std::move(parents), [rows, d, xhat, inv_std, affine](Node<T>& self) {
        auto& px = *self.parents[0];
        Node<T>* pg = affine ? self.parents[1].get() : nullptr;
        Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        for (std::int64_t r = 0; r < rows; ++r) {
          const T* g = self.grad.ptr() + r * d;
          const T* xh = xhat->ptr() + r * d;
          if (pg && pg->requires_grad)
            for (std::int64_t j = 0; j < d; ++j) pg->grad[j] += g[j] * xh[j];
          if (pb && pb->requires_grad)
            for (std::int64_t j = 0; j < d; ++j) pb->grad[j] += g[j];
          if (px.requires_grad) {
            T s1 = 0, s2 = 0;
            for (std::int64_t j = 0; j < d; ++j) {
              const T gy = affine ? g[j] * pg->value[j] : g[j];
              s1 += gy;
              s2 += gy * xh[j];
            }
            const T inv = (*inv_std)[r];
            T* gx = px.grad.ptr() + r * d;
            const T invd = T(1) / static_cast<T>(d);
            for (std::int64_t j = 0; j < d; ++j) {
              const T gy = affine ? g[j] * pg->value[j] : g[j];
              gx[j] += inv * (gy - s1 * invd - xh[j] * s2 * invd);
            }
          }
        }
      });
}

/// GroupNorm on [N, C, H, W] with `groups` groups; gamma/beta are [C].
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups,
                  T eps = T(1e-5)) {
  if (x->value.rank() != 4) throw std::invalid_argument("group_norm: expected N,C,H,W");
  const std::int64_t n = x->value.shape[0], c = x->value.shape[1];
  const std::int64_t hw = x->value.shape[2] * x->value.shape[3];
  if (c % groups != 0) throw std::invalid_argument("group_norm: C not divisible by groups");
  const std::int64_t cpg = c / groups;
  const std::int64_t group_elems = cpg * hw;

  NdArray<T> out(x->value.shape);
  auto xhat = std::make_shared<NdArray<T>>(x->value.shape);
  auto inv_std = std::make_shared<std::vector<T>>(n * groups);

  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t g = 0; g < groups; ++g) {
      const T* in = x->value.ptr() + (i * c + g * cpg) * hw;
      T mean = 0;
      for (std::int64_t j = 0; j < group_elems; ++j) mean += in[j];
      mean /= static_cast<T>(group_elems);
      T var = 0;
      for (std::int64_t j = 0; j < group_elems; ++j) {
        const T d = in[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(group_elems);
      const T inv = T(1) / std::sqrt(var + eps);
      (*inv_std)[i * groups + g] = inv;
      T* xh = xhat->ptr() + (i * c + g * cpg) * hw;
      T* o = out.ptr() + (i * c + g * cpg) * hw;
      for (std::int64_t cc = 0; cc < cpg; ++cc) {
        const T gam = gamma->value[g * cpg + cc];
        const T bet = beta->value[g * cpg + cc];
        for (std::int64_t j = 0; j < hw; ++j) {
          const T v = (in[cc * hw + j] - mean) * inv;
          xh[cc * hw + j] = v;
          o[cc * hw + j] = gam * v + bet;
        }
      }
    }
  }

  return detail::make_op<T>(
      std::move(out), {x, gamma, beta},
      [n, c, hw, groups, cpg, group_elems, xhat, inv_std](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pgam = *self.parents[1];
        auto& pbet = *self.parents[2];
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t g = 0; g < groups; ++g) {
            const T* gr = self.grad.ptr() + (i * c + g * cpg) * hw;
            const T* xh = xhat->ptr() + (i * c + g * cpg) * hw;
            if (pgam.requires_grad || pbet.requires_grad) {
              for (std::int64_t cc = 0; cc < cpg; ++cc) {
                T dg = 0, db = 0;
                for (std::int64_t j = 0; j < hw; ++j) {
                  dg += gr[cc * hw + j] * xh[cc * hw + j];
                  db += gr[cc * hw + j];
                }
                pgam.grad[g * cpg + cc] += dg;
                pbet.grad[g * cpg + cc] += db;
              }
            }
            if (px.requires_grad) {
              T s1 = 0, s2 = 0;
              for (std::int64_t cc = 0; cc < cpg; ++cc) {
                const T gam = pgam.value[g * cpg + cc];
                for (std::int64_t j = 0; j < hw; ++j) {
                  const T gy = gr[cc * hw + j] * gam;
                  s1 += gy;
                  s2 += gy * xh[cc * hw + j];
                }
              }
              const T inv = (*inv_std)[i * groups + g];
              const T invm = T(1) / static_cast<T>(group_elems);
              T* gx = px.grad.ptr() + (i * c + g * cpg) * hw;
              for (std::int64_t cc = 0; cc < cpg; ++cc) {
                const T gam = pgam.value[g * cpg + cc];
                for (std::int64_t j = 0; j < hw; ++j) {
                  const T gy = gr[cc * hw + j] * gam;
                  gx[cc * hw + j] += inv * (gy - s1 * invm - xh[cc * hw + j] * s2 * invm);
                }
              }
            }
          }
        }
      });
}

// --- modulation (adaptive scale/shift/gate over token sequences) ---------------

/// y[b,l,d] = x[b,l,d] * (1 + scale[b,d]) + shift[b,d]
template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& scale_v, const Var<T>& shift_v) {
  if (x->value.rank() != 3 || scale_v->value.rank() != 2 || shift_v->value.rank() != 2)
    throw std::invalid_argument("modulate: bad ranks");
  const std::int64_t b = x->value.shape[0], l = x->value.shape[1], d = x->value.shape[2];
  if (scale_v->value.shape[0] != b || scale_v->value.shape[1] != d ||
      shift_v->value.shape != scale_v->value.shape)
    throw std::invalid_argument("modulate: modulation shape mismatch");
  NdArray<T> out(x->value.shape);
  for (std::int64_t bi = 0; bi < b; ++bi) {
    const T* sc = scale_v->value.ptr() + bi * d;
    const T* sh = shift_v->value.ptr() + bi * d;
    for (std::int64_t li = 0; li < l; ++li) {
      const T* in = x->value.ptr() + (bi * l + li) * d;
      T* o = out.ptr() + (bi * l + li) * d;
      for (std::int64_t j = 0; j < d; ++j) o[j] = in[j] * (T(1) + sc[j]) + sh[j];
    }
  }
  return detail::make_op<T>(std::move(out), {x, scale_v, shift_v}, [b, l, d](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& psc = *self.parents[1];
    auto& psh = *self.parents[2];
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const T* sc = psc.value.ptr() + bi * d;
      for (std::int64_t li = 0; li < l; ++li) {
        const T* g = self.grad.ptr() + (bi * l + li) * d;
        const T* xv = px.value.ptr() + (bi * l + li) * d;
        if (px.requires_grad) {
          T* gx = px.grad.ptr() + (bi * l + li) * d;
          for (std::int64_t j = 0; j < d; ++j) gx[j] += g[j] * (T(1) + sc[j]);
        }
        if (psc.requires_grad) {
          T* gsc = psc.grad.ptr() + bi * d;
          for (std::int64_t j = 0; j < d; ++j) gsc[j] += g[j] * xv[j];
        }
        if (psh.requires_grad) {
          T* gsh = psh.grad.ptr() + bi * d;
          for (std::int64_t j = 0; j < d; ++j) gsh[j] += g[j];
        }
      }
    }
  });
}

/// y[b,l,d] = x[b,l,d] + gate[b,d] * h[b,l,d]
template <typename T>
Var<T> gated_add(const Var<T>& x, const Var<T>& h, const Var<T>& gate) {
  detail::check_same_shape(x, h, "gated_add");
  const std::int64_t b = x->value.shape[0], l = x->value.shape[1], d = x->value.shape[2];
  if (gate->value.rank() != 2 || gate->value.shape[0] != b || gate->value.shape[1] != d)
    throw std::invalid_argument("gated_add: gate shape mismatch");
  NdArray<T> out(x->value.shape);
  for (std::int64_t bi = 0; bi < b; ++bi) {
    const T* gt = gate->value.ptr() + bi * d;
    for (std::int64_t li = 0; li < l; ++li) {
      const std::int64_t base = (bi * l + li) * d;
      for (std::int64_t j = 0; j < d; ++j)
        out[base + j] = x->value[base + j] + gt[j] * h->value[base + j];
    }
  }
  return detail::make_op<T>(std::move(out), {x, h, gate}, [b, l, d](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& ph = *self.parents[1];
    auto& pg = *self.parents[2];
    for (std::int64_t bi = 0; bi < b; ++bi) {
      const T* gt = pg.value.ptr() + bi * d;
      for (std::int64_t li = 0; li < l; ++li) {
        const std::int64_t base = (bi * l + li) * d;
        const T* g = self.grad.ptr() + base;
        if (px.requires_grad) {
          T* gx = px.grad.ptr() + base;
          for (std::int64_t j = 0; j < d; ++j) gx[j] += g[j];
        }
        if (ph.requires_grad) {
          T* gh = ph.grad.ptr() + base;
          for (std::int64_t j = 0; j < d; ++j) gh[j] += g[j] * gt[j];
        }
        if (pg.requires_grad) {
          T* gg = pg.grad.ptr() + bi * d;
          const T* hv = ph.value.ptr() + base;
          for (std::int64_t j = 0; j < d; ++j) gg[j] += g[j] * hv[j];
        }
      }
    }
  });
}

// --- embeddings -----------------------------------------------------------------

/// Row gather: table [V, D], ids length L -> [L, D].
template <typename T>
Var<T> embedding(const Var<T>& table, std::vector<int> ids) {
  if (table->value.rank() != 2) throw std::invalid_argument("embedding: table must be [V,D]");
  const std::int64_t v = table->value.shape[0], d = table->value.shape[1];
  NdArray<T> out({static_cast<std::int64_t>(ids.size()), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) throw std::out_of_range("embedding: id out of vocabulary");
    std::copy(table->value.ptr() + ids[i] * d, table->value.ptr() + (ids[i] + 1) * d,
              out.ptr() + i * d);
  }
  return detail::make_op<T>(std::move(out), {table}, [ids, d](Node<T>& self) {
    auto& gt = self.parents[0]->grad;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const T* g = self.grad.ptr() + i * d;
      T* dst = gt.ptr() + ids[i] * d;
      for (std::int64_t j = 0; j < d; ++j) dst[j] += g[j];
    }
  });
}

// --- convolution ------------------------------------------------------------------

namespace detail {

// im2col for one sample over output-pixel range [q0, q1).
// x: [C, H, W], col: [C*R*S, q1-q0]
template <typename T>
void im2col_range(const T* x, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t r,
                  std::int64_t s, std::int64_t stride, std::int64_t pad, std::int64_t wo,
                  std::int64_t q0, std::int64_t q1, T* col) {
  const std::int64_t cw = q1 - q0;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t ri = 0; ri < r; ++ri) {
      for (std::int64_t si = 0; si < s; ++si) {
        T* dst = col + ((ci * r + ri) * s + si) * cw;
        for (std::int64_t q = q0; q < q1; ++q) {
          const std::int64_t oh = q / wo, ow = q % wo;
          const std::int64_t ih = oh * stride - pad + ri;
          const std::int64_t iw = ow * stride - pad + si;
          dst[q - q0] = (ih >= 0 && ih < h && iw >= 0 && iw < w) ? x[(ci * h + ih) * w + iw]
                                                                 : T(0);
        }
      }
    }
  }
}

// col2im accumulate for one sample over output-pixel range [q0, q1).
template <typename T>
void col2im_range(const T* col, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t r,
                  std::int64_t s, std::int64_t stride, std::int64_t pad, std::int64_t wo,
                  std::int64_t q0, std::int64_t q1, T* gx) {
  const std::int64_t cw = q1 - q0;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t ri = 0; ri < r; ++ri) {
      for (std::int64_t si = 0; si < s; ++si) {
        const T* src = col + ((ci * r + ri) * s + si) * cw;
        for (std::int64_t q = q0; q < q1; ++q) {
          const std::int64_t oh = q / wo, ow = q % wo;
          const std::int64_t ih = oh * stride - pad + ri;
          const std::int64_t iw = ow * stride - pad + si;
          if (ih >= 0 && ih < h && iw >= 0 && iw < w) gx[(ci * h + ih) * w + iw] += src[q - q0];
        }
      }
    }
  }
}

constexpr std::int64_t kConvChunk = 8192;

}  // namespace detail

/// 2-D convolution: x [N,C,H,W], w [K,C,R,S], bias [K] (optional).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::int64_t stride,
              std::int64_t pad) {
  if (x->value.rank() != 4 || w->value.rank() != 4)
    throw std::invalid_argument("conv2d: expected 4-d input and kernel");
  const std::int64_t n = x->value.shape[0], c = x->value.shape[1];
  const std::int64_t h = x->value.shape[2], wd = x->value.shape[3];
  const std::int64_t kout = w->value.shape[0], r = w->value.shape[2], s = w->value.shape[3];
  if (w->value.shape[1] != c)
    throw std::invalid_argument("conv2d: channel mismatch: input " + shape_str(x->value.shape) +
                                " kernel " + shape_str(w->value.shape));
  const std::int64_t ho = (h + 2 * pad - r) / stride + 1;
  const std::int64_t wo = (wd + 2 * pad - s) / stride + 1;
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: kernel larger than padded input");
  const std::int64_t crs = c * r * s;
  const std::int64_t hw_out = ho * wo;

  NdArray<T> out({n, kout, ho, wo});
  std::vector<T> col(crs * std::min(hw_out, detail::kConvChunk));
  for (std::int64_t i = 0; i < n; ++i) {
    const T* xi = x->value.ptr() + i * c * h * wd;
    T* oi = out.ptr() + i * kout * hw_out;
    for (std::int64_t q0 = 0; q0 < hw_out; q0 += detail::kConvChunk) {
      const std::int64_t q1 = std::min(hw_out, q0 + detail::kConvChunk);
      detail::im2col_range(xi, c, h, wd, r, s, stride, pad, wo, q0, q1, col.data());
      // out[:, q0:q1] = W[kout, crs] . col[crs, cw]
      gemm(false, false, kout, q1 - q0, crs, T(1), w->value.ptr(), crs, col.data(), q1 - q0,
           T(0), oi + q0, hw_out);
      // note: ldc == hw_out writes the chunk directly into the full row
    }
    if (bias) {
      for (std::int64_t kk = 0; kk < kout; ++kk) {
        const T bv = bias->value[kk];
        T* row = oi + kk * hw_out;
        for (std::int64_t q = 0; q < hw_out; ++q) row[q] += bv;
      }
    }
  }

  std::vector<Var<T>> parents = {x, w};
  if (bias) parents.push_back(bias);
  return detail::make_op<T>(
      std::move(out), std::move(parents),
      [n, c, h, wd, kout, r, s, stride, pad, ho, wo, crs, hw_out](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        Node<T>* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        std::vector<T> col(crs * std::min(hw_out, detail::kConvChunk));
        std::vector<T> gcol(crs * std::min(hw_out, detail::kConvChunk));
        for (std::int64_t i = 0; i < n; ++i) {
          const T* gi = self.grad.ptr() + i * kout * hw_out;
          const T* xi = px.value.ptr() + i * c * h * wd;
          if (pb && pb->requires_grad) {
            for (std::int64_t kk = 0; kk < kout; ++kk) {
              T acc = 0;
              const T* row = gi + kk * hw_out;
              for (std::int64_t q = 0; q < hw_out; ++q) acc += row[q];
              pb->grad[kk] += acc;
            }
          }
          for (std::int64_t q0 = 0; q0 < hw_out; q0 += detail::kConvChunk) {
            const std::int64_t q1 = std::min(hw_out, q0 + detail::kConvChunk);
            const std::int64_t cw = q1 - q0;
            if (pw.requires_grad) {
              detail::im2col_range(xi, c, h, wd, r, s, stride, pad, wo, q0, q1, col.data());
              // dW += g_chunk [kout, cw] . col^T [cw, crs]
              gemm(false, true, kout, crs, cw, T(1), gi + q0, hw_out, col.data(), cw, T(1),
                   pw.grad.ptr(), crs);
            }
            if (px.requires_grad) {
              // gcol = W^T [crs, kout] . g_chunk [kout, cw]
              gemm(true, false, crs, cw, kout, T(1), pw.value.ptr(), crs, gi + q0, hw_out,
                   T(0), gcol.data(), cw);
              detail::col2im_range(gcol.data(), c, h, wd, r, s, stride, pad, wo, q0, q1,
                                   px.grad.ptr() + i * c * h * wd);
            }
          }
        }
      });
}

/// Nearest-neighbour 2x upsampling on [N,C,H,W].
template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  if (x->value.rank() != 4) throw std::invalid_argument("upsample: expected N,C,H,W");
  const std::int64_t n = x->value.shape[0], c = x->value.shape[1];
  const std::int64_t h = x->value.shape[2], w = x->value.shape[3];
  NdArray<T> out({n, c, h * 2, w * 2});
  for (std::int64_t nc = 0; nc < n * c; ++nc) {
    const T* in = x->value.ptr() + nc * h * w;
    T* o = out.ptr() + nc * 4 * h * w;
    for (std::int64_t i = 0; i < h; ++i) {
      T* row0 = o + (2 * i) * (2 * w);
      T* row1 = o + (2 * i + 1) * (2 * w);
      for (std::int64_t j = 0; j < w; ++j) {
        const T v = in[i * w + j];
        row0[2 * j] = row0[2 * j + 1] = v;
        row1[2 * j] = row1[2 * j + 1] = v;
      }
    }
  }
  return detail::make_op<T>(std::move(out), {x}, [n, c, h, w](Node<T>& self) {
    auto& gx = self.parents[0]->grad;
    for (std::int64_t nc = 0; nc < n * c; ++nc) {
      const T* g = self.grad.ptr() + nc * 4 * h * w;
      T* dst = gx.ptr() + nc * h * w;
      for (std::int64_t i = 0; i < h; ++i) {
        const T* row0 = g + (2 * i) * (2 * w);
        const T* row1 = g + (2 * i + 1) * (2 * w);
        for (std::int64_t j = 0; j < w; ++j)
          dst[i * w + j] += row0[2 * j] + row0[2 * j + 1] + row1[2 * j] + row1[2 * j + 1];
      }
    }
  });
}

// --- patchify / unpatchify ----------------------------------------------------------

/// x [N,C,H,W] -> tokens [N, (H/p)*(W/p), C*p*p]; feature layout c-major.
template <typename T>
Var<T> patchify(const Var<T>& x, std::int64_t p) {
  const std::int64_t n = x->value.shape[0], c = x->value.shape[1];
  const std::int64_t h = x->value.shape[2], w = x->value.shape[3];
  if (h % p != 0 || w % p != 0) throw std::invalid_argument("patchify: dims not divisible by p");
  const std::int64_t gh = h / p, gw = w / p, l = gh * gw, d = c * p * p;
  NdArray<T> out({n, l, d});
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t hi = 0; hi < h; ++hi) {
        const T* src = x->value.ptr() + ((ni * c + ci) * h + hi) * w;
        const std::int64_t gi = hi / p, pi = hi % p;
        for (std::int64_t wi = 0; wi < w; ++wi) {
          const std::int64_t gj = wi / p, pj = wi % p;
          out.ptr()[(ni * l + gi * gw + gj) * d + ci * p * p + pi * p + pj] = src[wi];
        }
      }
  return detail::make_op<T>(std::move(out), {x}, [n, c, h, w, p, gw, l, d](Node<T>& self) {
    auto& gx = self.parents[0]->grad;
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t hi = 0; hi < h; ++hi) {
          T* dst = gx.ptr() + ((ni * c + ci) * h + hi) * w;
          const std::int64_t gi = hi / p, pi = hi % p;
          for (std::int64_t wi = 0; wi < w; ++wi) {
            const std::int64_t gj = wi / p, pj = wi % p;
            dst[wi] += self.grad.ptr()[(ni * l + gi * gw + gj) * d + ci * p * p + pi * p + pj];
          }
        }
  });
}

/// tokens [N, L, C*p*p] -> x [N,C,H,W]; exact inverse of patchify.
template <typename T>
Var<T> unpatchify(const Var<T>& t, std::int64_t p, std::int64_t c, std::int64_t h,
                  std::int64_t w) {
  const std::int64_t n = t->value.shape[0], l = t->value.shape[1], d = t->value.shape[2];
  const std::int64_t gh = h / p, gw = w / p;
  if (l != gh * gw || d != c * p * p)
    throw std::invalid_argument("unpatchify: token shape inconsistent with target dims");
  NdArray<T> out({n, c, h, w});
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t hi = 0; hi < h; ++hi) {
        T* dst = out.ptr() + ((ni * c + ci) * h + hi) * w;
        const std::int64_t gi = hi / p, pi = hi % p;
        for (std::int64_t wi = 0; wi < w; ++wi) {
          const std::int64_t gj = wi / p, pj = wi % p;
          dst[wi] = t->value.ptr()[(ni * l + gi * gw + gj) * d + ci * p * p + pi * p + pj];
        }
      }
  return detail::make_op<T>(std::move(out), {t}, [n, c, h, w, p, gw, l, d](Node<T>& self) {
    auto& gt = self.parents[0]->grad;
    for (std::int64_t ni = 0; ni < n; ++ni)
      for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t hi = 0; hi < h; ++hi) {
          const T* g = self.grad.ptr() + ((ni * c + ci) * h + hi) * w;
          const std::int64_t gi = hi / p, pi = hi % p;
          for (std::int64_t wi = 0; wi < w; ++wi) {
            const std::int64_t gj = wi / p, pj = wi % p;
            gt.ptr()[(ni * l + gi * gw + gj) * d + ci * p * p + pi * p + pj] += g[wi];
          }
        }
  });
}

}  // namespace synweather::ad
