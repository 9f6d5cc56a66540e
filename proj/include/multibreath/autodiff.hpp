#pragma once

// Reverse-mode automatic differentiation over dense tensors. Define-by-run:
// each op builds a node holding its value and a closure that scatters the
// node's upstream gradient into its parents. Leaf tensors created with
// requires_grad keep a persistent gradient that accumulates (+=) across
// backward calls; interior gradients are transient per call.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "multibreath/array.hpp"
#include "multibreath/errors.hpp"
#include "multibreath/gemm.hpp"

namespace mb::ad {

template <class T>
struct Node {
  Array<T> value;
  Array<T> grad;  // persistent only on requires_grad leaves
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;

  void ensure_grad() {
    if (grad.v.empty()) grad = Array<T>(value.shape);
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : n_(std::move(n)) {}

  static Tensor leaf(Array<T> value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T x, bool requires_grad = false) {
    return leaf(Array<T>({}, x), requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Array<T>& value() const { return n_->value; }
  Array<T>& raw_value() { return n_->value; }
  const Shape& shape() const { return n_->value.shape; }
  bool requires_grad() const { return n_->requires_grad; }

  Array<T>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }

  void zero_grad() {
    if (!n_->grad.v.empty()) std::fill(n_->grad.v.begin(), n_->grad.v.end(), T(0));
  }

  std::shared_ptr<Node<T>> node() const { return n_; }

 private:
  std::shared_ptr<Node<T>> n_;
};

namespace detail {

template <class T>
Tensor<T> make_op(Array<T> value, std::vector<Tensor<T>> parents,
                  std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  n->requires_grad = needs;
  if (needs) {
    n->is_leaf = false;
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backprop = std::move(backprop);
  }
  return Tensor<T>(std::move(n));
}

template <class T>
void check_same_shape(const Array<T>& a, const Array<T>& b, const char* op) {
  if (!a.same_shape(b))
    throw UsageError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace detail

// ----- elementwise -----

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.value(), b.value(), "add");
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i)
    out.v[i] = a.value().v[i] + b.value().v[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (long i = 0; i < n.grad.numel(); ++i) pa->grad.v[i] += n.grad.v[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (long i = 0; i < n.grad.numel(); ++i) pb->grad.v[i] += n.grad.v[i];
    }
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.value(), b.value(), "sub");
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i)
    out.v[i] = a.value().v[i] - b.value().v[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (long i = 0; i < n.grad.numel(); ++i) pa->grad.v[i] += n.grad.v[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (long i = 0; i < n.grad.numel(); ++i) pb->grad.v[i] -= n.grad.v[i];
    }
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape(a.value(), b.value(), "mul");
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i)
    out.v[i] = a.value().v[i] * b.value().v[i];
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(std::move(out), {a, b}, [pa, pb](Node<T>& n) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (long i = 0; i < n.grad.numel(); ++i)
        pa->grad.v[i] += n.grad.v[i] * pb->value.v[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (long i = 0; i < n.grad.numel(); ++i)
        pb->grad.v[i] += n.grad.v[i] * pa->value.v[i];
    }
  });
}

template <class T>
Tensor<T> smul(const Tensor<T>& a, T s) {
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i) out.v[i] = a.value().v[i] * s;
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {a}, [pa, s](Node<T>& n) {
    pa->ensure_grad();
    for (long i = 0; i < n.grad.numel(); ++i) pa->grad.v[i] += n.grad.v[i] * s;
  });
}

template <class T>
Tensor<T> sadd(const Tensor<T>& a, T s) {
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i) out.v[i] = a.value().v[i] + s;
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (long i = 0; i < n.grad.numel(); ++i) pa->grad.v[i] += n.grad.v[i];
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i)
    out.v[i] = a.value().v[i] > T(0) ? a.value().v[i] : T(0);
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (long i = 0; i < n.grad.numel(); ++i)
      if (pa->value.v[i] > T(0)) pa->grad.v[i] += n.grad.v[i];
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i) {
    T x = a.value().v[i];
    // split by sign to avoid exp overflow
    out.v[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                         : std::exp(x) / (T(1) + std::exp(x));
  }
  auto pa = a.node();
  Array<T> saved = out;
  return detail::make_op<T>(std::move(out), {a}, [pa, saved](Node<T>& n) {
    pa->ensure_grad();
    for (long i = 0; i < n.grad.numel(); ++i) {
      T s = saved.v[i];
      pa->grad.v[i] += n.grad.v[i] * s * (T(1) - s);
    }
  });
}

template <class T>
Tensor<T> exp_(const Tensor<T>& a) {
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i) out.v[i] = std::exp(a.value().v[i]);
  auto pa = a.node();
  Array<T> saved = out;
  return detail::make_op<T>(std::move(out), {a}, [pa, saved](Node<T>& n) {
    pa->ensure_grad();
    for (long i = 0; i < n.grad.numel(); ++i)
      pa->grad.v[i] += n.grad.v[i] * saved.v[i];
  });
}

template <class T>
Tensor<T> log_(const Tensor<T>& a) {
  Array<T> out(a.shape());
  for (long i = 0; i < out.numel(); ++i) out.v[i] = std::log(a.value().v[i]);
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (long i = 0; i < n.grad.numel(); ++i)
      pa->grad.v[i] += n.grad.v[i] / pa->value.v[i];
  });
}

// ----- shape ops -----

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape target) {
  if (shape_numel(target) != a.value().numel())
    throw UsageError("reshape: numel mismatch " + shape_str(a.shape()) +
                     " -> " + shape_str(target));
  Array<T> out;
  out.shape = std::move(target);
  out.v = a.value().v;
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (long i = 0; i < n.grad.numel(); ++i) pa->grad.v[i] += n.grad.v[i];
  });
}

// swap the last two axes
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw UsageError("transpose_last2: rank < 2");
  long r = s[s.size() - 2], c = s[s.size() - 1];
  long batch = a.value().numel() / (r * c);
  Shape os = s;
  std::swap(os[os.size() - 2], os[os.size() - 1]);
  Array<T> out(os);
  const T* src = a.value().data();
  for (long b = 0; b < batch; ++b)
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j)
        out.v[(b * c + j) * r + i] = src[(b * r + i) * c + j];
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {a}, [pa, batch, r, c](Node<T>& n) {
    pa->ensure_grad();
    for (long b = 0; b < batch; ++b)
      for (long i = 0; i < r; ++i)
        for (long j = 0; j < c; ++j)
          pa->grad.v[(b * r + i) * c + j] += n.grad.v[(b * c + j) * r + i];
  });
}

// tile an axis `times`-fold: shape[axis] -> shape[axis]*times
template <class T>
Tensor<T> repeat_axis(const Tensor<T>& a, long axis, long times) {
  long outer, len, inner;
  axis_split(a.shape(), axis, outer, len, inner);
  Shape os = a.shape();
  os[axis] = len * times;
  Array<T> out(os);
  const T* src = a.value().data();
  for (long o = 0; o < outer; ++o)
    for (long t = 0; t < times; ++t)
      std::copy(src + o * len * inner, src + (o + 1) * len * inner,
                out.v.begin() + (o * times + t) * len * inner);
  auto pa = a.node();
  return detail::make_op<T>(
      std::move(out), {a}, [pa, outer, len, inner, times](Node<T>& n) {
        pa->ensure_grad();
        for (long o = 0; o < outer; ++o)
          for (long t = 0; t < times; ++t) {
            const T* g = n.grad.data() + (o * times + t) * len * inner;
            T* dst = pa->grad.data() + o * len * inner;
            for (long i = 0; i < len * inner; ++i) dst[i] += g[i];
          }
      });
}

// ----- reductions -----

template <class T>
Tensor<T> sum_axis(const Tensor<T>& a, long axis) {
  long outer, len, inner;
  axis_split(a.shape(), axis, outer, len, inner);
  Shape os = a.shape();
  os.erase(os.begin() + axis);
  Array<T> out(os);
  for (long o = 0; o < outer; ++o)
    for (long l = 0; l < len; ++l)
      for (long i = 0; i < inner; ++i)
        out.v[o * inner + i] += a.value().v[(o * len + l) * inner + i];
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {a},
                            [pa, outer, len, inner](Node<T>& n) {
                              pa->ensure_grad();
                              for (long o = 0; o < outer; ++o)
                                for (long l = 0; l < len; ++l)
                                  for (long i = 0; i < inner; ++i)
                                    pa->grad.v[(o * len + l) * inner + i] +=
                                        n.grad.v[o * inner + i];
                            });
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& a, long axis) {
  long len = a.shape().at(axis);
  return smul(sum_axis(a, axis), T(1) / T(len));
}

// max over an axis; gradient routes to the first max position
template <class T>
Tensor<T> max_axis(const Tensor<T>& a, long axis) {
  long outer, len, inner;
  axis_split(a.shape(), axis, outer, len, inner);
  Shape os = a.shape();
  os.erase(os.begin() + axis);
  Array<T> out(os);
  std::vector<long> arg(static_cast<std::size_t>(outer * inner), 0);
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < inner; ++i) {
      T best = a.value().v[o * len * inner + i];
      long bl = 0;
      for (long l = 1; l < len; ++l) {
        T x = a.value().v[(o * len + l) * inner + i];
        if (x > best) {
          best = x;
          bl = l;
        }
      }
      out.v[o * inner + i] = best;
      arg[o * inner + i] = bl;
    }
  auto pa = a.node();
  return detail::make_op<T>(
      std::move(out), {a}, [pa, outer, len, inner, arg](Node<T>& n) {
        pa->ensure_grad();
        for (long o = 0; o < outer; ++o)
          for (long i = 0; i < inner; ++i)
            pa->grad.v[(o * len + arg[o * inner + i]) * inner + i] +=
                n.grad.v[o * inner + i];
      });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = 0;
  for (T x : a.value().v) acc += x;
  Array<T> out({}, acc);
  auto pa = a.node();
  return detail::make_op<T>(std::move(out), {a}, [pa](Node<T>& n) {
    pa->ensure_grad();
    for (long i = 0; i < pa->grad.numel(); ++i) pa->grad.v[i] += n.grad.v[0];
  });
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return smul(sum_all(a), T(1) / T(a.value().numel()));
}

// softmax over `axis`, max-subtracted for stability
template <class T>
Tensor<T> softmax_axis(const Tensor<T>& a, long axis) {
  long outer, len, inner;
  axis_split(a.shape(), axis, outer, len, inner);
  Array<T> out(a.shape());
  for (long o = 0; o < outer; ++o)
    for (long i = 0; i < inner; ++i) {
      T mx = a.value().v[o * len * inner + i];
      for (long l = 1; l < len; ++l)
        mx = std::max(mx, a.value().v[(o * len + l) * inner + i]);
      T z = 0;
      for (long l = 0; l < len; ++l) {
        T e = std::exp(a.value().v[(o * len + l) * inner + i] - mx);
        out.v[(o * len + l) * inner + i] = e;
        z += e;
      }
      for (long l = 0; l < len; ++l) out.v[(o * len + l) * inner + i] /= z;
    }
  auto pa = a.node();
  Array<T> saved = out;
  return detail::make_op<T>(
      std::move(out), {a}, [pa, saved, outer, len, inner](Node<T>& n) {
        pa->ensure_grad();
        for (long o = 0; o < outer; ++o)
          for (long i = 0; i < inner; ++i) {
            T dot = 0;
            for (long l = 0; l < len; ++l) {
              long idx = (o * len + l) * inner + i;
              dot += n.grad.v[idx] * saved.v[idx];
            }
            for (long l = 0; l < len; ++l) {
              long idx = (o * len + l) * inner + i;
              pa->grad.v[idx] += saved.v[idx] * (n.grad.v[idx] - dot);
            }
          }
      });
}

// ----- matmul -----
//
// A: [batch..., M, K]. B is either [K, N] (shared across the batch) or
// [batch..., K, N] with batch dims equal to A's. No other broadcasting.

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2)
    throw UsageError("matmul: rank < 2: " + shape_str(sa) + " x " +
                     shape_str(sb));
  long M = sa[sa.size() - 2], K = sa[sa.size() - 1];
  long Kb = sb[sb.size() - 2], N = sb[sb.size() - 1];
  bool shared_b = sb.size() == 2;
  if (!shared_b) {
    if (Shape(sa.begin(), sa.end() - 2) != Shape(sb.begin(), sb.end() - 2))
      throw UsageError("matmul: batch dims differ: " + shape_str(sa) + " x " +
                       shape_str(sb));
  }
  if (K != Kb)
    throw UsageError("matmul: inner dims differ: " + shape_str(sa) + " x " +
                     shape_str(sb));
  long batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  Shape os(sa.begin(), sa.end() - 2);
  os.push_back(M);
  os.push_back(N);
  Array<T> out(os);
  for (long g = 0; g < batch; ++g)
    gemm(false, false, M, N, K, T(1), a.value().data() + g * M * K, K,
         b.value().data() + (shared_b ? 0 : g * K * N), N, T(0),
         out.data() + g * M * N, N);
  auto pa = a.node(), pb = b.node();
  return detail::make_op<T>(
      std::move(out), {a, b}, [pa, pb, batch, M, N, K, shared_b](Node<T>& n) {
        for (long g = 0; g < batch; ++g) {
          const T* gout = n.grad.data() + g * M * N;
          if (pa->requires_grad) {
            pa->ensure_grad();
            // dA = dC * B^T
            gemm(false, true, M, K, N, T(1), gout, N,
                 pb->value.data() + (shared_b ? 0 : g * K * N), N, T(1),
                 pa->grad.data() + g * M * K, K);
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            // dB (+)= A^T * dC
            gemm(true, false, K, N, M, T(1), pa->value.data() + g * M * K, K,
                 gout, N, T(1), pb->grad.data() + (shared_b ? 0 : g * K * N),
                 N);
          }
        }
      });
}

// ----- gather (max-pool style selection over positions) -----
//
// x: [N, P, D]; idx: [N, m] position indices. out[n, j] = x[n, idx[n][j]].
// The index tensor is constant: gradient flows to x only.

template <class T>
Tensor<T> gather_positions(const Tensor<T>& x,
                           const std::vector<std::vector<long>>& idx) {
  const Shape& s = x.shape();
  if (s.size() != 3) throw UsageError("gather_positions: want rank 3");
  long N = s[0], P = s[1], D = s[2];
  if (static_cast<long>(idx.size()) != N)
    throw UsageError("gather_positions: index batch mismatch");
  long m = static_cast<long>(idx[0].size());
  Array<T> out({N, m, D});
  for (long n = 0; n < N; ++n)
    for (long j = 0; j < m; ++j) {
      long k = idx[n][j];
      if (k < 0 || k >= P) throw UsageError("gather_positions: index range");
      std::copy(x.value().data() + (n * P + k) * D,
                x.value().data() + (n * P + k + 1) * D,
                out.v.begin() + (n * m + j) * D);
    }
  auto px = x.node();
  return detail::make_op<T>(std::move(out), {x},
                            [px, idx, N = N, m = m, D = D, P = P](Node<T>& n) {
                              pa_scatter(*px, n, idx, N, m, D, P);
                            });
}

template <class T>
void pa_scatter(Node<T>& px, Node<T>& n,
                const std::vector<std::vector<long>>& idx, long N, long m,
                long D, long P) {
  px.ensure_grad();
  for (long b = 0; b < N; ++b)
    for (long j = 0; j < m; ++j) {
      long k = idx[b][j];
      const T* g = n.grad.data() + (b * m + j) * D;
      T* dst = px.grad.data() + (b * P + k) * D;
      for (long d = 0; d < D; ++d) dst[d] += g[d];
    }
}

// ----- pooling -----

template <class T>
Tensor<T> avgpool2x2(const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw UsageError("avgpool2x2: want [N,C,H,W]");
  long N = s[0], C = s[1], H = s[2], W = s[3];
  if (H % 2 || W % 2)
    throw UsageError("avgpool2x2: spatial dims must be even, got " +
                     shape_str(s));
  long Ho = H / 2, Wo = W / 2;
  Array<T> out({N, C, Ho, Wo});
  const T* src = x.value().data();
  for (long nc = 0; nc < N * C; ++nc) {
    const T* plane = src + nc * H * W;
    T* op = out.data() + nc * Ho * Wo;
    for (long i = 0; i < Ho; ++i)
      for (long j = 0; j < Wo; ++j)
        op[i * Wo + j] = (plane[(2 * i) * W + 2 * j] +
                          plane[(2 * i) * W + 2 * j + 1] +
                          plane[(2 * i + 1) * W + 2 * j] +
                          plane[(2 * i + 1) * W + 2 * j + 1]) *
                         T(0.25);
  }
  auto px = x.node();
  return detail::make_op<T>(std::move(out), {x},
                            [px, N, C, H, W, Ho, Wo](Node<T>& n) {
                              px->ensure_grad();
                              for (long nc = 0; nc < N * C; ++nc) {
                                T* dplane = px->grad.data() + nc * H * W;
                                const T* g = n.grad.data() + nc * Ho * Wo;
                                for (long i = 0; i < Ho; ++i)
                                  for (long j = 0; j < Wo; ++j) {
                                    T q = g[i * Wo + j] * T(0.25);
                                    dplane[(2 * i) * W + 2 * j] += q;
                                    dplane[(2 * i) * W + 2 * j + 1] += q;
                                    dplane[(2 * i + 1) * W + 2 * j] += q;
                                    dplane[(2 * i + 1) * W + 2 * j + 1] += q;
                                  }
                              }
                            });
}

// ----- convolution (cross-correlation), im2col + gemm -----

namespace detail {

template <class T>
void im2col(const T* img, long C, long H, long W, long kh, long kw,
            long stride, long pad, long Ho, long Wo, T* col) {
  // col: [C*kh*kw, Ho*Wo]
  for (long c = 0; c < C; ++c)
    for (long ki = 0; ki < kh; ++ki)
      for (long kj = 0; kj < kw; ++kj) {
        T* row = col + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (long i = 0; i < Ho; ++i) {
          long yi = i * stride + ki - pad;
          if (yi < 0 || yi >= H) {
            std::fill(row + i * Wo, row + (i + 1) * Wo, T(0));
            continue;
          }
          for (long j = 0; j < Wo; ++j) {
            long xj = j * stride + kj - pad;
            row[i * Wo + j] = (xj >= 0 && xj < W) ? img[(c * H + yi) * W + xj]
                                                  : T(0);
          }
        }
      }
}

template <class T>
void col2im_add(const T* col, long C, long H, long W, long kh, long kw,
                long stride, long pad, long Ho, long Wo, T* img) {
  for (long c = 0; c < C; ++c)
    for (long ki = 0; ki < kh; ++ki)
      for (long kj = 0; kj < kw; ++kj) {
        const T* row = col + ((c * kh + ki) * kw + kj) * Ho * Wo;
        for (long i = 0; i < Ho; ++i) {
          long yi = i * stride + ki - pad;
          if (yi < 0 || yi >= H) continue;
          for (long j = 0; j < Wo; ++j) {
            long xj = j * stride + kj - pad;
            if (xj >= 0 && xj < W) img[(c * H + yi) * W + xj] += row[i * Wo + j];
          }
        }
      }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                 long stride = 1, long pad = 0) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4 || sw.size() != 4)
    throw UsageError("conv2d: want input [N,Cin,H,W], kernel [Cout,Cin,kH,kW]; got " +
                     shape_str(sx) + " and " + shape_str(sw));
  long N = sx[0], Cin = sx[1], H = sx[2], W = sx[3];
  long Cout = sw[0], kh = sw[2], kw = sw[3];
  if (sw[1] != Cin)
    throw UsageError("conv2d: channel mismatch, input " + shape_str(sx) +
                     " kernel " + shape_str(sw));
  if ((H + 2 * pad - kh) % stride || (W + 2 * pad - kw) % stride)
    throw UsageError("conv2d: output size not integral for " + shape_str(sx));
  long Ho = (H + 2 * pad - kh) / stride + 1;
  long Wo = (W + 2 * pad - kw) / stride + 1;
  long K = Cin * kh * kw;
  Array<T> out({N, Cout, Ho, Wo});
  std::vector<T> col(static_cast<std::size_t>(K * Ho * Wo));
  for (long n = 0; n < N; ++n) {
    detail::im2col(x.value().data() + n * Cin * H * W, Cin, H, W, kh, kw,
                   stride, pad, Ho, Wo, col.data());
    gemm(false, false, Cout, Ho * Wo, K, T(1), w.value().data(), K, col.data(),
         Ho * Wo, T(0), out.data() + n * Cout * Ho * Wo, Ho * Wo);
    if (bias)
      for (long c = 0; c < Cout; ++c) {
        T b = bias->value().v[c];
        T* p = out.data() + (n * Cout + c) * Ho * Wo;
        for (long i = 0; i < Ho * Wo; ++i) p[i] += b;
      }
  }
  std::vector<Tensor<T>> parents{x, w};
  if (bias) parents.push_back(*bias);
  auto px = x.node(), pw = w.node();
  std::shared_ptr<Node<T>> pbias = bias ? bias->node() : nullptr;
  return detail::make_op<T>(
      std::move(out), std::move(parents),
      [px, pw, pbias, N, Cin, H, W, Cout, kh, kw, stride, pad, Ho, Wo,
       K](Node<T>& n) {
        std::vector<T> col(static_cast<std::size_t>(K * Ho * Wo));
        std::vector<T> dcol;
        if (px->requires_grad)
          dcol.resize(static_cast<std::size_t>(K * Ho * Wo));
        if (pw->requires_grad) pw->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        if (pbias && pbias->requires_grad) pbias->ensure_grad();
        for (long b = 0; b < N; ++b) {
          const T* gout = n.grad.data() + b * Cout * Ho * Wo;
          if (pw->requires_grad) {
            // dW += dOut * col^T  (col recomputed, not saved)
            detail::im2col(px->value.data() + b * Cin * H * W, Cin, H, W, kh,
                           kw, stride, pad, Ho, Wo, col.data());
            gemm(false, true, Cout, K, Ho * Wo, T(1), gout, Ho * Wo, col.data(),
                 Ho * Wo, T(1), pw->grad.data(), K);
          }
          if (px->requires_grad) {
            gemm(true, false, K, Ho * Wo, Cout, T(1), pw->value.data(), K, gout,
                 Ho * Wo, T(0), dcol.data(), Ho * Wo);
            detail::col2im_add(dcol.data(), Cin, H, W, kh, kw, stride, pad, Ho,
                               Wo, px->grad.data() + b * Cin * H * W);
          }
          if (pbias && pbias->requires_grad)
            for (long c = 0; c < Cout; ++c) {
              T acc = 0;
              const T* p = gout + c * Ho * Wo;
              for (long i = 0; i < Ho * Wo; ++i) acc += p[i];
              pbias->grad.v[c] += acc;
            }
        }
      });
}

// ----- batch normalization -----

// Running stats live outside the graph and are updated in train mode.
template <class T>
struct BatchNormStats {
  Array<T> running_mean;
  Array<T> running_var;
  explicit BatchNormStats(long channels = 0)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

template <class T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma,
                      const Tensor<T>& beta, BatchNormStats<T>& stats,
                      bool train, T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw UsageError("batchnorm2d: want [N,C,H,W]");
  long N = s[0], C = s[1], H = s[2], W = s[3];
  long M = N * H * W;
  if (train && M < 2)
    throw UsageError("batchnorm2d: train mode needs N*H*W >= 2");
  Array<T> mean({C}), var({C});
  if (train) {
    for (long c = 0; c < C; ++c) {
      double acc = 0;
      for (long n = 0; n < N; ++n) {
        const T* p = x.value().data() + (n * C + c) * H * W;
        for (long i = 0; i < H * W; ++i) acc += p[i];
      }
      mean.v[c] = static_cast<T>(acc / M);
      double vacc = 0;
      for (long n = 0; n < N; ++n) {
        const T* p = x.value().data() + (n * C + c) * H * W;
        for (long i = 0; i < H * W; ++i) {
          double d = p[i] - mean.v[c];
          vacc += d * d;
        }
      }
      var.v[c] = static_cast<T>(vacc / M);  // biased, used for normalization
      // unbiased estimate feeds the running average
      T unbiased = M > 1 ? static_cast<T>(vacc / (M - 1)) : var.v[c];
      stats.running_mean.v[c] =
          (T(1) - momentum) * stats.running_mean.v[c] + momentum * mean.v[c];
      stats.running_var.v[c] =
          (T(1) - momentum) * stats.running_var.v[c] + momentum * unbiased;
    }
  } else {
    mean = stats.running_mean;
    var = stats.running_var;
  }
  Array<T> out(s);
  Array<T> xhat(s);
  for (long n = 0; n < N; ++n)
    for (long c = 0; c < C; ++c) {
      T inv = T(1) / std::sqrt(var.v[c] + eps);
      const T* p = x.value().data() + (n * C + c) * H * W;
      T* xh = xhat.data() + (n * C + c) * H * W;
      T* o = out.data() + (n * C + c) * H * W;
      for (long i = 0; i < H * W; ++i) {
        xh[i] = (p[i] - mean.v[c]) * inv;
        o[i] = gamma.value().v[c] * xh[i] + beta.value().v[c];
      }
    }
  auto px = x.node(), pg = gamma.node(), pb = beta.node();
  return detail::make_op<T>(
      std::move(out), {x, gamma, beta},
      [px, pg, pb, xhat, var, eps, N, C, H, W, M, train](Node<T>& n) {
        if (pg->requires_grad) pg->ensure_grad();
        if (pb->requires_grad) pb->ensure_grad();
        if (px->requires_grad) px->ensure_grad();
        for (long c = 0; c < C; ++c) {
          double dgamma = 0, dbeta = 0;
          for (long b = 0; b < N; ++b) {
            const T* g = n.grad.data() + (b * C + c) * H * W;
            const T* xh = xhat.data() + (b * C + c) * H * W;
            for (long i = 0; i < H * W; ++i) {
              dgamma += g[i] * xh[i];
              dbeta += g[i];
            }
          }
          if (pg->requires_grad) pg->grad.v[c] += static_cast<T>(dgamma);
          if (pb->requires_grad) pb->grad.v[c] += static_cast<T>(dbeta);
          if (px->requires_grad) {
            T inv = T(1) / std::sqrt(var.v[c] + eps);
            T gam = pg->value.v[c];
            if (train) {
              // dx = gamma*inv/M * (M*g - sum(g) - xhat*sum(g*xhat))
              for (long b = 0; b < N; ++b) {
                const T* g = n.grad.data() + (b * C + c) * H * W;
                const T* xh = xhat.data() + (b * C + c) * H * W;
                T* dx = px->grad.data() + (b * C + c) * H * W;
                for (long i = 0; i < H * W; ++i)
                  dx[i] += gam * inv / T(M) *
                           (T(M) * g[i] - static_cast<T>(dbeta) -
                            xh[i] * static_cast<T>(dgamma));
              }
            } else {
              for (long b = 0; b < N; ++b) {
                const T* g = n.grad.data() + (b * C + c) * H * W;
                T* dx = px->grad.data() + (b * C + c) * H * W;
                for (long i = 0; i < H * W; ++i) dx[i] += gam * inv * g[i];
              }
            }
          }
        }
      });
}

// ----- losses -----

// Mean BCE over all elements, fused stable form:
// l = max(z,0) - z*y + log(1+exp(-|z|))
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Array<T>& targets) {
  detail::check_same_shape(logits.value(), targets, "bce_with_logits");
  if (!logits.value().all_finite())
    throw NumericalError("bce_with_logits: non-finite logits");
  long n = logits.value().numel();
  double acc = 0;
  for (long i = 0; i < n; ++i) {
    T z = logits.value().v[i], y = targets.v[i];
    acc += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  Array<T> out({}, static_cast<T>(acc / n));
  auto pl = logits.node();
  return detail::make_op<T>(std::move(out), {logits},
                            [pl, targets, n](Node<T>& nd) {
                              pl->ensure_grad();
                              for (long i = 0; i < n; ++i) {
                                T z = pl->value.v[i];
                                T p = z >= T(0)
                                          ? T(1) / (T(1) + std::exp(-z))
                                          : std::exp(z) / (T(1) + std::exp(z));
                                pl->grad.v[i] +=
                                    nd.grad.v[0] * (p - targets.v[i]) / T(n);
                              }
                            });
}

// Mean -log softmax(logits)[class] over the batch.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits,
                        const std::vector<long>& classes) {
  const Shape& s = logits.shape();
  if (s.size() != 2) throw UsageError("cross_entropy: want [N,K] logits");
  long N = s[0], K = s[1];
  if (static_cast<long>(classes.size()) != N)
    throw UsageError("cross_entropy: batch size mismatch");
  for (long c : classes)
    if (c < 0 || c >= K)
      throw UsageError("cross_entropy: class id " + std::to_string(c) +
                       " out of range");
  Array<T> probs({N, K});
  double acc = 0;
  for (long b = 0; b < N; ++b) {
    const T* z = logits.value().data() + b * K;
    T mx = z[0];
    for (long k = 1; k < K; ++k) mx = std::max(mx, z[k]);
    double Z = 0;
    for (long k = 0; k < K; ++k) Z += std::exp(static_cast<double>(z[k] - mx));
    for (long k = 0; k < K; ++k)
      probs.v[b * K + k] = static_cast<T>(std::exp(static_cast<double>(z[k] - mx)) / Z);
    acc -= (z[classes[b]] - mx) - std::log(Z);
  }
  Array<T> out({}, static_cast<T>(acc / N));
  auto pl = logits.node();
  return detail::make_op<T>(std::move(out), {logits},
                            [pl, probs, classes, N, K](Node<T>& nd) {
                              pl->ensure_grad();
                              for (long b = 0; b < N; ++b)
                                for (long k = 0; k < K; ++k) {
                                  T g = probs.v[b * K + k];
                                  if (k == classes[b]) g -= T(1);
                                  pl->grad.v[b * K + k] +=
                                      nd.grad.v[0] * g / T(N);
                                }
                            });
}

// ----- backward -----

template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.value().numel() != 1 || !loss.shape().empty())
    throw UsageError("backward: loss must be a scalar tensor");
  if (!loss.requires_grad()) return;

  // reverse topological order, iterative DFS
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.push_back({loss.node().get(), 0});
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, i] = stack.back();
    if (i < node->parents.size()) {
      Node<T>* p = node->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // transient grads for interior nodes; persistent ones accumulate on leaves
  for (Node<T>* n : order)
    if (!n->is_leaf)
      n->grad = Array<T>(n->value.shape);
  Node<T>* root = loss.node().get();
  root->ensure_grad();
  root->grad.v[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

// ----- parameters -----

// Named trainable tensors; iteration is deterministic (sorted by name).
template <class T>
class ParameterSet {
 public:
  Tensor<T>& add(const std::string& name, Array<T> init) {
    if (params_.count(name))
      throw UsageError("parameter name not unique: " + name);
    params_.emplace(name, Tensor<T>::leaf(std::move(init), true));
    return params_.at(name);
  }

  Tensor<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("no parameter named " + name);
    return it->second;
  }

  const Tensor<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("no parameter named " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name); }

  void zero_grads() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  long total_count() const {
    long n = 0;
    for (const auto& [_, t] : params_) n += t.value().numel();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

 private:
  std::map<std::string, Tensor<T>> params_;
};

}  // namespace mb::ad
