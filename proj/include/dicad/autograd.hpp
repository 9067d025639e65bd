#pragma once

// Minimal tape-free reverse-mode differentiation. Each op result keeps
// shared pointers to its inputs plus a closure that pushes its gradient
// upstream; backward() topologically sorts the graph reachable from a
// scalar root. Only the ops needed by the denoiser, codec, feature
// extractor and their losses are provided.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dicad/tensor.hpp"

#ifdef DICAD_USE_BLAS
#include <cblas.h>
#endif

namespace dicad::ag {

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <class T>
struct Node {
  basic_tensor<T> value;
  basic_tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const basic_tensor<T>& g) {
    if (grad.empty())
      grad = g;
    else
      grad += g;
  }
  // Gradient buffer sized like value, zero-initialised on first use.
  basic_tensor<T>& grad_buffer() {
    if (grad.empty()) grad = basic_tensor<T>(value.shape());
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(basic_tensor<T> v, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(v);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const basic_tensor<T>& value() const { return node_->value; }
  basic_tensor<T>& mutable_value() { return node_->value; }
  const basic_tensor<T>& grad() const { return node_->grad; }
  basic_tensor<T>& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad = basic_tensor<T>(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
Var<T> constant(basic_tensor<T> v) {
  return Var<T>(std::move(v), false);
}

// Wraps an op output; records the backward closure only when grad mode is
// on and at least one input needs a gradient.
template <class T, class F>
Var<T> make_result(basic_tensor<T> value, std::vector<Var<T>> inputs, F&& backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (detail::grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (auto& in : inputs) node->parents.push_back(in.node());
      node->backward = std::forward<F>(backward);
    }
  }
  return Var<T>(std::move(node));
}

template <class T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) throw std::invalid_argument("backward() needs a scalar root");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node<T>* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->grad = basic_tensor<T>(root.value().shape(), T{1});
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

// ---------------------------------------------------------------------------
// GEMM kernels (row-major, accumulate into C).

namespace kernels {

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn_ref(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      const T* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t u = 0; u < 8; ++u) acc[u] += a[i + u] * b[i + u];
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt_ref(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) C[i * N + j] += dot(A + i * K, B + j * K, K);
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void gemm_tn_ref(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      T* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}


#ifdef DICAD_USE_BLAS
template <class T>
constexpr bool blas_type = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <class T>
void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t M, std::size_t N, std::size_t K, const T* A,
               std::size_t lda, const T* B, std::size_t ldb, T* C) {
  const auto m = int(M), n = int(N), k = int(K);
  if constexpr (std::is_same_v<T, float>)
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, 1.0f, A, int(lda), B, int(ldb), 1.0f, C, n);
  else
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, 1.0, A, int(lda), B, int(ldb), 1.0, C, n);
}
#endif

template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
#ifdef DICAD_USE_BLAS
  if constexpr (blas_type<T>) return blas_gemm(CblasNoTrans, CblasNoTrans, M, N, K, A, K, B, N, C);
#endif
  gemm_nn_ref(M, N, K, A, B, C);
}

template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
#ifdef DICAD_USE_BLAS
  if constexpr (blas_type<T>) return blas_gemm(CblasNoTrans, CblasTrans, M, N, K, A, K, B, K, C);
#endif
  gemm_nt_ref(M, N, K, A, B, C);
}

template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
#ifdef DICAD_USE_BLAS
  if constexpr (blas_type<T>) return blas_gemm(CblasTrans, CblasNoTrans, M, N, K, A, M, B, N, C);
#endif
  gemm_tn_ref(M, N, K, A, B, C);
}

// col[(c*k + ky)*k + kx, oy*W_out + ox] for stride 1, symmetric zero padding.
template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t pad,
            std::size_t Ho, std::size_t Wo, T* col) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = long(oy + ky) - long(pad);
          T* r = row + oy * Wo;
          if (iy < 0 || iy >= long(H)) {
            std::fill(r, r + Wo, T{});
            continue;
          }
          const T* src = x + (c * H + std::size_t(iy)) * W;
          const std::size_t lo = std::min(Wo, kx < pad ? pad - kx : 0);
          const std::size_t hi = std::max(lo, std::min(Wo, W + pad - kx));
          std::fill(r, r + lo, T{});
          std::copy(src + lo + kx - pad, src + hi + kx - pad, r + lo);
          std::fill(r + hi, r + Wo, T{});
        }
      }
}

template <class T>
void col2im(const T* col, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t pad,
            std::size_t Ho, std::size_t Wo, T* x) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * Ho * Wo;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const long iy = long(oy + ky) - long(pad);
          if (iy < 0 || iy >= long(H)) continue;
          T* dst = x + (c * H + std::size_t(iy)) * W;
          const T* r = row + oy * Wo;
          const std::size_t lo = std::min(Wo, kx < pad ? pad - kx : 0);
          const std::size_t hi = std::max(lo, std::min(Wo, W + pad - kx));
          T* d = dst + kx - pad;
          for (std::size_t ox = lo; ox < hi; ++ox) d[ox] += r[ox];
        }
      }
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Ops

// x [N,C,H,W], w [O,C,k,k], b [O]; stride 1, zero padding `pad`.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, std::size_t pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || b.value().size() != ws[0])
    throw std::invalid_argument("conv2d shape mismatch: x" + shape_str(xs) + " w" + shape_str(ws));
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], O = ws[0], k = ws[2];
  if (H + 2 * pad < k || W + 2 * pad < k) throw std::invalid_argument("conv2d kernel larger than input");
  const std::size_t Ho = H + 2 * pad - k + 1, Wo = W + 2 * pad - k + 1;
  const std::size_t ckk = C * k * k, hw = Ho * Wo;
  basic_tensor<T> y(Shape{N, O, Ho, Wo});
  std::vector<T> col(ckk * hw);
  for (std::size_t n = 0; n < N; ++n) {
    kernels::im2col(x.value().data() + n * C * H * W, C, H, W, k, pad, Ho, Wo, col.data());
    T* yn = y.data() + n * O * hw;
    for (std::size_t o = 0; o < O; ++o) std::fill(yn + o * hw, yn + (o + 1) * hw, b.value()[o]);
    kernels::gemm_nn(O, hw, ckk, w.value().data(), col.data(), yn);
  }
  return make_result<T>(std::move(y), {x, w, b}, [=](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    const T* gy = self.grad.data();
    std::vector<T> colb(ckk * hw), dcol(ckk * hw);
    for (std::size_t n = 0; n < N; ++n) {
      const T* gyn = gy + n * O * hw;
      if (wn.requires_grad || xn.requires_grad)
        kernels::im2col(xn.value.data() + n * C * H * W, C, H, W, k, pad, Ho, Wo, colb.data());
      if (wn.requires_grad) kernels::gemm_nt(O, ckk, hw, gyn, colb.data(), wn.grad_buffer().data());
      if (bn.requires_grad) {
        T* gb = bn.grad_buffer().data();
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t j = 0; j < hw; ++j) gb[o] += gyn[o * hw + j];
      }
      if (xn.requires_grad) {
        std::fill(dcol.begin(), dcol.end(), T{});
        kernels::gemm_tn(ckk, hw, O, wn.value.data(), gyn, dcol.data());
        kernels::col2im(dcol.data(), C, H, W, k, pad, Ho, Wo, xn.grad_buffer().data() + n * C * H * W);
      }
    }
  });
}

// x [N,F], w [O,F], b [O] -> [N,O]
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1] || b.value().size() != ws[0])
    throw std::invalid_argument("linear shape mismatch: x" + shape_str(xs) + " w" + shape_str(ws));
  const std::size_t N = xs[0], F = xs[1], O = ws[0];
  basic_tensor<T> y(Shape{N, O});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) y[n * O + o] = b.value()[o];
  kernels::gemm_nt(N, O, F, x.value().data(), w.value().data(), y.data());
  return make_result<T>(std::move(y), {x, w, b}, [=](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    const T* gy = self.grad.data();
    if (xn.requires_grad) kernels::gemm_nn(N, F, O, gy, wn.value.data(), xn.grad_buffer().data());
    if (wn.requires_grad) kernels::gemm_tn(O, F, N, gy, xn.value.data(), wn.grad_buffer().data());
    if (bn.requires_grad) {
      T* gb = bn.grad_buffer().data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) gb[o] += gy[n * O + o];
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "add");
  return make_result<T>(a.value() + b.value(), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "sub");
  return make_result<T>(a.value() - b.value(), {a, b}, [](Node<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) self.parents[1]->accumulate(self.grad * T{-1});
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return make_result<T>(a.value() * s, {a}, [s](Node<T>& self) { self.parents[0]->accumulate(self.grad * s); });
}

// y = a * x + b with scalar (shape [1]) vars a and b.
template <class T>
Var<T> affine_scalar(const Var<T>& x, const Var<T>& a, const Var<T>& b) {
  if (a.value().size() != 1 || b.value().size() != 1) throw std::invalid_argument("affine_scalar needs scalar a, b");
  basic_tensor<T> y = x.value();
  const T av = a.value()[0], bv = b.value()[0];
  for (auto& v : y.vec()) v = av * v + bv;
  return make_result<T>(std::move(y), {x, a, b}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& an = *self.parents[1];
    auto& bn = *self.parents[2];
    T ga{}, gb{};
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga += self.grad[i] * xn.value[i];
      gb += self.grad[i];
    }
    if (xn.requires_grad) xn.accumulate(self.grad * an.value[0]);
    if (an.requires_grad) an.grad_buffer()[0] += ga;
    if (bn.requires_grad) bn.grad_buffer()[0] += gb;
  });
}

// x [N,C,H,W] + v [N,C] broadcast over space.
template <class T>
Var<T> add_channel(const Var<T>& x, const Var<T>& v) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || v.shape().size() != 2 || v.shape()[0] != xs[0] || v.shape()[1] != xs[1])
    throw std::invalid_argument("add_channel shape mismatch: x" + shape_str(xs) + " v" + shape_str(v.shape()));
  const std::size_t NC = xs[0] * xs[1], hw = xs[2] * xs[3];
  basic_tensor<T> y = x.value();
  for (std::size_t i = 0; i < NC; ++i)
    for (std::size_t j = 0; j < hw; ++j) y[i * hw + j] += v.value()[i];
  return make_result<T>(std::move(y), {x, v}, [=](Node<T>& self) {
    if (self.parents[0]->requires_grad) self.parents[0]->accumulate(self.grad);
    if (self.parents[1]->requires_grad) {
      T* gv = self.parents[1]->grad_buffer().data();
      for (std::size_t i = 0; i < NC; ++i)
        for (std::size_t j = 0; j < hw; ++j) gv[i] += self.grad[i * hw + j];
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  basic_tensor<T> y = a.value();
  for (auto& v : y.vec()) v = v > T{} ? v : T{};
  return make_result<T>(std::move(y), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    T* g = p.grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > T{}) g[i] += self.grad[i];
  });
}

template <class T>
Var<T> silu(const Var<T>& a) {
  basic_tensor<T> y = a.value();
  for (auto& v : y.vec()) v = v / (T{1} + std::exp(-v));
  return make_result<T>(std::move(y), {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    T* g = p.grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const T x = p.value[i];
      const T s = T{1} / (T{1} + std::exp(-x));
      g[i] += self.grad[i] * (s * (T{1} + x * (T{1} - s)));
    }
  });
}

// Non-overlapping average pooling by an integer factor.
template <class T>
Var<T> avg_pool(const Var<T>& x, std::size_t f) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[2] % f || s[3] % f)
    throw std::invalid_argument("avg_pool: spatial size " + shape_str(s) + " not divisible by " + std::to_string(f));
  const std::size_t NC = s[0] * s[1], H = s[2], W = s[3], Ho = H / f, Wo = W / f;
  basic_tensor<T> y(Shape{s[0], s[1], Ho, Wo});
  const T inv = T{1} / T(f * f);
  for (std::size_t i = 0; i < NC; ++i)
    for (std::size_t yy = 0; yy < H; ++yy)
      for (std::size_t xx = 0; xx < W; ++xx)
        y[(i * Ho + yy / f) * Wo + xx / f] += x.value()[(i * H + yy) * W + xx] * inv;
  return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < NC; ++i)
      for (std::size_t yy = 0; yy < H; ++yy)
        for (std::size_t xx = 0; xx < W; ++xx) g[(i * H + yy) * W + xx] += self.grad[(i * Ho + yy / f) * Wo + xx / f] * inv;
  });
}

template <class T>
Var<T> upsample_nearest(const Var<T>& x, std::size_t f) {
  const auto& s = x.shape();
  if (s.size() != 4) throw std::invalid_argument("upsample_nearest expects NCHW");
  const std::size_t NC = s[0] * s[1], H = s[2], W = s[3], Ho = H * f, Wo = W * f;
  basic_tensor<T> y(Shape{s[0], s[1], Ho, Wo});
  for (std::size_t i = 0; i < NC; ++i)
    for (std::size_t yy = 0; yy < Ho; ++yy)
      for (std::size_t xx = 0; xx < Wo; ++xx) y[(i * Ho + yy) * Wo + xx] = x.value()[(i * H + yy / f) * W + xx / f];
  return make_result<T>(std::move(y), {x}, [=](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    for (std::size_t i = 0; i < NC; ++i)
      for (std::size_t yy = 0; yy < Ho; ++yy)
        for (std::size_t xx = 0; xx < Wo; ++xx) g[(i * H + yy / f) * W + xx / f] += self.grad[(i * Ho + yy) * Wo + xx];
  });
}

template <class T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 4 || bs.size() != 4 || as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw std::invalid_argument("concat_channels shape mismatch: " + shape_str(as) + " vs " + shape_str(bs));
  const std::size_t N = as[0], hw = as[2] * as[3], ca = as[1] * hw, cb = bs[1] * hw;
  basic_tensor<T> y(Shape{N, as[1] + bs[1], as[2], as[3]});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy(a.value().data() + n * ca, a.value().data() + (n + 1) * ca, y.data() + n * (ca + cb));
    std::copy(b.value().data() + n * cb, b.value().data() + (n + 1) * cb, y.data() + n * (ca + cb) + ca);
  }
  return make_result<T>(std::move(y), {a, b}, [=](Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    for (std::size_t n = 0; n < N; ++n) {
      const T* g = self.grad.data() + n * (ca + cb);
      if (an.requires_grad) {
        T* ga = an.grad_buffer().data() + n * ca;
        for (std::size_t i = 0; i < ca; ++i) ga[i] += g[i];
      }
      if (bn.requires_grad) {
        T* gb = bn.grad_buffer().data() + n * cb;
        for (std::size_t i = 0; i < cb; ++i) gb[i] += g[ca + i];
      }
    }
  });
}

// Mean squared error over all elements, returns shape [1].
template <class T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  a.value().require_same_shape(b.value(), "mse");
  const std::size_t n = a.value().size();
  T s{};
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a.value()[i] - b.value()[i];
    s += d * d;
  }
  return make_result<T>(basic_tensor<T>::scalar(s / T(n)), {a, b}, [n](Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    const T c = T{2} * self.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = c * (an.value[i] - bn.value[i]);
      if (an.requires_grad) an.grad_buffer()[i] += d;
      if (bn.requires_grad) bn.grad_buffer()[i] -= d;
    }
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  const std::size_t n = a.value().size();
  return make_result<T>(basic_tensor<T>::scalar(sum(a.value()) / T(n)), {a}, [n](Node<T>& self) {
    T* g = self.parents[0]->grad_buffer().data();
    const T c = self.grad[0] / T(n);
    for (std::size_t i = 0; i < n; ++i) g[i] += c;
  });
}

// Sum of scalar vars.
template <class T>
Var<T> add_scalars(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("add_scalars of empty list");
  T s{};
  for (const auto& x : xs) s += x.value()[0];
  return make_result<T>(basic_tensor<T>::scalar(s), xs, [](Node<T>& self) {
    for (auto& p : self.parents)
      if (p->requires_grad) p->accumulate(self.grad);
  });
}

// Per-location cosine distance across channels: [N,C,H,W] x2 -> [N,1,H,W].
// The norm product in the denominator is floored at eps.
template <class T>
Var<T> cosine_distance_map(const Var<T>& a, const Var<T>& b, T eps = T(1e-8)) {
  a.value().require_same_shape(b.value(), "cosine_distance_map");
  const auto& s = a.shape();
  if (s.size() != 4) throw std::invalid_argument("cosine_distance_map expects NCHW");
  const std::size_t N = s[0], C = s[1], hw = s[2] * s[3];
  basic_tensor<T> y(Shape{N, 1, s[2], s[3]});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t j = 0; j < hw; ++j) {
      T dot{}, na{}, nb{};
      for (std::size_t c = 0; c < C; ++c) {
        const T x = a.value()[(n * C + c) * hw + j], z = b.value()[(n * C + c) * hw + j];
        dot += x * z;
        na += x * x;
        nb += z * z;
      }
      const T den = std::max(std::sqrt(na) * std::sqrt(nb), eps);
      y[n * hw + j] = T{1} - dot / den;
    }
  return make_result<T>(std::move(y), {a, b}, [=](Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < hw; ++j) {
        T dot{}, na{}, nb{};
        for (std::size_t c = 0; c < C; ++c) {
          const T x = an.value[(n * C + c) * hw + j], z = bn.value[(n * C + c) * hw + j];
          dot += x * z;
          na += x * x;
          nb += z * z;
        }
        const T la = std::sqrt(na), lb = std::sqrt(nb);
        const T g = -self.grad[n * hw + j];
        if (la * lb <= eps) {
          // constant denominator branch
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t i = (n * C + c) * hw + j;
            if (an.requires_grad) an.grad_buffer()[i] += g * bn.value[i] / eps;
            if (bn.requires_grad) bn.grad_buffer()[i] += g * an.value[i] / eps;
          }
          continue;
        }
        const T cosv = dot / (la * lb);
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = (n * C + c) * hw + j;
          const T x = an.value[i], z = bn.value[i];
          if (an.requires_grad) an.grad_buffer()[i] += g * (z / (la * lb) - cosv * x / na);
          if (bn.requires_grad) bn.grad_buffer()[i] += g * (x / (la * lb) - cosv * z / nb);
        }
      }
  });
}

// ---------------------------------------------------------------------------

// Named, ordered parameter collection shared by every network.
template <class T>
struct ParamSet {
  std::vector<std::pair<std::string, Var<T>>> entries;

  Var<T>& add(std::string name, basic_tensor<T> init) {
    entries.emplace_back(std::move(name), Var<T>(std::move(init), true));
    return entries.back().second;
  }
  const Var<T>& get(std::string_view name) const {
    for (const auto& [n, v] : entries)
      if (n == name) return v;
    throw std::out_of_range("no parameter named " + std::string(name));
  }
  Var<T>& get(std::string_view name) {
    for (auto& [n, v] : entries)
      if (n == name) return v;
    throw std::out_of_range("no parameter named " + std::string(name));
  }
  void zero_grad() {
    for (auto& [n, v] : entries) v.zero_grad();
  }
  std::size_t count() const {
    std::size_t c = 0;
    for (const auto& [n, v] : entries) c += v.value().size();
    return c;
  }
};

}  // namespace dicad::ag
