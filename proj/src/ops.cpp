#include "cw3/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

namespace cw3 {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_match(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                      shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
}

template <class F>
void dispatch(Dtype dt, F&& f) {
  if (dt == Dtype::kF32)
    f.template operator()<float>();
  else
    f.template operator()<double>();
}

// c[m,n] += a[m,k] . b[k,n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (int64_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[k,m]^T . b[k,n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t p = 0; p < k; ++p) {
    const T* ap = a + p * m;
    const T* bp = b + p * n;
    for (int64_t i = 0; i < m; ++i) {
      const T av = ap[i];
      T* ci = c + i * n;
      for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// c[m,n] += a[m,k] . b[n,k]^T, via a transposed copy of b to keep the inner
// loop a unit-stride non-reduction (vectorizes without reassociation).
template <class T>
void gemm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n,
             std::vector<T>& scratch) {
  scratch.assign(static_cast<size_t>(k * n), T(0));
  T* bt = scratch.data();
  for (int64_t j = 0; j < n; ++j)
    for (int64_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  gemm_nn(a, bt, c, m, k, n);
}

template <class T>
std::vector<T> transpose_copy(const T* a, int64_t rows, int64_t cols) {
  std::vector<T> out(static_cast<size_t>(rows * cols));
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) out[j * rows + i] = a[i * cols + j];
  return out;
}

// Maps a padded row/col index back to the source index; -1 means the zero
// region. Reflection mirrors about the edge sample without repeating it.
int pad_source(int64_t i, int64_t extent, int64_t pad, PaddingMode mode) {
  int64_t j = i - pad;
  if (j >= 0 && j < extent) return static_cast<int>(j);
  switch (mode) {
    case PaddingMode::kZero:
      return -1;
    case PaddingMode::kReplicate:
      return static_cast<int>(std::clamp<int64_t>(j, 0, extent - 1));
    case PaddingMode::kReflect: {
      while (j < 0 || j >= extent) {
        if (j < 0) j = -j;
        if (j >= extent) j = 2 * (extent - 1) - j;
      }
      return static_cast<int>(j);
    }
    default:
      return -1;
  }
}

}  // namespace

const char* padding_name(PaddingMode m) {
  switch (m) {
    case PaddingMode::kZero: return "zero";
    case PaddingMode::kReplicate: return "replicate";
    case PaddingMode::kReflect: return "reflect";
    case PaddingMode::kNone: return "none";
  }
  return "?";
}

PaddingMode padding_from_name(const std::string& name) {
  if (name == "zero") return PaddingMode::kZero;
  if (name == "replicate") return PaddingMode::kReplicate;
  if (name == "reflect") return PaddingMode::kReflect;
  if (name == "none") return PaddingMode::kNone;
  throw std::invalid_argument("unknown padding mode: " + name);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_match(a, b, "add");
  Tensor out = Tensor::make_op(a.shape(), a.dtype(), {a.node(), b.node()},
                               [](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   for (auto& p : self.parents) {
                                     if (!p->requires_grad) continue;
                                     auto pg = p->grad<T>();
                                     for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
                                   }
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto bv = b.data<T>(); auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_match(a, b, "sub");
  Tensor out = Tensor::make_op(a.shape(), a.dtype(), {a.node(), b.node()},
                               [](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   auto& pa = self.parents[0];
                                   auto& pb = self.parents[1];
                                   if (pa->requires_grad) {
                                     auto pg = pa->grad<T>();
                                     for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
                                   }
                                   if (pb->requires_grad) {
                                     auto pg = pb->grad<T>();
                                     for (size_t i = 0; i < pg.size(); ++i) pg[i] -= g[i];
                                   }
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto bv = b.data<T>(); auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_match(a, b, "mul");
  Tensor out = Tensor::make_op(a.shape(), a.dtype(), {a.node(), b.node()},
                               [](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   auto& pa = self.parents[0];
                                   auto& pb = self.parents[1];
                                   auto av = pa->cdata<T>();
                                   auto bv = pb->cdata<T>();
                                   if (pa->requires_grad) {
                                     auto pg = pa->grad<T>();
                                     for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i] * bv[i];
                                   }
                                   if (pb->requires_grad) {
                                     auto pg = pb->grad<T>();
                                     for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i] * av[i];
                                   }
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto bv = b.data<T>(); auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  });
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out = Tensor::make_op(a.shape(), a.dtype(), {a.node()},
                               [](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   auto& p = self.parents[0];
                                   if (!p->requires_grad) return;
                                   auto pg = p->grad<T>();
                                   for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto ov = out.data<T>();
    const T cc = static_cast<T>(c);
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + cc;
  });
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::make_op(a.shape(), a.dtype(), {a.node()},
                               [c](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   auto& p = self.parents[0];
                                   if (!p->requires_grad) return;
                                   auto pg = p->grad<T>();
                                   const T cc = static_cast<T>(c);
                                   for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i] * cc;
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto ov = out.data<T>();
    const T cc = static_cast<T>(c);
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * cc;
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::make_op(a.shape(), a.dtype(), {a.node()},
                               [](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   auto& p = self.parents[0];
                                   if (!p->requires_grad) return;
                                   auto xv = p->cdata<T>();
                                   auto pg = p->grad<T>();
                                   for (size_t i = 0; i < pg.size(); ++i)
                                     if (xv[i] > T(0)) pg[i] += g[i];
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > T(0) ? av[i] : T(0);
  });
  return out;
}

Tensor log_elem(const Tensor& a) {
  Tensor out = Tensor::make_op(a.shape(), a.dtype(), {a.node()},
                               [](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   auto& p = self.parents[0];
                                   if (!p->requires_grad) return;
                                   auto xv = p->cdata<T>();
                                   auto pg = p->grad<T>();
                                   for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i] / xv[i];
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto ov = out.data<T>();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(av[i]);
  });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::make_op({1}, a.dtype(), {a.node()},
                               [](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   const T g = self.grad<T>()[0];
                                   auto& p = self.parents[0];
                                   if (!p->requires_grad) return;
                                   auto pg = p->grad<T>();
                                   for (size_t i = 0; i < pg.size(); ++i) pg[i] += g;
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    T acc = T(0);
    for (size_t i = 0; i < av.size(); ++i) acc += av[i];
    out.data<T>()[0] = acc;
  });
  return out;
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: element count mismatch for " + shape_str(shape));
  Tensor out = Tensor::make_op(shape, a.dtype(), {a.node()},
                               [](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   auto& p = self.parents[0];
                                   if (!p->requires_grad) return;
                                   auto pg = p->grad<T>();
                                   for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto ov = out.data<T>();
    std::copy(av.begin(), av.end(), ov.begin());
  });
  return out;
}

Tensor diag_vector(const Tensor& a) {
  require(a.rank() == 2 && a.shape()[0] == a.shape()[1],
          "diag_vector: square matrix required, got " + shape_str(a.shape()));
  const int64_t n = a.shape()[0];
  Tensor out = Tensor::make_op({n}, a.dtype(), {a.node()},
                               [n](detail::Node& self) {
                                 dispatch(self.dtype, [&]<class T>() {
                                   auto g = self.grad<T>();
                                   auto& p = self.parents[0];
                                   if (!p->requires_grad) return;
                                   auto pg = p->grad<T>();
                                   for (int64_t i = 0; i < n; ++i) pg[i * n + i] += g[i];
                                 });
                               });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>(); auto ov = out.data<T>();
    for (int64_t i = 0; i < n; ++i) ov[i] = av[i * n + i];
  });
  return out;
}

static void require_rank2(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": rank-2 tensor required, got " +
                             shape_str(t.shape()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  require(a.dtype() == b.dtype(), "matmul: dtype mismatch");
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul: inner dimension mismatch " +
                                 shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = Tensor::make_op(
      {m, n}, a.dtype(), {a.node(), b.node()}, [m, k, n](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          const T* g = self.grad<T>().data();
          auto& pa = self.parents[0];
          auto& pb = self.parents[1];
          std::vector<T> scratch;
          if (pa->requires_grad)  // da += dc . b^T
            gemm_nt(g, pb->cdata<T>().data(), pa->grad<T>().data(), m, n, k, scratch);
          if (pb->requires_grad)  // db += a^T . dc
            gemm_tn(pa->cdata<T>().data(), g, pb->grad<T>().data(), k, m, n);
        });
      });
  dispatch(a.dtype(), [&]<class T>() {
    gemm_nn(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(), m, k, n);
  });
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  require(a.dtype() == b.dtype(), "matmul_nt: dtype mismatch");
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  require(b.shape()[1] == k, "matmul_nt: inner dimension mismatch " +
                                 shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = Tensor::make_op(
      {m, n}, a.dtype(), {a.node(), b.node()}, [m, k, n](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          const T* g = self.grad<T>().data();
          auto& pa = self.parents[0];
          auto& pb = self.parents[1];
          if (pa->requires_grad)  // da += dc . b
            gemm_nn(g, pb->cdata<T>().data(), pa->grad<T>().data(), m, n, k);
          if (pb->requires_grad)  // db += dc^T . a
            gemm_tn(g, pa->cdata<T>().data(), pb->grad<T>().data(), n, m, k);
        });
      });
  dispatch(a.dtype(), [&]<class T>() {
    std::vector<T> scratch;
    gemm_nt(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(), m, k, n,
            scratch);
  });
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_tn");
  require_rank2(b, "matmul_tn");
  require(a.dtype() == b.dtype(), "matmul_tn: dtype mismatch");
  const int64_t k = a.shape()[0], m = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul_tn: inner dimension mismatch " +
                                 shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor out = Tensor::make_op(
      {m, n}, a.dtype(), {a.node(), b.node()}, [m, k, n](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          const T* g = self.grad<T>().data();
          auto& pa = self.parents[0];
          auto& pb = self.parents[1];
          std::vector<T> scratch;
          if (pa->requires_grad)  // da += b . dc^T  (shape [k,m])
            gemm_nt(pb->cdata<T>().data(), g, pa->grad<T>().data(), k, n, m, scratch);
          if (pb->requires_grad)  // db += a . dc   (shape [k,n])
            gemm_nn(pa->cdata<T>().data(), g, pb->grad<T>().data(), k, m, n);
        });
      });
  dispatch(a.dtype(), [&]<class T>() {
    gemm_tn(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(), m, k, n);
  });
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  require_rank2(a, "softmax_rows");
  const int64_t n = a.shape()[0], m = a.shape()[1];
  Tensor out = Tensor::make_op(
      {n, m}, a.dtype(), {a.node()}, [n, m](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad<T>();
          auto y = self.cdata<T>();
          auto& p = self.parents[0];
          if (!p->requires_grad) return;
          auto pg = p->grad<T>();
          for (int64_t i = 0; i < n; ++i) {
            const T* yi = y.data() + i * m;
            const T* gi = g.data() + i * m;
            T dot = T(0);
            for (int64_t j = 0; j < m; ++j) dot += gi[j] * yi[j];
            T* pgi = pg.data() + i * m;
            for (int64_t j = 0; j < m; ++j) pgi[j] += yi[j] * (gi[j] - dot);
          }
        });
      });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto ov = out.data<T>();
    for (int64_t i = 0; i < n; ++i) {
      const T* xi = av.data() + i * m;
      T* yi = ov.data() + i * m;
      T mx = xi[0];
      for (int64_t j = 1; j < m; ++j) mx = std::max(mx, xi[j]);
      T s = T(0);
      for (int64_t j = 0; j < m; ++j) {
        yi[j] = std::exp(xi[j] - mx);
        s += yi[j];
      }
      const T inv = T(1) / s;
      for (int64_t j = 0; j < m; ++j) yi[j] *= inv;
    }
  });
  return out;
}

Tensor l2_normalize_nodes(const Tensor& a) {
  require(a.rank() >= 1, "l2_normalize_nodes: rank >= 1 required");
  const int64_t c = a.shape().back();
  const int64_t rows = a.numel() / c;
  Tensor out = Tensor::make_op(
      a.shape(), a.dtype(), {a.node()}, [rows, c](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad<T>();
          auto& p = self.parents[0];
          if (!p->requires_grad) return;
          auto xv = p->cdata<T>();
          auto pg = p->grad<T>();
          for (int64_t r = 0; r < rows; ++r) {
            const T* x = xv.data() + r * c;
            const T* gr = g.data() + r * c;
            T* pgr = pg.data() + r * c;
            T s = T(0), d = T(0);
            for (int64_t j = 0; j < c; ++j) s += x[j] * x[j];
            const T inv = T(1) / std::sqrt(s + T(1e-12));
            for (int64_t j = 0; j < c; ++j) d += gr[j] * x[j];
            const T inv3d = inv * inv * inv * d;
            for (int64_t j = 0; j < c; ++j) pgr[j] += gr[j] * inv - x[j] * inv3d;
          }
        });
      });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto ov = out.data<T>();
    for (int64_t r = 0; r < rows; ++r) {
      const T* x = av.data() + r * c;
      T* y = ov.data() + r * c;
      T s = T(0);
      for (int64_t j = 0; j < c; ++j) s += x[j] * x[j];
      const T inv = T(1) / std::sqrt(s + T(1e-12));
      for (int64_t j = 0; j < c; ++j) y[j] = x[j] * inv;
    }
  });
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, int stride, PaddingMode mode) {
  require(x.rank() == 3, "conv2d: input must be [C,H,W], got " + shape_str(x.shape()));
  require(w.rank() == 4, "conv2d: weight must be [Co,Ci,k,k], got " + shape_str(w.shape()));
  require(x.dtype() == w.dtype(), "conv2d: dtype mismatch");
  require(stride >= 1, "conv2d: stride must be >= 1");
  const int64_t ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const int64_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  require(w.shape()[1] == ci, "conv2d: channel mismatch");
  require(kh == kw, "conv2d: square kernels only");
  require(kh % 2 == 1, "conv2d: odd kernel extent required");
  const int64_t k = kh;
  const int64_t pad = mode == PaddingMode::kNone ? 0 : (k - 1) / 2;
  if (mode == PaddingMode::kReflect)
    require(h > pad && wd > pad, "conv2d: input too small for reflect padding");
  const int64_t hp = h + 2 * pad, wp = wd + 2 * pad;
  require(hp >= k && wp >= k, "conv2d: input smaller than kernel");
  const int64_t ho = (hp - k) / stride + 1;
  const int64_t wo = (wp - k) / stride + 1;
  const int64_t ckk = ci * k * k;
  const int64_t npos = ho * wo;

  std::vector<int> rmap(hp), cmap(wp);
  for (int64_t i = 0; i < hp; ++i) rmap[i] = pad_source(i, h, pad, mode);
  for (int64_t j = 0; j < wp; ++j) cmap[j] = pad_source(j, wd, pad, mode);

  Tensor out;
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    // Padded copy, then patch matrix [npos, ckk].
    std::vector<T> xp(static_cast<size_t>(ci * hp * wp), T(0));
    for (int64_t c = 0; c < ci; ++c)
      for (int64_t i = 0; i < hp; ++i) {
        if (rmap[i] < 0) continue;
        const T* src = xv.data() + (c * h + rmap[i]) * wd;
        T* dst = xp.data() + (c * hp + i) * wp;
        for (int64_t j = 0; j < wp; ++j)
          if (cmap[j] >= 0) dst[j] = src[cmap[j]];
      }
    auto col = std::make_shared<std::vector<T>>(static_cast<size_t>(npos * ckk));
    for (int64_t oy = 0; oy < ho; ++oy)
      for (int64_t ox = 0; ox < wo; ++ox) {
        T* dst = col->data() + (oy * wo + ox) * ckk;
        for (int64_t c = 0; c < ci; ++c)
          for (int64_t dy = 0; dy < k; ++dy) {
            const T* src = xp.data() + (c * hp + oy * stride + dy) * wp + ox * stride;
            for (int64_t dx = 0; dx < k; ++dx) *dst++ = src[dx];
          }
      }

    auto backward = [=](detail::Node& self) {
      auto g = self.grad<T>();
      auto& px = self.parents[0];
      auto& pw = self.parents[1];
      // dyflat[npos, co] from dy[co, ho, wo].
      std::vector<T> dyflat = transpose_copy(g.data(), co, npos);
      if (pw->requires_grad)
        gemm_tn(dyflat.data(), col->data(), pw->grad<T>().data(), co, npos, ckk);
      if (px->requires_grad) {
        std::vector<T> dcol(static_cast<size_t>(npos * ckk), T(0));
        gemm_nn(dyflat.data(), pw->cdata<T>().data(), dcol.data(), npos, co, ckk);
        std::vector<T> dxp(static_cast<size_t>(ci * hp * wp), T(0));
        for (int64_t oy = 0; oy < ho; ++oy)
          for (int64_t ox = 0; ox < wo; ++ox) {
            const T* src = dcol.data() + (oy * wo + ox) * ckk;
            for (int64_t c = 0; c < ci; ++c)
              for (int64_t dy = 0; dy < k; ++dy) {
                T* dst = dxp.data() + (c * hp + oy * stride + dy) * wp + ox * stride;
                for (int64_t dx = 0; dx < k; ++dx) dst[dx] += *src++;
              }
          }
        auto pg = px->grad<T>();
        for (int64_t c = 0; c < ci; ++c)
          for (int64_t i = 0; i < hp; ++i) {
            if (rmap[i] < 0) continue;
            const T* src = dxp.data() + (c * hp + i) * wp;
            T* dst = pg.data() + (c * h + rmap[i]) * wd;
            for (int64_t j = 0; j < wp; ++j)
              if (cmap[j] >= 0) dst[cmap[j]] += src[j];
          }
      }
    };

    out = Tensor::make_op({co, ho, wo}, x.dtype(), {x.node(), w.node()}, backward);
    // yflat[npos, co] = col . wflat^T, then store as [co, ho, wo].
    std::vector<T> yflat(static_cast<size_t>(npos * co), T(0));
    std::vector<T> scratch;
    gemm_nt(col->data(), w.data<T>().data(), yflat.data(), npos, ckk, co, scratch);
    auto ov = out.data<T>();
    for (int64_t r = 0; r < npos; ++r)
      for (int64_t c = 0; c < co; ++c) ov[c * npos + r] = yflat[r * co + c];
  });
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  require(x.rank() == 3, "add_channel_bias: input must be [C,H,W]");
  require(b.rank() == 1 && b.shape()[0] == x.shape()[0],
          "add_channel_bias: bias must be [C]");
  require(x.dtype() == b.dtype(), "add_channel_bias: dtype mismatch");
  const int64_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor out = Tensor::make_op(
      x.shape(), x.dtype(), {x.node(), b.node()}, [c, hw](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad<T>();
          auto& px = self.parents[0];
          auto& pb = self.parents[1];
          if (px->requires_grad) {
            auto pg = px->grad<T>();
            for (size_t i = 0; i < pg.size(); ++i) pg[i] += g[i];
          }
          if (pb->requires_grad) {
            auto pg = pb->grad<T>();
            for (int64_t cc = 0; cc < c; ++cc) {
              T acc = T(0);
              const T* gc = g.data() + cc * hw;
              for (int64_t i = 0; i < hw; ++i) acc += gc[i];
              pg[cc] += acc;
            }
          }
        });
      });
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>(); auto bv = b.data<T>(); auto ov = out.data<T>();
    for (int64_t cc = 0; cc < c; ++cc) {
      const T bb = bv[cc];
      const T* xi = xv.data() + cc * hw;
      T* yo = ov.data() + cc * hw;
      for (int64_t i = 0; i < hw; ++i) yo[i] = xi[i] + bb;
    }
  });
  return out;
}

Tensor avg_pool2d(const Tensor& x, int window) {
  require(x.rank() == 3, "avg_pool2d: input must be [C,H,W]");
  require(window >= 1, "avg_pool2d: window must be >= 1");
  const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  require(h % window == 0 && w % window == 0,
          "avg_pool2d: extent not divisible by window");
  const int64_t ho = h / window, wo = w / window;
  Tensor out = Tensor::make_op(
      {c, ho, wo}, x.dtype(), {x.node()}, [c, h, w, ho, wo, window](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad<T>();
          auto& p = self.parents[0];
          if (!p->requires_grad) return;
          auto pg = p->grad<T>();
          const T inv = T(1) / static_cast<T>(window * window);
          for (int64_t cc = 0; cc < c; ++cc)
            for (int64_t i = 0; i < ho; ++i)
              for (int64_t j = 0; j < wo; ++j) {
                const T gv = g[(cc * ho + i) * wo + j] * inv;
                for (int64_t dy = 0; dy < window; ++dy)
                  for (int64_t dx = 0; dx < window; ++dx)
                    pg[(cc * h + i * window + dy) * w + j * window + dx] += gv;
              }
        });
      });
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>(); auto ov = out.data<T>();
    const T inv = T(1) / static_cast<T>(window * window);
    for (int64_t cc = 0; cc < c; ++cc)
      for (int64_t i = 0; i < ho; ++i)
        for (int64_t j = 0; j < wo; ++j) {
          T acc = T(0);
          for (int64_t dy = 0; dy < window; ++dy)
            for (int64_t dx = 0; dx < window; ++dx)
              acc += xv[(cc * h + i * window + dy) * w + j * window + dx];
          ov[(cc * ho + i) * wo + j] = acc * inv;
        }
  });
  return out;
}

Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    double eps) {
  require(x.rank() == 3, "channel_norm: input must be [C,H,W]");
  const int64_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  require(gain.rank() == 1 && gain.shape()[0] == c, "channel_norm: gain must be [C]");
  require(bias.rank() == 1 && bias.shape()[0] == c, "channel_norm: bias must be [C]");
  require(x.dtype() == gain.dtype() && x.dtype() == bias.dtype(),
          "channel_norm: dtype mismatch");
  require(eps > 0, "channel_norm: eps must be positive");

  Tensor out;
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(c * hw));
    auto invs = std::make_shared<std::vector<T>>(static_cast<size_t>(hw));
    const T te = static_cast<T>(eps);
    for (int64_t p = 0; p < hw; ++p) {
      T mu = T(0);
      for (int64_t cc = 0; cc < c; ++cc) mu += xv[cc * hw + p];
      mu /= static_cast<T>(c);
      T var = T(0);
      for (int64_t cc = 0; cc < c; ++cc) {
        const T d = xv[cc * hw + p] - mu;
        var += d * d;
      }
      var /= static_cast<T>(c);
      const T inv = T(1) / std::sqrt(var + te);
      (*invs)[p] = inv;
      for (int64_t cc = 0; cc < c; ++cc)
        (*xhat)[cc * hw + p] = (xv[cc * hw + p] - mu) * inv;
    }

    auto backward = [=](detail::Node& self) {
      auto g = self.grad<T>();
      auto& px = self.parents[0];
      auto& pg_ = self.parents[1];
      auto& pb = self.parents[2];
      auto gv = pg_->cdata<T>();
      if (pg_->requires_grad) {
        auto gg = pg_->grad<T>();
        for (int64_t cc = 0; cc < c; ++cc) {
          T acc = T(0);
          for (int64_t p = 0; p < hw; ++p)
            acc += g[cc * hw + p] * (*xhat)[cc * hw + p];
          gg[cc] += acc;
        }
      }
      if (pb->requires_grad) {
        auto bg = pb->grad<T>();
        for (int64_t cc = 0; cc < c; ++cc) {
          T acc = T(0);
          for (int64_t p = 0; p < hw; ++p) acc += g[cc * hw + p];
          bg[cc] += acc;
        }
      }
      if (px->requires_grad) {
        auto xg = px->grad<T>();
        const T invc = T(1) / static_cast<T>(c);
        for (int64_t p = 0; p < hw; ++p) {
          T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
          for (int64_t cc = 0; cc < c; ++cc) {
            const T dxh = g[cc * hw + p] * gv[cc];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * (*xhat)[cc * hw + p];
          }
          const T inv = (*invs)[p];
          for (int64_t cc = 0; cc < c; ++cc) {
            const T dxh = g[cc * hw + p] * gv[cc];
            xg[cc * hw + p] += inv * (dxh - invc * sum_dxhat -
                                      invc * (*xhat)[cc * hw + p] * sum_dxhat_xhat);
          }
        }
      }
    };

    out = Tensor::make_op(x.shape(), x.dtype(),
                          {x.node(), gain.node(), bias.node()}, backward);
    auto gv = gain.data<T>();
    auto bv = bias.data<T>();
    auto ov = out.data<T>();
    for (int64_t cc = 0; cc < c; ++cc)
      for (int64_t p = 0; p < hw; ++p)
        ov[cc * hw + p] = (*xhat)[cc * hw + p] * gv[cc] + bv[cc];
  });
  return out;
}

static Tensor permute3(const Tensor& a, int p0, int p1, int p2, const char* op) {
  require(a.rank() == 3, std::string(op) + ": rank-3 tensor required");
  const auto& s = a.shape();
  Shape os = {s[p0], s[p1], s[p2]};
  const int64_t s1 = s[1], s2 = s[2];
  // Strides of the source laid out row-major, picked in permuted order.
  const int64_t str[3] = {s1 * s2, s2, 1};
  const int64_t a0 = str[p0], a1 = str[p1], a2 = str[p2];
  const int64_t n0 = os[0], n1 = os[1], n2 = os[2];
  Tensor out = Tensor::make_op(
      os, a.dtype(), {a.node()}, [a0, a1, a2, n0, n1, n2](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad<T>();
          auto& p = self.parents[0];
          if (!p->requires_grad) return;
          auto pg = p->grad<T>();
          int64_t idx = 0;
          for (int64_t i = 0; i < n0; ++i)
            for (int64_t j = 0; j < n1; ++j)
              for (int64_t l = 0; l < n2; ++l)
                pg[i * a0 + j * a1 + l * a2] += g[idx++];
        });
      });
  dispatch(a.dtype(), [&]<class T>() {
    auto av = a.data<T>();
    auto ov = out.data<T>();
    int64_t idx = 0;
    for (int64_t i = 0; i < n0; ++i)
      for (int64_t j = 0; j < n1; ++j)
        for (int64_t l = 0; l < n2; ++l) ov[idx++] = av[i * a0 + j * a1 + l * a2];
  });
  return out;
}

Tensor chw_to_hwc(const Tensor& a) { return permute3(a, 1, 2, 0, "chw_to_hwc"); }
Tensor hwc_to_chw(const Tensor& a) { return permute3(a, 2, 0, 1, "hwc_to_chw"); }

Tensor grid_sample_bilinear(const Tensor& x, const Tensor& grid) {
  require(x.rank() == 3, "grid_sample_bilinear: input must be [C,H,W]");
  require(grid.rank() == 3 && grid.shape()[2] == 2,
          "grid_sample_bilinear: grid must be [H,W,2]");
  require(x.dtype() == grid.dtype(), "grid_sample_bilinear: dtype mismatch");
  require(!grid.requires_grad(), "grid_sample_bilinear: grid gradients unsupported");
  const int64_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const int64_t ho = grid.shape()[0], wo = grid.shape()[1];

  // Precompute tap indices and weights once; backward reuses them.
  struct Tap {
    int32_t x0, y0;
    float wx, wy;
  };
  auto taps = std::make_shared<std::vector<Tap>>(static_cast<size_t>(ho * wo));
  dispatch(x.dtype(), [&]<class T>() {
    auto gv = grid.data<T>();
    for (int64_t i = 0; i < ho * wo; ++i) {
      const double gx = static_cast<double>(gv[2 * i]);
      const double gy = static_cast<double>(gv[2 * i + 1]);
      const double px = (gx + 1.0) / 2.0 * static_cast<double>(w - 1);
      const double py = (gy + 1.0) / 2.0 * static_cast<double>(h - 1);
      const double fx = std::floor(px), fy = std::floor(py);
      (*taps)[i] = {static_cast<int32_t>(fx), static_cast<int32_t>(fy),
                    static_cast<float>(px - fx), static_cast<float>(py - fy)};
    }
  });

  Tensor out = Tensor::make_op(
      {c, ho, wo}, x.dtype(), {x.node()}, [c, h, w, ho, wo, taps](detail::Node& self) {
        dispatch(self.dtype, [&]<class T>() {
          auto g = self.grad<T>();
          auto& p = self.parents[0];
          if (!p->requires_grad) return;
          auto pg = p->grad<T>();
          const int64_t npos = ho * wo;
          for (int64_t i = 0; i < npos; ++i) {
            const auto& t = (*taps)[i];
            const T wx = static_cast<T>(t.wx), wy = static_cast<T>(t.wy);
            const T w00 = (T(1) - wx) * (T(1) - wy), w01 = wx * (T(1) - wy);
            const T w10 = (T(1) - wx) * wy, w11 = wx * wy;
            for (int64_t cc = 0; cc < c; ++cc) {
              const T gv = g[cc * npos + i];
              T* base = pg.data() + cc * h * w;
              auto acc = [&](int32_t yy, int32_t xx, T wt) {
                if (yy >= 0 && yy < h && xx >= 0 && xx < w)
                  base[static_cast<int64_t>(yy) * w + xx] += wt * gv;
              };
              acc(t.y0, t.x0, w00);
              acc(t.y0, t.x0 + 1, w01);
              acc(t.y0 + 1, t.x0, w10);
              acc(t.y0 + 1, t.x0 + 1, w11);
            }
          }
        });
      });
  dispatch(x.dtype(), [&]<class T>() {
    auto xv = x.data<T>();
    auto ov = out.data<T>();
    const int64_t npos = ho * wo;
    for (int64_t i = 0; i < npos; ++i) {
      const auto& t = (*taps)[i];
      const T wx = static_cast<T>(t.wx), wy = static_cast<T>(t.wy);
      const T w00 = (T(1) - wx) * (T(1) - wy), w01 = wx * (T(1) - wy);
      const T w10 = (T(1) - wx) * wy, w11 = wx * wy;
      for (int64_t cc = 0; cc < c; ++cc) {
        const T* base = xv.data() + cc * h * w;
        auto tap = [&](int32_t yy, int32_t xx) -> T {
          return (yy >= 0 && yy < h && xx >= 0 && xx < w)
                     ? base[static_cast<int64_t>(yy) * w + xx]
                     : T(0);
        };
        ov[cc * npos + i] = w00 * tap(t.y0, t.x0) + w01 * tap(t.y0, t.x0 + 1) +
                            w10 * tap(t.y0 + 1, t.x0) + w11 * tap(t.y0 + 1, t.x0 + 1);
      }
    }
  });
  return out;
}

Tensor masked_diag_log_loss(const Tensor& w, const Tensor& t,
                            const std::vector<uint8_t>& mask, bool norm_by_count) {
  require_rank2(w, "masked_diag_log_loss");
  require_rank2(t, "masked_diag_log_loss");
  require(w.dtype() == t.dtype(), "masked_diag_log_loss: dtype mismatch");
  const int64_t n = w.shape()[0], k = w.shape()[1];
  require(t.shape()[0] == k && t.shape()[1] == n,
          "masked_diag_log_loss: shapes must be [n,k] and [k,n]");
  require(static_cast<int64_t>(mask.size()) == n,
          "masked_diag_log_loss: mask size mismatch");
  int64_t count = 0;
  for (uint8_t m : mask) count += m ? 1 : 0;
  const double norm = norm_by_count ? static_cast<double>(std::max<int64_t>(count, 1))
                                    : static_cast<double>(n);
  auto maskp = std::make_shared<std::vector<uint8_t>>(mask);

  Tensor out;
  dispatch(w.dtype(), [&]<class T>() {
    auto wv = w.data<T>();
    auto tv = t.data<T>();
    auto diag = std::make_shared<std::vector<T>>(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      T acc = T(0);
      const T* wr = wv.data() + i * k;
      for (int64_t p = 0; p < k; ++p) acc += wr[p] * tv[p * n + i];
      (*diag)[i] = acc;
    }
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i)
      if ((*maskp)[i])
        loss -= std::log(static_cast<double>((*diag)[i]) + 1e-12);
    loss /= norm;

    auto backward = [=](detail::Node& self) {
      const T gout = self.grad<T>()[0];
      auto& pw = self.parents[0];
      auto& pt = self.parents[1];
      auto wv2 = pw->cdata<T>();
      auto tv2 = pt->cdata<T>();
      for (int64_t i = 0; i < n; ++i) {
        if (!(*maskp)[i]) continue;
        const T gi = -gout / (static_cast<T>(norm) *
                              ((*diag)[i] + static_cast<T>(1e-12)));
        if (pw->requires_grad) {
          T* wg = pw->grad<T>().data() + i * k;
          for (int64_t p = 0; p < k; ++p) wg[p] += gi * tv2[p * n + i];
        }
        if (pt->requires_grad) {
          T* tg = pt->grad<T>().data();
          const T* wr = wv2.data() + i * k;
          for (int64_t p = 0; p < k; ++p) tg[p * n + i] += gi * wr[p];
        }
      }
    };
    out = Tensor::make_op({1}, w.dtype(), {w.node(), t.node()}, backward);
    out.data<T>()[0] = static_cast<T>(loss);
  });
  return out;
}

}  // namespace cw3
