#include "ctgv/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ctgv/thread_pool.hpp"

namespace ctgv {
namespace {

double* grad_buf(const std::shared_ptr<Node>& n) {
  if (n->grad.empty()) n->grad.assign(static_cast<size_t>(n->size), 0.0);
  return n->grad.data();
}

// Attaches a fresh interior node to `out` when a tape is recording and any
// input is tracked. Returns nullptr when no record is needed.
std::shared_ptr<Node> track(Tensor& out, std::initializer_list<const Tensor*> ins) {
  if (!ComputeTape::current()) return nullptr;
  bool any = false;
  for (const Tensor* t : ins) any = any || t->tracked();
  if (!any) return nullptr;
  auto node = std::make_shared<Node>(out.numel(), false);
  out = Tensor(out.shape(), out.data_ptr(), node);
  return node;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Batched row-major matrix kernels. Parallel work is always split over
// output rows, the per-element reduction order is fixed by the code, and
// row pairing is decided by absolute row parity, so neither the thread
// count nor chunk boundaries can change a single bit of the result.

// Eight-lane vector type; named variables of this type stay in registers,
// which plain local arrays do not under gcc 11.
typedef double v8d __attribute__((vector_size(64)));

inline v8d vload(const double* p) {
  v8d v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}

inline void vstore(double* p, v8d v) { __builtin_memcpy(p, &v, sizeof(v)); }

// Up to four rows of C (+)= rows of A times B, p ascending per element.
// Row r of a sits at a + r*as, row r of c at c + r*n. Column blocks of 32
// stay in 4*R named vector registers across the whole p sweep; sharing each
// streamed b row across four output rows keeps the kernel compute bound.
template <int R>
void nn_rows(const double* a, int64_t as, const double* bl, double* c,
             int64_t k, int64_t n, bool acc) {
  static_assert(R == 1 || R == 2 || R == 4);
  int64_t j = 0;
  for (; j + 32 <= n; j += 32) {
    v8d z = {};
    v8d s00 = z, s01 = z, s02 = z, s03 = z, s10 = z, s11 = z, s12 = z, s13 = z;
    v8d s20 = z, s21 = z, s22 = z, s23 = z, s30 = z, s31 = z, s32 = z, s33 = z;
    if (acc) {
      s00 = vload(c + j), s01 = vload(c + j + 8), s02 = vload(c + j + 16),
      s03 = vload(c + j + 24);
      if (R > 1)
        s10 = vload(c + n + j), s11 = vload(c + n + j + 8),
        s12 = vload(c + n + j + 16), s13 = vload(c + n + j + 24);
      if (R > 2) {
        s20 = vload(c + 2 * n + j), s21 = vload(c + 2 * n + j + 8),
        s22 = vload(c + 2 * n + j + 16), s23 = vload(c + 2 * n + j + 24);
        s30 = vload(c + 3 * n + j), s31 = vload(c + 3 * n + j + 8),
        s32 = vload(c + 3 * n + j + 16), s33 = vload(c + 3 * n + j + 24);
      }
    }
    for (int64_t p = 0; p < k; ++p) {
      const double* br = bl + p * n + j;
      v8d b0 = vload(br), b1 = vload(br + 8), b2 = vload(br + 16),
          b3 = vload(br + 24);
      v8d av = z + a[p];
      s00 += av * b0, s01 += av * b1, s02 += av * b2, s03 += av * b3;
      if (R > 1) {
        av = z + a[as + p];
        s10 += av * b0, s11 += av * b1, s12 += av * b2, s13 += av * b3;
      }
      if (R > 2) {
        av = z + a[2 * as + p];
        s20 += av * b0, s21 += av * b1, s22 += av * b2, s23 += av * b3;
        av = z + a[3 * as + p];
        s30 += av * b0, s31 += av * b1, s32 += av * b2, s33 += av * b3;
      }
    }
    vstore(c + j, s00), vstore(c + j + 8, s01), vstore(c + j + 16, s02),
        vstore(c + j + 24, s03);
    if (R > 1)
      vstore(c + n + j, s10), vstore(c + n + j + 8, s11),
          vstore(c + n + j + 16, s12), vstore(c + n + j + 24, s13);
    if (R > 2) {
      vstore(c + 2 * n + j, s20), vstore(c + 2 * n + j + 8, s21),
          vstore(c + 2 * n + j + 16, s22), vstore(c + 2 * n + j + 24, s23);
      vstore(c + 3 * n + j, s30), vstore(c + 3 * n + j + 8, s31),
          vstore(c + 3 * n + j + 16, s32), vstore(c + 3 * n + j + 24, s33);
    }
  }
  for (; j < n; ++j)
    for (int r = 0; r < R; ++r) {
      double s = acc ? c[r * n + j] : 0.0;
      for (int64_t p = 0; p < k; ++p) s += a[r * as + p] * bl[p * n + j];
      c[r * n + j] = s;
    }
}

// c[l,i,:] (+)= sum_p a[l,i,p] * b[l,p,:], p ascending. Work units are
// four-row groups cut at fixed absolute positions, so the split never
// depends on the thread count.
void mm_nn(const double* a, const double* b, double* c, int64_t L,
           int64_t m, int64_t k, int64_t n, bool acc) {
  int64_t units_per = (m + 3) / 4;
  parallel_for(0, L * units_per, 1, [=](int64_t u0, int64_t u1) {
    for (int64_t u = u0; u < u1; ++u) {
      int64_t l = u / units_per, i0 = 4 * (u % units_per);
      const double* al = a + l * m * k + i0 * k;
      const double* bl = b + l * k * n;
      double* cl = c + l * m * n + i0 * n;
      int64_t r = std::min<int64_t>(4, m - i0);
      switch (r) {
        case 4: nn_rows<4>(al, k, bl, cl, k, n, acc); break;
        case 3:
          nn_rows<2>(al, k, bl, cl, k, n, acc);
          nn_rows<1>(al + 2 * k, k, bl, cl + 2 * n, k, n, acc);
          break;
        case 2: nn_rows<2>(al, k, bl, cl, k, n, acc); break;
        default: nn_rows<1>(al, k, bl, cl, k, n, acc); break;
      }
    }
  });
}

// c[l,i,j] (+)= dot(a[l,i,:], b[l,j,:]). Implemented as a batched transpose
// of b feeding the nn kernel; the transpose is a pure copy, so the reduction
// order per element is exactly the nn one.
void mm_nt(const double* a, const double* b, double* c, int64_t L,
           int64_t m, int64_t k, int64_t n, bool acc) {
  std::vector<double> bt(static_cast<size_t>(L * k * n));
  double* pt = bt.data();
  parallel_for(0, L, 1, [=](int64_t l0, int64_t l1) {
    for (int64_t l = l0; l < l1; ++l) {
      const double* bl = b + l * n * k;
      double* tl = pt + l * k * n;
      for (int64_t j0 = 0; j0 < n; j0 += 32)
        for (int64_t p = 0; p < k; ++p)
          for (int64_t j = j0; j < std::min(j0 + 32, n); ++j)
            tl[p * n + j] = bl[j * k + p];
    }
  });
  mm_nn(a, pt, c, L, m, k, n, acc);
}

// c[l,p,:] (+)= sum_i a[l,i,p] * b[l,i,:], i ascending per element. A is
// repacked column-major first so the sweep streams both operands
// contiguously, then i runs in cache-sized blocks through the row kernel.
// Blocks only decide when the running sums park in memory; every c element
// still accumulates the plain ascending-i fold, and work units are
// four-row groups of c cut at absolute positions.
void mm_tn(const double* a, const double* b, double* c, int64_t L,
           int64_t m, int64_t k, int64_t n, bool acc) {
  std::vector<double> at(static_cast<size_t>(L * k * m));
  double* pt = at.data();
  int64_t tb = (m + 31) / 32;
  parallel_for(0, L * tb, 4, [=](int64_t u0, int64_t u1) {
    for (int64_t u = u0; u < u1; ++u) {
      int64_t l = u / tb, i0 = 32 * (u % tb);
      int64_t i1 = std::min<int64_t>(i0 + 32, m);
      const double* al = a + l * m * k;
      double* tl = pt + l * k * m;
      for (int64_t p = 0; p < k; ++p)
        for (int64_t i = i0; i < i1; ++i) tl[p * m + i] = al[i * k + p];
    }
  });
  const int64_t block = 512;
  int64_t units_per = (k + 3) / 4;
  for (int64_t i0 = 0; i0 < m; i0 += block) {
    int64_t len = std::min(block, m - i0);
    bool start = i0 == 0 && !acc;
    parallel_for(0, L * units_per, 1, [=](int64_t u0, int64_t u1) {
      for (int64_t u = u0; u < u1; ++u) {
        int64_t l = u / units_per, p0 = 4 * (u % units_per);
        const double* al = pt + l * k * m + p0 * m + i0;
        const double* bl = b + l * m * n + i0 * n;
        double* cl = c + l * k * n + p0 * n;
        int64_t r = std::min<int64_t>(4, k - p0);
        switch (r) {
          case 4: nn_rows<4>(al, m, bl, cl, len, n, !start); break;
          case 3:
            nn_rows<2>(al, m, bl, cl, len, n, !start);
            nn_rows<1>(al + 2 * m, m, bl, cl + 2 * n, len, n, !start);
            break;
          case 2: nn_rows<2>(al, m, bl, cl, len, n, !start); break;
          default: nn_rows<1>(al, m, bl, cl, len, n, !start); break;
        }
      }
    });
  }
}

void split_matrix(const Tensor& t, int64_t& L, int64_t& rows, int64_t& cols,
                  const char* who) {
  check(t.rank() >= 2, std::string(who) + " needs rank >= 2, got " + shape_str(t.shape()));
  rows = t.dim(t.rank() - 2);
  cols = t.dim(t.rank() - 1);
  L = 1;
  for (int i = 0; i + 2 < t.rank(); ++i) L *= t.dim(i);
}

void check_same_leading(const Tensor& a, const Tensor& b, const char* who) {
  check(a.rank() == b.rank(), std::string(who) + " rank mismatch");
  for (int i = 0; i + 2 < a.rank(); ++i)
    check(a.dim(i) == b.dim(i), std::string(who) + " leading dim mismatch");
}

Shape with_tail(const Tensor& a, int64_t r, int64_t c) {
  Shape s = a.shape();
  s[s.size() - 2] = r;
  s[s.size() - 1] = c;
  return s;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "add shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  int64_t n = a.numel();
  std::vector<double> vals(static_cast<size_t>(n));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = vals.data();
  parallel_for(0, n, 4096, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] + pb[i];
  });
  Tensor out(a.shape(), std::move(vals));
  if (auto node = track(out, {&a, &b})) {
    auto an = a.node(), bn = b.node();
    ComputeTape::current()->record(node, [node, an, bn, n] {
      const double* g = node->grad.data();
      if (an) {
        double* ga = grad_buf(an);
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bn) {
        double* gb = grad_buf(bn);
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "sub shape mismatch");
  int64_t n = a.numel();
  std::vector<double> vals(static_cast<size_t>(n));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = vals.data();
  parallel_for(0, n, 4096, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] - pb[i];
  });
  Tensor out(a.shape(), std::move(vals));
  if (auto node = track(out, {&a, &b})) {
    auto an = a.node(), bn = b.node();
    ComputeTape::current()->record(node, [node, an, bn, n] {
      const double* g = node->grad.data();
      if (an) {
        double* ga = grad_buf(an);
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (bn) {
        double* gb = grad_buf(bn);
        for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check(a.shape() == b.shape(), "mul shape mismatch");
  int64_t n = a.numel();
  std::vector<double> vals(static_cast<size_t>(n));
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = vals.data();
  parallel_for(0, n, 4096, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] * pb[i];
  });
  Tensor out(a.shape(), std::move(vals));
  if (auto node = track(out, {&a, &b})) {
    auto an = a.node(), bn = b.node();
    auto da = a.data_ptr(), db = b.data_ptr();
    ComputeTape::current()->record(node, [node, an, bn, da, db, n] {
      const double* g = node->grad.data();
      if (an) {
        double* ga = grad_buf(an);
        const double* pb2 = db->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb2[i];
      }
      if (bn) {
        double* gb = grad_buf(bn);
        const double* pa2 = da->data();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  int64_t n = a.numel();
  std::vector<double> vals(static_cast<size_t>(n));
  const double* pa = a.values().data();
  double* po = vals.data();
  parallel_for(0, n, 4096, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] * s;
  });
  Tensor out(a.shape(), std::move(vals));
  if (auto node = track(out, {&a})) {
    auto an = a.node();
    ComputeTape::current()->record(node, [node, an, s, n] {
      const double* g = node->grad.data();
      double* ga = grad_buf(an);
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

Tensor silu(const Tensor& a) {
  int64_t n = a.numel();
  std::vector<double> vals(static_cast<size_t>(n));
  const double* pa = a.values().data();
  double* po = vals.data();
  parallel_for(0, n, 1024, [=](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) po[i] = pa[i] * sigmoid(pa[i]);
  });
  Tensor out(a.shape(), std::move(vals));
  if (auto node = track(out, {&a})) {
    auto an = a.node();
    auto da = a.data_ptr();
    ComputeTape::current()->record(node, [node, an, da, n] {
      const double* g = node->grad.data();
      const double* x = da->data();
      double* ga = grad_buf(an);
      for (int64_t i = 0; i < n; ++i) {
        double sg = sigmoid(x[i]);
        ga[i] += g[i] * sg * (1.0 + x[i] * (1.0 - sg));
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check(w.rank() == 2, "linear weight must be rank 2");
  int64_t d_in = w.dim(0), d_out = w.dim(1);
  check(x.rank() >= 1 && x.dim(x.rank() - 1) == d_in,
        "linear input " + shape_str(x.shape()) + " does not end in " +
            std::to_string(d_in));
  if (b.defined())
    check(b.rank() == 1 && b.dim(0) == d_out, "linear bias must be [d_out]");
  int64_t rows = x.numel() / d_in;

  std::vector<double> vals(static_cast<size_t>(rows * d_out));
  mm_nn(x.values().data(), w.values().data(), vals.data(), 1, rows, d_in, d_out,
        false);
  if (b.defined()) {
    const double* pb = b.values().data();
    double* po = vals.data();
    parallel_for(0, rows, 64, [=](int64_t r0, int64_t r1) {
      for (int64_t r = r0; r < r1; ++r)
        for (int64_t j = 0; j < d_out; ++j) po[r * d_out + j] += pb[j];
    });
  }
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 1] = d_out;
  Tensor out(std::move(out_shape), std::move(vals));

  if (auto node = track(out, {&x, &w, &b})) {
    auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
    auto dx = x.data_ptr(), dw = w.data_ptr();
    ComputeTape::current()->record(node, [node, xn, wn, bn, dx, dw, rows, d_in,
                                          d_out] {
      const double* g = node->grad.data();
      if (xn) mm_nt(g, dw->data(), grad_buf(xn), 1, rows, d_out, d_in, true);
      if (wn) mm_tn(dx->data(), g, grad_buf(wn), 1, rows, d_in, d_out, true);
      if (bn) {
        double* gb = grad_buf(bn);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d_out; ++j) gb[j] += g[r * d_out + j];
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  int64_t L, m, k, k2, n, L2;
  split_matrix(a, L, m, k, "matmul");
  split_matrix(b, L2, k2, n, "matmul");
  check_same_leading(a, b, "matmul");
  check(k == k2, "matmul inner dim mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));

  std::vector<double> vals(static_cast<size_t>(L * m * n));
  mm_nn(a.values().data(), b.values().data(), vals.data(), L, m, k, n, false);
  Tensor out(with_tail(a, m, n), std::move(vals));

  if (auto node = track(out, {&a, &b})) {
    auto an = a.node(), bn = b.node();
    auto da = a.data_ptr(), db = b.data_ptr();
    ComputeTape::current()->record(node, [node, an, bn, da, db, L, m, k, n] {
      const double* g = node->grad.data();
      if (an) mm_nt(g, db->data(), grad_buf(an), L, m, n, k, true);
      if (bn) mm_tn(da->data(), g, grad_buf(bn), L, m, k, n, true);
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  int64_t L, m, k, n, k2, L2;
  split_matrix(a, L, m, k, "matmul_nt");
  split_matrix(b, L2, n, k2, "matmul_nt");
  check_same_leading(a, b, "matmul_nt");
  check(k == k2, "matmul_nt inner dim mismatch " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));

  std::vector<double> vals(static_cast<size_t>(L * m * n));
  mm_nt(a.values().data(), b.values().data(), vals.data(), L, m, k, n, false);
  Tensor out(with_tail(a, m, n), std::move(vals));

  if (auto node = track(out, {&a, &b})) {
    auto an = a.node(), bn = b.node();
    auto da = a.data_ptr(), db = b.data_ptr();
    ComputeTape::current()->record(node, [node, an, bn, da, db, L, m, k, n] {
      const double* g = node->grad.data();
      if (an) mm_nn(g, db->data(), grad_buf(an), L, m, n, k, true);
      if (bn) mm_tn(g, da->data(), grad_buf(bn), L, m, n, k, true);
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  check(numel_of(shape) == a.numel(), "reshape " + shape_str(a.shape()) +
                                          " -> " + shape_str(shape) +
                                          " changes element count");
  Tensor out(shape, a.data_ptr(), nullptr);
  if (auto node = track(out, {&a})) {
    auto an = a.node();
    int64_t n = a.numel();
    ComputeTape::current()->record(node, [node, an, n] {
      const double* g = node->grad.data();
      double* ga = grad_buf(an);
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  int r = a.rank();
  check(static_cast<int>(perm.size()) == r, "permute rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int p : perm) {
    check(p >= 0 && p < r && !seen[static_cast<size_t>(p)], "invalid permutation");
    seen[static_cast<size_t>(p)] = true;
  }

  Shape out_shape(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) out_shape[static_cast<size_t>(d)] = a.dim(perm[static_cast<size_t>(d)]);

  std::vector<int64_t> in_strides(static_cast<size_t>(r), 1);
  for (int d = r - 2; d >= 0; --d)
    in_strides[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(d + 1)] * a.dim(d + 1);
  // Stride of the input dim that each output dim walks.
  std::vector<int64_t> walk(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) walk[static_cast<size_t>(d)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(d)])];

  int64_t n = a.numel();
  auto src_of = [out_shape, walk, r](int64_t o) {
    int64_t src = 0, rem = o;
    for (int d = r - 1; d >= 0; --d) {
      int64_t dim = out_shape[static_cast<size_t>(d)];
      src += (rem % dim) * walk[static_cast<size_t>(d)];
      rem /= dim;
    }
    return src;
  };

  // When the innermost input axis keeps stride 1 in the output, whole rows
  // move as contiguous blocks; every permutation the model uses hits this.
  int64_t row_len =
      r >= 1 && walk[static_cast<size_t>(r - 1)] == 1 && n > 0
          ? out_shape[static_cast<size_t>(r - 1)]
          : 1;

  std::vector<double> vals(static_cast<size_t>(n));
  const double* pa = a.values().data();
  double* po = vals.data();
  if (row_len > 1) {
    parallel_for(0, n / row_len, 64, [=](int64_t r0, int64_t r1) {
      for (int64_t row = r0; row < r1; ++row)
        std::memcpy(po + row * row_len, pa + src_of(row * row_len),
                    static_cast<size_t>(row_len) * sizeof(double));
    });
  } else {
    parallel_for(0, n, 1024, [=](int64_t o0, int64_t o1) {
      for (int64_t o = o0; o < o1; ++o) po[o] = pa[src_of(o)];
    });
  }
  Tensor out(std::move(out_shape), std::move(vals));

  if (auto node = track(out, {&a})) {
    auto an = a.node();
    ComputeTape::current()->record(node, [node, an, src_of, n, row_len] {
      const double* g = node->grad.data();
      double* ga = grad_buf(an);
      // The index map is a bijection, so parallel ranges never collide.
      if (row_len > 1) {
        parallel_for(0, n / row_len, 64, [=](int64_t r0, int64_t r1) {
          for (int64_t row = r0; row < r1; ++row) {
            double* dst = ga + src_of(row * row_len);
            const double* src = g + row * row_len;
            for (int64_t j = 0; j < row_len; ++j) dst[j] += src[j];
          }
        });
      } else {
        parallel_for(0, n, 1024, [=](int64_t o0, int64_t o1) {
          for (int64_t o = o0; o < o1; ++o) ga[src_of(o)] += g[o];
        });
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  check(axis >= 0 && axis < a.rank(), "softmax axis out of range");
  int64_t len = a.dim(axis);
  int64_t inner = 1;
  for (int d = axis + 1; d < a.rank(); ++d) inner *= a.dim(d);
  int64_t outer = a.numel() / (len * inner);

  int64_t n = a.numel();
  std::vector<double> vals(static_cast<size_t>(n));
  const double* pa = a.values().data();
  double* po = vals.data();
  parallel_for(0, outer * inner, 16, [=](int64_t s0, int64_t s1) {
    for (int64_t s = s0; s < s1; ++s) {
      int64_t o = s / inner, in = s % inner;
      const double* x = pa + o * len * inner + in;
      double* y = po + o * len * inner + in;
      double mx = x[0];
      for (int64_t t = 1; t < len; ++t) mx = std::max(mx, x[t * inner]);
      double total = 0.0;
      for (int64_t t = 0; t < len; ++t) {
        double e = std::exp(x[t * inner] - mx);
        y[t * inner] = e;
        total += e;
      }
      double rcp = 1.0 / total;
      for (int64_t t = 0; t < len; ++t) y[t * inner] *= rcp;
    }
  });
  Tensor out(a.shape(), std::move(vals));

  if (auto node = track(out, {&a})) {
    auto an = a.node();
    auto dy = out.data_ptr();
    ComputeTape::current()->record(node, [node, an, dy, outer, len, inner] {
      const double* g = node->grad.data();
      const double* y = dy->data();
      double* ga = grad_buf(an);
      parallel_for(0, outer * inner, 16, [=](int64_t s0, int64_t s1) {
        for (int64_t s = s0; s < s1; ++s) {
          int64_t o = s / inner, in = s % inner;
          int64_t base = o * len * inner + in;
          double dot = 0.0;
          for (int64_t t = 0; t < len; ++t)
            dot += g[base + t * inner] * y[base + t * inner];
          for (int64_t t = 0; t < len; ++t) {
            int64_t idx = base + t * inner;
            ga[idx] += y[idx] * (g[idx] - dot);
          }
        }
      });
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor out = Tensor::scalar(total);
  if (auto node = track(out, {&a})) {
    auto an = a.node();
    int64_t n = a.numel();
    ComputeTape::current()->record(node, [node, an, n] {
      double g = node->grad[0];
      double* ga = grad_buf(an);
      for (int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  check(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor embed_rows(const Tensor& table, const std::vector<int64_t>& ids) {
  check(table.rank() == 2, "embed_rows table must be rank 2");
  int64_t vocab = table.dim(0), d = table.dim(1);
  int64_t rows = static_cast<int64_t>(ids.size());
  std::vector<double> vals(static_cast<size_t>(rows * d));
  const double* pt = table.values().data();
  for (int64_t r = 0; r < rows; ++r) {
    check(ids[static_cast<size_t>(r)] >= 0 && ids[static_cast<size_t>(r)] < vocab,
          "embed_rows id out of range");
    std::memcpy(vals.data() + r * d, pt + ids[static_cast<size_t>(r)] * d,
                static_cast<size_t>(d) * sizeof(double));
  }
  Tensor out(Shape{rows, d}, std::move(vals));
  if (auto node = track(out, {&table})) {
    auto tn = table.node();
    ComputeTape::current()->record(node, [node, tn, ids, rows, d] {
      const double* g = node->grad.data();
      double* gt = grad_buf(tn);
      for (int64_t r = 0; r < rows; ++r) {
        double* dst = gt + ids[static_cast<size_t>(r)] * d;
        const double* src = g + r * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor tile_axis(const Tensor& a, int axis, int64_t m) {
  check(axis >= 0 && axis <= a.rank(), "tile_axis position out of range");
  check(m >= 1, "tile_axis needs m >= 1");
  int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  int64_t inner = a.numel() / outer;

  Shape out_shape = a.shape();
  out_shape.insert(out_shape.begin() + axis, m);
  std::vector<double> vals(static_cast<size_t>(a.numel() * m));
  const double* pa = a.values().data();
  double* po = vals.data();
  parallel_for(0, outer * m, 4, [=](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      int64_t o = t / m;
      std::memcpy(po + t * inner, pa + o * inner,
                  static_cast<size_t>(inner) * sizeof(double));
    }
  });
  Tensor out(std::move(out_shape), std::move(vals));

  if (auto node = track(out, {&a})) {
    auto an = a.node();
    ComputeTape::current()->record(node, [node, an, outer, m, inner] {
      const double* g = node->grad.data();
      double* ga = grad_buf(an);
      parallel_for(0, outer, 1, [=](int64_t o0, int64_t o1) {
        for (int64_t o = o0; o < o1; ++o)
          for (int64_t j = 0; j < m; ++j) {
            const double* src = g + (o * m + j) * inner;
            double* dst = ga + o * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
      });
    });
  }
  return out;
}

Tensor stack_leading(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "stack_leading needs at least one tensor");
  const Shape& s = parts[0].shape();
  for (const Tensor& t : parts)
    check(t.shape() == s, "stack_leading shape mismatch");
  int64_t inner = parts[0].numel();
  Shape out_shape;
  out_shape.push_back(static_cast<int64_t>(parts.size()));
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  std::vector<double> vals(static_cast<size_t>(inner) * parts.size());
  for (size_t i = 0; i < parts.size(); ++i)
    std::memcpy(vals.data() + static_cast<int64_t>(i) * inner,
                parts[i].values().data(),
                static_cast<size_t>(inner) * sizeof(double));
  return Tensor(std::move(out_shape), std::move(vals));
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_last needs at least one tensor");
  int rank = parts[0].rank();
  check(rank >= 1, "concat_last needs rank >= 1");
  int64_t rows = parts[0].numel() / parts[0].dim(rank - 1);
  int64_t total = 0;
  for (const Tensor& t : parts) {
    check(t.rank() == rank, "concat_last rank mismatch");
    for (int d = 0; d + 1 < rank; ++d)
      check(t.dim(d) == parts[0].dim(d), "concat_last leading dim mismatch");
    total += t.dim(rank - 1);
  }
  Shape out_shape = parts[0].shape();
  out_shape[out_shape.size() - 1] = total;
  std::vector<double> vals(static_cast<size_t>(rows * total));
  int64_t off = 0;
  for (const Tensor& t : parts) {
    int64_t c = t.dim(rank - 1);
    const double* src = t.values().data();
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(vals.data() + r * total + off, src + r * c,
                  static_cast<size_t>(c) * sizeof(double));
    off += c;
  }
  return Tensor(std::move(out_shape), std::move(vals));
}

Tensor take_leading(const Tensor& a, int64_t index) {
  check(a.rank() >= 1, "take_leading needs rank >= 1");
  check(index >= 0 && index < a.dim(0),
        "take_leading index " + std::to_string(index) + " outside [0, " +
            std::to_string(a.dim(0)) + ")");
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  int64_t inner = a.numel() / a.dim(0);
  std::vector<double> vals(static_cast<size_t>(inner));
  std::memcpy(vals.data(), a.values().data() + index * inner,
              static_cast<size_t>(inner) * sizeof(double));
  return Tensor(std::move(out_shape), std::move(vals));
}

Tensor randn(Shape shape, Rng& rng, double stddev) {
  int64_t n = numel_of(shape);
  std::vector<double> vals(static_cast<size_t>(n));
  for (double& v : vals) v = rng.normal() * stddev;
  return Tensor(std::move(shape), std::move(vals));
}

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs, double eps) {
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    Tensor leaf(t.shape(), t.values());
    leaf.requires_grad_();
    leaves.push_back(leaf);
  }

  ComputeTape tape;
  Tensor out;
  {
    TapeScope scope(&tape);
    out = f(leaves);
  }
  check(out.numel() == 1, "grad_check objective must be scalar");
  if (out.tracked()) tape.backward(out);

  double worst = 0.0;
  for (size_t t = 0; t < leaves.size(); ++t) {
    const std::vector<double>& analytic = leaves[t].grad();
    std::vector<double> base = leaves[t].values();
    for (int64_t i = 0; i < leaves[t].numel(); ++i) {
      auto eval_at = [&](double v) {
        std::vector<double> vals = base;
        vals[static_cast<size_t>(i)] = v;
        std::vector<Tensor> probe = leaves;
        probe[t] = Tensor(leaves[t].shape(), std::move(vals));
        double y = f(probe).item();
        check(std::isfinite(y), "grad_check: objective is not finite");
        return y;
      };
      double x = base[static_cast<size_t>(i)];
      double numeric = (eval_at(x + eps) - eval_at(x - eps)) / (2.0 * eps);
      double ana = analytic.empty() ? 0.0 : analytic[static_cast<size_t>(i)];
      check(std::isfinite(ana), "grad_check: analytic gradient is not finite");
      double err = std::abs(ana - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace ctgv
