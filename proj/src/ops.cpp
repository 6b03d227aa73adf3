#include "cgir/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace cgir {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using CMapM = Eigen::Map<const EMat>;

// Right-aligned broadcast plan: per output axis, the element stride into each
// input (0 where that input is broadcast). Adjacent compatible axes are
// coalesced so the inner loops run long.
struct Bcast {
  Shape shape;  // logical broadcast result
  Shape out;    // coalesced iteration dims
  std::vector<int64_t> sa, sb;
  int64_t n = 1;
};

std::vector<int64_t> contiguous_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

Bcast make_bcast(const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Bcast bc;
  bc.out.resize(r);
  bc.sa.resize(r);
  bc.sb.resize(r);
  const auto sta = contiguous_strides(a);
  const auto stb = contiguous_strides(b);
  for (int d = 0; d < r; ++d) {
    const int da = d - (r - ra);
    const int db = d - (r - rb);
    const int64_t na = da >= 0 ? a[da] : 1;
    const int64_t nb = db >= 0 ? b[db] : 1;
    check_shape(na == nb || na == 1 || nb == 1,
                "broadcast: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
    bc.out[d] = std::max(na, nb);
    bc.sa[d] = (da >= 0 && na != 1) ? sta[da] : 0;
    bc.sb[d] = (db >= 0 && nb != 1) ? stb[db] : 0;
    bc.n *= bc.out[d];
  }
  bc.shape = bc.out;
  // Coalesce from the back (iteration order only; bc.shape keeps the result
  // shape).
  for (int d = r - 2; d >= 0; --d) {
    const size_t hi = static_cast<size_t>(d);
    if (bc.sa[hi] == bc.sa[hi + 1] * bc.out[hi + 1] &&
        bc.sb[hi] == bc.sb[hi + 1] * bc.out[hi + 1]) {
      bc.out[hi + 1] *= bc.out[hi];
      bc.out.erase(bc.out.begin() + d);
      bc.sa.erase(bc.sa.begin() + d);
      bc.sb.erase(bc.sb.begin() + d);
    }
  }
  return bc;
}

template <class F>
void bcast_apply(const Bcast& bc, const Scalar* A, const Scalar* B, Scalar* O, F f) {
  const int r = static_cast<int>(bc.out.size());
  const int64_t inner = bc.out[r - 1];
  const int64_t stepa = bc.sa[r - 1];
  const int64_t stepb = bc.sb[r - 1];
  std::vector<int64_t> idx(r, 0);
  int64_t offa = 0, offb = 0;
  for (int64_t o = 0; o < bc.n; o += inner) {
    const Scalar* pa = A + offa;
    const Scalar* pb = B + offb;
    Scalar* po = O + o;
    if (stepa == 1 && stepb == 1) {
      for (int64_t i = 0; i < inner; ++i) po[i] = f(pa[i], pb[i]);
    } else if (stepa == 1 && stepb == 0) {
      const Scalar vb = *pb;
      for (int64_t i = 0; i < inner; ++i) po[i] = f(pa[i], vb);
    } else if (stepa == 0 && stepb == 1) {
      const Scalar va = *pa;
      for (int64_t i = 0; i < inner; ++i) po[i] = f(va, pb[i]);
    } else {
      for (int64_t i = 0; i < inner; ++i) po[i] = f(pa[i * stepa], pb[i * stepb]);
    }
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      offa += bc.sa[d];
      offb += bc.sb[d];
      if (idx[d] < bc.out[d]) break;
      offa -= bc.sa[d] * bc.out[d];
      offb -= bc.sb[d] * bc.out[d];
      idx[d] = 0;
    }
  }
}

// Sums g (shaped like the broadcast output) down to `target`.
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g.clone();
  Tensor out = Tensor::zeros(target);
  Bcast bc = make_bcast(target, g.shape());
  check_shape(bc.shape == g.shape(), "reduce_to: target does not broadcast to source");
  const int r = static_cast<int>(bc.out.size());
  const int64_t inner = bc.out[r - 1];
  const int64_t stepo = bc.sa[r - 1];
  const Scalar* G = g.data();
  Scalar* O = out.data();
  std::vector<int64_t> idx(r, 0);
  int64_t offo = 0;
  for (int64_t o = 0; o < bc.n; o += inner) {
    const Scalar* pg = G + o;
    Scalar* po = O + offo;
    if (stepo == 1) {
      for (int64_t i = 0; i < inner; ++i) po[i] += pg[i];
    } else if (stepo == 0) {
      Scalar acc = 0.0;
      for (int64_t i = 0; i < inner; ++i) acc += pg[i];
      *po += acc;
    } else {
      for (int64_t i = 0; i < inner; ++i) po[i * stepo] += pg[i];
    }
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      offo += bc.sa[d];
      if (idx[d] < bc.out[d]) break;
      offo -= bc.sa[d] * bc.out[d];
      idx[d] = 0;
    }
  }
  return out;
}

template <class F>
Var binary_op(const Var& a, const Var& b, F f,
              std::function<void(const Tensor&, const Tensor&, const Tensor&, Node&, Node&)> bwd) {
  Bcast bc = make_bcast(a.shape(), b.shape());
  Tensor out = Tensor::empty(bc.shape);
  bcast_apply(bc, a.val().data(), b.val().data(), out.data(), f);
  Tensor av = a.val();
  Tensor bv = b.val();
  NodePtr na = a.node(), nb = b.node();
  return make_op(std::move(out), {na, nb}, [av, bv, na, nb, bwd](const Tensor& g) {
    bwd(g, av, bv, *na, *nb);
  });
}

template <class F, class DF>
Var unary_op(const Var& x, F f, DF df) {
  const Tensor& xv = x.val();
  Tensor out = Tensor::empty(xv.shape());
  const Scalar* in = xv.data();
  Scalar* o = out.data();
  const int64_t n = xv.numel();
  for (int64_t i = 0; i < n; ++i) o[i] = f(in[i]);
  Tensor yv = out;
  NodePtr nx = x.node();
  return make_op(std::move(out), {nx}, [xv, yv, nx, df](const Tensor& g) {
    if (!nx->requires_grad) return;
    Tensor gx = Tensor::empty(xv.shape());
    const Scalar* gp = g.data();
    const Scalar* xp = xv.data();
    const Scalar* yp = yv.data();
    Scalar* d = gx.data();
    const int64_t m = xv.numel();
    for (int64_t i = 0; i < m; ++i) d[i] = gp[i] * df(xp[i], yp[i]);
    accumulate_grad(*nx, gx);
  });
}

Tensor permute_copy(const Tensor& x, const std::vector<int>& dims) {
  const int r = static_cast<int>(x.rank());
  check_shape(static_cast<int>(dims.size()) == r, "permute: dims rank mismatch");
  Shape out_shape(r);
  const auto xs = contiguous_strides(x.shape());
  std::vector<int64_t> src_stride(r);
  std::vector<bool> seen(r, false);
  for (int d = 0; d < r; ++d) {
    const int sd = dims[d];
    check_shape(sd >= 0 && sd < r && !seen[sd], "permute: invalid axis order");
    seen[sd] = true;
    out_shape[d] = x.dim(sd);
    src_stride[d] = xs[sd];
  }
  Tensor out = Tensor::empty(out_shape);
  Scalar* O = out.data();
  const Scalar* X = x.data();
  std::vector<int64_t> idx(r, 0);
  int64_t off = 0;
  const int64_t n = x.numel();
  const int64_t inner = out_shape[r - 1];
  const int64_t step = src_stride[r - 1];
  for (int64_t o = 0; o < n; o += inner) {
    const Scalar* px = X + off;
    Scalar* po = O + o;
    if (step == 1) {
      std::memcpy(po, px, sizeof(Scalar) * static_cast<size_t>(inner));
    } else {
      for (int64_t i = 0; i < inner; ++i) po[i] = px[i * step];
    }
    for (int d = r - 2; d >= 0; --d) {
      ++idx[d];
      off += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      off -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

inline int64_t reflect_index(int64_t i, int64_t n) {
  // reflect101: -1 -> 1, n -> n-2. Valid while |overhang| < n.
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return i;
}

void im2col(const Scalar* x, int64_t C, int64_t H, int64_t W, int kh, int kw,
            int stride, int pad, PadMode mode, int64_t Ho, int64_t Wo, Scalar* col) {
  // col is (C*kh*kw, Ho*Wo).
  for (int64_t c = 0; c < C; ++c) {
    const Scalar* xc = x + c * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        Scalar* row = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          int64_t iy = oy * stride + ky - pad;
          bool y_ok = iy >= 0 && iy < H;
          if (!y_ok && mode == PadMode::Reflect) {
            iy = reflect_index(iy, H);
            y_ok = true;
          }
          Scalar* dst = row + oy * Wo;
          if (!y_ok) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const Scalar* src = xc + iy * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) {
              if (mode == PadMode::Reflect) {
                dst[ox] = src[reflect_index(ix, W)];
              } else {
                dst[ox] = 0.0;
              }
            } else {
              dst[ox] = src[ix];
            }
          }
        }
      }
    }
  }
}

void col2im_add(const Scalar* col, int64_t C, int64_t H, int64_t W, int kh, int kw,
                int stride, int pad, PadMode mode, int64_t Ho, int64_t Wo, Scalar* gx) {
  for (int64_t c = 0; c < C; ++c) {
    Scalar* gc = gx + c * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Scalar* row = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          int64_t iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) {
            if (mode != PadMode::Reflect) continue;
            iy = reflect_index(iy, H);
          }
          const Scalar* src = row + oy * Wo;
          Scalar* grow = gc + iy * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= W) {
              if (mode != PadMode::Reflect) continue;
              ix = reflect_index(ix, W);
            }
            grow[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](Scalar x, Scalar y) { return x + y; },
      [](const Tensor& g, const Tensor& av, const Tensor& bv, Node& na, Node& nb) {
        if (na.requires_grad) accumulate_grad(na, reduce_to(g, av.shape()));
        if (nb.requires_grad) accumulate_grad(nb, reduce_to(g, bv.shape()));
      });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](Scalar x, Scalar y) { return x - y; },
      [](const Tensor& g, const Tensor& av, const Tensor& bv, Node& na, Node& nb) {
        if (na.requires_grad) accumulate_grad(na, reduce_to(g, av.shape()));
        if (nb.requires_grad) {
          Tensor gn = Tensor::empty(g.shape());
          const Scalar* gp = g.data();
          Scalar* d = gn.data();
          for (int64_t i = 0; i < g.numel(); ++i) d[i] = -gp[i];
          accumulate_grad(nb, reduce_to(gn, bv.shape()));
        }
      });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](Scalar x, Scalar y) { return x * y; },
      [](const Tensor& g, const Tensor& av, const Tensor& bv, Node& na, Node& nb) {
        if (na.requires_grad) {
          Bcast bc = make_bcast(g.shape(), bv.shape());
          Tensor t = Tensor::empty(bc.shape);
          bcast_apply(bc, g.data(), bv.data(), t.data(),
                      [](Scalar x, Scalar y) { return x * y; });
          accumulate_grad(na, reduce_to(t, av.shape()));
        }
        if (nb.requires_grad) {
          Bcast bc = make_bcast(g.shape(), av.shape());
          Tensor t = Tensor::empty(bc.shape);
          bcast_apply(bc, g.data(), av.data(), t.data(),
                      [](Scalar x, Scalar y) { return x * y; });
          accumulate_grad(nb, reduce_to(t, bv.shape()));
        }
      });
}

Var div(const Var& a, const Var& b) {
  return binary_op(
      a, b, [](Scalar x, Scalar y) { return x / y; },
      [](const Tensor& g, const Tensor& av, const Tensor& bv, Node& na, Node& nb) {
        if (na.requires_grad) {
          Bcast bc = make_bcast(g.shape(), bv.shape());
          Tensor t = Tensor::empty(bc.shape);
          bcast_apply(bc, g.data(), bv.data(), t.data(),
                      [](Scalar x, Scalar y) { return x / y; });
          accumulate_grad(na, reduce_to(t, av.shape()));
        }
        if (nb.requires_grad) {
          // d/db (a/b) = -a / b^2, evaluated with full broadcasting.
          Bcast bca = make_bcast(av.shape(), bv.shape());
          Tensor q = Tensor::empty(bca.shape);
          bcast_apply(bca, av.data(), bv.data(), q.data(),
                      [](Scalar x, Scalar y) { return -x / (y * y); });
          Bcast bcg = make_bcast(g.shape(), q.shape());
          Tensor t = Tensor::empty(bcg.shape);
          bcast_apply(bcg, g.data(), q.data(), t.data(),
                      [](Scalar x, Scalar y) { return x * y; });
          accumulate_grad(nb, reduce_to(t, bv.shape()));
        }
      });
}

Var add_scalar(const Var& a, Scalar s) {
  return unary_op(
      a, [s](Scalar x) { return x + s; }, [](Scalar, Scalar) { return 1.0; });
}

Var mul_scalar(const Var& a, Scalar s) {
  return unary_op(
      a, [s](Scalar x) { return x * s; }, [s](Scalar, Scalar) { return s; });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var exp_v(const Var& a) {
  return unary_op(
      a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Var log_v(const Var& a) {
  return unary_op(
      a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return 1.0 / x; });
}

Var sqrt_v(const Var& a) {
  return unary_op(
      a, [](Scalar x) { return std::sqrt(x); },
      [](Scalar, Scalar y) { return 0.5 / y; });
}

Var abs_v(const Var& a) {
  return unary_op(
      a, [](Scalar x) { return std::abs(x); },
      [](Scalar x, Scalar) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary_op(
      a, [](Scalar x) { return x * x; }, [](Scalar x, Scalar) { return 2.0 * x; });
}

Var sigmoid(const Var& a) {
  return unary_op(
      a,
      [](Scalar x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (1.0 + e);
      },
      [](Scalar, Scalar y) { return y * (1.0 - y); });
}

Var tanh_v(const Var& a) {
  return unary_op(
      a, [](Scalar x) { return std::tanh(x); },
      [](Scalar, Scalar y) { return 1.0 - y * y; });
}

Var relu(const Var& a) {
  return unary_op(
      a, [](Scalar x) { return x > 0.0 ? x : 0.0; },
      [](Scalar x, Scalar) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  constexpr Scalar inv_sqrt2 = 0.70710678118654752440;
  constexpr Scalar inv_sqrt2pi = 0.39894228040143267794;
  return unary_op(
      a, [=](Scalar x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](Scalar x, Scalar) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
               x * inv_sqrt2pi * std::exp(-0.5 * x * x);
      });
}

Var clamp_min(const Var& a, Scalar floor) {
  return unary_op(
      a, [floor](Scalar x) { return x < floor ? floor : x; },
      [floor](Scalar x, Scalar) { return x > floor ? 1.0 : 0.0; });
}

Var sum_all(const Var& a) {
  const Tensor& xv = a.val();
  Scalar acc = 0.0;
  const Scalar* p = xv.data();
  for (int64_t i = 0; i < xv.numel(); ++i) acc += p[i];
  NodePtr na = a.node();
  Shape xshape = xv.shape();
  return make_op(Tensor::scalar(acc), {na}, [na, xshape](const Tensor& g) {
    if (na->requires_grad) accumulate_grad(*na, Tensor::full(xshape, g[0]));
  });
}

Var mean_all(const Var& a) {
  const int64_t n = a.numel();
  return mul_scalar(sum_all(a), 1.0 / static_cast<Scalar>(n));
}

Var sum_axis(const Var& a, int axis) {
  const Tensor& xv = a.val();
  const int r = static_cast<int>(xv.rank());
  check_shape(axis >= 0 && axis < r, "sum_axis: axis out of range");
  int64_t outer = 1, inner = 1;
  const int64_t nA = xv.dim(axis);
  for (int d = 0; d < axis; ++d) outer *= xv.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= xv.dim(d);
  Shape out_shape;
  for (int d = 0; d < r; ++d) {
    if (d != axis) out_shape.push_back(xv.dim(d));
  }
  if (out_shape.empty()) out_shape = {1};
  Tensor out = Tensor::zeros(out_shape);
  const Scalar* X = xv.data();
  Scalar* O = out.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t k = 0; k < nA; ++k) {
      const Scalar* src = X + (o * nA + k) * inner;
      Scalar* dst = O + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  NodePtr na = a.node();
  Shape xshape = xv.shape();
  return make_op(std::move(out), {na},
                 [na, xshape, outer, nA, inner](const Tensor& g) {
                   if (!na->requires_grad) return;
                   Tensor gx = Tensor::empty(xshape);
                   const Scalar* G = g.data();
                   Scalar* D = gx.data();
                   for (int64_t o = 0; o < outer; ++o) {
                     for (int64_t k = 0; k < nA; ++k) {
                       Scalar* dst = D + (o * nA + k) * inner;
                       const Scalar* src = G + o * inner;
                       std::memcpy(dst, src, sizeof(Scalar) * static_cast<size_t>(inner));
                     }
                   }
                   accumulate_grad(*na, gx);
                 });
}

Var mean_axis(const Var& a, int axis) {
  const int64_t n = a.val().dim(axis);
  return mul_scalar(sum_axis(a, axis), 1.0 / static_cast<Scalar>(n));
}

Var reshape(const Var& a, Shape shape) {
  Tensor v = a.val().reshaped(std::move(shape));
  NodePtr na = a.node();
  Shape xshape = a.shape();
  return make_op(std::move(v), {na}, [na, xshape](const Tensor& g) {
    if (na->requires_grad) accumulate_grad(*na, g.reshaped(xshape));
  });
}

Var permute(const Var& a, const std::vector<int>& dims) {
  Tensor out = permute_copy(a.val(), dims);
  std::vector<int> inv(dims.size());
  for (size_t i = 0; i < dims.size(); ++i) inv[static_cast<size_t>(dims[i])] = static_cast<int>(i);
  NodePtr na = a.node();
  return make_op(std::move(out), {na}, [na, inv](const Tensor& g) {
    if (na->requires_grad) accumulate_grad(*na, permute_copy(g, inv));
  });
}

Var concat(const std::vector<Var>& parts, int axis) {
  check_param(!parts.empty(), "concat: no inputs");
  const int r = static_cast<int>(parts[0].val().rank());
  check_shape(axis >= 0 && axis < r, "concat: axis out of range");
  Shape out_shape = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    check_shape(static_cast<int>(p.val().rank()) == r, "concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d != axis) {
        check_shape(p.val().dim(d) == out_shape[d], "concat: non-axis dims differ");
      }
    }
    total += p.val().dim(axis);
  }
  out_shape[axis] = total;
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[d];

  Tensor out = Tensor::empty(out_shape);
  std::vector<int64_t> axis_sizes;
  std::vector<NodePtr> nodes;
  int64_t pos = 0;
  for (const auto& p : parts) {
    const int64_t na = p.val().dim(axis);
    const Scalar* src = p.val().data();
    for (int64_t o = 0; o < outer; ++o) {
      Scalar* dst = out.data() + (o * total + pos) * inner;
      std::memcpy(dst, src + o * na * inner, sizeof(Scalar) * static_cast<size_t>(na * inner));
    }
    pos += na;
    axis_sizes.push_back(na);
    nodes.push_back(p.node());
  }
  return make_op(std::move(out), nodes,
                 [nodes, axis_sizes, outer, inner, total](const Tensor& g) {
                   int64_t start = 0;
                   for (size_t i = 0; i < nodes.size(); ++i) {
                     const int64_t na = axis_sizes[i];
                     if (nodes[i]->requires_grad) {
                       Shape ps = nodes[i]->value.shape();
                       Tensor gp = Tensor::empty(ps);
                       for (int64_t o = 0; o < outer; ++o) {
                         const Scalar* src = g.data() + (o * total + start) * inner;
                         std::memcpy(gp.data() + o * na * inner, src,
                                     sizeof(Scalar) * static_cast<size_t>(na * inner));
                       }
                       accumulate_grad(*nodes[i], gp);
                     }
                     start += na;
                   }
                 });
}

Var slice(const Var& a, int axis, int64_t start, int64_t len) {
  const Tensor& xv = a.val();
  const int r = static_cast<int>(xv.rank());
  check_shape(axis >= 0 && axis < r, "slice: axis out of range");
  const int64_t nA = xv.dim(axis);
  check_shape(start >= 0 && len > 0 && start + len <= nA, "slice: range out of bounds");
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= xv.dim(d);
  for (int d = axis + 1; d < r; ++d) inner *= xv.dim(d);
  Shape out_shape = xv.shape();
  out_shape[axis] = len;
  Tensor out = Tensor::empty(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    const Scalar* src = xv.data() + (o * nA + start) * inner;
    std::memcpy(out.data() + o * len * inner, src,
                sizeof(Scalar) * static_cast<size_t>(len * inner));
  }
  NodePtr na = a.node();
  Shape xshape = xv.shape();
  return make_op(std::move(out), {na},
                 [na, xshape, outer, inner, nA, start, len](const Tensor& g) {
                   if (!na->requires_grad) return;
                   Tensor gx = Tensor::zeros(xshape);
                   for (int64_t o = 0; o < outer; ++o) {
                     Scalar* dst = gx.data() + (o * nA + start) * inner;
                     std::memcpy(dst, g.data() + o * len * inner,
                                 sizeof(Scalar) * static_cast<size_t>(len * inner));
                   }
                   accumulate_grad(*na, gx);
                 });
}

Var detach(const Var& a) { return Var::constant(a.val()); }

Var index_select0(const Var& a, const std::vector<int64_t>& idx) {
  const Tensor& xv = a.val();
  check_shape(xv.rank() >= 1, "index_select0: rank must be >= 1");
  const int64_t n0 = xv.dim(0);
  const int64_t row = xv.numel() / n0;
  Shape out_shape = xv.shape();
  out_shape[0] = static_cast<int64_t>(idx.size());
  Tensor out = Tensor::empty(out_shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    check_param(idx[i] >= 0 && idx[i] < n0, "index_select0: index out of range");
    std::memcpy(out.data() + static_cast<int64_t>(i) * row, xv.data() + idx[i] * row,
                sizeof(Scalar) * static_cast<size_t>(row));
  }
  NodePtr na = a.node();
  Shape xshape = xv.shape();
  return make_op(std::move(out), {na}, [na, xshape, idx, row](const Tensor& g) {
    if (!na->requires_grad) return;
    Tensor gx = Tensor::zeros(xshape);
    for (size_t i = 0; i < idx.size(); ++i) {
      Scalar* dst = gx.data() + idx[i] * row;
      const Scalar* src = g.data() + static_cast<int64_t>(i) * row;
      for (int64_t j = 0; j < row; ++j) dst[j] += src[j];
    }
    accumulate_grad(*na, gx);
  });
}

Var scatter_add0(const Var& a, const std::vector<int64_t>& idx, int64_t n0) {
  const Tensor& xv = a.val();
  check_shape(xv.rank() >= 1, "scatter_add0: rank must be >= 1");
  check_shape(xv.dim(0) == static_cast<int64_t>(idx.size()),
              "scatter_add0: leading dim must match index count");
  const int64_t row = xv.numel() / xv.dim(0);
  Shape out_shape = xv.shape();
  out_shape[0] = n0;
  Tensor out = Tensor::zeros(out_shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    check_param(idx[i] >= 0 && idx[i] < n0, "scatter_add0: index out of range");
    Scalar* dst = out.data() + idx[i] * row;
    const Scalar* src = xv.data() + static_cast<int64_t>(i) * row;
    for (int64_t j = 0; j < row; ++j) dst[j] += src[j];
  }
  NodePtr na = a.node();
  Shape xshape = xv.shape();
  return make_op(std::move(out), {na}, [na, xshape, idx, row](const Tensor& g) {
    if (!na->requires_grad) return;
    Tensor gx = Tensor::empty(xshape);
    for (size_t i = 0; i < idx.size(); ++i) {
      std::memcpy(gx.data() + static_cast<int64_t>(i) * row, g.data() + idx[i] * row,
                  sizeof(Scalar) * static_cast<size_t>(row));
    }
    accumulate_grad(*na, gx);
  });
}

Var take_lastdim(const Var& a, const std::vector<int64_t>& idx, int64_t k) {
  const Tensor& xv = a.val();
  const int64_t N = xv.dim(static_cast<int>(xv.rank()) - 1);
  const int64_t rows = xv.numel() / N;
  check_shape(static_cast<int64_t>(idx.size()) == rows * k,
              "take_lastdim: index count must be rows*k");
  Shape out_shape = xv.shape();
  out_shape.back() = k;
  Tensor out = Tensor::empty(out_shape);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < k; ++j) {
      const int64_t ix = idx[static_cast<size_t>(r * k + j)];
      check_param(ix >= 0 && ix < N, "take_lastdim: index out of range");
      out[r * k + j] = xv[r * N + ix];
    }
  }
  NodePtr na = a.node();
  Shape xshape = xv.shape();
  return make_op(std::move(out), {na}, [na, xshape, idx, k, N, rows](const Tensor& g) {
    if (!na->requires_grad) return;
    Tensor gx = Tensor::zeros(xshape);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < k; ++j) {
        gx[r * N + idx[static_cast<size_t>(r * k + j)]] += g[r * k + j];
      }
    }
    accumulate_grad(*na, gx);
  });
}

namespace {

void mm_dims(const Shape& a, const Shape& b, bool ta, bool tb, int64_t& m, int64_t& k,
             int64_t& n) {
  const int64_t ar = a[a.size() - 2], ac = a[a.size() - 1];
  const int64_t br = b[b.size() - 2], bc = b[b.size() - 1];
  m = ta ? ac : ar;
  k = ta ? ar : ac;
  const int64_t kb = tb ? bc : br;
  n = tb ? br : bc;
  check_shape(k == kb, "matmul: inner dimensions disagree");
}

void gemm(const Scalar* A, int64_t ar, int64_t ac, bool ta, const Scalar* B, int64_t br,
          int64_t bc, bool tb, Scalar* C, int64_t m, int64_t n, bool accumulate) {
  CMapM MA(A, ar, ac);
  CMapM MB(B, br, bc);
  MapM MC(C, m, n);
  if (!ta && !tb) {
    if (accumulate) MC.noalias() += MA * MB; else MC.noalias() = MA * MB;
  } else if (ta && !tb) {
    if (accumulate) MC.noalias() += MA.transpose() * MB; else MC.noalias() = MA.transpose() * MB;
  } else if (!ta && tb) {
    if (accumulate) MC.noalias() += MA * MB.transpose(); else MC.noalias() = MA * MB.transpose();
  } else {
    if (accumulate) MC.noalias() += MA.transpose() * MB.transpose();
    else MC.noalias() = MA.transpose() * MB.transpose();
  }
}

}  // namespace

Var mm(const Var& a, const Var& b, bool ta, bool tb) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check_shape(av.rank() == 2 && bv.rank() == 2, "mm: inputs must be rank 2");
  int64_t m, k, n;
  mm_dims(av.shape(), bv.shape(), ta, tb, m, k, n);
  Tensor out = Tensor::empty({m, n});
  gemm(av.data(), av.dim(0), av.dim(1), ta, bv.data(), bv.dim(0), bv.dim(1), tb,
       out.data(), m, n, false);
  NodePtr na = a.node(), nb = b.node();
  return make_op(std::move(out), {na, nb}, [av, bv, na, nb, ta, tb, m, n](const Tensor& g) {
    // dA and dB follow from C = op(A) op(B); each case is the standard
    // transpose shuffle.
    if (na->requires_grad) {
      Tensor ga = Tensor::empty(av.shape());
      if (!ta) {
        gemm(g.data(), m, n, false, bv.data(), bv.dim(0), bv.dim(1), !tb, ga.data(),
             av.dim(0), av.dim(1), false);
      } else {
        gemm(bv.data(), bv.dim(0), bv.dim(1), tb, g.data(), m, n, true, ga.data(),
             av.dim(0), av.dim(1), false);
      }
      accumulate_grad(*na, ga);
    }
    if (nb->requires_grad) {
      Tensor gb = Tensor::empty(bv.shape());
      if (!tb) {
        gemm(av.data(), av.dim(0), av.dim(1), !ta, g.data(), m, n, false, gb.data(),
             bv.dim(0), bv.dim(1), false);
      } else {
        gemm(g.data(), m, n, true, av.data(), av.dim(0), av.dim(1), ta, gb.data(),
             bv.dim(0), bv.dim(1), false);
      }
      accumulate_grad(*nb, gb);
    }
  });
}

Var bmm(const Var& a, const Var& b, bool ta, bool tb) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  check_shape(av.rank() == 3 && bv.rank() == 3, "bmm: inputs must be rank 3");
  check_shape(av.dim(0) == bv.dim(0), "bmm: batch sizes differ");
  const int64_t B = av.dim(0);
  int64_t m, k, n;
  mm_dims(av.shape(), bv.shape(), ta, tb, m, k, n);
  Tensor out = Tensor::empty({B, m, n});
  const int64_t sa = av.dim(1) * av.dim(2);
  const int64_t sb = bv.dim(1) * bv.dim(2);
  for (int64_t i = 0; i < B; ++i) {
    gemm(av.data() + i * sa, av.dim(1), av.dim(2), ta, bv.data() + i * sb, bv.dim(1),
         bv.dim(2), tb, out.data() + i * m * n, m, n, false);
  }
  NodePtr na = a.node(), nb = b.node();
  return make_op(std::move(out), {na, nb},
                 [av, bv, na, nb, ta, tb, B, m, n, sa, sb](const Tensor& g) {
                   if (na->requires_grad) {
                     Tensor ga = Tensor::empty(av.shape());
                     for (int64_t i = 0; i < B; ++i) {
                       const Scalar* gi = g.data() + i * m * n;
                       Scalar* gai = ga.data() + i * sa;
                       if (!ta) {
                         gemm(gi, m, n, false, bv.data() + i * sb, bv.dim(1), bv.dim(2), !tb,
                              gai, av.dim(1), av.dim(2), false);
                       } else {
                         gemm(bv.data() + i * sb, bv.dim(1), bv.dim(2), tb, gi, m, n, true,
                              gai, av.dim(1), av.dim(2), false);
                       }
                     }
                     accumulate_grad(*na, ga);
                   }
                   if (nb->requires_grad) {
                     Tensor gb = Tensor::empty(bv.shape());
                     for (int64_t i = 0; i < B; ++i) {
                       const Scalar* gi = g.data() + i * m * n;
                       Scalar* gbi = gb.data() + i * sb;
                       if (!tb) {
                         gemm(av.data() + i * sa, av.dim(1), av.dim(2), !ta, gi, m, n, false,
                              gbi, bv.dim(1), bv.dim(2), false);
                       } else {
                         gemm(gi, m, n, true, av.data() + i * sa, av.dim(1), av.dim(2), ta,
                              gbi, bv.dim(1), bv.dim(2), false);
                       }
                     }
                     accumulate_grad(*nb, gb);
                   }
                 });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Shape& xs = x.shape();
  const int64_t in = xs.back();
  check_shape(w.val().rank() == 2 && w.dim(1) == in, "linear: weight shape mismatch");
  const int64_t out_f = w.dim(0);
  Shape lead(xs.begin(), xs.end() - 1);
  int64_t rows = 1;
  for (int64_t d : lead) rows *= d;
  Var xf = reshape(x, {rows, in});
  Var y = mm(xf, w, false, true);
  if (b.defined()) y = add(y, b);
  Shape out_shape = lead;
  out_shape.push_back(out_f);
  return reshape(y, out_shape);
}

Var softmax_lastdim(const Var& a) {
  const Tensor& xv = a.val();
  const int64_t N = xv.dim(static_cast<int>(xv.rank()) - 1);
  const int64_t rows = xv.numel() / N;
  Tensor out = Tensor::empty(xv.shape());
  const Scalar* X = xv.data();
  Scalar* Y = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const Scalar* xr = X + r * N;
    Scalar* yr = Y + r * N;
    Scalar mx = xr[0];
    for (int64_t i = 1; i < N; ++i) mx = std::max(mx, xr[i]);
    Scalar s = 0.0;
    for (int64_t i = 0; i < N; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      s += yr[i];
    }
    const Scalar inv = 1.0 / s;
    for (int64_t i = 0; i < N; ++i) yr[i] *= inv;
  }
  Tensor yv = out;
  NodePtr na = a.node();
  return make_op(std::move(out), {na}, [na, yv, rows, N](const Tensor& g) {
    if (!na->requires_grad) return;
    Tensor gx = Tensor::empty(yv.shape());
    const Scalar* G = g.data();
    const Scalar* Y = yv.data();
    Scalar* D = gx.data();
    for (int64_t r = 0; r < rows; ++r) {
      const Scalar* gr = G + r * N;
      const Scalar* yr = Y + r * N;
      Scalar* dr = D + r * N;
      Scalar dot = 0.0;
      for (int64_t i = 0; i < N; ++i) dot += gr[i] * yr[i];
      for (int64_t i = 0; i < N; ++i) dr[i] = yr[i] * (gr[i] - dot);
    }
    accumulate_grad(*na, gx);
  });
}

Var l2_normalize_lastdim(const Var& x, Scalar floor) {
  const int axis = static_cast<int>(x.val().rank()) - 1;
  Var sq = sum_axis(square(x), axis);
  Shape keep = x.shape();
  keep.back() = 1;
  // Clamp before the sqrt so zero rows stay zero with a finite gradient.
  Var norm = reshape(sqrt_v(clamp_min(sq, floor * floor)), keep);
  return div(x, norm);
}

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, PadMode mode) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  check_shape(xv.rank() == 4 && wv.rank() == 4, "conv2d: x and w must be rank 4");
  const int64_t B = xv.dim(0), Ci = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int64_t Co = wv.dim(0);
  const int kh = static_cast<int>(wv.dim(2));
  const int kw = static_cast<int>(wv.dim(3));
  check_shape(wv.dim(1) == Ci, "conv2d: channel mismatch");
  check_param(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  if (mode == PadMode::Reflect) {
    check_param(pad < H && pad < W, "conv2d: reflect pad exceeds input");
  }
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  check_shape(Ho >= 1 && Wo >= 1, "conv2d: kernel larger than padded input");

  Tensor out = Tensor::empty({B, Co, Ho, Wo});
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && pad == 0;
  Tensor col;
  if (!pointwise) col = Tensor::empty({Ci * kh * kw, Ho * Wo});
  for (int64_t i = 0; i < B; ++i) {
    const Scalar* xi = xv.data() + i * Ci * H * W;
    Scalar* yi = out.data() + i * Co * Ho * Wo;
    if (pointwise) {
      gemm(wv.data(), Co, Ci, false, xi, Ci, H * W, false, yi, Co, H * W, false);
    } else {
      im2col(xi, Ci, H, W, kh, kw, stride, pad, mode, Ho, Wo, col.data());
      gemm(wv.data(), Co, Ci * kh * kw, false, col.data(), Ci * kh * kw, Ho * Wo, false,
           yi, Co, Ho * Wo, false);
    }
  }
  if (b.defined()) {
    check_shape(b.val().rank() == 1 && b.val().dim(0) == Co, "conv2d: bias shape");
    const Scalar* bp = b.val().data();
    for (int64_t i = 0; i < B; ++i) {
      for (int64_t c = 0; c < Co; ++c) {
        Scalar* p = out.data() + (i * Co + c) * Ho * Wo;
        const Scalar bc = bp[c];
        for (int64_t j = 0; j < Ho * Wo; ++j) p[j] += bc;
      }
    }
  }

  NodePtr nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;
  std::vector<NodePtr> parents = {nx, nw};
  if (nb) parents.push_back(nb);
  Tensor xcap = xv, wcap = wv;
  return make_op(
      std::move(out), parents,
      [xcap, wcap, nx, nw, nb, B, Ci, H, W, Co, kh, kw, stride, pad, mode, Ho,
       Wo, pointwise](const Tensor& g) {
        Tensor gw = nw->requires_grad ? Tensor::zeros(wcap.shape()) : Tensor();
        Tensor gx = nx->requires_grad ? Tensor::zeros(xcap.shape()) : Tensor();
        Tensor col, gcol;
        if (!pointwise) {
          col = Tensor::empty({Ci * kh * kw, Ho * Wo});
          if (nx->requires_grad) gcol = Tensor::empty({Ci * kh * kw, Ho * Wo});
        }
        for (int64_t i = 0; i < B; ++i) {
          const Scalar* gi = g.data() + i * Co * Ho * Wo;
          const Scalar* xi = xcap.data() + i * Ci * H * W;
          if (pointwise) {
            if (nw->requires_grad) {
              gemm(gi, Co, H * W, false, xi, Ci, H * W, true, gw.data(), Co, Ci, true);
            }
            if (nx->requires_grad) {
              gemm(wcap.data(), Co, Ci, true, gi, Co, H * W, false,
                   gx.data() + i * Ci * H * W, Ci, H * W, true);
            }
          } else {
            // The column matrix is rebuilt here instead of being kept from the
            // forward pass; that trades a little compute for a much smaller
            // resident graph.
            im2col(xi, Ci, H, W, kh, kw, stride, pad, mode, Ho, Wo, col.data());
            if (nw->requires_grad) {
              gemm(gi, Co, Ho * Wo, false, col.data(), Ci * kh * kw, Ho * Wo, true,
                   gw.data(), Co, Ci * kh * kw, true);
            }
            if (nx->requires_grad) {
              gemm(wcap.data(), Co, Ci * kh * kw, true, gi, Co, Ho * Wo, false,
                   gcol.data(), Ci * kh * kw, Ho * Wo, false);
              col2im_add(gcol.data(), Ci, H, W, kh, kw, stride, pad, mode, Ho, Wo,
                         gx.data() + i * Ci * H * W);
            }
          }
        }
        if (nx->requires_grad) accumulate_grad(*nx, gx);
        if (nw->requires_grad) accumulate_grad(*nw, gw);
        if (nb && nb->requires_grad) {
          Tensor gb = Tensor::zeros({Co});
          for (int64_t i = 0; i < B; ++i) {
            for (int64_t c = 0; c < Co; ++c) {
              const Scalar* p = g.data() + (i * Co + c) * Ho * Wo;
              Scalar acc = 0.0;
              for (int64_t j = 0; j < Ho * Wo; ++j) acc += p[j];
              gb[c] += acc;
            }
          }
          accumulate_grad(*nb, gb);
        }
      });
}

Var conv2d_depthwise(const Var& x, const Var& w, const Var& b, PadMode mode) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  check_shape(xv.rank() == 4, "conv2d_depthwise: input must be rank 4");
  check_shape(wv.rank() == 3 && wv.dim(0) == xv.dim(1),
              "conv2d_depthwise: weight must be (C,kh,kw)");
  const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int kh = static_cast<int>(wv.dim(1));
  const int kw = static_cast<int>(wv.dim(2));
  check_param(kh % 2 == 1 && kw % 2 == 1, "conv2d_depthwise: kernel must be odd-sized");
  check_param(kh / 2 < H && kw / 2 < W, "conv2d_depthwise: kernel too large for input");
  const int cy = kh / 2, cx = kw / 2;
  const bool reflect = mode == PadMode::Reflect;

  Tensor out = Tensor::zeros(xv.shape());
  for (int64_t i = 0; i < B; ++i) {
    for (int64_t c = 0; c < C; ++c) {
      const Scalar* src = xv.data() + (i * C + c) * H * W;
      const Scalar* K = wv.data() + c * kh * kw;
      Scalar* dst = out.data() + (i * C + c) * H * W;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const Scalar wk = K[ky * kw + kx];
          for (int64_t oy = 0; oy < H; ++oy) {
            int64_t iy = oy + ky - cy;
            if (iy < 0 || iy >= H) {
              if (!reflect) continue;
              iy = reflect_index(iy, H);
            }
            const Scalar* srow = src + iy * W;
            Scalar* drow = dst + oy * W;
            const int64_t lo = std::max<int64_t>(0, cx - kx);
            const int64_t hi = std::min<int64_t>(W, W + cx - kx);
            if (reflect) {
              for (int64_t ox = 0; ox < W; ++ox) {
                drow[ox] += wk * srow[reflect_index(ox + kx - cx, W)];
              }
            } else {
              for (int64_t ox = lo; ox < hi; ++ox) drow[ox] += wk * srow[ox + kx - cx];
            }
          }
        }
      }
    }
  }
  if (b.defined()) {
    check_shape(b.val().numel() == C, "conv2d_depthwise: bias size mismatch");
    for (int64_t i = 0; i < B; ++i) {
      for (int64_t c = 0; c < C; ++c) {
        Scalar* p = out.data() + (i * C + c) * H * W;
        const Scalar bc = b.val()[c];
        for (int64_t j = 0; j < H * W; ++j) p[j] += bc;
      }
    }
  }

  NodePtr nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;
  std::vector<NodePtr> parents = {nx, nw};
  if (nb) parents.push_back(nb);
  Tensor xcap = xv, wcap = wv;
  return make_op(
      std::move(out), parents,
      [xcap, wcap, nx, nw, nb, B, C, H, W, kh, kw, cy, cx, reflect](const Tensor& g) {
        Tensor gx = nx->requires_grad ? Tensor::zeros({B, C, H, W}) : Tensor();
        Tensor gw = nw->requires_grad ? Tensor::zeros({C, static_cast<int64_t>(kh),
                                                       static_cast<int64_t>(kw)})
                                      : Tensor();
        for (int64_t i = 0; i < B; ++i) {
          for (int64_t c = 0; c < C; ++c) {
            const Scalar* src = xcap.data() + (i * C + c) * H * W;
            const Scalar* K = wcap.data() + c * kh * kw;
            const Scalar* grow0 = g.data() + (i * C + c) * H * W;
            Scalar* gsrc = nx->requires_grad ? gx.data() + (i * C + c) * H * W : nullptr;
            Scalar* gk = nw->requires_grad ? gw.data() + c * kh * kw : nullptr;
            for (int ky = 0; ky < kh; ++ky) {
              for (int kx = 0; kx < kw; ++kx) {
                const Scalar wk = K[ky * kw + kx];
                Scalar acc = 0.0;
                for (int64_t oy = 0; oy < H; ++oy) {
                  int64_t iy = oy + ky - cy;
                  if (iy < 0 || iy >= H) {
                    if (!reflect) continue;
                    iy = reflect_index(iy, H);
                  }
                  const Scalar* srow = src + iy * W;
                  Scalar* gsr = gsrc ? gsrc + iy * W : nullptr;
                  const Scalar* grow = grow0 + oy * W;
                  for (int64_t ox = 0; ox < W; ++ox) {
                    int64_t ix = ox + kx - cx;
                    if (ix < 0 || ix >= W) {
                      if (!reflect) continue;
                      ix = reflect_index(ix, W);
                    }
                    acc += grow[ox] * srow[ix];
                    if (gsr) gsr[ix] += wk * grow[ox];
                  }
                }
                if (gk) gk[ky * kw + kx] += acc;
              }
            }
          }
        }
        if (nx->requires_grad) accumulate_grad(*nx, gx);
        if (nw->requires_grad) accumulate_grad(*nw, gw);
        if (nb && nb->requires_grad) {
          Tensor gb = Tensor::zeros({C});
          for (int64_t i = 0; i < B; ++i) {
            for (int64_t c = 0; c < C; ++c) {
              const Scalar* p = g.data() + (i * C + c) * H * W;
              Scalar acc = 0.0;
              for (int64_t j = 0; j < H * W; ++j) acc += p[j];
              gb[c] += acc;
            }
          }
          accumulate_grad(*nb, gb);
        }
      });
}

Var blur2d_fixed(const Var& x, const Tensor& kernel) {
  const Tensor& xv = x.val();
  check_shape(xv.rank() == 4, "blur2d_fixed: input must be rank 4");
  check_shape(kernel.rank() == 2, "blur2d_fixed: kernel must be rank 2");
  const int kh = static_cast<int>(kernel.dim(0));
  const int kw = static_cast<int>(kernel.dim(1));
  check_param(kh % 2 == 1 && kw % 2 == 1, "blur2d_fixed: kernel must be odd-sized");
  const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  check_param(kh / 2 < H && kw / 2 < W, "blur2d_fixed: kernel too large for input");
  const int cy = kh / 2, cx = kw / 2;
  Tensor out = Tensor::zeros(xv.shape());
  const Scalar* K = kernel.data();
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const Scalar* src = xv.data() + bc * H * W;
    Scalar* dst = out.data() + bc * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Scalar wk = K[ky * kw + kx];
        if (wk == 0.0) continue;
        for (int64_t oy = 0; oy < H; ++oy) {
          const int64_t iy = reflect_index(oy + ky - cy, H);
          const Scalar* srow = src + iy * W;
          Scalar* drow = dst + oy * W;
          for (int64_t ox = 0; ox < W; ++ox) {
            drow[ox] += wk * srow[reflect_index(ox + kx - cx, W)];
          }
        }
      }
    }
  }
  NodePtr nx = x.node();
  Tensor kcap = kernel;
  return make_op(std::move(out), {nx}, [nx, kcap, B, C, H, W, kh, kw, cy, cx](const Tensor& g) {
    if (!nx->requires_grad) return;
    Tensor gx = Tensor::zeros({B, C, H, W});
    const Scalar* K = kcap.data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const Scalar* gsrc = g.data() + bc * H * W;
      Scalar* gdst = gx.data() + bc * H * W;
      for (int ky = 0; ky < kh; ++ky) {
        for (int kx = 0; kx < kw; ++kx) {
          const Scalar wk = K[ky * kw + kx];
          if (wk == 0.0) continue;
          for (int64_t oy = 0; oy < H; ++oy) {
            const int64_t iy = reflect_index(oy + ky - cy, H);
            Scalar* drow = gdst + iy * W;
            const Scalar* grow = gsrc + oy * W;
            for (int64_t ox = 0; ox < W; ++ox) {
              drow[reflect_index(ox + kx - cx, W)] += wk * grow[ox];
            }
          }
        }
      }
    }
    accumulate_grad(*nx, gx);
  });
}

Var avg_pool2(const Var& x) {
  const Tensor& xv = x.val();
  check_shape(xv.rank() == 4, "avg_pool2: input must be rank 4");
  const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  check_shape(H % 2 == 0 && W % 2 == 0, "avg_pool2: spatial dims must be even");
  const int64_t Ho = H / 2, Wo = W / 2;
  Tensor out = Tensor::empty({B, C, Ho, Wo});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const Scalar* src = xv.data() + bc * H * W;
    Scalar* dst = out.data() + bc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy) {
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const Scalar* p = src + 2 * oy * W + 2 * ox;
        dst[oy * Wo + ox] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
    }
  }
  NodePtr nx = x.node();
  return make_op(std::move(out), {nx}, [nx, B, C, H, W, Ho, Wo](const Tensor& g) {
    if (!nx->requires_grad) return;
    Tensor gx = Tensor::empty({B, C, H, W});
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const Scalar* gs = g.data() + bc * Ho * Wo;
      Scalar* gd = gx.data() + bc * H * W;
      for (int64_t oy = 0; oy < Ho; ++oy) {
        for (int64_t ox = 0; ox < Wo; ++ox) {
          const Scalar v = 0.25 * gs[oy * Wo + ox];
          Scalar* p = gd + 2 * oy * W + 2 * ox;
          p[0] = v;
          p[1] = v;
          p[W] = v;
          p[W + 1] = v;
        }
      }
    }
    accumulate_grad(*nx, gx);
  });
}

Var upsample_nearest2(const Var& x) {
  const Tensor& xv = x.val();
  check_shape(xv.rank() == 4, "upsample_nearest2: input must be rank 4");
  const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out = Tensor::empty({B, C, 2 * H, 2 * W});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const Scalar* src = xv.data() + bc * H * W;
    Scalar* dst = out.data() + bc * 4 * H * W;
    for (int64_t y = 0; y < H; ++y) {
      for (int64_t xq = 0; xq < W; ++xq) {
        const Scalar v = src[y * W + xq];
        Scalar* p = dst + 2 * y * 2 * W + 2 * xq;
        p[0] = v;
        p[1] = v;
        p[2 * W] = v;
        p[2 * W + 1] = v;
      }
    }
  }
  NodePtr nx = x.node();
  return make_op(std::move(out), {nx}, [nx, B, C, H, W](const Tensor& g) {
    if (!nx->requires_grad) return;
    Tensor gx = Tensor::empty({B, C, H, W});
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const Scalar* gs = g.data() + bc * 4 * H * W;
      Scalar* gd = gx.data() + bc * H * W;
      for (int64_t y = 0; y < H; ++y) {
        for (int64_t xq = 0; xq < W; ++xq) {
          const Scalar* p = gs + 2 * y * 2 * W + 2 * xq;
          gd[y * W + xq] = p[0] + p[1] + p[2 * W] + p[2 * W + 1];
        }
      }
    }
    accumulate_grad(*nx, gx);
  });
}

Var spatial_mean(const Var& x) {
  const Tensor& xv = x.val();
  check_shape(xv.rank() == 4, "spatial_mean: input must be rank 4");
  const int64_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  Tensor out = Tensor::empty({B, C});
  const Scalar inv = 1.0 / static_cast<Scalar>(HW);
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const Scalar* p = xv.data() + bc * HW;
    Scalar acc = 0.0;
    for (int64_t j = 0; j < HW; ++j) acc += p[j];
    out[bc] = acc * inv;
  }
  NodePtr nx = x.node();
  Shape xshape = xv.shape();
  return make_op(std::move(out), {nx}, [nx, xshape, B, C, HW, inv](const Tensor& g) {
    if (!nx->requires_grad) return;
    Tensor gx = Tensor::empty(xshape);
    for (int64_t bc = 0; bc < B * C; ++bc) {
      const Scalar v = g[bc] * inv;
      Scalar* p = gx.data() + bc * HW;
      for (int64_t j = 0; j < HW; ++j) p[j] = v;
    }
    accumulate_grad(*nx, gx);
  });
}

Var unfold_k(const Var& x, int k) {
  const Tensor& xv = x.val();
  check_shape(xv.rank() == 4, "unfold_k: input must be rank 4");
  check_param(k >= 1 && k % 2 == 1, "unfold_k: k must be odd and positive");
  const int64_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  check_param(k / 2 < H && k / 2 < W, "unfold_k: k too large for input");
  const int c0 = k / 2;
  Tensor out = Tensor::empty({B, C, static_cast<int64_t>(k) * k, H * W});
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t c = 0; c < C; ++c) {
      const Scalar* src = xv.data() + (b * C + c) * H * W;
      Scalar* base = out.data() + (b * C + c) * k * k * H * W;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          Scalar* dst = base + (ky * k + kx) * H * W;
          for (int64_t oy = 0; oy < H; ++oy) {
            const int64_t iy = reflect_index(oy + ky - c0, H);
            const Scalar* srow = src + iy * W;
            Scalar* drow = dst + oy * W;
            for (int64_t ox = 0; ox < W; ++ox) {
              drow[ox] = srow[reflect_index(ox + kx - c0, W)];
            }
          }
        }
      }
    }
  }
  NodePtr nx = x.node();
  return make_op(std::move(out), {nx}, [nx, B, C, H, W, k, c0](const Tensor& g) {
    if (!nx->requires_grad) return;
    Tensor gx = Tensor::zeros({B, C, H, W});
    for (int64_t b = 0; b < B; ++b) {
      for (int64_t c = 0; c < C; ++c) {
        Scalar* dst = gx.data() + (b * C + c) * H * W;
        const Scalar* base = g.data() + (b * C + c) * k * k * H * W;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const Scalar* grow0 = base + (ky * k + kx) * H * W;
            for (int64_t oy = 0; oy < H; ++oy) {
              const int64_t iy = reflect_index(oy + ky - c0, H);
              Scalar* drow = dst + iy * W;
              const Scalar* grow = grow0 + oy * W;
              for (int64_t ox = 0; ox < W; ++ox) {
                drow[reflect_index(ox + kx - c0, W)] += grow[ox];
              }
            }
          }
        }
      }
    }
    accumulate_grad(*nx, gx);
  });
}

std::vector<int64_t> topk_lastdim(const Tensor& scores, int64_t k) {
  const int64_t N = scores.dim(static_cast<int>(scores.rank()) - 1);
  const int64_t rows = scores.numel() / N;
  check_param(k >= 1 && k <= N, "topk_lastdim: k out of range");
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(rows * k));
  std::vector<int64_t> ord(static_cast<size_t>(N));
  for (int64_t r = 0; r < rows; ++r) {
    const Scalar* row = scores.data() + r * N;
    std::iota(ord.begin(), ord.end(), 0);
    std::sort(ord.begin(), ord.end(), [row](int64_t i, int64_t j) {
      if (row[i] != row[j]) return row[i] > row[j];
      return i < j;  // ties pick the lower index
    });
    std::vector<int64_t> picks(ord.begin(), ord.begin() + k);
    std::sort(picks.begin(), picks.end());
    out.insert(out.end(), picks.begin(), picks.end());
  }
  return out;
}

Scalar sse(const Tensor& a, const Tensor& b) {
  check_shape(a.shape() == b.shape(), "sse: shape mismatch");
  Scalar acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const Scalar d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace cgir
