#include "cgir/wavelet.hpp"

namespace cgir {

namespace {

void check_even(const Tensor& x) {
  check_shape(x.rank() == 4, "dwt2: input must be rank 4");
  check_shape(x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
              "dwt2: spatial dims must be even, got " + shape_str(x.shape()));
}

}  // namespace

void dwt2_kernel(const Tensor& x, Tensor& ll, Tensor& hl, Tensor& lh, Tensor& hh) {
  check_even(x);
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Hs = H / 2, Ws = W / 2;
  ll = Tensor::empty({B, C, Hs, Ws});
  hl = Tensor::empty({B, C, Hs, Ws});
  lh = Tensor::empty({B, C, Hs, Ws});
  hh = Tensor::empty({B, C, Hs, Ws});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    const Scalar* src = x.data() + bc * H * W;
    Scalar* pll = ll.data() + bc * Hs * Ws;
    Scalar* phl = hl.data() + bc * Hs * Ws;
    Scalar* plh = lh.data() + bc * Hs * Ws;
    Scalar* phh = hh.data() + bc * Hs * Ws;
    for (int64_t y = 0; y < Hs; ++y) {
      const Scalar* r0 = src + 2 * y * W;
      const Scalar* r1 = r0 + W;
      for (int64_t xq = 0; xq < Ws; ++xq) {
        const Scalar a = r0[2 * xq], b = r0[2 * xq + 1];
        const Scalar c = r1[2 * xq], d = r1[2 * xq + 1];
        const int64_t o = y * Ws + xq;
        pll[o] = 0.5 * (a + b + c + d);
        phl[o] = 0.5 * (a - b + c - d);
        plh[o] = 0.5 * (a + b - c - d);
        phh[o] = 0.5 * (a - b - c + d);
      }
    }
  }
}

Tensor idwt2_kernel(const Tensor& ll, const Tensor& hl, const Tensor& lh,
                    const Tensor& hh) {
  check_shape(ll.rank() == 4, "idwt2: subbands must be rank 4");
  check_shape(ll.shape() == hl.shape() && ll.shape() == lh.shape() &&
                  ll.shape() == hh.shape(),
              "idwt2: subband shapes differ");
  const int64_t B = ll.dim(0), C = ll.dim(1), Hs = ll.dim(2), Ws = ll.dim(3);
  const int64_t H = 2 * Hs, W = 2 * Ws;
  Tensor x = Tensor::empty({B, C, H, W});
  for (int64_t bc = 0; bc < B * C; ++bc) {
    Scalar* dst = x.data() + bc * H * W;
    const Scalar* pll = ll.data() + bc * Hs * Ws;
    const Scalar* phl = hl.data() + bc * Hs * Ws;
    const Scalar* plh = lh.data() + bc * Hs * Ws;
    const Scalar* phh = hh.data() + bc * Hs * Ws;
    for (int64_t y = 0; y < Hs; ++y) {
      Scalar* r0 = dst + 2 * y * W;
      Scalar* r1 = r0 + W;
      for (int64_t xq = 0; xq < Ws; ++xq) {
        const int64_t o = y * Ws + xq;
        const Scalar l = pll[o], h1 = phl[o], h2 = plh[o], h3 = phh[o];
        r0[2 * xq] = 0.5 * (l + h1 + h2 + h3);
        r0[2 * xq + 1] = 0.5 * (l - h1 + h2 - h3);
        r1[2 * xq] = 0.5 * (l + h1 - h2 - h3);
        r1[2 * xq + 1] = 0.5 * (l - h1 - h2 + h3);
      }
    }
  }
  return x;
}

WaveletSubbands dwt2(const Var& x) {
  Tensor ll, hl, lh, hh;
  dwt2_kernel(x.val(), ll, hl, lh, hh);
  NodePtr nx = x.node();

  // Four outputs of one linear map; each output node routes its gradient back
  // through the inverse transform with the other three bands zeroed.
  auto band_op = [&](Tensor value, int band) {
    Shape sub = value.shape();
    return make_op(std::move(value), {nx}, [nx, sub, band](const Tensor& g) {
      if (!nx->requires_grad) return;
      Tensor z = Tensor::zeros(sub);
      const Tensor& b0 = band == 0 ? g : z;
      const Tensor& b1 = band == 1 ? g : z;
      const Tensor& b2 = band == 2 ? g : z;
      const Tensor& b3 = band == 3 ? g : z;
      accumulate_grad(*nx, idwt2_kernel(b0, b1, b2, b3));
    });
  };
  WaveletSubbands s;
  s.ll = band_op(std::move(ll), 0);
  s.hl = band_op(std::move(hl), 1);
  s.lh = band_op(std::move(lh), 2);
  s.hh = band_op(std::move(hh), 3);
  return s;
}

Var idwt2(const WaveletSubbands& s) {
  Tensor x = idwt2_kernel(s.ll.val(), s.hl.val(), s.lh.val(), s.hh.val());
  NodePtr nll = s.ll.node(), nhl = s.hl.node(), nlh = s.lh.node(), nhh = s.hh.node();
  return make_op(std::move(x), {nll, nhl, nlh, nhh}, [nll, nhl, nlh, nhh](const Tensor& g) {
    Tensor gll, ghl, glh, ghh;
    dwt2_kernel(g, gll, ghl, glh, ghh);
    if (nll->requires_grad) accumulate_grad(*nll, gll);
    if (nhl->requires_grad) accumulate_grad(*nhl, ghl);
    if (nlh->requires_grad) accumulate_grad(*nlh, glh);
    if (nhh->requires_grad) accumulate_grad(*nhh, ghh);
  });
}

}  // namespace cgir
