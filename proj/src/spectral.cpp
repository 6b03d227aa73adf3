#include "cgir/spectral.hpp"

#include <fftw3.h>

#include <array>
#include <cmath>
#include <map>

namespace cgir {

namespace {

// One cached FFTW plan per (H, W, sign) with its own in/out buffers. Plans
// are built with FFTW_ESTIMATE so planning never depends on buffer contents
// and repeated runs stay deterministic. Data is copied through the cached
// buffers, which keeps alignment guarantees out of the picture.
struct PlanEntry {
  fftw_plan plan = nullptr;
  fftw_complex* in = nullptr;
  fftw_complex* out = nullptr;
};

PlanEntry& plan_for(int h, int w, int sign) {
  static std::map<std::array<int, 3>, PlanEntry> cache;
  auto key = std::array<int, 3>{h, w, sign};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  PlanEntry e;
  e.in = fftw_alloc_complex(static_cast<size_t>(h) * w);
  e.out = fftw_alloc_complex(static_cast<size_t>(h) * w);
  e.plan = fftw_plan_dft_2d(h, w, e.in, e.out, sign, FFTW_ESTIMATE);
  if (!e.plan) raise<NumericalError>("fftw plan creation failed for ", h, "x", w);
  return cache.emplace(key, e).first->second;
}

// Transforms one H*W slab. Either input pointer may be null (treated as 0);
// either output pointer may be null (component discarded). Output is the raw
// unnormalized FFTW result for the given sign.
void dft_slab(const Scalar* re, const Scalar* im, Scalar* out_re,
              Scalar* out_im, int h, int w, int sign) {
  PlanEntry& e = plan_for(h, w, sign);
  const int64_t n = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < n; ++i) {
    e.in[i][0] = re ? re[i] : 0.0;
    e.in[i][1] = im ? im[i] : 0.0;
  }
  fftw_execute(e.plan);
  for (int64_t i = 0; i < n; ++i) {
    if (out_re) out_re[i] = e.out[i][0];
    if (out_im) out_im[i] = e.out[i][1];
  }
}

struct MapDims {
  int64_t b, c, h, w, hw;
};

MapDims map_dims(const Var& x, const char* who) {
  check_shape(x.node()->value.rank() == 4, who, ": expected (B,C,H,W), got ",
              shape_str(x.shape()));
  MapDims d;
  d.b = x.shape()[0];
  d.c = x.shape()[1];
  d.h = x.shape()[2];
  d.w = x.shape()[3];
  d.hw = d.h * d.w;
  return d;
}

// Applies dft_slab to every (b,c) slab of a batched map pair.
void dft_batched(const Tensor* re, const Tensor* im, Tensor* out_re,
                 Tensor* out_im, const MapDims& d, int sign) {
  for (int64_t s = 0; s < d.b * d.c; ++s) {
    const int64_t off = s * d.hw;
    dft_slab(re ? re->data() + off : nullptr, im ? im->data() + off : nullptr,
             out_re ? out_re->data() + off : nullptr,
             out_im ? out_im->data() + off : nullptr, static_cast<int>(d.h),
             static_cast<int>(d.w), sign);
  }
}

constexpr Scalar kMagFloor = 1e-12;

}  // namespace

ComplexVar fft2(const Var& x) {
  MapDims d = map_dims(x, "fft2");
  Tensor vre = Tensor::empty(x.shape()), vim = Tensor::empty(x.shape());
  dft_batched(&x.node()->value, nullptr, &vre, &vim, d, FFTW_FORWARD);
  NodePtr nx = x.node();

  // The forward DFT of a real map, split into real-linear components. The
  // adjoint of the component picked by `slot` is the matching component of
  // the unnormalized backward transform.
  auto component = [&](Tensor value, int slot) {
    return make_op(std::move(value), {nx}, [nx, d, slot](const Tensor& g) {
      const Tensor* src_re = slot == 0 ? &g : nullptr;
      const Tensor* src_im = slot == 1 ? &g : nullptr;
      Tensor gx = Tensor::empty(g.shape());
      dft_batched(src_re, src_im, &gx, nullptr, d, FFTW_BACKWARD);
      accumulate_grad(*nx, gx);
    });
  };
  return {component(std::move(vre), 0), component(std::move(vim), 1)};
}

ComplexVar ifft2(const ComplexVar& z) {
  MapDims d = map_dims(z.re, "ifft2");
  check_shape(z.re.shape() == z.im.shape(), "ifft2: re/im shapes differ");
  Tensor vre = Tensor::empty(z.re.shape()), vim = Tensor::empty(z.re.shape());
  dft_batched(&z.re.node()->value, &z.im.node()->value, &vre, &vim, d,
              FFTW_BACKWARD);
  const Scalar inv = 1.0 / static_cast<Scalar>(d.hw);
  for (int64_t i = 0; i < vre.numel(); ++i) {
    vre.data()[i] *= inv;
    vim.data()[i] *= inv;
  }
  NodePtr nre = z.re.node(), nim = z.im.node();

  // out = conj(F) z / (HW); the adjoint of either output component is the
  // forward transform of the gradient placed in that component's slot,
  // scaled by the same 1/(HW).
  auto component = [&](Tensor value, int slot) {
    return make_op(std::move(value), {nre, nim},
                   [nre, nim, d, inv, slot](const Tensor& g) {
                     const Tensor* src_re = slot == 0 ? &g : nullptr;
                     const Tensor* src_im = slot == 1 ? &g : nullptr;
                     Tensor gre = Tensor::empty(g.shape()), gim = Tensor::empty(g.shape());
                     dft_batched(src_re, src_im, &gre, &gim, d, FFTW_FORWARD);
                     for (int64_t i = 0; i < gre.numel(); ++i) {
                       gre.data()[i] *= inv;
                       gim.data()[i] *= inv;
                     }
                     accumulate_grad(*nre, gre);
                     accumulate_grad(*nim, gim);
                   });
  };
  return {component(std::move(vre), 0), component(std::move(vim), 1)};
}

SpectrumVar amp_phase(const Var& x) {
  ComplexVar z = fft2(x);
  const Tensor re = z.re.val();
  const Tensor im = z.im.val();
  NodePtr nre = z.re.node(), nim = z.im.node();

  Tensor amp = Tensor::empty(re.shape());
  for (int64_t i = 0; i < re.numel(); ++i)
    amp.data()[i] = std::hypot(re.data()[i], im.data()[i]);
  Var a = make_op(std::move(amp), {nre, nim},
                  [nre, nim, re, im](const Tensor& g) {
                    Tensor gre = Tensor::empty(g.shape()), gim = Tensor::empty(g.shape());
                    for (int64_t i = 0; i < g.numel(); ++i) {
                      const Scalar m = std::max(
                          std::hypot(re.data()[i], im.data()[i]), kMagFloor);
                      gre.data()[i] = g.data()[i] * re.data()[i] / m;
                      gim.data()[i] = g.data()[i] * im.data()[i] / m;
                    }
                    accumulate_grad(*nre, gre);
                    accumulate_grad(*nim, gim);
                  });

  Tensor ph = Tensor::empty(re.shape());
  for (int64_t i = 0; i < re.numel(); ++i)
    ph.data()[i] = std::atan2(im.data()[i], re.data()[i]);
  Var p = make_op(std::move(ph), {nre, nim},
                  [nre, nim, re, im](const Tensor& g) {
                    Tensor gre = Tensor::empty(g.shape()), gim = Tensor::empty(g.shape());
                    for (int64_t i = 0; i < g.numel(); ++i) {
                      const Scalar r = re.data()[i], q = im.data()[i];
                      const Scalar m2 = std::max(r * r + q * q, kMagFloor);
                      gre.data()[i] = -g.data()[i] * q / m2;
                      gim.data()[i] = g.data()[i] * r / m2;
                    }
                    accumulate_grad(*nre, gre);
                    accumulate_grad(*nim, gim);
                  });
  return {a, p};
}

ComplexVar polar(const SpectrumVar& s) {
  check_shape(s.amplitude.shape() == s.phase.shape(),
              "polar: amplitude/phase shapes differ");
  const Tensor a = s.amplitude.val();
  const Tensor ph = s.phase.val();
  NodePtr namp = s.amplitude.node(), nph = s.phase.node();

  Tensor vre = Tensor::empty(a.shape()), vim = Tensor::empty(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) {
    vre.data()[i] = a.data()[i] * std::cos(ph.data()[i]);
    vim.data()[i] = a.data()[i] * std::sin(ph.data()[i]);
  }

  Var re = make_op(std::move(vre), {namp, nph},
                   [namp, nph, a, ph](const Tensor& g) {
                     Tensor ga = Tensor::empty(g.shape()), gp = Tensor::empty(g.shape());
                     for (int64_t i = 0; i < g.numel(); ++i) {
                       const Scalar c = std::cos(ph.data()[i]);
                       const Scalar sn = std::sin(ph.data()[i]);
                       ga.data()[i] = g.data()[i] * c;
                       gp.data()[i] = -g.data()[i] * a.data()[i] * sn;
                     }
                     accumulate_grad(*namp, ga);
                     accumulate_grad(*nph, gp);
                   });
  Var im = make_op(std::move(vim), {namp, nph},
                   [namp, nph, a, ph](const Tensor& g) {
                     Tensor ga = Tensor::empty(g.shape()), gp = Tensor::empty(g.shape());
                     for (int64_t i = 0; i < g.numel(); ++i) {
                       const Scalar c = std::cos(ph.data()[i]);
                       const Scalar sn = std::sin(ph.data()[i]);
                       ga.data()[i] = g.data()[i] * sn;
                       gp.data()[i] = g.data()[i] * a.data()[i] * c;
                     }
                     accumulate_grad(*namp, ga);
                     accumulate_grad(*nph, gp);
                   });
  return {re, im};
}

namespace {

// out[u,v] = (x[u,v] + sign * x[-u,-v]) / 2 over the last two axes. The map
// is self-adjoint (index reversal is an involution), so the backward pass
// applies the identical transform to the gradient.
Tensor fold_reversed(const Tensor& x, Scalar sign) {
  const auto& s = x.shape();
  const int64_t h = s[2], w = s[3], hw = h * w;
  Tensor out = Tensor::empty(s);
  for (int64_t slab = 0; slab < x.numel() / hw; ++slab) {
    const Scalar* src = x.data() + slab * hw;
    Scalar* dst = out.data() + slab * hw;
    for (int64_t u = 0; u < h; ++u) {
      const int64_t ru = (h - u) % h;
      for (int64_t v = 0; v < w; ++v) {
        const int64_t rv = (w - v) % w;
        dst[u * w + v] = 0.5 * (src[u * w + v] + sign * src[ru * w + rv]);
      }
    }
  }
  return out;
}

Var fold_op(const Var& x, Scalar sign) {
  map_dims(x, "symmetrize");
  NodePtr nx = x.node();
  return make_op(fold_reversed(x.val(), sign), {nx},
                 [nx, sign](const Tensor& g) {
                   accumulate_grad(*nx, fold_reversed(g, sign));
                 });
}

}  // namespace

ComplexVar symmetrize(const ComplexVar& z) {
  return {fold_op(z.re, 1.0), fold_op(z.im, -1.0)};
}

Var wrap_phase(const Var& phi) {
  Tensor out = Tensor::empty(phi.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    Scalar w = std::remainder(phi.val().data()[i], 2.0 * M_PI);
    if (w <= -M_PI) w += 2.0 * M_PI;
    out.data()[i] = w;
  }
  NodePtr nx = phi.node();
  return make_op(std::move(out), {nx}, [nx](const Tensor& g) {
    accumulate_grad(*nx, g);
  });
}

Var recompose(const SpectrumVar& s) {
  ComplexVar out = ifft2(polar(s));
  const Scalar residue = max_abs(out.im.val());
  if (!(residue < 1e-4))
    raise<NumericalError>(
        "recompose: inverse transform is not real (max |Im| = ", residue,
        "); amplitude/phase pair violates conjugate symmetry");
  return out.re;
}

}  // namespace cgir
