#include "cgir/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace cgir {
namespace {

constexpr Scalar kC1 = 0.01 * 0.01;
constexpr Scalar kC2 = 0.03 * 0.03;
constexpr int64_t kWindow = 11;
constexpr Scalar kWindowSigma = 1.5;
constexpr int64_t kScales = 3;

// First three of the canonical five MS-SSIM scale weights, renormalized.
const std::array<Scalar, kScales> kScaleWeights = [] {
  std::array<Scalar, kScales> w{0.0448, 0.2856, 0.3001};
  Scalar total = 0;
  for (Scalar v : w) total += v;
  for (Scalar& v : w) v /= total;
  return w;
}();

Tensor gaussian_window() {
  Tensor k = Tensor::empty({kWindow, kWindow});
  const Scalar c = (kWindow - 1) / Scalar(2);
  Scalar total = 0;
  for (int64_t y = 0; y < kWindow; ++y) {
    for (int64_t x = 0; x < kWindow; ++x) {
      Scalar d2 = (y - c) * (y - c) + (x - c) * (x - c);
      Scalar v = std::exp(-d2 / (2 * kWindowSigma * kWindowSigma));
      k.at({y, x}) = v;
      total += v;
    }
  }
  for (int64_t i = 0; i < k.numel(); ++i) k[i] /= total;
  return k;
}

const Tensor& window() {
  static const Tensor w = gaussian_window();
  return w;
}

void check_pair(const Var& a, const Var& b, const char* who) {
  check_shape(a.val().rank() == 4, who, ": expected (B,C,H,W), got ",
              shape_str(a.val().shape()));
  check_shape(a.val().same_shape(b.val()), who, ": shape mismatch ",
              shape_str(a.val().shape()), " vs ", shape_str(b.val().shape()));
}

struct SsimTerms {
  Var luminance;  // scalar mean of the l map
  Var contrast;   // scalar mean of the cs map
};

SsimTerms ssim_terms(const Var& a, const Var& b) {
  const Tensor& w = window();
  Var mu_a = blur2d_fixed(a, w);
  Var mu_b = blur2d_fixed(b, w);
  Var mu_aa = mul(mu_a, mu_a);
  Var mu_bb = mul(mu_b, mu_b);
  Var mu_ab = mul(mu_a, mu_b);
  Var sigma_aa = sub(blur2d_fixed(mul(a, a), w), mu_aa);
  Var sigma_bb = sub(blur2d_fixed(mul(b, b), w), mu_bb);
  Var sigma_ab = sub(blur2d_fixed(mul(a, b), w), mu_ab);

  Var l_map = div(add_scalar(mul_scalar(mu_ab, 2), kC1),
                  add_scalar(add(mu_aa, mu_bb), kC1));
  Var cs_map = div(add_scalar(mul_scalar(sigma_ab, 2), kC2),
                   add_scalar(add(sigma_aa, sigma_bb), kC2));
  return {mean_all(l_map), mean_all(cs_map)};
}

// x^p for a positive scalar Var, with a floor so anticorrelated inputs
// cannot push the contrast term negative and poison the log.
Var pow_pos(const Var& x, Scalar p) {
  return exp_v(mul_scalar(log_v(clamp_min(x, 1e-6)), p));
}

}  // namespace

Scalar psnr(const Tensor& a, const Tensor& b) {
  check_shape(a.same_shape(b), "psnr: shape mismatch ", shape_str(a.shape()),
              " vs ", shape_str(b.shape()));
  check_param(a.numel() > 0, "psnr: empty input");
  Scalar mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    Scalar d = a[i] - b[i];
    mse += d * d;
  }
  mse /= Scalar(a.numel());
  if (mse == 0) return std::numeric_limits<Scalar>::infinity();
  return -10 * std::log10(mse);
}

Var ssim(const Var& a, const Var& b) {
  check_pair(a, b, "ssim");
  const Tensor& w = window();
  Var mu_a = blur2d_fixed(a, w);
  Var mu_b = blur2d_fixed(b, w);
  Var mu_aa = mul(mu_a, mu_a);
  Var mu_bb = mul(mu_b, mu_b);
  Var mu_ab = mul(mu_a, mu_b);
  Var sigma_aa = sub(blur2d_fixed(mul(a, a), w), mu_aa);
  Var sigma_bb = sub(blur2d_fixed(mul(b, b), w), mu_bb);
  Var sigma_ab = sub(blur2d_fixed(mul(a, b), w), mu_ab);
  Var num = mul(add_scalar(mul_scalar(mu_ab, 2), kC1),
                add_scalar(mul_scalar(sigma_ab, 2), kC2));
  Var den = mul(add_scalar(add(mu_aa, mu_bb), kC1),
                add_scalar(add(sigma_aa, sigma_bb), kC2));
  return mean_all(div(num, den));
}

Scalar ssim_value(const Tensor& a, const Tensor& b) {
  NoGrad ng;
  Tensor aa = a.rank() == 3 ? a.reshaped({1, a.dim(0), a.dim(1), a.dim(2)}) : a;
  Tensor bb = b.rank() == 3 ? b.reshaped({1, b.dim(0), b.dim(1), b.dim(2)}) : b;
  return ssim(Var(aa), Var(bb)).val()[0];
}

Var ms_ssim(const Var& a, const Var& b) {
  check_pair(a, b, "ms_ssim");
  int64_t min_dim = std::min(a.val().dim(2), a.val().dim(3));
  check_param(min_dim >= 32, "ms_ssim: min spatial dim ", min_dim,
              " too small for ", kScales, " scales (need >= 32)");
  Var xa = a;
  Var xb = b;
  Var result = Var::scalar(1);
  for (int64_t s = 0; s < kScales; ++s) {
    SsimTerms t = ssim_terms(xa, xb);
    Var factor = (s == kScales - 1) ? mul(t.luminance, t.contrast) : t.contrast;
    result = mul(result, pow_pos(factor, kScaleWeights[s]));
    if (s != kScales - 1) {
      xa = avg_pool2(xa);
      xb = avg_pool2(xb);
    }
  }
  return result;
}

Scalar ms_ssim_value(const Tensor& a, const Tensor& b) {
  NoGrad ng;
  Tensor aa = a.rank() == 3 ? a.reshaped({1, a.dim(0), a.dim(1), a.dim(2)}) : a;
  Tensor bb = b.rank() == 3 ? b.reshaped({1, b.dim(0), b.dim(1), b.dim(2)}) : b;
  return ms_ssim(Var(aa), Var(bb)).val()[0];
}

Var restoration_loss(const Var& pred, const Var& target, Scalar lambda,
                     Scalar lambda_orth, const std::vector<Var>& orth_penalties) {
  check_pair(pred, target, "restoration_loss");
  check_param(lambda >= 0, "restoration_loss: lambda must be >= 0");
  check_param(lambda_orth >= 0, "restoration_loss: lambda_orth must be >= 0");
  Var loss = mean_all(abs_v(sub(pred, target)));
  if (lambda > 0) {
    Var dissim = add_scalar(neg(ms_ssim(pred, target)), 1);
    loss = add(loss, mul_scalar(dissim, lambda));
  }
  if (lambda_orth > 0 && !orth_penalties.empty()) {
    Var total = orth_penalties[0];
    for (size_t i = 1; i < orth_penalties.size(); ++i) {
      total = add(total, orth_penalties[i]);
    }
    loss = add(loss, mul_scalar(total, lambda_orth));
  }
  return loss;
}

}  // namespace cgir
