#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cgir/degrade.hpp"
#include "cgir/image.hpp"
#include "cgir/metrics.hpp"
#include "gradcheck.hpp"

using namespace cgir;
using namespace cgir::testing;

TEST_CASE("psnr closed form, sentinel, and ordering") {
  Tensor a = Tensor::full({3, 16, 16}, 0.5);
  Tensor b = Tensor::full({3, 16, 16}, 0.5 + 10.0 / 255.0);
  // Uniform |diff| of 10/255: psnr = 20*log10(25.5).
  CHECK(std::abs(psnr(a, b) - 20.0 * std::log10(25.5)) < 1e-9);
  CHECK(std::isinf(psnr(a, a)));

  Tensor clean = procedural_clean(0, 32, 32);
  Scalar last = std::numeric_limits<Scalar>::infinity();
  for (Scalar sigma : {5.0, 15.0, 35.0}) {
    Scalar p = psnr(clean, add_gaussian_noise(clean, sigma, 3).degraded);
    CHECK(p < last);
    last = p;
  }

  CHECK_THROWS_AS(psnr(a, Tensor::full({3, 16, 8}, 0.5)), ParameterError);
}

TEST_CASE("ssim equals one on identical inputs and degrades with noise") {
  Tensor img = procedural_clean(1, 32, 48);
  CHECK(ssim_value(img, img) == 1.0);

  Tensor mild = add_gaussian_noise(img, 10, 5).degraded;
  Tensor harsh = add_gaussian_noise(img, 50, 5).degraded;
  Scalar s_mild = ssim_value(img, mild);
  Scalar s_harsh = ssim_value(img, harsh);
  CHECK(s_mild < 1.0);
  CHECK(s_harsh < s_mild);
  CHECK(s_harsh > 0.0);
}

TEST_CASE("ms_ssim fixed points, symmetry, and bounds") {
  Tensor img = procedural_clean(2, 64, 48);
  CHECK(ms_ssim_value(img, img) == 1.0);

  Tensor zeros = Tensor::zeros({3, 32, 32});
  Tensor ones = Tensor::full({3, 32, 32}, 1.0);
  Scalar worst = ms_ssim_value(zeros, ones);
  CHECK(worst >= 0.0);
  CHECK(worst < 0.05);

  Tensor noisy = add_gaussian_noise(img, 35, 9).degraded;
  Scalar ab = ms_ssim_value(img, noisy);
  Scalar ba = ms_ssim_value(noisy, img);
  CHECK(std::abs(ab - ba) < 1e-7);
  CHECK(ab > 0.0);
  CHECK(ab < 1.0);

  Tensor mild = add_gaussian_noise(img, 10, 9).degraded;
  CHECK(ms_ssim_value(img, mild) > ab);

  // Three dyadic scales need at least 32 pixels on the short side.
  Tensor small = Tensor::full({3, 16, 64}, 0.5);
  CHECK_THROWS_AS(ms_ssim_value(small, small), ParameterError);
}

TEST_CASE("ms_ssim gradient matches finite differences") {
  Rng rng(0xab12);
  std::vector<Tensor> inputs = {rand_tensor({1, 1, 32, 32}, rng, 0.2, 0.8),
                                rand_tensor({1, 1, 32, 32}, rng, 0.2, 0.8)};
  gradcheck([](std::vector<Var>& v) { return ms_ssim(v[0], v[1]); }, inputs, 1e-5, 1e-3);
}

TEST_CASE("restoration loss composes its three terms") {
  Tensor img = procedural_clean(3, 32, 32);
  Tensor t4 = img.reshaped({1, 3, 32, 32});
  Var target(t4);

  // Perfect prediction, no penalties: exactly zero.
  Var pred_eq(t4.clone(), true);
  Var zero_loss = restoration_loss(pred_eq, target, 0.4, 0.01, {});
  CHECK(zero_loss.val()[0] == 0.0);

  // The l1+ms_ssim part is stationary at the optimum.
  backward(zero_loss);
  CHECK(pred_eq.grad().numel() == t4.numel());
  CHECK(max_abs(pred_eq.grad()) < 1e-9);

  // lambda = 0 reduces to plain mean absolute error.
  Tensor shifted = t4.clone();
  for (int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 0.1;
  Var pred_off(shifted);
  Var l1_only = restoration_loss(pred_off, target, 0.0, 0.0, {});
  CHECK(std::abs(l1_only.val()[0] - 0.1) < 1e-12);

  // Orthogonality penalties enter scaled by lambda_orth.
  std::vector<Var> pens = {Var::scalar(2.0), Var::scalar(3.0)};
  Var with_pen = restoration_loss(pred_eq, target, 0.4, 0.01, pens);
  CHECK(std::abs(with_pen.val()[0] - 0.05) < 1e-12);

  // Full loss exceeds the pure l1 term whenever structure is lost.
  Tensor noisy = add_gaussian_noise(img, 35, 2).degraded.reshaped({1, 3, 32, 32});
  Var pred_noisy(noisy);
  Scalar full = restoration_loss(pred_noisy, target, 0.4, 0.0, {}).val()[0];
  Scalar bare = restoration_loss(pred_noisy, target, 0.0, 0.0, {}).val()[0];
  CHECK(full > bare);

  CHECK_THROWS_AS(restoration_loss(pred_eq, target, -0.1, 0.0, {}), ParameterError);
}
