#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cgir/wavelet.hpp"
#include "gradcheck.hpp"

using namespace cgir;
using cgir::testing::check_near;
using cgir::testing::gradcheck;
using cgir::testing::gradcheck_sum;
using cgir::testing::rand_tensor;

TEST_CASE("single 2x2 block decomposes to known coefficients") {
  // Orthonormal scaling: each coefficient is (sum of +/- pixels) / 2.
  Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  WaveletSubbands s = dwt2(Var(x));
  CHECK(s.ll.val()[0] == doctest::Approx(5.0));
  CHECK(s.hl.val()[0] == doctest::Approx(-1.0));
  CHECK(s.lh.val()[0] == doctest::Approx(-2.0));
  CHECK(s.hh.val()[0] == doctest::Approx(0.0));

  Var back = idwt2(s);
  check_near(back.val(), x, 1e-12, "2x2 reconstruction");
}

TEST_CASE("analysis/synthesis roundtrip") {
  Rng rng(101);
  Tensor x = rand_tensor({2, 3, 8, 6}, rng);
  Var xr = idwt2(dwt2(Var(x)));
  check_near(xr.val(), x, 1e-6, "roundtrip");

  WaveletSubbands s = dwt2(Var(x));
  Var again = idwt2(dwt2(idwt2(s)));
  check_near(again.val(), idwt2(s).val(), 1e-6, "double roundtrip");
}

TEST_CASE("orthonormality preserves energy") {
  Rng rng(103);
  Tensor x = rand_tensor({1, 2, 8, 8}, rng, -2.0, 2.0);
  WaveletSubbands s = dwt2(Var(x));
  Scalar ex = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) ex += x[i] * x[i];
  Scalar ec = 0.0;
  for (const Var* b : {&s.ll, &s.hl, &s.lh, &s.hh})
    for (int64_t i = 0; i < b->numel(); ++i) ec += b->val()[i] * b->val()[i];
  CHECK(std::abs(ex - ec) < 1e-5);
}

TEST_CASE("transform is linear") {
  Rng rng(107);
  Tensor a = rand_tensor({1, 1, 6, 4}, rng);
  Tensor b = rand_tensor({1, 1, 6, 4}, rng);
  const Scalar ca = 1.7, cb = -0.6;
  Tensor mix = Tensor::empty(a.shape());
  for (int64_t i = 0; i < mix.numel(); ++i) mix[i] = ca * a[i] + cb * b[i];

  WaveletSubbands sm = dwt2(Var(mix));
  WaveletSubbands sa = dwt2(Var(a));
  WaveletSubbands sb = dwt2(Var(b));
  Tensor want = Tensor::empty(sm.ll.shape());
  const Var* ms[] = {&sm.ll, &sm.hl, &sm.lh, &sm.hh};
  const Var* as[] = {&sa.ll, &sa.hl, &sa.lh, &sa.hh};
  const Var* bs[] = {&sb.ll, &sb.hl, &sb.lh, &sb.hh};
  for (int k = 0; k < 4; ++k) {
    for (int64_t i = 0; i < want.numel(); ++i)
      want[i] = ca * as[k]->val()[i] + cb * bs[k]->val()[i];
    check_near(ms[k]->val(), want, 1e-6, "linearity");
  }
}

TEST_CASE("analysis adjoint equals synthesis") {
  // <dwt2(x), y> == <x, idwt2(y)> for arbitrary subband stacks y; this is
  // what makes each transform's backward pass the other transform.
  Rng rng(109);
  Tensor x = rand_tensor({1, 1, 6, 6}, rng);
  Tensor yll = rand_tensor({1, 1, 3, 3}, rng);
  Tensor yhl = rand_tensor({1, 1, 3, 3}, rng);
  Tensor ylh = rand_tensor({1, 1, 3, 3}, rng);
  Tensor yhh = rand_tensor({1, 1, 3, 3}, rng);

  WaveletSubbands s = dwt2(Var(x));
  Scalar lhs = 0.0;
  const Var* bands[] = {&s.ll, &s.hl, &s.lh, &s.hh};
  const Tensor* ys[] = {&yll, &yhl, &ylh, &yhh};
  for (int k = 0; k < 4; ++k)
    for (int64_t i = 0; i < yll.numel(); ++i)
      lhs += bands[k]->val()[i] * (*ys[k])[i];

  Var synth = idwt2({Var(yll), Var(yhl), Var(ylh), Var(yhh)});
  Scalar rhs = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) rhs += x[i] * synth.val()[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("gradients flow through both transforms") {
  Rng rng(113);
  gradcheck_sum(
      [](std::vector<Var>& v) {
        WaveletSubbands s = dwt2(v[0]);
        // Touch every subband so each output node's backward runs.
        return add(add(square(s.ll), square(s.hl)), add(square(s.lh), square(s.hh)));
      },
      {rand_tensor({1, 2, 4, 4}, rng)}, 1e-5, 1e-4);

  gradcheck_sum(
      [](std::vector<Var>& v) {
        return square(idwt2({v[0], v[1], v[2], v[3]}));
      },
      {rand_tensor({1, 1, 2, 2}, rng), rand_tensor({1, 1, 2, 2}, rng),
       rand_tensor({1, 1, 2, 2}, rng), rand_tensor({1, 1, 2, 2}, rng)},
      1e-5, 1e-4);
}

TEST_CASE("odd spatial sizes are rejected") {
  CHECK_THROWS_AS(dwt2(Var(Tensor::zeros({1, 1, 5, 4}))), ShapeError);
  CHECK_THROWS_AS(dwt2(Var(Tensor::zeros({1, 1, 4, 7}))), ShapeError);
  CHECK_THROWS_AS(dwt2(Var(Tensor::zeros({4, 4}))), ShapeError);
}
