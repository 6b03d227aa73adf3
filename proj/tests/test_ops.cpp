#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cgir/ops.hpp"
#include "cgir/rng.hpp"
#include "gradcheck.hpp"

using namespace cgir;
using cgir::testing::check_near;
using cgir::testing::gradcheck;
using cgir::testing::gradcheck_sum;
using cgir::testing::rand_tensor;

namespace {

// Direct convolution written against the definition, independent of the
// im2col/GEMM path under test.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor* b, int stride,
                   int pad, PadMode mode) {
  const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  auto sample = [&](int64_t bi, int64_t c, int64_t y, int64_t xx) -> Scalar {
    if (y < 0 || y >= H || xx < 0 || xx >= W) {
      if (mode == PadMode::Zero) return 0.0;
      if (y < 0) y = -y;
      if (y >= H) y = 2 * (H - 1) - y;
      if (xx < 0) xx = -xx;
      if (xx >= W) xx = 2 * (W - 1) - xx;
    }
    return x.at({bi, c, y, xx});
  };
  Tensor out = Tensor::zeros({B, Co, Ho, Wo});
  for (int64_t bi = 0; bi < B; ++bi)
    for (int64_t co = 0; co < Co; ++co)
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          Scalar acc = b ? (*b)[co] : 0.0;
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t ky = 0; ky < kh; ++ky)
              for (int64_t kx = 0; kx < kw; ++kx)
                acc += w.at({co, ci, ky, kx}) *
                       sample(bi, ci, oy * stride + ky - pad, ox * stride + kx - pad);
          out.at({bi, co, oy, ox}) = acc;
        }
  return out;
}

Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t l = 0; l < k; ++l)
      for (int64_t j = 0; j < n; ++j) c.at({i, j}) += a.at({i, l}) * b.at({l, j});
  return c;
}

Tensor transpose2(const Tensor& a) {
  Tensor t = Tensor::empty({a.dim(1), a.dim(0)});
  for (int64_t i = 0; i < a.dim(0); ++i)
    for (int64_t j = 0; j < a.dim(1); ++j) t.at({j, i}) = a.at({i, j});
  return t;
}

}  // namespace

TEST_CASE("tensor construction, views, deep copies") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6.0);

  Tensor v = t.reshaped({3, -1});
  CHECK(v.shape() == Shape{3, 2});
  v.at({0, 1}) = 42.0;
  CHECK(t.at({0, 1}) == 42.0);  // same buffer

  Tensor c = t.clone();
  c.at({0, 1}) = -1.0;
  CHECK(t.at({0, 1}) == 42.0);  // clone is independent

  CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("rng determinism, serialization, stream statistics") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  // Resuming from serialized state continues the exact stream, including the
  // cached Box-Muller half.
  Rng c(7);
  c.normal();
  std::string s = c.serialize();
  std::vector<Scalar> expect(50);
  for (auto& v : expect) v = c.normal();
  Rng d = Rng::deserialize(s);
  for (Scalar v : expect) CHECK(d.normal() == v);

  Rng e(99);
  double mean = 0.0, m2 = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = e.normal();
    mean += z;
    m2 += z * z;
  }
  mean /= n;
  m2 /= n;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(m2 - 1.0) < 0.05);

  for (int i = 0; i < 100; ++i) {
    const double u = e.uniform(2.0, 5.0);
    CHECK(u >= 2.0);
    CHECK(u < 5.0);
  }

  std::vector<int> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  e.shuffle(perm);
  std::vector<int> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 10; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);

  CHECK_THROWS_AS(e.below(0), ParameterError);
  CHECK_THROWS_AS(Rng::deserialize("bogus"), ParameterError);
}

TEST_CASE("derived seeds separate streams") {
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  CHECK(hash_tag("noise") != hash_tag("haze"));
}

TEST_CASE("autograd chains, reuse accumulation, detach, NoGrad") {
  // f(x) = sum(x * x + 3x): df/dx = 2x + 3 with x reused by two ops.
  Tensor xv = Tensor::from({3}, {1.0, -2.0, 0.5});
  Var x(xv.clone(), true);
  Var y = add(mul(x, x), mul_scalar(x, 3.0));
  backward(sum_all(y));
  for (int64_t i = 0; i < 3; ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.0 * xv[i] + 3.0));

  Var x2(xv.clone(), true);
  Var blocked = mul(detach(x2), x2);  // only the live branch contributes
  backward(sum_all(blocked));
  for (int64_t i = 0; i < 3; ++i) CHECK(x2.grad()[i] == doctest::Approx(xv[i]));

  {
    NoGrad ng;
    Var x3(xv.clone(), true);
    CHECK_FALSE(x3.requires_grad());
    Var z = mul(x3, x3);
    CHECK_FALSE(z.requires_grad());
  }

  Var nonscalar(Tensor::zeros({2, 2}), true);
  CHECK_THROWS_AS(backward(nonscalar), ShapeError);
}

TEST_CASE("broadcasting matches numpy semantics") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3}, {10, 20, 30});
  Var r = add(Var(a), Var(b));
  CHECK(r.shape() == Shape{2, 3});
  CHECK(r.val().at({0, 0}) == 11.0);
  CHECK(r.val().at({1, 2}) == 36.0);

  // (2,1,2) * (3,1) -> (2,3,2)
  Tensor c = Tensor::from({2, 1, 2}, {1, 2, 3, 4});
  Tensor d = Tensor::from({3, 1}, {1, 10, 100});
  Var m = mul(Var(c), Var(d));
  CHECK(m.shape() == Shape{2, 3, 2});
  CHECK(m.val().at({0, 2, 1}) == 200.0);
  CHECK(m.val().at({1, 1, 0}) == 30.0);

  CHECK_THROWS_AS(add(Var(Tensor::zeros({2, 3})), Var(Tensor::zeros({2, 2}))),
                  ShapeError);

  Rng rng(11);
  SUBCASE("gradients reduce over broadcast axes") {
    gradcheck_sum([](std::vector<Var>& v) { return add(v[0], v[1]); },
                  {rand_tensor({2, 3}, rng), rand_tensor({3}, rng)});
    gradcheck_sum([](std::vector<Var>& v) { return mul(v[0], v[1]); },
                  {rand_tensor({2, 1, 2}, rng), rand_tensor({3, 1}, rng)});
    gradcheck_sum([](std::vector<Var>& v) { return div(v[0], v[1]); },
                  {rand_tensor({2, 2}, rng), rand_tensor({2, 2}, rng, 0.5, 2.0)});
    gradcheck_sum([](std::vector<Var>& v) { return sub(v[0], v[1]); },
                  {rand_tensor({4}, rng), rand_tensor({1}, rng)});
  }
}

TEST_CASE("elementwise unary gradients") {
  Rng rng(5);
  // Positive range keeps log/sqrt well-defined.
  Tensor pos = rand_tensor({2, 4}, rng, 0.4, 1.8);
  Tensor any = rand_tensor({2, 4}, rng, -1.5, 1.5);

  gradcheck_sum([](std::vector<Var>& v) { return exp_v(v[0]); }, {any});
  gradcheck_sum([](std::vector<Var>& v) { return log_v(v[0]); }, {pos});
  gradcheck_sum([](std::vector<Var>& v) { return sqrt_v(v[0]); }, {pos});
  gradcheck_sum([](std::vector<Var>& v) { return square(v[0]); }, {any});
  gradcheck_sum([](std::vector<Var>& v) { return sigmoid(v[0]); }, {any});
  gradcheck_sum([](std::vector<Var>& v) { return tanh_v(v[0]); }, {any});
  gradcheck_sum([](std::vector<Var>& v) { return gelu(v[0]); }, {any});
  gradcheck_sum([](std::vector<Var>& v) { return neg(v[0]); }, {any});
  gradcheck_sum([](std::vector<Var>& v) { return add_scalar(v[0], 1.7); }, {any});
  gradcheck_sum([](std::vector<Var>& v) { return mul_scalar(v[0], -2.3); }, {any});
  // Kink points sit away from the sampled values, so FD stays valid.
  gradcheck_sum([](std::vector<Var>& v) { return relu(v[0]); }, {pos});
  gradcheck_sum([](std::vector<Var>& v) { return abs_v(v[0]); }, {pos});
  gradcheck_sum([](std::vector<Var>& v) { return clamp_min(v[0], 0.0); }, {pos});

  CHECK(gelu(Var(Tensor::scalar(0.0))).item() == doctest::Approx(0.0));
  CHECK(gelu(Var(Tensor::scalar(10.0))).item() == doctest::Approx(10.0).epsilon(1e-6));
  CHECK(sigmoid(Var(Tensor::scalar(0.0))).item() == doctest::Approx(0.5));
}

TEST_CASE("reductions over axes") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Var s0 = sum_axis(Var(a), 0);
  CHECK(s0.shape() == Shape{3});
  CHECK(s0.val()[0] == 5.0);
  CHECK(s0.val()[2] == 9.0);

  Var m1 = mean_axis(Var(a), 1);
  CHECK(m1.shape() == Shape{2});
  CHECK(m1.val()[0] == doctest::Approx(2.0));
  CHECK(m1.val()[1] == doctest::Approx(5.0));

  CHECK(sum_all(Var(a)).item() == 21.0);
  CHECK(mean_all(Var(a)).item() == doctest::Approx(3.5));

  Rng rng(17);
  gradcheck_sum([](std::vector<Var>& v) { return sum_axis(v[0], 1); },
                {rand_tensor({2, 3, 2}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return mean_axis(v[0], 0); },
                {rand_tensor({3, 4}, rng)});
  gradcheck([](std::vector<Var>& v) { return mean_all(v[0]); },
            {rand_tensor({2, 5}, rng)});
}

TEST_CASE("reshape, permute, concat, slice") {
  Rng rng(23);
  Tensor a = rand_tensor({2, 3, 4}, rng);

  Var p = permute(Var(a), {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  CHECK(p.val().at({3, 1, 2}) == a.at({1, 2, 3}));

  Var cat = concat({Var(a), Var(a)}, 1);
  CHECK(cat.shape() == Shape{2, 6, 4});
  CHECK(cat.val().at({1, 4, 2}) == a.at({1, 1, 2}));

  Var sl = slice(Var(a), 1, 1, 2);
  CHECK(sl.shape() == Shape{2, 2, 4});
  CHECK(sl.val().at({0, 0, 0}) == a.at({0, 1, 0}));

  gradcheck_sum([](std::vector<Var>& v) { return permute(v[0], {1, 2, 0}); },
                {rand_tensor({2, 2, 3}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return concat({v[0], v[1]}, 0); },
                {rand_tensor({2, 3}, rng), rand_tensor({1, 3}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return slice(v[0], 2, 1, 2); },
                {rand_tensor({2, 2, 4}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return reshape(v[0], {6}); },
                {rand_tensor({2, 3}, rng)});
}

TEST_CASE("gather and scatter ops") {
  Tensor a = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  Var sel = index_select0(Var(a), {2, 0, 2});
  CHECK(sel.shape() == Shape{3, 2});
  CHECK(sel.val().at({0, 1}) == 6.0);
  CHECK(sel.val().at({1, 0}) == 1.0);
  CHECK(sel.val().at({2, 0}) == 5.0);

  Var sc = scatter_add0(Var(a), {1, 1, 0}, 4);
  CHECK(sc.shape() == Shape{4, 2});
  CHECK(sc.val().at({1, 0}) == 4.0);  // rows 0 and 1 both land on row 1
  CHECK(sc.val().at({0, 1}) == 6.0);
  CHECK(sc.val().at({3, 0}) == 0.0);

  Tensor t = Tensor::from({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  Var tk = take_lastdim(Var(t), {3, 0, 1, 2}, 2);
  CHECK(tk.shape() == Shape{2, 2});
  CHECK(tk.val().at({0, 0}) == 4.0);
  CHECK(tk.val().at({1, 1}) == 7.0);

  Rng rng(31);
  // Duplicate indices exercise gradient accumulation in all three ops.
  gradcheck_sum(
      [](std::vector<Var>& v) { return index_select0(v[0], {1, 1, 0, 2}); },
      {rand_tensor({3, 2}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return scatter_add0(v[0], {0, 2, 0}, 3); },
                {rand_tensor({3, 2}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return take_lastdim(v[0], {0, 0, 2, 1}, 2); },
                {rand_tensor({2, 3}, rng)});

  CHECK_THROWS_AS(index_select0(Var(a), {3}), ParameterError);
}

TEST_CASE("matrix products against a naive oracle") {
  Rng rng(41);
  Tensor a = rand_tensor({3, 4}, rng);
  Tensor b = rand_tensor({4, 5}, rng);

  check_near(mm(Var(a), Var(b)).val(), matmul_oracle(a, b), 1e-12, "mm");
  check_near(mm(Var(transpose2(a)), Var(b), true, false).val(), matmul_oracle(a, b),
             1e-12, "mm ta");
  check_near(mm(Var(a), Var(transpose2(b)), false, true).val(), matmul_oracle(a, b),
             1e-12, "mm tb");
  check_near(
      mm(Var(transpose2(a)), Var(transpose2(b)), true, true).val(),
      matmul_oracle(a, b), 1e-12, "mm ta tb");

  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      Shape sa = ta ? Shape{4, 3} : Shape{3, 4};
      Shape sb = tb ? Shape{2, 4} : Shape{4, 2};
      gradcheck_sum(
          [ta, tb](std::vector<Var>& v) { return mm(v[0], v[1], ta, tb); },
          {rand_tensor(sa, rng), rand_tensor(sb, rng)});
    }

  // bmm applies the same contraction per batch entry.
  Tensor ba = rand_tensor({2, 3, 4}, rng);
  Tensor bb = rand_tensor({2, 4, 2}, rng);
  Var bo = bmm(Var(ba), Var(bb));
  CHECK(bo.shape() == Shape{2, 3, 2});
  for (int64_t i = 0; i < 2; ++i) {
    Tensor sa = Tensor::empty({3, 4}), sb = Tensor::empty({4, 2});
    std::memcpy(sa.data(), ba.data() + i * 12, 12 * sizeof(Scalar));
    std::memcpy(sb.data(), bb.data() + i * 8, 8 * sizeof(Scalar));
    Tensor want = matmul_oracle(sa, sb);
    for (int64_t j = 0; j < 6; ++j)
      CHECK(bo.val()[i * 6 + j] == doctest::Approx(want[j]).epsilon(1e-12));
  }
  gradcheck_sum([](std::vector<Var>& v) { return bmm(v[0], v[1], false, true); },
                {rand_tensor({2, 2, 3}, rng), rand_tensor({2, 2, 3}, rng)});

  CHECK_THROWS_AS(mm(Var(a), Var(a)), ShapeError);
}

TEST_CASE("linear layer semantics") {
  Rng rng(43);
  Tensor x = rand_tensor({2, 3, 4}, rng);  // leading dims flattened internally
  Tensor w = rand_tensor({5, 4}, rng);
  Tensor b = rand_tensor({5}, rng);

  Var y = linear(Var(x), Var(w), Var(b));
  CHECK(y.shape() == Shape{2, 3, 5});
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t o = 0; o < 5; ++o) {
        Scalar acc = b[o];
        for (int64_t k = 0; k < 4; ++k) acc += x.at({i, j, k}) * w.at({o, k});
        CHECK(y.val().at({i, j, o}) == doctest::Approx(acc).epsilon(1e-12));
      }

  gradcheck_sum(
      [](std::vector<Var>& v) { return linear(v[0], v[1], v[2]); },
      {rand_tensor({2, 4}, rng), rand_tensor({3, 4}, rng), rand_tensor({3}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return linear(v[0], v[1], Var()); },
                {rand_tensor({2, 4}, rng), rand_tensor({3, 4}, rng)});
}

TEST_CASE("softmax rows") {
  Tensor x = Tensor::from({1, 3}, {1.0, 2.0, 3.0});
  Var y = softmax_lastdim(Var(x));
  CHECK(y.val()[0] == doctest::Approx(0.09003057317038046).epsilon(1e-10));
  CHECK(y.val()[1] == doctest::Approx(0.24472847105479767).epsilon(1e-10));
  CHECK(y.val()[2] == doctest::Approx(0.66524095577482186).epsilon(1e-10));

  Rng rng(47);
  Tensor r = rand_tensor({4, 6}, rng, -3.0, 3.0);
  Var sy = softmax_lastdim(Var(r));
  for (int64_t row = 0; row < 4; ++row) {
    Scalar s = 0.0;
    for (int64_t i = 0; i < 6; ++i) s += sy.val()[row * 6 + i];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }

  // Shift invariance: adding a constant per row leaves the output unchanged.
  Tensor shifted = r.clone();
  for (int64_t i = 0; i < shifted.numel(); ++i) shifted.data()[i] += 7.5;
  check_near(softmax_lastdim(Var(shifted)).val(), sy.val(), 1e-12, "softmax shift");

  gradcheck_sum([](std::vector<Var>& v) { return softmax_lastdim(v[0]); },
                {rand_tensor({2, 4}, rng, -2.0, 2.0)});
}

TEST_CASE("l2 row normalization") {
  Rng rng(53);
  Tensor x = rand_tensor({3, 4}, rng, -2.0, 2.0);
  Var y = l2_normalize_lastdim(Var(x));
  for (int64_t r = 0; r < 3; ++r) {
    Scalar n = 0.0;
    for (int64_t i = 0; i < 4; ++i) n += y.val()[r * 4 + i] * y.val()[r * 4 + i];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
  }

  // A zero row must stay zero with finite gradients rather than emit NaN.
  Tensor z = Tensor::zeros({1, 4});
  Var zl(z, true);
  Var zy = l2_normalize_lastdim(zl);
  for (int64_t i = 0; i < 4; ++i) CHECK(zy.val()[i] == 0.0);
  backward(sum_all(zy));
  for (int64_t i = 0; i < 4; ++i) CHECK(std::isfinite(zl.grad()[i]));

  gradcheck_sum([](std::vector<Var>& v) { return l2_normalize_lastdim(v[0]); },
                {rand_tensor({2, 3}, rng, 0.5, 2.0)});
}

TEST_CASE("conv2d against direct convolution") {
  Rng rng(61);
  struct Case {
    int stride, pad;
    PadMode mode;
  };
  for (const Case& c : {Case{1, 1, PadMode::Zero}, Case{1, 1, PadMode::Reflect},
                        Case{2, 1, PadMode::Zero}, Case{1, 0, PadMode::Zero},
                        Case{2, 1, PadMode::Reflect}}) {
    Tensor x = rand_tensor({2, 3, 6, 5}, rng);
    Tensor w = rand_tensor({4, 3, 3, 3}, rng);
    Tensor b = rand_tensor({4}, rng);
    Var y = conv2d(Var(x), Var(w), Var(b), c.stride, c.pad, c.mode);
    check_near(y.val(), conv_oracle(x, w, &b, c.stride, c.pad, c.mode), 1e-10,
               "conv2d");
  }

  // 1x1 takes a dedicated GEMM path; hold it to the same oracle.
  Tensor x = rand_tensor({2, 3, 4, 4}, rng);
  Tensor w1 = rand_tensor({5, 3, 1, 1}, rng);
  Var y1 = conv2d(Var(x), Var(w1), Var(), 1, 0, PadMode::Zero);
  check_near(y1.val(), conv_oracle(x, w1, nullptr, 1, 0, PadMode::Zero), 1e-10,
             "conv2d 1x1");

  gradcheck_sum(
      [](std::vector<Var>& v) {
        return conv2d(v[0], v[1], v[2], 1, 1, PadMode::Reflect);
      },
      {rand_tensor({1, 2, 4, 4}, rng), rand_tensor({2, 2, 3, 3}, rng),
       rand_tensor({2}, rng)});
  gradcheck_sum(
      [](std::vector<Var>& v) { return conv2d(v[0], v[1], Var(), 2, 1, PadMode::Zero); },
      {rand_tensor({1, 2, 5, 5}, rng), rand_tensor({3, 2, 3, 3}, rng)});
  gradcheck_sum(
      [](std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 1, 0, PadMode::Zero); },
      {rand_tensor({2, 3, 3, 3}, rng), rand_tensor({2, 3, 1, 1}, rng),
       rand_tensor({2}, rng)});

  CHECK_THROWS_AS(conv2d(Var(x), Var(rand_tensor({4, 2, 3, 3}, rng)), Var(), 1, 1,
                         PadMode::Zero),
                  ShapeError);
}

TEST_CASE("depthwise conv matches grouped direct convolution") {
  Rng rng(67);
  Tensor x = rand_tensor({2, 3, 5, 4}, rng);
  Tensor w = rand_tensor({3, 3, 3}, rng);
  Tensor b = rand_tensor({3}, rng);

  // Equivalent full conv weight: channel c convolves only with itself.
  Tensor wf = Tensor::zeros({3, 3, 3, 3});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t ky = 0; ky < 3; ++ky)
      for (int64_t kx = 0; kx < 3; ++kx)
        wf.at({c, c, ky, kx}) = w.at({c, ky, kx});

  for (PadMode mode : {PadMode::Zero, PadMode::Reflect}) {
    Var y = conv2d_depthwise(Var(x), Var(w), Var(b), mode);
    check_near(y.val(), conv_oracle(x, wf, &b, 1, 1, mode), 1e-10, "depthwise");
  }

  gradcheck_sum(
      [](std::vector<Var>& v) {
        return conv2d_depthwise(v[0], v[1], v[2], PadMode::Reflect);
      },
      {rand_tensor({1, 2, 4, 4}, rng), rand_tensor({2, 3, 3}, rng),
       rand_tensor({2}, rng)});
}

TEST_CASE("fixed-kernel blur") {
  Rng rng(71);
  Tensor k = Tensor::full({3, 3}, 1.0 / 9.0);

  // Reflect padding preserves constants exactly.
  Tensor flat = Tensor::full({1, 2, 5, 5}, 0.7);
  check_near(blur2d_fixed(Var(flat), k).val(), flat, 1e-12, "blur const");

  // Same result as running the kernel depthwise.
  Tensor x = rand_tensor({1, 2, 5, 6}, rng);
  Tensor wd = Tensor::empty({2, 3, 3});
  for (int64_t c = 0; c < 2; ++c)
    std::memcpy(wd.data() + c * 9, k.data(), 9 * sizeof(Scalar));
  check_near(blur2d_fixed(Var(x), k).val(),
             conv2d_depthwise(Var(x), Var(wd), Var(), PadMode::Reflect).val(), 1e-12,
             "blur vs depthwise");

  gradcheck_sum([&k](std::vector<Var>& v) { return blur2d_fixed(v[0], k); },
                {rand_tensor({1, 1, 4, 4}, rng)});
}

TEST_CASE("pooling, upsampling, spatial mean") {
  Tensor x = Tensor::from({1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  Var p = avg_pool2(Var(x));
  CHECK(p.shape() == Shape{1, 1, 1, 2});
  CHECK(p.val()[0] == doctest::Approx(3.5));
  CHECK(p.val()[1] == doctest::Approx(5.5));

  Var u = upsample_nearest2(Var(x));
  CHECK(u.shape() == Shape{1, 1, 4, 8});
  CHECK(u.val().at({0, 0, 0, 0}) == 1.0);
  CHECK(u.val().at({0, 0, 1, 1}) == 1.0);
  CHECK(u.val().at({0, 0, 3, 7}) == 8.0);

  Var sm = spatial_mean(Var(x));
  CHECK(sm.shape() == Shape{1, 1});
  CHECK(sm.val()[0] == doctest::Approx(4.5));

  Rng rng(73);
  gradcheck_sum([](std::vector<Var>& v) { return avg_pool2(v[0]); },
                {rand_tensor({1, 2, 4, 4}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return upsample_nearest2(v[0]); },
                {rand_tensor({1, 2, 2, 3}, rng)});
  gradcheck_sum([](std::vector<Var>& v) { return spatial_mean(v[0]); },
                {rand_tensor({2, 3, 2, 2}, rng)});

  CHECK_THROWS_AS(avg_pool2(Var(Tensor::zeros({1, 1, 3, 4}))), ShapeError);
}

TEST_CASE("patch unfolding layout and adjoint") {
  Rng rng(79);
  Tensor x = rand_tensor({1, 2, 4, 5}, rng);
  Var u = unfold_k(Var(x), 3);
  CHECK(u.shape() == Shape{1, 2, 9, 20});

  // Center tap reproduces the pixel; off-center taps read reflected indices.
  auto refl = [](int64_t i, int64_t n) {
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
  };
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t oy = 0; oy < 4; ++oy)
      for (int64_t ox = 0; ox < 5; ++ox) {
        CHECK(u.val().at({0, c, 4, oy * 5 + ox}) == x.at({0, c, oy, ox}));
        CHECK(u.val().at({0, c, 0, oy * 5 + ox}) ==
              x.at({0, c, refl(oy - 1, 4), refl(ox - 1, 5)}));
        CHECK(u.val().at({0, c, 5, oy * 5 + ox}) ==
              x.at({0, c, oy, refl(ox + 1, 5)}));
      }

  gradcheck_sum([](std::vector<Var>& v) { return unfold_k(v[0], 3); },
                {rand_tensor({1, 1, 3, 4}, rng)});
}

TEST_CASE("top-k selection order and ties") {
  Tensor s = Tensor::from({2, 4}, {0.5, 0.7, 0.7, 0.1, /**/ 0.3, 0.3, 0.9, 0.3});
  auto idx = topk_lastdim(s, 2);
  REQUIRE(idx.size() == 4);
  // Row 0: the tied 0.7s resolve to the lower index first; picks come back
  // sorted ascending.
  CHECK(idx[0] == 1);
  CHECK(idx[1] == 2);
  // Row 1: 0.9 wins, then the tie at 0.3 resolves to index 0.
  CHECK(idx[2] == 0);
  CHECK(idx[3] == 2);

  Tensor t = Tensor::from({1, 3}, {0.3, 0.3, 0.3});
  auto all_tied = topk_lastdim(t, 2);
  CHECK(all_tied[0] == 0);
  CHECK(all_tied[1] == 1);

  CHECK_THROWS_AS(topk_lastdim(s, 5), ParameterError);
}
