#pragma once

#include <cstdint>
#include <vector>

#include "cgir/autograd.hpp"

namespace cgir {

enum class PadMode { Zero, Reflect };

// Elementwise with numpy-style right-aligned broadcasting.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

Var add_scalar(const Var& a, Scalar s);
Var mul_scalar(const Var& a, Scalar s);

Var neg(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);
Var sqrt_v(const Var& a);
Var abs_v(const Var& a);
Var square(const Var& a);
Var sigmoid(const Var& a);
Var tanh_v(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var clamp_min(const Var& a, Scalar floor);

// Reductions. Axis reductions drop the reduced axis.
Var sum_all(const Var& a);
Var mean_all(const Var& a);
Var sum_axis(const Var& a, int axis);
Var mean_axis(const Var& a, int axis);

// Shape manipulation. reshape shares the buffer; permute materializes.
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<int>& dims);
Var concat(const std::vector<Var>& parts, int axis);
Var slice(const Var& a, int axis, int64_t start, int64_t len);
Var detach(const Var& a);

// out[i, ...] = a[idx[i], ...]; backward scatter-adds.
Var index_select0(const Var& a, const std::vector<int64_t>& idx);
// out[idx[i], ...] += a[i, ...] into a fresh zero tensor with leading dim n0.
// Adjoint of index_select0.
Var scatter_add0(const Var& a, const std::vector<int64_t>& idx, int64_t n0);
// a has shape (..., N); idx holds rows-major indices, k per row.
// out has shape (..., k).
Var take_lastdim(const Var& a, const std::vector<int64_t>& idx, int64_t k);

// mm: rank-2 GEMM with optional transposes. bmm: rank-3, shared batch axis.
Var mm(const Var& a, const Var& b, bool ta = false, bool tb = false);
Var bmm(const Var& a, const Var& b, bool ta = false, bool tb = false);
// x (..., in) * w (out, in)^T + b. b may be undefined.
Var linear(const Var& x, const Var& w, const Var& b);

Var softmax_lastdim(const Var& a);
// Rows of x (..., D) scaled to unit L2 norm; zero rows are left as zeros via
// a norm floor.
Var l2_normalize_lastdim(const Var& x, Scalar floor = 1e-12);

// NCHW convolution, symmetric padding. Bias optional (undefined Var skips).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad,
           PadMode mode);
// Per-channel convolution, stride 1, same-size output. w is (C, kh, kw),
// bias optional (C).
Var conv2d_depthwise(const Var& x, const Var& w, const Var& b, PadMode mode);
// Same fixed kernel applied to every channel, reflect padded, stride 1. The
// kernel is a plain tensor: no gradient flows to it.
Var blur2d_fixed(const Var& x, const Tensor& kernel);
Var avg_pool2(const Var& x);
Var upsample_nearest2(const Var& x);
// (B,C,H,W) -> (B,C), mean over spatial axes.
Var spatial_mean(const Var& x);
// (B,C,H,W) -> (B,C,k*k,H*W) patch extraction with reflect padding.
Var unfold_k(const Var& x, int k);

// Row-wise top-k on a plain tensor of shape (rows, N): returns k indices per
// row, ties resolved toward the lower index, each row's picks sorted
// ascending. Not differentiable (selection is discrete).
std::vector<int64_t> topk_lastdim(const Tensor& scores, int64_t k);

// Test/debug helper: sum of squared difference, plain scalars.
Scalar sse(const Tensor& a, const Tensor& b);

}  // namespace cgir
