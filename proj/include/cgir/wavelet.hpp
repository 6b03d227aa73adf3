#pragma once

#include "cgir/ops.hpp"

namespace cgir {

// Single-level orthonormal 2-D Haar decomposition of a (B,C,H,W) map into
// four (B,C,H/2,W/2) subbands. Orthonormal scaling means the adjoint is the
// inverse, so each transform's backward pass is the other transform.
struct WaveletSubbands {
  Var ll, hl, lh, hh;
};

WaveletSubbands dwt2(const Var& x);
Var idwt2(const WaveletSubbands& s);

// Raw tensor kernels, shared by the autograd wrappers and direct callers.
void dwt2_kernel(const Tensor& x, Tensor& ll, Tensor& hl, Tensor& lh, Tensor& hh);
Tensor idwt2_kernel(const Tensor& ll, const Tensor& hl, const Tensor& lh,
                    const Tensor& hh);

}  // namespace cgir
