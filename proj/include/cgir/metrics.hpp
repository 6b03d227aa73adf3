#pragma once

#include "cgir/ops.hpp"

namespace cgir {

// Image quality metrics over (B,C,H,W) maps in [0,1]. The Var forms build
// graphs (the loss backpropagates through MS-SSIM); the Tensor forms are
// plain numbers for evaluation.

// 10*log10(1/MSE) against a unit dynamic range; identical inputs give the
// +infinity sentinel.
Scalar psnr(const Tensor& a, const Tensor& b);

// Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), C1=0.01^2,
// C2=0.03^2, reflect padding, mean over every pixel/channel/batch entry.
Var ssim(const Var& a, const Var& b);
Scalar ssim_value(const Tensor& a, const Tensor& b);

// Multi-scale SSIM at 3 dyadic scales (contrast/structure at every scale,
// luminance at the coarsest), canonical per-scale weights renormalized to
// the 3 scales used. Requires min(H, W) >= 32.
Var ms_ssim(const Var& a, const Var& b);
Scalar ms_ssim_value(const Tensor& a, const Tensor& b);

// Training objective: mean absolute error plus lambda*(1 - MS-SSIM) plus
// lambda_orth times the summed routing orthogonality penalties (scalar Vars
// supplied by the caller; the list may be empty).
Var restoration_loss(const Var& pred, const Var& target, Scalar lambda,
                     Scalar lambda_orth, const std::vector<Var>& orth_penalties);

}  // namespace cgir
