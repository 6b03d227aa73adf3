#pragma once

#include "cgir/nn.hpp"
#include "cgir/spectral.hpp"
#include "cgir/wavelet.hpp"

namespace cgir {

// Frequency-domain modulation on the wavelet LL band: a learned per-channel
// low-pass filter splits LL into low/high parts, the low part is fused with
// LL in the Fourier domain (amplitude and phase separately), the high part
// gates the detail subbands, and everything recombines through the inverse
// wavelet transform behind a zero-initialized residual projection.

struct MinedFrequencies {
  Var low;             // (B,C,H,W) convex local smoothing of the input
  Var high;            // input - low, exact residual
  Var filter_weights;  // (B,C,k*k) rows nonnegative, summing to 1
};

// Value snapshots of the internal split, for spectrum diagnostics.
struct SpectralCapture {
  Tensor ll;   // the LL band the filter saw
  Tensor low;  // its mined low-frequency part
};

class Dafmm {
 public:
  Dafmm() = default;
  // channels: feature width C. prompt_dim: width of the conditioning vector.
  // k: filter window (odd). All learned maps start as identities / zeros so
  // a fresh module is a no-op.
  Dafmm(ParamStore& store, const std::string& prefix, int64_t channels,
        int64_t prompt_dim, int k, Rng& rng);

  // Learnable low-pass split. Filter logits come from a zero-initialized
  // projection of the pooled input, normalized with exact batch statistics
  // (layer-style over channels when B == 1), then softmaxed over the k*k
  // taps: at init every filter is the uniform box kernel.
  MinedFrequencies fsb(const Var& f_ll) const;

  // Fuses amplitude and phase of f_ll and f_l with learned 1x1 spectral
  // maps (identity-initialized to pass f_ll through), clamps amplitude
  // nonnegative, wraps phase, and returns to the pixel domain.
  Var low_freq_modulate(const Var& f_ll, const Var& f_l) const;

  // Per-channel logistic gate from pooled f_h, one slice per detail band.
  // Zero init puts every gate at 0.5.
  void high_freq_modulate(const Var& f_h, Var& hl, Var& lh, Var& hh) const;

  // prompt conditioning -> dwt2 -> fsb -> low/high modulation -> idwt2 ->
  // zero-initialized 1x1 projection -> residual add.
  Var forward(const Var& feat, const Var& prompt,
              SpectralCapture* cap = nullptr) const;

  // Spectral-map weights are exposed so tests and diagnostics can set or
  // inspect the fusion behavior directly.
  Var fuse_amp_w;    // (C, 2C, 1, 1)
  Var fuse_phase_w;  // (C, 2C, 1, 1)

 private:
  Linear mod_proj_;     // prompt -> (scale, shift), zero init
  Linear filter_proj_;  // C -> C*k*k, zero init
  Var bn_gamma_, bn_beta_;
  Linear gate_proj_;    // C -> 3C, zero init
  Conv2dLayer out_proj_;
  int64_t channels_ = 0;
  int k_ = 3;
};

}  // namespace cgir
