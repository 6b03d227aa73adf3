#include "cgir/dafmm.hpp"

namespace cgir {
namespace {

// Identity selection of the first C input channels: [I | 0] as a 1x1 map.
Tensor first_input_selector(int64_t channels) {
  Tensor w = Tensor::zeros({channels, 2 * channels, 1, 1});
  for (int64_t c = 0; c < channels; ++c) w.at({c, c, 0, 0}) = 1.0;
  return w;
}

}  // namespace

Dafmm::Dafmm(ParamStore& store, const std::string& prefix, int64_t channels,
             int64_t prompt_dim, int k, Rng& rng)
    : channels_(channels), k_(k) {
  check_param(k >= 1 && k % 2 == 1, "Dafmm: filter window must be odd, got ", k);
  mod_proj_ = Linear(store, prefix + ".mod", prompt_dim, 2 * channels, rng, true,
                     Init::Zero);
  filter_proj_ = Linear(store, prefix + ".filter", channels,
                        channels * int64_t(k) * k, rng, true, Init::Zero);
  bn_gamma_ = store.add(prefix + ".filter_norm.gamma",
                        Tensor::full({channels * int64_t(k) * k}, 1.0));
  bn_beta_ = store.add(prefix + ".filter_norm.beta",
                       Tensor::zeros({channels * int64_t(k) * k}));
  fuse_amp_w = store.add(prefix + ".fuse_amp.w", first_input_selector(channels));
  fuse_phase_w = store.add(prefix + ".fuse_phase.w", first_input_selector(channels));
  gate_proj_ = Linear(store, prefix + ".gate", channels, 3 * channels, rng, true,
                      Init::Zero);
  out_proj_ = Conv2dLayer(store, prefix + ".out", channels, channels, 1, 1, 0,
                          PadMode::Zero, rng, Init::Zero);
}

MinedFrequencies Dafmm::fsb(const Var& f_ll) const {
  check_shape(f_ll.shape().size() == 4 && f_ll.dim(1) == channels_,
              "fsb: expected (B,", channels_, ",H,W), got ", shape_str(f_ll.shape()));
  const int64_t b = f_ll.dim(0), c = channels_, h = f_ll.dim(2), w = f_ll.dim(3);
  const int64_t taps = int64_t(k_) * k_;

  Var logits = filter_proj_.forward(spatial_mean(f_ll));  // (B, C*k*k)
  // Exact batch statistics; with a single sample the only well-defined
  // moments are across the channel axis instead.
  const int axis = b > 1 ? 0 : 1;
  Shape keep = logits.shape();
  keep[static_cast<size_t>(axis)] = 1;
  Var mean = reshape(mean_axis(logits, axis), keep);
  Var centered = sub(logits, mean);
  Var var = reshape(mean_axis(square(centered), axis), keep);
  Var normed = div(centered, sqrt_v(add_scalar(var, 1e-5)));
  normed = add(mul(normed, bn_gamma_), bn_beta_);

  MinedFrequencies out;
  out.filter_weights = softmax_lastdim(reshape(normed, {b, c, taps}));
  Var patches = unfold_k(f_ll, k_);  // (B,C,k*k,HW)
  Var weighted = mul(patches, reshape(out.filter_weights, {b, c, taps, 1}));
  out.low = reshape(sum_axis(weighted, 2), {b, c, h, w});
  out.high = sub(f_ll, out.low);
  return out;
}

Var Dafmm::low_freq_modulate(const Var& f_ll, const Var& f_l) const {
  check_shape(f_ll.shape() == f_l.shape(), "low_freq_modulate: shape mismatch ",
              shape_str(f_ll.shape()), " vs ", shape_str(f_l.shape()));
  SpectrumVar s_ll = amp_phase(f_ll);
  SpectrumVar s_l = amp_phase(f_l);
  Var amp = concat({s_ll.amplitude, s_l.amplitude}, 1);
  Var ph = concat({s_ll.phase, s_l.phase}, 1);
  SpectrumVar fused;
  fused.amplitude = clamp_min(conv2d(amp, fuse_amp_w, Var(), 1, 0, PadMode::Zero), 0.0);
  fused.phase = wrap_phase(conv2d(ph, fuse_phase_w, Var(), 1, 0, PadMode::Zero));
  // The fused pair need not be exactly conjugate-symmetric (wrapping and
  // mixing break it at floating-point scale), so fold the spectrum back onto
  // the real subspace before inverting rather than asserting on the residue.
  return ifft2(symmetrize(polar(fused))).re;
}

void Dafmm::high_freq_modulate(const Var& f_h, Var& hl, Var& lh, Var& hh) const {
  check_shape(f_h.shape() == hl.shape() && hl.shape() == lh.shape() &&
                  lh.shape() == hh.shape(),
              "high_freq_modulate: operands must share one shape");
  const int64_t b = f_h.dim(0), c = f_h.dim(1);
  Var gate = sigmoid(gate_proj_.forward(spatial_mean(f_h)));  // (B, 3C)
  auto band = [&](int64_t slot) {
    return reshape(slice(gate, 1, slot * c, c), {b, c, 1, 1});
  };
  hl = mul(hl, band(0));
  lh = mul(lh, band(1));
  hh = mul(hh, band(2));
}

Var Dafmm::forward(const Var& feat, const Var& prompt,
                   SpectralCapture* cap) const {
  check_shape(feat.shape().size() == 4 && feat.dim(1) == channels_,
              "Dafmm::forward: bad feature shape ", shape_str(feat.shape()));
  check_shape(feat.dim(2) % 2 == 0 && feat.dim(3) % 2 == 0,
              "Dafmm::forward: spatial dims must be even");
  check_shape(prompt.shape().size() == 2 && prompt.dim(0) == feat.dim(0),
              "Dafmm::forward: prompt must be (B,D)");
  const int64_t b = feat.dim(0), c = channels_;

  // Degradation conditioning as a channel-wise affine; zero init keeps it
  // the identity.
  Var mod = mod_proj_.forward(prompt);  // (B, 2C)
  Var scale = reshape(add_scalar(slice(mod, 1, 0, c), 1.0), {b, c, 1, 1});
  Var shift = reshape(slice(mod, 1, c, c), {b, c, 1, 1});
  Var x = add(mul(feat, scale), shift);

  WaveletSubbands sb = dwt2(x);
  MinedFrequencies mined = fsb(sb.ll);
  if (cap) {
    cap->ll = sb.ll.val().clone();
    cap->low = mined.low.val().clone();
  }
  Var ll_fused = low_freq_modulate(sb.ll, mined.low);
  Var hl = sb.hl, lh = sb.lh, hh = sb.hh;
  high_freq_modulate(mined.high, hl, lh, hh);
  Var recombined = idwt2({ll_fused, hl, lh, hh});
  return add(feat, out_proj_.forward(recombined));
}

}  // namespace cgir
