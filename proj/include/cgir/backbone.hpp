#pragma once

#include <array>
#include <string>
#include <vector>

#include "cgir/dafmm.hpp"
#include "cgir/routing.hpp"

namespace cgir {

// Four-stage encoder-decoder restoration network: wavelet transformer
// blocks and cluster-routed expert mixtures down the encoder, hierarchical
// prompt aggregation across stages, and prompt-conditioned frequency
// modulation up the decoder, all behind a global residual.

struct ModelConfig {
  int64_t embed_dim = 16;                      // stage-1 channels d; plan d,2d,4d,8d
  std::array<int64_t, 4> stage_depths = {1, 1, 1, 1};
  std::array<int64_t, 4> cluster_counts = {3, 3, 3, 3};
  std::array<int64_t, 4> k1_counts = {2, 2, 2, 2};
  int64_t experts_per_cluster = 2;
  int64_t k2 = 2;
  int heads = 2;
  int fsb_k = 3;
  ProtoInit proto_init = ProtoInit::Orthogonal;
  bool use_pcgrm = true;  // routing + prompts; off leaves pure WTB stages
  bool use_dafmm = true;  // decoder frequency modulation

  int64_t channels(int level) const { return embed_dim << level; }
  void validate() const;  // bad combinations -> ParameterError
};

// Wavelet transformer block: self-attention over the LL band's tokens
// (windowed once the token count passes 256), inverse transform with
// untouched detail bands, then a gated feed-forward. Output projections are
// zero-initialized, so a fresh block is the identity up to the wavelet
// round-trip.
struct Wtb {
  Wtb() = default;
  Wtb(ParamStore& store, const std::string& prefix, int64_t channels, int heads,
      Rng& rng);
  LayerNorm ln;
  TokenSelfAttention attn;
  GatedFfn ffn;
  Var forward(const Var& x) const;
};

// Decoder-side prompt refinement: a convex mixture of learned components,
// selected by the feature's pooled statistics, added through a
// zero-initialized projection.
struct PromptGenBlock {
  PromptGenBlock() = default;
  PromptGenBlock(ParamStore& store, const std::string& prefix, int64_t width,
                 int64_t n_components, Rng& rng);
  Var components;  // (n_components, width)
  Linear select;   // width -> n_components
  Linear out;      // width -> width, zero init
  // Returns the refined prompt; mixture weights (B, n_components) are
  // written to *weights when given.
  Var forward(const Var& prompt, const Var& feat, Var* weights = nullptr) const;
};

// What a forward pass can report back besides the output image.
struct ForwardTrace {
  bool capture_spectra = false;  // set before the call to fill the fields below
  bool capture_maps = false;     // also keep the full stage maps (costly)
  std::vector<RoutingDecision> decisions;  // per stage, when routing is on
  std::vector<Tensor> stage_features;      // pooled post-MoE stage outputs (B, C_l)
  std::vector<Tensor> stage_maps;          // full post-MoE maps (B, C_l, H_l, W_l)
  std::vector<Tensor> ll_bands;            // decoder LL band per level (values)
  std::vector<Tensor> low_mined;           // matching mined low component
};

class RestorationNet {
 public:
  RestorationNet(ParamStore& store, const ModelConfig& cfg, Rng& rng);

  // Training-path forward on (B,3,H,W) in [0,1]; H, W divisible by 16. The
  // result is residual-added but not clipped (clipping is an inference
  // concern; the loss sees the raw output).
  Var forward(const Var& img, Rng* rng, bool stochastic,
              ForwardTrace* trace = nullptr) const;

  // Inference entry: no graph, output clipped to [0,1].
  Tensor restore(const Tensor& img, Rng* rng = nullptr,
                 bool stochastic = false) const;

  // One scalar penalty per routing stage (empty when routing is off).
  std::vector<Var> orthogonality_penalties() const;

  // Projects every prototype bank back onto the unit sphere (post-step).
  void renormalize_prototypes();

  const ModelConfig& config() const { return cfg_; }
  const std::vector<PcgrmRouter>& routers() const { return routers_; }
  std::vector<PcgrmRouter>& routers() { return routers_; }
  const std::vector<Dafmm>& dafmms() const { return dafmms_; }

  // Hierarchy step for decoder slot idx (0 -> level 2, 2 -> level 0): the
  // stage prompt queries the deepest prompt through cross-attention, then a
  // width adapter maps into the decoder plan. Falls back to the learned
  // constant prompt when routing is disabled.
  Var decode_prompt(int idx, const std::vector<Var>& stage_prompts,
                    int64_t batch) const;

 private:
  struct PromptAdapter {
    Linear into;   // C_l -> C_3 query lift
    Linear outof;  // C_3 -> decoder width
  };

  ModelConfig cfg_;
  Conv2dLayer stem_;
  std::vector<std::vector<Wtb>> enc_wtbs_;  // [stage][depth]
  std::vector<PcgrmRouter> routers_;        // per stage when enabled
  std::vector<Conv2dLayer> downs_;          // 3 strided reductions
  std::vector<Conv2dLayer> ups_;            // decoder upsample convs
  std::vector<Conv2dLayer> skip_fuse_;      // 1x1 after skip concat
  std::vector<Wtb> dec_wtbs_;               // per decoder level
  std::vector<PromptGenBlock> pgbs_;        // per decoder level when prompts exist
  std::vector<Dafmm> dafmms_;               // per decoder level when enabled
  SingleQueryAttention prompt_attn_;        // hierarchy attention in C_3 space
  std::vector<PromptAdapter> prompt_adapters_;
  std::vector<Var> const_prompts_;          // routing-off fallback per level
  Conv2dLayer head_;
};

}  // namespace cgir
