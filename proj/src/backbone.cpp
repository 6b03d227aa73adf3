#include "cgir/backbone.hpp"

#include <algorithm>

namespace cgir {

void ModelConfig::validate() const {
  check_param(embed_dim >= 2 && embed_dim % 2 == 0,
              "ModelConfig: embed_dim must be even and >= 2, got ", embed_dim);
  check_param(heads >= 1 && embed_dim % heads == 0,
              "ModelConfig: embed_dim must divide into ", heads, " heads");
  for (int l = 0; l < 4; ++l) {
    check_param(stage_depths[l] >= 1, "ModelConfig: stage_depths[", l, "] must be >= 1");
    check_param(k1_counts[l] >= 1 && k1_counts[l] <= cluster_counts[l],
                "ModelConfig: need 1 <= k1 <= clusters at stage ", l, ", got k1=",
                k1_counts[l], " clusters=", cluster_counts[l]);
    if (proto_init == ProtoInit::Orthogonal) {
      check_param(cluster_counts[l] <= channels(l),
                  "ModelConfig: orthogonal prototypes need clusters <= dim at stage ",
                  l);
    }
  }
  check_param(experts_per_cluster >= 1 && k2 >= 1 && k2 <= experts_per_cluster,
              "ModelConfig: need 1 <= k2 <= experts_per_cluster");
  check_param(fsb_k >= 1 && fsb_k % 2 == 1, "ModelConfig: fsb_k must be odd");
}

Wtb::Wtb(ParamStore& store, const std::string& prefix, int64_t channels, int heads,
         Rng& rng) {
  ln = LayerNorm(store, prefix + ".ln", channels);
  attn = TokenSelfAttention(store, prefix + ".attn", channels, heads, rng);
  ffn = GatedFfn(store, prefix + ".ffn", channels, std::max<int64_t>(1, channels / 2),
                 rng, Init::Zero);
}

Var Wtb::forward(const Var& x) const {
  check_shape(x.shape().size() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0,
              "Wtb: expected (B,C,H,W) with even spatial dims, got ",
              shape_str(x.shape()));
  WaveletSubbands sb = dwt2(x);
  const int64_t b = x.dim(0), c = x.dim(1);
  const int64_t h2 = x.dim(2) / 2, w2 = x.dim(3) / 2;
  const bool windowed = h2 * w2 > 256 && h2 % 8 == 0 && w2 % 8 == 0;
  Var tokens = windowed ? window_partition(sb.ll, 8) : channels_to_tokens(sb.ll);
  tokens = add(tokens, attn.forward(ln.forward(tokens)));
  Var ll = windowed ? window_merge(tokens, 8, b, c, h2, w2)
                    : tokens_to_channels(tokens, h2, w2);
  Var u = idwt2({ll, sb.hl, sb.lh, sb.hh});
  return add(u, ffn.forward(u));
}

PromptGenBlock::PromptGenBlock(ParamStore& store, const std::string& prefix,
                               int64_t width, int64_t n_components, Rng& rng) {
  check_param(n_components >= 1, "PromptGenBlock: need at least one component");
  components = store.add(prefix + ".components",
                         fan_in_normal({n_components, width}, rng));
  select = Linear(store, prefix + ".select", width, n_components, rng);
  out = Linear(store, prefix + ".out", width, width, rng, true, Init::Zero);
}

Var PromptGenBlock::forward(const Var& prompt, const Var& feat, Var* weights) const {
  Var wts = softmax_lastdim(select.forward(spatial_mean(feat)));
  if (weights) *weights = wts;
  Var mixed = mm(wts, components);  // (B, n) x (n, width)
  return add(prompt, out.forward(mixed));
}

RestorationNet::RestorationNet(ParamStore& store, const ModelConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  stem_ = Conv2dLayer(store, "stem", 3, cfg_.channels(0), 3, 1, 1, PadMode::Reflect,
                      rng);

  for (int l = 0; l < 4; ++l) {
    const int64_t c = cfg_.channels(l);
    const std::string sp = "enc" + std::to_string(l);
    enc_wtbs_.emplace_back();
    for (int64_t d = 0; d < cfg_.stage_depths[l]; ++d) {
      enc_wtbs_.back().emplace_back(store, sp + ".wtb" + std::to_string(d), c,
                                    cfg_.heads, rng);
    }
    if (cfg_.use_pcgrm) {
      routers_.emplace_back(store, sp + ".moe", c, c, cfg_.cluster_counts[l],
                            cfg_.experts_per_cluster, cfg_.heads, cfg_.proto_init,
                            rng, l + 1);
    }
    if (l < 3) {
      downs_.emplace_back(store, "down" + std::to_string(l), c, cfg_.channels(l + 1),
                          3, 2, 1, PadMode::Reflect, rng);
    }
  }

  if (cfg_.use_pcgrm && cfg_.use_dafmm) {
    prompt_attn_ = SingleQueryAttention(store, "prompt_attn", cfg_.channels(3),
                                        cfg_.heads, rng);
  }
  for (int level = 2; level >= 0; --level) {
    const int64_t c = cfg_.channels(level);
    const std::string dp = "dec" + std::to_string(level);
    ups_.emplace_back(store, dp + ".up", cfg_.channels(level + 1), c, 3, 1, 1,
                      PadMode::Reflect, rng);
    skip_fuse_.emplace_back(store, dp + ".fuse", 2 * c, c, 1, 1, 0, PadMode::Zero,
                            rng);
    dec_wtbs_.emplace_back(store, dp + ".wtb", c, cfg_.heads, rng);
    if (cfg_.use_dafmm) {
      if (cfg_.use_pcgrm) {
        PromptAdapter ad;
        ad.into = Linear(store, dp + ".prompt_in", c, cfg_.channels(3), rng);
        ad.outof = Linear(store, dp + ".prompt_out", cfg_.channels(3), c, rng);
        prompt_adapters_.push_back(ad);
        pgbs_.emplace_back(store, dp + ".pgb", c, 4, rng);
      } else {
        const_prompts_.push_back(store.add(dp + ".prompt", Tensor::zeros({c})));
      }
      dafmms_.emplace_back(store, dp + ".dafmm", c, c, cfg_.fsb_k, rng);
    }
  }

  head_ = Conv2dLayer(store, "head", cfg_.channels(0), 3, 3, 1, 1, PadMode::Reflect,
                      rng, Init::Zero);
}

Var RestorationNet::decode_prompt(int idx, const std::vector<Var>& stage_prompts,
                                  int64_t batch) const {
  if (!cfg_.use_pcgrm) {
    const Var& cp = const_prompts_[static_cast<size_t>(idx)];
    Var zero = Var::constant(Tensor::zeros({batch, cp.numel()}));
    return add(zero, reshape(cp, {1, cp.numel()}));
  }
  const int level = 2 - idx;
  const Var& deep = stage_prompts[3];
  Var query = prompt_adapters_[static_cast<size_t>(idx)].into.forward(
      stage_prompts[static_cast<size_t>(level)]);
  Var tokens = reshape(deep, {batch, 1, deep.dim(1)});
  Var ctx = prompt_attn_.forward(query, tokens);
  return prompt_adapters_[static_cast<size_t>(idx)].outof.forward(ctx);
}

Var RestorationNet::forward(const Var& img, Rng* rng, bool stochastic,
                            ForwardTrace* trace) const {
  check_shape(img.shape().size() == 4 && img.dim(1) == 3,
              "RestorationNet: expected (B,3,H,W), got ", shape_str(img.shape()));
  const int64_t h = img.dim(2), w = img.dim(3);
  check_shape(h >= 32 && w >= 32 && h % 16 == 0 && w % 16 == 0,
              "RestorationNet: spatial dims must be >= 32 and divisible by 16, got ",
              h, "x", w);
  const int64_t batch = img.dim(0);

  Var x = stem_.forward(img);
  std::vector<Var> skips;
  std::vector<Var> prompts;
  for (int l = 0; l < 4; ++l) {
    for (const Wtb& blk : enc_wtbs_[static_cast<size_t>(l)]) x = blk.forward(x);
    if (cfg_.use_pcgrm) {
      RoutingDecision dec;
      x = routers_[static_cast<size_t>(l)].forward(x, cfg_.k1_counts[l], cfg_.k2,
                                                   rng, stochastic, &dec);
      prompts.push_back(dec.prompt);
      if (trace) trace->decisions.push_back(std::move(dec));
    }
    if (trace) {
      trace->stage_features.push_back(spatial_mean(x).val().clone());
      if (trace->capture_maps) trace->stage_maps.push_back(x.val().clone());
    }
    if (l < 3) {
      skips.push_back(x);
      x = downs_[static_cast<size_t>(l)].forward(x);
    }
  }

  for (int idx = 0; idx < 3; ++idx) {
    const int level = 2 - idx;
    x = ups_[static_cast<size_t>(idx)].forward(upsample_nearest2(x));
    x = skip_fuse_[static_cast<size_t>(idx)].forward(
        concat({x, skips[static_cast<size_t>(level)]}, 1));
    x = dec_wtbs_[static_cast<size_t>(idx)].forward(x);
    if (cfg_.use_dafmm) {
      Var prompt = decode_prompt(idx, prompts, batch);
      if (cfg_.use_pcgrm) {
        prompt = pgbs_[static_cast<size_t>(idx)].forward(prompt, x);
      }
      SpectralCapture cap;
      const bool want_spectra = trace && trace->capture_spectra;
      x = dafmms_[static_cast<size_t>(idx)].forward(x, prompt,
                                                    want_spectra ? &cap : nullptr);
      if (want_spectra) {
        trace->ll_bands.push_back(std::move(cap.ll));
        trace->low_mined.push_back(std::move(cap.low));
      }
    }
  }

  return add(img, head_.forward(x));
}

Tensor RestorationNet::restore(const Tensor& img, Rng* rng, bool stochastic) const {
  NoGrad ng;
  check_shape(img.rank() == 3 && img.dim(0) == 3,
              "restore: expected a (3,H,W) image, got ", shape_str(img.shape()));
  Var batched(img.reshaped({1, 3, img.dim(1), img.dim(2)}));
  Tensor out = forward(batched, rng, stochastic).val().clone();
  for (int64_t i = 0; i < out.numel(); ++i) {
    out[i] = std::clamp(out[i], Scalar(0), Scalar(1));
  }
  return out.reshaped({3, img.dim(1), img.dim(2)});
}

std::vector<Var> RestorationNet::orthogonality_penalties() const {
  std::vector<Var> pens;
  pens.reserve(routers_.size());
  for (const PcgrmRouter& r : routers_) pens.push_back(orthogonality_penalty(r.bank()));
  return pens;
}

void RestorationNet::renormalize_prototypes() {
  for (PcgrmRouter& r : routers_) normalize_prototype_rows(r.bank());
}

}  // namespace cgir
