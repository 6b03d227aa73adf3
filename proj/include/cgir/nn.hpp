#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cgir/ops.hpp"
#include "cgir/rng.hpp"

namespace cgir {

// Ordered, named registry of trainable leaves. Registration order defines
// the checkpoint and optimizer-state layout, so modules must register their
// parameters in a deterministic order.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init);
  Var find(const std::string& name) const;  // missing name -> ParameterError
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, Var>>& items() const { return items_; }
  int64_t size() const { return static_cast<int64_t>(items_.size()); }
  int64_t scalar_count() const;

  void zero_grads();

 private:
  std::vector<std::pair<std::string, Var>> items_;
  std::map<std::string, size_t> index_;
};

// Adam over every parameter of a store, walking them in registration order
// so the optimizer-state layout is as stable as the checkpoint layout. A leaf
// without a gradient contributes a zero gradient; lr = 0 performs only the
// moment bookkeeping and leaves the parameters untouched.
class Adam {
 public:
  Adam() = default;
  Adam(ParamStore& store, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  int64_t step_count() const { return t_; }

  double lr = 2e-4;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  // Raw state access for checkpointing; sizes mirror store.items().
  std::vector<Tensor>& moments1() { return m_; }
  std::vector<Tensor>& moments2() { return v_; }
  const std::vector<Tensor>& moments1() const { return m_; }
  const std::vector<Tensor>& moments2() const { return v_; }
  void set_step_count(int64_t t) { t_ = t; }

 private:
  ParamStore* store_ = nullptr;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

// Weight fills. fan_in_normal draws N(0, 1/fan_in) where fan_in is the
// product of all dims past the first (conv taps included).
Tensor fan_in_normal(const Shape& shape, Rng& rng);

enum class Init { FanIn, Zero };

struct Linear {
  Linear() = default;
  Linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out,
         Rng& rng, bool bias = true, Init init = Init::FanIn);
  Var w;  // (out, in)
  Var b;  // (out) or undefined
  Var forward(const Var& x) const { return linear(x, w, b); }
};

struct Conv2dLayer {
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& store, const std::string& prefix, int64_t in, int64_t out,
              int k, int stride, int pad, PadMode mode, Rng& rng,
              Init init = Init::FanIn);
  Var w;  // (out, in, k, k)
  Var b;  // (out)
  int stride = 1, pad = 0;
  PadMode mode = PadMode::Zero;
  Var forward(const Var& x) const { return conv2d(x, w, b, stride, pad, mode); }
};

struct DepthwiseConv2d {
  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParamStore& store, const std::string& prefix, int64_t channels,
                  int k, PadMode mode, Rng& rng);
  Var w;  // (C, k, k)
  Var b;  // (C)
  PadMode mode = PadMode::Reflect;
  Var forward(const Var& x) const { return conv2d_depthwise(x, w, b, mode); }
};

// Normalizes the last axis of (..., C) tokens to zero mean / unit variance,
// then applies a learned per-channel affine.
struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& prefix, int64_t channels);
  Var gamma, beta;
  Var forward(const Var& x) const;
};

// Channel-gated feed-forward on feature maps: 1x1 expansion to two halves,
// 3x3 depthwise mixing, gelu(a) * b gate, 1x1 back to C. hidden is the width
// of each half. Zero output init makes the block a residual no-op.
struct GatedFfn {
  GatedFfn() = default;
  GatedFfn(ParamStore& store, const std::string& prefix, int64_t channels,
           int64_t hidden, Rng& rng, Init out_init = Init::FanIn);
  Conv2dLayer in_proj;
  DepthwiseConv2d mix;
  Conv2dLayer out_proj;
  int64_t hidden = 0;
  Var forward(const Var& x) const;
};

// Multi-head self-attention over (B, T, C) tokens. Projections carry no
// bias; the output projection is zero-initialized so a fresh block is a
// residual identity.
struct TokenSelfAttention {
  TokenSelfAttention() = default;
  TokenSelfAttention(ParamStore& store, const std::string& prefix, int64_t channels,
                     int heads, Rng& rng);
  Linear wq, wk, wv, wo;
  int heads = 1;
  Var forward(const Var& tokens) const;
};

// One query vector (B, D) attending over (B, T, D) tokens. There is no
// output projection: with a single token the result is exactly that token's
// value projection. The post-softmax weights of the latest forward are kept
// for diagnostics.
struct SingleQueryAttention {
  SingleQueryAttention() = default;
  SingleQueryAttention(ParamStore& store, const std::string& prefix, int64_t dim,
                       int heads, Rng& rng);
  Linear wq, wk, wv;
  int heads = 1;
  mutable Tensor last_weights;  // (B, heads, T)
  Var forward(const Var& query, const Var& tokens) const;
};

// (B,C,H,W) <-> (B,HW,C) token layout.
Var channels_to_tokens(const Var& x);
Var tokens_to_channels(const Var& tokens, int64_t h, int64_t w);

// (B,C,H,W) -> (B*nh*nw, win*win, C) non-overlapping square windows, and its
// inverse. H and W must be divisible by win.
Var window_partition(const Var& x, int win);
Var window_merge(const Var& tokens, int win, int64_t b, int64_t c, int64_t h,
                 int64_t w);

}  // namespace cgir
