#include "cgir/nn.hpp"

#include <cmath>

namespace cgir {

Var ParamStore::add(const std::string& name, Tensor init) {
  check_param(!name.empty(), "ParamStore::add: empty name");
  check_param(index_.find(name) == index_.end(), "ParamStore::add: duplicate name ",
              name);
  Var v(std::move(init), true);
  index_[name] = items_.size();
  items_.emplace_back(name, v);
  return v;
}

Var ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  check_param(it != index_.end(), "ParamStore::find: no parameter named ", name);
  return items_[it->second].second;
}

bool ParamStore::contains(const std::string& name) const {
  return index_.find(name) != index_.end();
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : items_) n += v.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [name, v] : items_) v.node()->grad = Tensor();
}

Adam::Adam(ParamStore& store, double lr_in, double b1, double b2, double eps_in)
    : lr(lr_in), beta1(b1), beta2(b2), eps(eps_in), store_(&store) {
  check_param(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1,
              "Adam: betas must lie in (0, 1)");
  check_param(lr >= 0 && eps > 0, "Adam: need lr >= 0 and eps > 0");
  m_.reserve(static_cast<size_t>(store.size()));
  v_.reserve(static_cast<size_t>(store.size()));
  for (const auto& [name, p] : store.items()) {
    m_.push_back(Tensor::zeros(p.shape()));
    v_.push_back(Tensor::zeros(p.shape()));
  }
}

void Adam::step() {
  check_param(store_ != nullptr, "Adam: not bound to a parameter store");
  check_param(static_cast<int64_t>(m_.size()) == store_->size(),
              "Adam: parameter count changed after construction");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t i = 0; i < m_.size(); ++i) {
    Tensor& p = store_->items()[i].second.node()->value;
    const Tensor& g = store_->items()[i].second.node()->grad;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (int64_t k = 0; k < p.numel(); ++k) {
      const double gk = g.defined() ? g[k] : 0.0;
      m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
      v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

Tensor fan_in_normal(const Shape& shape, Rng& rng) {
  check_param(!shape.empty(), "fan_in_normal: scalar shape");
  int64_t fan_in = 1;
  for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  Tensor t = Tensor::empty(shape);
  rng.fill_normal(t.data(), t.numel(), 0.0, 1.0 / std::sqrt(Scalar(fan_in)));
  return t;
}

Linear::Linear(ParamStore& store, const std::string& prefix, int64_t in, int64_t out,
               Rng& rng, bool bias, Init init) {
  Tensor wt = init == Init::Zero ? Tensor::zeros({out, in})
                                 : fan_in_normal({out, in}, rng);
  w = store.add(prefix + ".w", std::move(wt));
  if (bias) b = store.add(prefix + ".b", Tensor::zeros({out}));
}

Conv2dLayer::Conv2dLayer(ParamStore& store, const std::string& prefix, int64_t in,
                         int64_t out, int k, int stride_, int pad_, PadMode mode_,
                         Rng& rng, Init init)
    : stride(stride_), pad(pad_), mode(mode_) {
  Tensor wt = init == Init::Zero ? Tensor::zeros({out, in, k, k})
                                 : fan_in_normal({out, in, k, k}, rng);
  w = store.add(prefix + ".w", std::move(wt));
  b = store.add(prefix + ".b", Tensor::zeros({out}));
}

DepthwiseConv2d::DepthwiseConv2d(ParamStore& store, const std::string& prefix,
                                 int64_t channels, int k, PadMode mode_, Rng& rng)
    : mode(mode_) {
  // Per-channel filters see k*k inputs each.
  Tensor wt = Tensor::empty({channels, k, k});
  rng.fill_normal(wt.data(), wt.numel(), 0.0, 1.0 / Scalar(k));
  w = store.add(prefix + ".w", std::move(wt));
  b = store.add(prefix + ".b", Tensor::zeros({channels}));
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& prefix, int64_t channels) {
  gamma = store.add(prefix + ".gamma", Tensor::full({channels}, 1.0));
  beta = store.add(prefix + ".beta", Tensor::zeros({channels}));
}

Var LayerNorm::forward(const Var& x) const {
  const int axis = static_cast<int>(x.shape().size()) - 1;
  check_shape(axis >= 0 && x.dim(axis) == gamma.numel(),
              "LayerNorm: last dim mismatch for ", shape_str(x.shape()));
  Shape keep = x.shape();
  keep[static_cast<size_t>(axis)] = 1;
  Var mu = reshape(mean_axis(x, axis), keep);
  Var centered = sub(x, mu);
  Var var = reshape(mean_axis(square(centered), axis), keep);
  Var normed = div(centered, sqrt_v(add_scalar(var, 1e-5)));
  return add(mul(normed, gamma), beta);
}

GatedFfn::GatedFfn(ParamStore& store, const std::string& prefix, int64_t channels,
                   int64_t hidden_, Rng& rng, Init out_init)
    : hidden(hidden_) {
  check_param(hidden > 0, "GatedFfn: hidden width must be positive");
  in_proj = Conv2dLayer(store, prefix + ".in", channels, 2 * hidden, 1, 1, 0,
                        PadMode::Zero, rng);
  mix = DepthwiseConv2d(store, prefix + ".mix", 2 * hidden, 3, PadMode::Reflect, rng);
  out_proj = Conv2dLayer(store, prefix + ".out", hidden, channels, 1, 1, 0,
                         PadMode::Zero, rng, out_init);
}

Var GatedFfn::forward(const Var& x) const {
  Var expanded = mix.forward(in_proj.forward(x));
  Var a = slice(expanded, 1, 0, hidden);
  Var g = slice(expanded, 1, hidden, hidden);
  return out_proj.forward(mul(gelu(a), g));
}

TokenSelfAttention::TokenSelfAttention(ParamStore& store, const std::string& prefix,
                                       int64_t channels, int heads_, Rng& rng)
    : heads(heads_) {
  check_param(heads >= 1 && channels % heads == 0,
              "TokenSelfAttention: channels must divide into heads");
  wq = Linear(store, prefix + ".wq", channels, channels, rng, false);
  wk = Linear(store, prefix + ".wk", channels, channels, rng, false);
  wv = Linear(store, prefix + ".wv", channels, channels, rng, false);
  wo = Linear(store, prefix + ".wo", channels, channels, rng, true, Init::Zero);
}

namespace {

// (B,T,C) -> (B*heads, T, C/heads)
Var split_heads(const Var& x, int heads) {
  const int64_t b = x.dim(0), t = x.dim(1), c = x.dim(2);
  Var y = reshape(x, {b, t, heads, c / heads});
  y = permute(y, {0, 2, 1, 3});
  return reshape(y, {b * heads, t, c / heads});
}

// inverse of split_heads
Var merge_heads(const Var& x, int heads, int64_t b) {
  const int64_t t = x.dim(1), d = x.dim(2);
  Var y = reshape(x, {b, heads, t, d});
  y = permute(y, {0, 2, 1, 3});
  return reshape(y, {b, t, heads * d});
}

}  // namespace

Var TokenSelfAttention::forward(const Var& tokens) const {
  check_shape(tokens.shape().size() == 3, "TokenSelfAttention: expected (B,T,C), got ",
              shape_str(tokens.shape()));
  const int64_t b = tokens.dim(0), c = tokens.dim(2);
  const int64_t d = c / heads;
  Var q = split_heads(wq.forward(tokens), heads);
  Var k = split_heads(wk.forward(tokens), heads);
  Var v = split_heads(wv.forward(tokens), heads);
  Var scores = mul_scalar(bmm(q, k, false, true), 1.0 / std::sqrt(Scalar(d)));
  Var out = bmm(softmax_lastdim(scores), v);
  return wo.forward(merge_heads(out, heads, b));
}

SingleQueryAttention::SingleQueryAttention(ParamStore& store, const std::string& prefix,
                                           int64_t dim, int heads_, Rng& rng)
    : heads(heads_) {
  check_param(heads >= 1 && dim % heads == 0,
              "SingleQueryAttention: dim must divide into heads");
  wq = Linear(store, prefix + ".wq", dim, dim, rng, false);
  wk = Linear(store, prefix + ".wk", dim, dim, rng, false);
  wv = Linear(store, prefix + ".wv", dim, dim, rng, false);
}

Var SingleQueryAttention::forward(const Var& query, const Var& tokens) const {
  check_shape(query.shape().size() == 2 && tokens.shape().size() == 3 &&
                  query.dim(0) == tokens.dim(0) && query.dim(1) == tokens.dim(2),
              "SingleQueryAttention: query ", shape_str(query.shape()),
              " vs tokens ", shape_str(tokens.shape()));
  const int64_t b = query.dim(0), dim = query.dim(1), t = tokens.dim(1);
  const int64_t d = dim / heads;
  Var q = reshape(wq.forward(query), {b * heads, 1, d});
  Var k = split_heads(wk.forward(tokens), heads);
  Var v = split_heads(wv.forward(tokens), heads);
  Var scores = mul_scalar(bmm(q, k, false, true), 1.0 / std::sqrt(Scalar(d)));
  Var attn = softmax_lastdim(scores);  // (B*heads, 1, T)
  last_weights = attn.val().clone().reshaped({b, heads, t});
  Var out = bmm(attn, v);  // (B*heads, 1, d)
  return reshape(out, {b, dim});
}

Var channels_to_tokens(const Var& x) {
  check_shape(x.shape().size() == 4, "channels_to_tokens: expected (B,C,H,W)");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  return permute(reshape(x, {b, c, h * w}), {0, 2, 1});
}

Var tokens_to_channels(const Var& tokens, int64_t h, int64_t w) {
  check_shape(tokens.shape().size() == 3 && tokens.dim(1) == h * w,
              "tokens_to_channels: bad token count for ", h, "x", w);
  const int64_t b = tokens.dim(0), c = tokens.dim(2);
  return reshape(permute(tokens, {0, 2, 1}), {b, c, h, w});
}

Var window_partition(const Var& x, int win) {
  check_shape(x.shape().size() == 4, "window_partition: expected (B,C,H,W)");
  const int64_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check_shape(win > 0 && h % win == 0 && w % win == 0,
              "window_partition: ", h, "x", w, " not divisible by ", win);
  const int64_t nh = h / win, nw = w / win;
  Var y = reshape(x, {b, c, nh, win, nw, win});
  y = permute(y, {0, 2, 4, 3, 5, 1});  // (B, nh, nw, win, win, C)
  return reshape(y, {b * nh * nw, int64_t(win) * win, c});
}

Var window_merge(const Var& tokens, int win, int64_t b, int64_t c, int64_t h,
                 int64_t w) {
  const int64_t nh = h / win, nw = w / win;
  check_shape(tokens.dim(0) == b * nh * nw && tokens.dim(1) == int64_t(win) * win &&
                  tokens.dim(2) == c,
              "window_merge: token shape ", shape_str(tokens.shape()),
              " does not match ", b, "x", c, "x", h, "x", w, " win ", win);
  Var y = reshape(tokens, {b, nh, nw, int64_t(win), int64_t(win), c});
  y = permute(y, {0, 5, 1, 3, 2, 4});  // (B, C, nh, win, nw, win)
  return reshape(y, {b, c, h, w});
}

}  // namespace cgir
