#include "cgir/routing.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <map>

namespace cgir {

PrototypeBank init_prototypes(ParamStore& store, const std::string& prefix,
                              int64_t n, int64_t d, ProtoInit mode, Rng& rng,
                              int stage) {
  check_param(n >= 1 && d >= 1, "init_prototypes: need n, d >= 1");
  Tensor p = Tensor::empty({n, d});
  if (mode == ProtoInit::Orthogonal) {
    check_param(n <= d, "init_prototypes: orthogonal mode needs n <= d, got n=", n,
                " d=", d);
    Eigen::MatrixXd g(d, n);
    for (int64_t j = 0; j < n; ++j)
      for (int64_t i = 0; i < d; ++i) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, n);
    Eigen::MatrixXd r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
    for (int64_t j = 0; j < n; ++j) {
      const Scalar sign = r(j, j) < 0 ? -1.0 : 1.0;
      for (int64_t i = 0; i < d; ++i) p.at({j, i}) = sign * q(i, j);
    }
  } else {
    for (int64_t j = 0; j < n; ++j) {
      Scalar norm2 = 0;
      for (int64_t i = 0; i < d; ++i) {
        const Scalar v = rng.normal();
        p.at({j, i}) = v;
        norm2 += v * v;
      }
      const Scalar inv = 1.0 / std::sqrt(std::max(norm2, Scalar(1e-24)));
      for (int64_t i = 0; i < d; ++i) p.at({j, i}) *= inv;
    }
  }
  PrototypeBank bank;
  bank.prototypes = store.add(prefix + ".p", p.clone());
  bank.mu = store.add(prefix + ".mu", p.clone());
  bank.log_sigma = store.add(prefix + ".log_sigma",
                             Tensor::full({n, d}, std::log(0.1)));
  bank.stage = stage;
  return bank;
}

Var orthogonality_penalty(const PrototypeBank& bank) {
  const int64_t n = bank.n();
  Tensor eye = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i) eye.at({i, i}) = 1.0;
  Var gram = mm(bank.prototypes, bank.prototypes, false, true);
  return sum_all(square(sub(gram, Var::constant(eye))));
}

void normalize_prototype_rows(PrototypeBank& bank) {
  NoGrad ng;
  Tensor& p = bank.prototypes.node()->value;
  const int64_t n = bank.n(), d = bank.d();
  for (int64_t j = 0; j < n; ++j) {
    Scalar norm2 = 0;
    for (int64_t i = 0; i < d; ++i) norm2 += p.at({j, i}) * p.at({j, i});
    if (norm2 < 1e-24) continue;
    const Scalar inv = 1.0 / std::sqrt(norm2);
    for (int64_t i = 0; i < d; ++i) p.at({j, i}) *= inv;
  }
}

ExpertFn make_ffn_expert(ParamStore& store, const std::string& prefix,
                         int64_t channels, Rng& rng) {
  auto ffn = std::make_shared<GatedFfn>(store, prefix, channels,
                                        std::max<int64_t>(1, channels / 2), rng,
                                        Init::Zero);
  return [ffn](const Var& x) { return add(x, ffn->forward(x)); };
}

PcgrmRouter::PcgrmRouter(ParamStore& store, const std::string& prefix,
                         int64_t channels, int64_t dim, int64_t n_clusters,
                         int64_t experts_per_cluster, int heads, ProtoInit mode,
                         Rng& rng, int stage)
    : m_(experts_per_cluster) {
  check_param(experts_per_cluster >= 1, "PcgrmRouter: need at least one expert");
  bank_ = init_prototypes(store, prefix + ".bank", n_clusters, dim, mode, rng, stage);
  proj_ = Linear(store, prefix + ".proj", channels, dim, rng);
  attn_ = SingleQueryAttention(store, prefix + ".gate_attn", dim, heads, rng);
  cluster_heads_.reserve(static_cast<size_t>(n_clusters));
  experts_.resize(static_cast<size_t>(n_clusters));
  for (int64_t c = 0; c < n_clusters; ++c) {
    cluster_heads_.emplace_back(store, prefix + ".head" + std::to_string(c), dim,
                                experts_per_cluster, rng);
    auto& group = experts_[static_cast<size_t>(c)];
    group.reserve(static_cast<size_t>(experts_per_cluster));
    for (int64_t e = 0; e < experts_per_cluster; ++e) {
      group.push_back(make_ffn_expert(
          store, prefix + ".c" + std::to_string(c) + ".e" + std::to_string(e),
          channels, rng));
    }
  }
}

void PcgrmRouter::set_experts(std::vector<std::vector<ExpertFn>> experts) {
  check_param(experts.size() == experts_.size(), "set_experts: need ",
              experts_.size(), " cluster groups");
  for (const auto& group : experts)
    check_param(static_cast<int64_t>(group.size()) == m_, "set_experts: need ", m_,
                " experts per cluster");
  experts_ = std::move(experts);
}

RoutingDecision PcgrmRouter::cluster_posterior(const Var& x, int64_t k1) const {
  const int64_t n = bank_.n();
  check_param(k1 >= 1 && k1 <= n, "cluster_posterior: K1 must lie in [1, ", n,
              "], got ", k1);
  RoutingDecision dec;
  dec.query = proj_.forward(spatial_mean(x));
  Var qn = l2_normalize_lastdim(dec.query);
  Var pn = l2_normalize_lastdim(bank_.prototypes);
  Var sims = mm(qn, pn, false, true);  // (B, N) cosines
  dec.full_posterior = softmax_lastdim(sims);

  const int64_t b = x.dim(0);
  std::vector<int64_t> flat = topk_lastdim(dec.full_posterior.val(), k1);
  dec.selected.resize(static_cast<size_t>(b));
  for (int64_t i = 0; i < b; ++i) {
    dec.selected[static_cast<size_t>(i)].assign(
        flat.begin() + i * k1, flat.begin() + (i + 1) * k1);
  }
  dec.cluster_weights = softmax_lastdim(take_lastdim(sims, flat, k1));
  return dec;
}

void PcgrmRouter::sample_prompt(RoutingDecision& dec, Rng* rng,
                                bool stochastic) const {
  const int64_t b = dec.full_posterior.dim(0);
  const int64_t k1 = dec.cluster_weights.dim(1);
  const int64_t d = bank_.d();
  std::vector<int64_t> flat;
  flat.reserve(static_cast<size_t>(b * k1));
  for (const auto& row : dec.selected) flat.insert(flat.end(), row.begin(), row.end());

  Var z = reshape(index_select0(bank_.mu, flat), {b, k1, d});
  if (stochastic) {
    check_param(rng != nullptr, "sample_prompt: stochastic mode needs an rng");
    Var sigma = exp_v(reshape(index_select0(bank_.log_sigma, flat), {b, k1, d}));
    Tensor eps = Tensor::empty({b, k1, d});
    rng->fill_normal(eps.data(), eps.numel(), 0.0, 1.0);
    z = add(z, mul(sigma, Var::constant(std::move(eps))));
  }
  dec.prompt = sum_axis(mul(z, reshape(dec.cluster_weights, {b, k1, 1})), 1);
}

void PcgrmRouter::gate_context(RoutingDecision& dec) const {
  check_shape(dec.prompt.defined(), "gate_context: prompt not sampled yet");
  const int64_t b = dec.prompt.dim(0), d = dec.prompt.dim(1);
  dec.context = attn_.forward(dec.query, reshape(dec.prompt, {b, 1, d}));
}

void PcgrmRouter::expert_posteriors(RoutingDecision& dec, int64_t k2) const {
  check_param(k2 >= 1 && k2 <= m_, "expert_posteriors: K2 must lie in [1, ", m_,
              "], got ", k2);
  check_shape(dec.context.defined(), "expert_posteriors: gate context missing");
  const int64_t b = dec.context.dim(0);
  const int64_t k1 = dec.cluster_weights.dim(1);
  dec.expert_sel.assign(static_cast<size_t>(b), {});
  dec.expert_weights.assign(static_cast<size_t>(b), {});
  for (int64_t i = 0; i < b; ++i) {
    Var g_i = slice(dec.context, 0, i, 1);  // (1, D)
    auto& sel_row = dec.expert_sel[static_cast<size_t>(i)];
    auto& w_row = dec.expert_weights[static_cast<size_t>(i)];
    for (int64_t j = 0; j < k1; ++j) {
      const int64_t c = dec.selected[static_cast<size_t>(i)][static_cast<size_t>(j)];
      Var logits = cluster_heads_[static_cast<size_t>(c)].forward(g_i);  // (1, M)
      std::vector<int64_t> picks = topk_lastdim(logits.val(), k2);
      w_row.push_back(softmax_lastdim(take_lastdim(logits, picks, k2)));
      sel_row.push_back(std::move(picks));
    }
  }
}

Tensor PcgrmRouter::pixel_affinity(const Tensor& feat) const {
  NoGrad ng;
  Tensor f = feat;
  if (f.rank() == 3) f = f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)});
  check_shape(f.rank() == 4 && f.dim(0) == 1,
              "pixel_affinity: expected (C,H,W) or (1,C,H,W)");
  const int64_t h = f.dim(2);
  const int64_t w = f.dim(3);
  Var rows = reshape(channels_to_tokens(Var(f)), {h * w, f.dim(1)});
  Var qn = l2_normalize_lastdim(proj_.forward(rows));
  Var pn = l2_normalize_lastdim(bank_.prototypes);
  Var sims = mm(pn, qn, false, true);  // (N, HW)
  return reshape(sims, {bank_.n(), h, w}).val().clone();
}

Var PcgrmRouter::forward(const Var& x, int64_t k1, int64_t k2, Rng* rng,
                         bool stochastic, RoutingDecision* out_decision) const {
  RoutingDecision dec = cluster_posterior(x, k1);
  sample_prompt(dec, rng, stochastic);
  gate_context(dec);
  expert_posteriors(dec, k2);

  const int64_t b = x.dim(0);
  // Group samples by the (cluster, expert) pairs they routed to, so each
  // selected expert runs once on the sub-batch that wants it.
  struct Group {
    std::vector<int64_t> rows;
    std::vector<Var> weights;  // (1,1) scalars, alpha_c * w_e per sample
  };
  std::map<std::pair<int64_t, int64_t>, Group> groups;
  for (int64_t i = 0; i < b; ++i) {
    const auto& sel = dec.selected[static_cast<size_t>(i)];
    for (size_t j = 0; j < sel.size(); ++j) {
      Var alpha = slice(slice(dec.cluster_weights, 0, i, 1), 1,
                        static_cast<int64_t>(j), 1);  // (1,1)
      const auto& picks = dec.expert_sel[static_cast<size_t>(i)][j];
      Var pi = dec.expert_weights[static_cast<size_t>(i)][j];  // (1, K2)
      for (size_t t = 0; t < picks.size(); ++t) {
        Group& grp = groups[{sel[j], picks[t]}];
        grp.rows.push_back(i);
        grp.weights.push_back(
            mul(alpha, slice(pi, 1, static_cast<int64_t>(t), 1)));
      }
    }
  }

  Var acc;
  for (auto& [key, grp] : groups) {
    const auto& [c, e] = key;
    Var x_sub = index_select0(x, grp.rows);
    Var y_sub = experts_[static_cast<size_t>(c)][static_cast<size_t>(e)](x_sub);
    check_shape(y_sub.shape() == x_sub.shape(), "expert output must preserve shape");
    Var w = concat(grp.weights, 0);  // (rows, 1)
    w = reshape(w, {static_cast<int64_t>(grp.rows.size()), 1, 1, 1});
    Var term = scatter_add0(mul(y_sub, w), grp.rows, b);
    acc = acc.defined() ? add(acc, term) : term;
  }
  if (out_decision) *out_decision = dec;
  return acc;
}

FlatMoe::FlatMoe(ParamStore& store, const std::string& prefix, int64_t channels,
                 int64_t n_experts, Rng& rng) {
  check_param(n_experts >= 1, "FlatMoe: need at least one expert");
  gate = Linear(store, prefix + ".gate", channels, n_experts, rng);
  experts_.reserve(static_cast<size_t>(n_experts));
  for (int64_t e = 0; e < n_experts; ++e) {
    experts_.push_back(
        make_ffn_expert(store, prefix + ".e" + std::to_string(e), channels, rng));
  }
}

void FlatMoe::set_experts(std::vector<ExpertFn> experts) {
  check_param(experts.size() == experts_.size(), "set_experts: need ",
              experts_.size(), " experts");
  experts_ = std::move(experts);
}

Var FlatMoe::forward(const Var& x) const {
  const int64_t b = x.dim(0);
  Var p = softmax_lastdim(gate.forward(spatial_mean(x)));  // (B, M)
  Var acc;
  for (size_t e = 0; e < experts_.size(); ++e) {
    Var w = reshape(slice(p, 1, static_cast<int64_t>(e), 1), {b, 1, 1, 1});
    Var term = mul(experts_[e](x), w);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

}  // namespace cgir
