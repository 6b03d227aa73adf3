#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cgir/nn.hpp"

namespace cgir {

// Two-stage probabilistic expert routing. Stage one scores a pooled feature
// against a bank of unit prototypes and keeps the K1 most probable clusters;
// a Gaussian-reparameterized prompt built from the selected clusters drives
// a cross-attention gate whose context picks K2 experts inside each cluster.

enum class ProtoInit { Orthogonal, Random };

struct PrototypeBank {
  Var prototypes;  // (N, D), rows kept on the unit sphere between steps
  Var mu;          // (N, D) cluster means
  Var log_sigma;   // (N, D), sigma = exp(log_sigma)
  int stage = 1;
  int64_t n() const { return prototypes.dim(0); }
  int64_t d() const { return prototypes.dim(1); }
};

// Orthogonal mode takes the QR basis of a Gaussian draw (needs N <= D);
// random mode unit-normalizes Gaussian rows. mu starts at the prototypes,
// log_sigma at log(0.1).
PrototypeBank init_prototypes(ParamStore& store, const std::string& prefix,
                              int64_t n, int64_t d, ProtoInit mode, Rng& rng,
                              int stage = 1);

// ||P P^T - I||_F^2 on the raw prototype rows.
Var orthogonality_penalty(const PrototypeBank& bank);

// Rescales each prototype row to unit norm in place (no gradient). Runs
// after every optimizer step.
void normalize_prototype_rows(PrototypeBank& bank);

struct RoutingDecision {
  Var query;           // (B, D) pooled projected feature, pre-normalization
  Var full_posterior;  // (B, N) softmax over prototype cosines
  std::vector<std::vector<int64_t>> selected;  // per sample, K1 ascending

  Var cluster_weights;  // (B, K1) restricted renormalization
  Var prompt;           // (B, D)
  Var context;          // (B, D) cross-attention gate output

  // Per sample and selected-cluster slot: the K2 expert picks and their
  // renormalized weights (each (1, K2), aligned with expert_sel[b][j]).
  std::vector<std::vector<std::vector<int64_t>>> expert_sel;
  std::vector<std::vector<Var>> expert_weights;
};

using ExpertFn = std::function<Var(const Var&)>;

// Standard expert: shape-preserving residual gated feed-forward block with
// zero-initialized output, so a fresh expert is the identity map.
ExpertFn make_ffn_expert(ParamStore& store, const std::string& prefix,
                         int64_t channels, Rng& rng);

class PcgrmRouter {
 public:
  PcgrmRouter() = default;
  // Builds the bank, the pooled-feature projection (channels -> dim), the
  // gate attention, per-cluster expert-selection heads, and n*m default
  // experts.
  PcgrmRouter(ParamStore& store, const std::string& prefix, int64_t channels,
              int64_t dim, int64_t n_clusters, int64_t experts_per_cluster,
              int heads, ProtoInit mode, Rng& rng, int stage = 1);

  // Replaces the expert bank (tests inject analytic experts). Outer size
  // must be N, inner M.
  void set_experts(std::vector<std::vector<ExpertFn>> experts);

  // Stage 1: GAP -> projection -> cosine vs prototypes -> softmax posterior,
  // top-K1 selection, restricted renormalization.
  RoutingDecision cluster_posterior(const Var& x, int64_t k1) const;

  // Prompt = sum_c alpha_c (mu_c + sigma_c * eps_c); eps is zero when
  // stochastic is false, else drawn per sample from rng.
  void sample_prompt(RoutingDecision& dec, Rng* rng, bool stochastic) const;

  // Context g from single-query cross-attention of the pooled feature over
  // the one-token prompt sequence.
  void gate_context(RoutingDecision& dec) const;

  // Stage 2: per-cluster affine logits from g, top-K2, restricted softmax.
  void expert_posteriors(RoutingDecision& dec, int64_t k2) const;

  // Per-pixel cluster affinities for visualization: every spatial feature
  // vector goes through the same projection as the pooled query, then cosine
  // against each prototype. Input (C, H, W) or (1, C, H, W), output
  // (N, H, W) in [-1, 1]. Runs outside the graph.
  Tensor pixel_affinity(const Tensor& feat) const;

  // Full pipeline, Eq-for-eq: y = sum_c alpha_c sum_e w_e E_e(x). Only
  // experts some sample selected run, each on its own sub-batch.
  Var forward(const Var& x, int64_t k1, int64_t k2, Rng* rng, bool stochastic,
              RoutingDecision* out_decision = nullptr) const;

  PrototypeBank& bank() { return bank_; }
  const PrototypeBank& bank() const { return bank_; }
  const SingleQueryAttention& gate_attention() const { return attn_; }
  int64_t n_clusters() const { return bank_.n(); }
  int64_t experts_per_cluster() const { return m_; }

 private:
  PrototypeBank bank_;
  Linear proj_;
  SingleQueryAttention attn_;
  std::vector<Linear> cluster_heads_;  // logits = W_c g + b_c
  std::vector<std::vector<ExpertFn>> experts_;
  int64_t m_ = 0;
};

// Dense single-stage baseline: p = softmax(W GAP(x) + b), every expert runs.
class FlatMoe {
 public:
  FlatMoe() = default;
  FlatMoe(ParamStore& store, const std::string& prefix, int64_t channels,
          int64_t n_experts, Rng& rng);

  void set_experts(std::vector<ExpertFn> experts);
  Var forward(const Var& x) const;

  Linear gate;

 private:
  std::vector<ExpertFn> experts_;
};

}  // namespace cgir
