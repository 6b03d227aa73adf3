#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "cgir/backbone.hpp"
#include "cgir/metrics.hpp"
#include "gradcheck.hpp"

using namespace cgir;
using namespace cgir::testing;

namespace {

void set_param(ParamStore& store, const std::string& name, const Tensor& value) {
  Tensor& dst = store.find(name).node()->value;
  REQUIRE(dst.same_shape(value));
  for (int64_t i = 0; i < dst.numel(); ++i) dst[i] = value[i];
}

void perturb_params(ParamStore& store, Rng& rng, Scalar lo, Scalar hi) {
  for (auto& [name, var] : store.items()) {
    Tensor& t = var.node()->value;
    for (int64_t i = 0; i < t.numel(); ++i) t[i] += rng.uniform(lo, hi);
  }
}

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.embed_dim = 4;
  cfg.cluster_counts = {2, 2, 2, 2};
  cfg.k1_counts = {1, 1, 1, 1};
  cfg.heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("model config validation catches bad combinations") {
  ModelConfig ok;
  CHECK_NOTHROW(ok.validate());

  ModelConfig cfg = ok;
  cfg.embed_dim = 15;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);

  cfg = ok;
  cfg.heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), ParameterError);

  cfg = ok;
  cfg.k1_counts[2] = 5;  // above the cluster count
  CHECK_THROWS_AS(cfg.validate(), ParameterError);

  cfg = ok;
  cfg.k2 = 3;  // above experts_per_cluster
  CHECK_THROWS_AS(cfg.validate(), ParameterError);

  cfg = ok;
  cfg.fsb_k = 4;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);

  cfg = ok;
  cfg.stage_depths[1] = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);

  cfg = ok;
  cfg.cluster_counts[0] = 20;  // orthogonal prototypes need clusters <= width
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.proto_init = ProtoInit::Random;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("wavelet transformer block is the identity at init") {
  ParamStore store;
  Rng rng(3);
  Wtb block(store, "w", 4, 2, rng);
  Rng xr(4);
  Tensor x = rand_tensor({2, 4, 8, 8}, xr, -1.0, 1.0);
  Var y = block.forward(Var(x));
  REQUIRE(y.shape() == x.shape());
  CHECK(max_abs_diff(y.val(), x) < 1e-10);

  // Large enough inputs switch to windowed attention; the init identity and
  // shapes must survive the layout change.
  Tensor big = rand_tensor({1, 4, 48, 48}, xr, -1.0, 1.0);
  Var yb = block.forward(Var(big));
  REQUIRE(yb.shape() == big.shape());
  CHECK(max_abs_diff(yb.val(), big) < 1e-10);

  CHECK_THROWS_AS(block.forward(Var(Tensor::zeros({1, 4, 7, 8}))), ParameterError);
}

TEST_CASE("wavelet transformer block gradients after opening the projections") {
  ParamStore store;
  Rng rng(5);
  Wtb block(store, "w", 2, 1, rng);
  Rng pr(6);
  perturb_params(store, pr, -0.1, 0.1);
  Rng xr(7);
  std::vector<Tensor> inputs = {rand_tensor({1, 2, 6, 6}, xr, -1.0, 1.0)};
  gradcheck_sum([&](std::vector<Var>& v) { return block.forward(v[0]); }, inputs,
                1e-5, 1e-3);
}

TEST_CASE("prompt refinement mixes components convexly behind a zero gate") {
  ParamStore store;
  Rng rng(9);
  PromptGenBlock pgb(store, "p", 6, 4, rng);
  Rng xr(10);
  Tensor prompt = rand_tensor({2, 6}, xr, -1.0, 1.0);
  Tensor feat = rand_tensor({2, 6, 4, 4}, xr, -1.0, 1.0);

  Var weights;
  Var refined = pgb.forward(Var(prompt), Var(feat), &weights);
  REQUIRE(refined.shape() == prompt.shape());
  CHECK(max_abs_diff(refined.val(), prompt) == 0.0);  // zero-initialized output

  REQUIRE((weights.shape() == Shape{2, 4}));
  for (int64_t b = 0; b < 2; ++b) {
    Scalar sum = 0;
    for (int64_t k = 0; k < 4; ++k) {
      CHECK(weights.val().at({b, k}) >= 0.0);
      sum += weights.val().at({b, k});
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }

  // An opened gate moves the prompt.
  Rng pr(11);
  perturb_params(store, pr, -0.2, 0.2);
  Var moved = pgb.forward(Var(prompt), Var(feat));
  CHECK(max_abs_diff(moved.val(), prompt) > 1e-6);
}

TEST_CASE("identity-initialized network restores any image exactly") {
  ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(13);
  RestorationNet net(store, cfg, rng);
  CHECK(store.scalar_count() < 2000000);

  Rng xr(14);
  Tensor img = rand_tensor({3, 48, 48}, xr, 0.0, 1.0);
  Tensor out = net.restore(img);
  REQUIRE(out.shape() == img.shape());
  CHECK(max_abs_diff(out, img) == 0.0);
  CHECK(psnr(out, img) == std::numeric_limits<Scalar>::infinity());

  // The full-size plan also starts under the parameter budget and as the
  // identity.
  ParamStore big_store;
  Rng brng(15);
  ModelConfig full;
  RestorationNet big(big_store, full, brng);
  CHECK(big_store.scalar_count() < 2000000);
  Tensor img2 = rand_tensor({3, 64, 48}, xr, 0.0, 1.0);
  Tensor out2 = big.restore(img2);
  CHECK(max_abs_diff(out2, img2) == 0.0);

  MESSAGE("desk config parameters: ", store.scalar_count(),
          ", full config parameters: ", big_store.scalar_count());
}

TEST_CASE("forward output is deterministic and clipping stays in restore") {
  ModelConfig cfg = small_config();
  ParamStore s1, s2;
  Rng r1(17), r2(17);
  RestorationNet n1(s1, cfg, r1);
  RestorationNet n2(s2, cfg, r2);

  // Same seed, same parameters.
  REQUIRE(s1.scalar_count() == s2.scalar_count());
  for (int64_t i = 0; i < s1.size(); ++i) {
    CHECK(s1.items()[static_cast<size_t>(i)].first ==
          s2.items()[static_cast<size_t>(i)].first);
    CHECK(bit_equal(s1.items()[static_cast<size_t>(i)].second.val(),
                    s2.items()[static_cast<size_t>(i)].second.val()));
  }

  Rng pr(18);
  perturb_params(s1, pr, -0.05, 0.05);
  Rng pr2(18);
  perturb_params(s2, pr2, -0.05, 0.05);

  Rng xr(19);
  Tensor img = rand_tensor({2, 3, 32, 32}, xr, 0.0, 1.0);
  Var y1 = n1.forward(Var(img), nullptr, false);
  Var y2 = n1.forward(Var(img), nullptr, false);
  Var y3 = n2.forward(Var(img), nullptr, false);
  CHECK(bit_equal(y1.val(), y2.val()));
  CHECK(bit_equal(y1.val(), y3.val()));

  // Training forward may leave [0,1]; restore never does.
  Tensor single = rand_tensor({3, 32, 32}, xr, 0.0, 1.0);
  Tensor restored = n1.restore(single);
  for (int64_t i = 0; i < restored.numel(); ++i) {
    CHECK(restored[i] >= 0.0);
    CHECK(restored[i] <= 1.0);
  }
}

TEST_CASE("network rejects malformed inputs") {
  ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(21);
  RestorationNet net(store, cfg, rng);

  CHECK_THROWS_AS(net.forward(Var(Tensor::zeros({1, 3, 40, 48})), nullptr, false),
                  ParameterError);
  CHECK_THROWS_AS(net.forward(Var(Tensor::zeros({1, 1, 48, 48})), nullptr, false),
                  ParameterError);
  CHECK_THROWS_AS(net.forward(Var(Tensor::zeros({1, 3, 16, 16})), nullptr, false),
                  ParameterError);
  CHECK_THROWS_AS(net.restore(Tensor::zeros({3, 48, 40})), ParameterError);
}

TEST_CASE("ablation switches drop the matching modules") {
  Rng xr(23);
  Tensor img = rand_tensor({3, 32, 32}, xr, 0.0, 1.0);

  for (bool pcgrm : {true, false}) {
    for (bool dafmm : {true, false}) {
      ModelConfig cfg = small_config();
      cfg.use_pcgrm = pcgrm;
      cfg.use_dafmm = dafmm;
      ParamStore store;
      Rng rng(25);
      RestorationNet net(store, cfg, rng);

      CHECK(store.contains("enc0.moe.bank.p") == pcgrm);
      CHECK(store.contains("dec2.dafmm.out.w") == dafmm);
      CHECK(store.contains("dec2.prompt") == (dafmm && !pcgrm));
      CHECK(net.orthogonality_penalties().size() == (pcgrm ? 4u : 0u));

      Tensor out = net.restore(img);
      CHECK(max_abs_diff(out, img) == 0.0);  // identity init holds in every variant
    }
  }
}

TEST_CASE("forward trace exposes routing, stage features, and spectra") {
  ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(27);
  RestorationNet net(store, cfg, rng);
  Rng xr(28);
  Tensor img = rand_tensor({2, 3, 32, 32}, xr, 0.0, 1.0);

  ForwardTrace trace;
  trace.capture_spectra = true;
  net.forward(Var(img), nullptr, false, &trace);

  REQUIRE(trace.decisions.size() == 4);
  REQUIRE(trace.stage_features.size() == 4);
  for (int l = 0; l < 4; ++l) {
    const int64_t c = cfg.channels(l);
    REQUIRE((trace.stage_features[static_cast<size_t>(l)].shape() == Shape{2, c}));
    REQUIRE((trace.decisions[static_cast<size_t>(l)].prompt.shape() == Shape{2, c}));
    // Every sample keeps K1 clusters, weights renormalized to one.
    for (int64_t b = 0; b < 2; ++b) {
      REQUIRE(trace.decisions[static_cast<size_t>(l)].selected[static_cast<size_t>(b)]
                  .size() == 1);
      CHECK(std::abs(trace.decisions[static_cast<size_t>(l)].cluster_weights.val().at(
                         {b, 0}) -
                     1.0) < 1e-9);
    }
  }

  REQUIRE(trace.ll_bands.size() == 3);
  REQUIRE(trace.low_mined.size() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(trace.ll_bands[i].shape() == trace.low_mined[i].shape());
    CHECK(trace.ll_bands[i].shape().size() == 4);
  }

  // Without routing the trace has no decisions but still has features.
  ModelConfig plain = small_config();
  plain.use_pcgrm = false;
  ParamStore ps;
  Rng prng(29);
  RestorationNet pnet(ps, plain, prng);
  ForwardTrace ptrace;
  pnet.forward(Var(img), nullptr, false, &ptrace);
  CHECK(ptrace.decisions.empty());
  CHECK(ptrace.stage_features.size() == 4);
}

TEST_CASE("prompt hierarchy: deepest prompt carries through identity maps") {
  ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(31);
  RestorationNet net(store, cfg, rng);
  Rng xr(32);
  Tensor img = rand_tensor({2, 3, 32, 32}, xr, 0.0, 1.0);

  ForwardTrace trace;
  net.forward(Var(img), nullptr, false, &trace);
  std::vector<Var> prompts;
  for (const RoutingDecision& d : trace.decisions) prompts.push_back(d.prompt);

  // Open the value path and the output adapter into plain selectors: the
  // hierarchy then hands decoder slot 0 the first C_2 entries of the deepest
  // prompt, whatever the query was.
  const int64_t deep = cfg.channels(3), width = cfg.channels(2);
  Tensor eye = Tensor::zeros({deep, deep});
  for (int64_t i = 0; i < deep; ++i) eye.at({i, i}) = 1.0;
  set_param(store, "prompt_attn.wv.w", eye);
  Tensor sel = Tensor::zeros({width, deep});
  for (int64_t i = 0; i < width; ++i) sel.at({i, i}) = 1.0;
  set_param(store, "dec2.prompt_out.w", sel);

  Var refined = net.decode_prompt(0, prompts, 2);
  REQUIRE((refined.shape() == Shape{2, width}));
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t k = 0; k < width; ++k)
      CHECK(std::abs(refined.val().at({b, k}) - prompts[3].val().at({b, k})) < 1e-12);

  // Routing off: the decoder falls back to its learned constant prompt,
  // broadcast across the batch.
  ParamStore cstore;
  ModelConfig ccfg = small_config();
  ccfg.use_pcgrm = false;
  Rng crng(33);
  RestorationNet cnet(cstore, ccfg, crng);
  Tensor cp = Tensor::zeros({cfg.channels(2)});
  for (int64_t i = 0; i < cp.numel(); ++i) cp[i] = 0.01 * Scalar(i);
  set_param(cstore, "dec2.prompt", cp);
  Var fallback = cnet.decode_prompt(0, {}, 3);
  REQUIRE((fallback.shape() == Shape{3, cfg.channels(2)}));
  for (int64_t b = 0; b < 3; ++b)
    for (int64_t k = 0; k < cp.numel(); ++k)
      CHECK(fallback.val().at({b, k}) == cp[k]);
}

TEST_CASE("loss gradients reach the head and the parameter set stays fixed") {
  ModelConfig cfg = small_config();
  ParamStore store;
  Rng rng(35);
  RestorationNet net(store, cfg, rng);
  Rng xr(36);
  Tensor img = rand_tensor({1, 3, 32, 32}, xr, 0.0, 1.0);
  Tensor target = rand_tensor({1, 3, 32, 32}, xr, 0.0, 1.0);

  const int64_t before = store.size();
  Var out = net.forward(Var(img), nullptr, false);
  Var loss = mean_all(square(sub(out, Var(target))));
  backward(loss);
  CHECK(store.size() == before);  // forward registers nothing new

  CHECK(store.find("head.w").node()->grad.defined());
  CHECK(max_abs(store.find("head.w").node()->grad) > 0.0);
  CHECK(store.find("stem.w").node()->grad.defined());

  // Prototype renormalization is safe to call right after a step.
  net.renormalize_prototypes();
  for (const PcgrmRouter& r : net.routers()) {
    const Tensor& p = r.bank().prototypes.val();
    for (int64_t row = 0; row < p.dim(0); ++row) {
      Scalar norm2 = 0;
      for (int64_t k = 0; k < p.dim(1); ++k) norm2 += p.at({row, k}) * p.at({row, k});
      CHECK(std::abs(norm2 - 1.0) < 1e-9);
    }
  }
}
