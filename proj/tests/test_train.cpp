#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cgir/image.hpp"
#include "cgir/train.hpp"
#include "gradcheck.hpp"

using namespace cgir;
using namespace cgir::testing;

namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "cgir-train-tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Two-task corpus over procedural cleans; train/val draw from disjoint
// clean indices so evaluation is not on memorized pixels.
SyntheticDataset make_data(int64_t first_clean, int64_t n_cleans,
                           int64_t expansion, uint64_t seed) {
  std::map<Task, std::vector<Tensor>> cleans;
  for (Task t : {Task::Noise, Task::Haze}) {
    for (int64_t i = 0; i < n_cleans; ++i)
      cleans[t].push_back(procedural_clean(first_clean + i, 48, 48));
  }
  return SyntheticDataset(std::move(cleans),
                          {{Task::Noise, expansion}, {Task::Haze, expansion}},
                          32, true, seed);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.steps = 6;
  cfg.batch = 2;
  cfg.eval_every = 3;
  cfg.embed_dim = 4;
  cfg.heads = 2;
  cfg.cluster_counts_override = {2, 2, 2, 2};
  cfg.seed = 7;
  return cfg;
}

bool all_finite(const std::vector<double>& xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

TEST_CASE("train config validation rejects inconsistent runs") {
  TrainConfig ok = tiny_config();
  CHECK_NOTHROW(ok.validate());

  TrainConfig c = ok;
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);

  c = ok;
  c.beta2 = 1.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);

  c = ok;
  c.epochs = 2;  // both epochs and steps set
  CHECK_THROWS_AS(c.validate(), ParameterError);

  c = ok;
  c.steps = 0;  // neither set
  CHECK_THROWS_AS(c.validate(), ParameterError);

  c = ok;
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);

  c = ok;
  c.cluster_counts_override = {2, 2, 2};
  CHECK_THROWS_AS(c.validate(), ParameterError);

  c = ok;
  c.loss_lambda = -0.1;
  CHECK_THROWS_AS(c.validate(), ParameterError);

  // Model-plan problems surface through the same gate.
  c = ok;
  c.embed_dim = 5;
  CHECK_THROWS_AS(c.validate(), ParameterError);
}

TEST_CASE("train config json roundtrip keeps every field") {
  TrainConfig cfg = tiny_config();
  cfg.lr = 3e-4;
  cfg.beta1 = 0.85;
  cfg.epochs = 4;
  cfg.steps = 0;
  cfg.lr_halve_epoch = 2;
  cfg.loss_lambda = 0.25;
  cfg.lambda_orth = 0.02;
  cfg.eval_every = 100;
  cfg.stochastic_prompts = false;
  cfg.disable_dafmm = true;
  cfg.init_mode = ProtoInit::Random;

  nlohmann::json j = cfg;
  TrainConfig back = j.get<TrainConfig>();
  nlohmann::json j2 = back;
  CHECK(j == j2);
  CHECK(back.lr == cfg.lr);
  CHECK(back.epochs == 4);
  CHECK(back.steps == 0);
  CHECK(back.stochastic_prompts == false);
  CHECK((back.init_mode == ProtoInit::Random));
  CHECK((back.cluster_counts_override == std::vector<int64_t>{2, 2, 2, 2}));

  // Absent fields fall back to defaults; junk init mode is rejected.
  TrainConfig dflt = nlohmann::json::object().get<TrainConfig>();
  CHECK(dflt.lr == TrainConfig{}.lr);
  CHECK(dflt.steps == TrainConfig{}.steps);
  nlohmann::json bad = {{"init_mode", "kmeans"}};
  CHECK_THROWS_AS(bad.get<TrainConfig>(), ParameterError);
}

TEST_CASE("learning rate halves at the configured point") {
  TrainConfig cfg = tiny_config();
  cfg.steps = 100;
  cfg.lr = 4e-4;
  CHECK(cfg.total_steps(10) == 100);
  CHECK(cfg.halve_step(10) == 50);  // default: midpoint
  CHECK(cfg.lr_at(49, 10) == 4e-4);
  CHECK(cfg.lr_at(50, 10) == 2e-4);

  cfg.lr_halve_step = 30;
  CHECK(cfg.halve_step(10) == 30);
  CHECK(cfg.lr_at(29, 10) == 4e-4);
  CHECK(cfg.lr_at(30, 10) == 2e-4);

  // Epoch-based runs scale by the dataset pass length.
  cfg.steps = 0;
  cfg.lr_halve_step = 0;
  cfg.epochs = 4;
  cfg.lr_halve_epoch = 2;
  CHECK(cfg.total_steps(10) == 40);
  CHECK(cfg.halve_step(10) == 20);
  cfg.lr_halve_epoch = 0;
  CHECK(cfg.halve_step(10) == 20);  // falls back to the midpoint
}

TEST_CASE("adam reproduces the hand-computed first step") {
  ParamStore store;
  Var p = store.add("p", Tensor::full({3}, 1.0));
  Adam opt(store, 0.1);
  Var loss = mul_scalar(sum_all(p), 0.5);
  store.zero_grads();
  backward(loss);
  opt.step();

  // Mirror of the update arithmetic with m0 = v0 = 0 and g = 0.5.
  const double g = 0.5;
  const double m = (1.0 - 0.9) * g;
  const double v = (1.0 - 0.999) * g * g;
  const double c1 = 1.0 - std::pow(0.9, 1.0);
  const double c2 = 1.0 - std::pow(0.999, 1.0);
  const double expect = 1.0 - 0.1 * (m / c1) / (std::sqrt(v / c2) + 1e-8);
  for (int64_t k = 0; k < 3; ++k) CHECK(p.val()[k] == expect);
  CHECK(opt.step_count() == 1);
  CHECK(opt.moments1()[0][0] == m);
  CHECK(opt.moments2()[0][0] == v);
}

TEST_CASE("adam with zero learning rate only updates its bookkeeping") {
  ParamStore store;
  Var p = store.add("p", Tensor::full({2}, 0.25));
  Adam opt(store, 0.0);
  Var loss = sum_all(p);
  store.zero_grads();
  backward(loss);
  opt.step();
  CHECK(p.val()[0] == 0.25);
  CHECK(p.val()[1] == 0.25);
  CHECK(opt.step_count() == 1);
  CHECK(opt.moments1()[0][0] == (1.0 - 0.9) * 1.0);
}

TEST_CASE("parameters without gradients are left untouched") {
  ParamStore store;
  Var used = store.add("used", Tensor::full({1}, 1.0));
  Var idle = store.add("idle", Tensor::full({1}, 2.0));
  Adam opt(store, 0.5);
  Var loss = sum_all(used);
  store.zero_grads();
  backward(loss);
  opt.step();
  CHECK(used.val()[0] != 1.0);
  CHECK(idle.val()[0] == 2.0);
  CHECK(opt.moments1()[1][0] == 0.0);
  CHECK(opt.moments2()[1][0] == 0.0);
}

TEST_CASE("adam constructor validates its hyperparameters") {
  ParamStore store;
  store.add("p", Tensor::full({1}, 0.0));
  CHECK_THROWS_AS(Adam(store, -1e-3), ParameterError);
  CHECK_THROWS_AS(Adam(store, 1e-3, 1.0), ParameterError);
  CHECK_THROWS_AS(Adam(store, 1e-3, 0.9, 0.0), ParameterError);

  // Registering more parameters after binding invalidates the layout.
  Adam opt(store, 1e-3);
  store.add("late", Tensor::full({1}, 0.0));
  CHECK_THROWS_AS(opt.step(), ParameterError);
}

TEST_CASE("a short run produces history, metrics, and checkpoints") {
  const fs::path dir = scratch_dir("short-run");
  SyntheticDataset train_data = make_data(0, 2, 2, 101);
  SyntheticDataset val_data = make_data(10, 2, 1, 202);

  TrainConfig cfg = tiny_config();
  TrainResult res = train(cfg, train_data, val_data, dir.string());

  CHECK(res.steps_run == 6);
  REQUIRE(res.loss_history.size() == 6);
  CHECK(all_finite(res.loss_history));
  for (double l : res.loss_history) CHECK(l >= 0.0);

  // eval_every = 3 over 6 steps: one mid-run pass and the final pass, two
  // tasks each.
  REQUIRE(res.metrics.size() == 4);
  CHECK(res.metrics[0].step == 3);
  CHECK(res.metrics[1].step == 3);
  CHECK(res.metrics[2].step == 6);
  CHECK(res.metrics[3].step == 6);
  std::vector<std::string> tasks = {res.metrics[0].task, res.metrics[1].task};
  std::sort(tasks.begin(), tasks.end());
  CHECK(tasks[0] == "haze");
  CHECK(tasks[1] == "noise");

  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "checkpoint_last.ckpt"));
  REQUIRE(fs::exists(dir / "checkpoint_final.ckpt"));
  CHECK(res.checkpoint_path == (dir / "checkpoint_final.ckpt").string());

  std::ifstream metrics(dir / "metrics.csv");
  std::string header;
  std::getline(metrics, header);
  CHECK(header == "step,task,psnr,ssim");
  int64_t rows = 0;
  for (std::string line; std::getline(metrics, line);)
    if (!line.empty()) ++rows;
  CHECK(rows == 4);

  nlohmann::json summary;
  std::ifstream(dir / "summary.json") >> summary;
  CHECK(summary["steps"] == 6);
  CHECK(summary["final"].size() == 2);
  CHECK(summary.contains("avg_psnr"));

  Checkpoint final_ck = load_checkpoint(res.checkpoint_path);
  CHECK(final_ck.step == 6);
  CHECK(final_ck.has_optimizer);
  CHECK(final_ck.adam_t == 6);
  CHECK(model_to_json(final_ck.model) == model_to_json(cfg.model_config()));
  CHECK(final_ck.train == nlohmann::json(cfg));
}

TEST_CASE("identical seeds give identical trajectories, fresh seeds move") {
  SyntheticDataset train_data = make_data(0, 2, 2, 101);
  SyntheticDataset val_data = make_data(10, 1, 1, 202);

  TrainConfig cfg = tiny_config();
  cfg.steps = 4;
  cfg.eval_every = 0;
  TrainResult a = train(cfg, train_data, val_data, scratch_dir("det-a").string());
  TrainResult b = train(cfg, train_data, val_data, scratch_dir("det-b").string());
  REQUIRE(a.loss_history.size() == b.loss_history.size());
  for (size_t i = 0; i < a.loss_history.size(); ++i)
    CHECK(a.loss_history[i] == b.loss_history[i]);
  REQUIRE(a.metrics.size() == b.metrics.size());
  for (size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].psnr == b.metrics[i].psnr);
    CHECK(a.metrics[i].ssim == b.metrics[i].ssim);
  }

  cfg.seed = 8;
  TrainResult c = train(cfg, train_data, val_data, scratch_dir("det-c").string());
  bool any_diff = false;
  for (size_t i = 0; i < a.loss_history.size(); ++i)
    any_diff = any_diff || a.loss_history[i] != c.loss_history[i];
  CHECK(any_diff);
}

TEST_CASE("resuming a checkpoint continues the exact trajectory") {
  SyntheticDataset train_data = make_data(0, 2, 2, 101);
  SyntheticDataset val_data = make_data(10, 1, 1, 202);

  TrainConfig full = tiny_config();
  full.steps = 6;
  full.eval_every = 0;

  const fs::path dir_full = scratch_dir("resume-full");
  TrainResult whole = train(full, train_data, val_data, dir_full.string());

  // First half as its own run. Pinning the halving step keeps the schedule
  // of the executed steps identical to the full run's prefix.
  TrainConfig half = full;
  half.steps = 3;
  half.lr_halve_step = 3;
  const fs::path dir_half = scratch_dir("resume-half");
  TrainResult first = train(half, train_data, val_data, dir_half.string());
  for (int i = 0; i < 3; ++i) CHECK(first.loss_history[i] == whole.loss_history[i]);

  const fs::path dir_rest = scratch_dir("resume-rest");
  TrainResult rest = train(full, train_data, val_data, dir_rest.string(),
                           first.checkpoint_path);
  CHECK(rest.steps_run == 3);
  REQUIRE(rest.loss_history.size() == 3);
  for (int i = 0; i < 3; ++i)
    CHECK(rest.loss_history[i] == whole.loss_history[i + 3]);

  // The resumed run lands on the same weights and optimizer state, bit for
  // bit, including the prompt-noise stream.
  Checkpoint a = load_checkpoint(whole.checkpoint_path);
  Checkpoint b = load_checkpoint(rest.checkpoint_path);
  CHECK(a.step == b.step);
  CHECK(a.rng == b.rng);
  REQUIRE(a.params.size() == b.params.size());
  for (size_t i = 0; i < a.params.size(); ++i)
    CHECK(bit_equal(a.params[i].second, b.params[i].second));
  for (size_t i = 0; i < a.adam_m.size(); ++i) {
    CHECK(bit_equal(a.adam_m[i], b.adam_m[i]));
    CHECK(bit_equal(a.adam_v[i], b.adam_v[i]));
  }
}

TEST_CASE("a diverged loss raises a training error and keeps the last state") {
  const fs::path dir = scratch_dir("diverge");
  SyntheticDataset train_data = make_data(0, 1, 2, 101);
  SyntheticDataset val_data = make_data(10, 1, 1, 202);

  TrainConfig cfg = tiny_config();
  cfg.steps = 4;
  cfg.eval_every = 0;
  cfg.lr = 1e150;  // one update throws the weights past representable range

  bool raised = false;
  try {
    train(cfg, train_data, val_data, dir.string());
  } catch (const TrainingError& e) {
    raised = true;
    CHECK(std::string(e.what()).find("checkpoint_last.ckpt") != std::string::npos);
  }
  CHECK(raised);
  REQUIRE(fs::exists(dir / "checkpoint_last.ckpt"));
  Checkpoint last = load_checkpoint((dir / "checkpoint_last.ckpt").string());
  CHECK(last.step >= 0);
}

TEST_CASE("a fresh network evaluates exactly like the degraded baseline") {
  SyntheticDataset val_data = make_data(10, 2, 1, 202);
  TrainConfig cfg = tiny_config();
  ParamStore store;
  Rng rng(derive_seed(cfg.seed, hash_tag("model-init")));
  RestorationNet net(store, cfg.model_config(), rng);

  std::vector<MetricsRecord> fresh = evaluate(net, val_data, 0);
  std::vector<MetricsRecord> base = degraded_baseline(val_data);
  REQUIRE(fresh.size() == base.size());
  for (size_t i = 0; i < fresh.size(); ++i) {
    CHECK(fresh[i].task == base[i].task);
    CHECK(fresh[i].psnr == base[i].psnr);
    CHECK(fresh[i].ssim == base[i].ssim);
  }
}

TEST_CASE("ablation grid trains each variant and writes the table") {
  const fs::path dir = scratch_dir("ablate");
  SyntheticDataset train_data = make_data(0, 1, 2, 101);
  SyntheticDataset val_data = make_data(10, 1, 1, 202);

  TrainConfig base = tiny_config();
  base.steps = 2;
  base.eval_every = 0;
  TrainConfig bare = base;
  bare.disable_pcgrm = true;
  bare.disable_dafmm = true;

  std::vector<std::pair<std::string, TrainConfig>> variants = {
      {"full", base}, {"wtb_only", bare}};
  std::vector<AblationRow> rows =
      run_ablation(variants, train_data, val_data, dir.string());

  REQUIRE(rows.size() == 2);
  CHECK(rows[0].name == "full");
  CHECK(rows[1].name == "wtb_only");
  for (const AblationRow& row : rows) {
    CHECK(row.per_task.size() == 2);
    CHECK(std::isfinite(row.avg_psnr));
    CHECK(row.avg_ssim > 0.0);
  }
  CHECK(fs::exists(dir / "full" / "checkpoint_final.ckpt"));
  CHECK(fs::exists(dir / "wtb_only" / "checkpoint_final.ckpt"));

  std::ifstream table(dir / "ablation.csv");
  int64_t lines = 0;
  for (std::string line; std::getline(table, line);)
    if (!line.empty()) ++lines;
  CHECK(lines == 1 + 2 * 3);  // header + per-task and average rows per variant

  // Broken variants are rejected before any training starts.
  TrainConfig bad = base;
  bad.lr = -1.0;
  CHECK_THROWS_AS(
      run_ablation({{"bad", bad}}, train_data, val_data, dir.string()),
      ParameterError);
}
