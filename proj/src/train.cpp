#include "cgir/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "cgir/metrics.hpp"

namespace cgir {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  check_param(lr > 0, "TrainConfig: lr must be positive, got ", lr);
  check_param(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1,
              "TrainConfig: betas must lie in (0, 1)");
  check_param(batch >= 1, "TrainConfig: batch must be >= 1, got ", batch);
  check_param((epochs > 0) != (steps > 0),
              "TrainConfig: set exactly one of epochs or steps");
  check_param(epochs >= 0 && steps >= 0 && lr_halve_epoch >= 0 && lr_halve_step >= 0,
              "TrainConfig: counts cannot be negative");
  check_param(loss_lambda >= 0 && lambda_orth >= 0,
              "TrainConfig: loss weights cannot be negative");
  check_param(eval_every >= 0, "TrainConfig: eval_every cannot be negative");
  check_param(cluster_counts_override.empty() || cluster_counts_override.size() == 4,
              "TrainConfig: cluster override needs one count per stage");
  for (int64_t n : cluster_counts_override) {
    check_param(n >= 1, "TrainConfig: cluster counts must be >= 1");
  }
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.embed_dim = embed_dim;
  m.heads = heads;
  m.use_pcgrm = !disable_pcgrm;
  m.use_dafmm = !disable_dafmm;
  m.proto_init = init_mode;
  if (!cluster_counts_override.empty()) {
    for (int l = 0; l < 4; ++l) {
      m.cluster_counts[l] = cluster_counts_override[static_cast<size_t>(l)];
      m.k1_counts[l] = std::min<int64_t>(m.k1_counts[l], m.cluster_counts[l]);
    }
  }
  return m;
}

int64_t TrainConfig::total_steps(int64_t steps_per_epoch) const {
  return steps > 0 ? steps : epochs * steps_per_epoch;
}

int64_t TrainConfig::halve_step(int64_t steps_per_epoch) const {
  if (steps > 0) return lr_halve_step > 0 ? lr_halve_step : steps / 2;
  if (lr_halve_epoch > 0) return lr_halve_epoch * steps_per_epoch;
  return total_steps(steps_per_epoch) / 2;
}

double TrainConfig::lr_at(int64_t step, int64_t steps_per_epoch) const {
  return step >= halve_step(steps_per_epoch) ? lr * 0.5 : lr;
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
  j = nlohmann::json{{"lr", cfg.lr},
                     {"beta1", cfg.beta1},
                     {"beta2", cfg.beta2},
                     {"epochs", cfg.epochs},
                     {"steps", cfg.steps},
                     {"batch", cfg.batch},
                     {"lr_halve_epoch", cfg.lr_halve_epoch},
                     {"lr_halve_step", cfg.lr_halve_step},
                     {"loss_lambda", cfg.loss_lambda},
                     {"lambda_orth", cfg.lambda_orth},
                     {"seed", cfg.seed},
                     {"eval_every", cfg.eval_every},
                     {"stochastic_prompts", cfg.stochastic_prompts},
                     {"embed_dim", cfg.embed_dim},
                     {"heads", cfg.heads},
                     {"disable_pcgrm", cfg.disable_pcgrm},
                     {"disable_dafmm", cfg.disable_dafmm},
                     {"init_mode", cfg.init_mode == ProtoInit::Orthogonal
                                       ? "orthogonal"
                                       : "random"},
                     {"cluster_counts_override", cfg.cluster_counts_override}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
  cfg.lr = j.value("lr", cfg.lr);
  cfg.beta1 = j.value("beta1", cfg.beta1);
  cfg.beta2 = j.value("beta2", cfg.beta2);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch = j.value("batch", cfg.batch);
  cfg.lr_halve_epoch = j.value("lr_halve_epoch", cfg.lr_halve_epoch);
  cfg.lr_halve_step = j.value("lr_halve_step", cfg.lr_halve_step);
  cfg.loss_lambda = j.value("loss_lambda", cfg.loss_lambda);
  cfg.lambda_orth = j.value("lambda_orth", cfg.lambda_orth);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.eval_every = j.value("eval_every", cfg.eval_every);
  cfg.stochastic_prompts = j.value("stochastic_prompts", cfg.stochastic_prompts);
  cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.disable_pcgrm = j.value("disable_pcgrm", cfg.disable_pcgrm);
  cfg.disable_dafmm = j.value("disable_dafmm", cfg.disable_dafmm);
  const std::string mode = j.value("init_mode", std::string("orthogonal"));
  check_param(mode == "orthogonal" || mode == "random",
              "TrainConfig: unknown init_mode '", mode, "'");
  cfg.init_mode = mode == "orthogonal" ? ProtoInit::Orthogonal : ProtoInit::Random;
  cfg.cluster_counts_override =
      j.value("cluster_counts_override", cfg.cluster_counts_override);
}

namespace {

Tensor stack_batch(const std::vector<Tensor>& images) {
  const Shape& s = images.front().shape();
  Tensor out = Tensor::empty({static_cast<int64_t>(images.size()), s[0], s[1], s[2]});
  const int64_t per = images.front().numel();
  for (size_t i = 0; i < images.size(); ++i) {
    check_shape(images[i].shape() == s, "stack_batch: ragged image sizes");
    std::copy(images[i].data(), images[i].data() + per,
              out.data() + static_cast<int64_t>(i) * per);
  }
  return out;
}

struct TaskAccum {
  double psnr_sum = 0, ssim_sum = 0;
  int64_t count = 0;
};

void append_metrics_csv(const std::string& path,
                        const std::vector<MetricsRecord>& rows) {
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  check_param(out.good(), "cannot open metrics file ", path);
  if (fresh) out << "step,task,psnr,ssim\n";
  for (const MetricsRecord& r : rows) {
    out << r.step << ',' << r.task << ',' << r.psnr << ',' << r.ssim << '\n';
  }
}

std::vector<MetricsRecord> summarize(const std::map<std::string, TaskAccum>& acc,
                                     int64_t step) {
  std::vector<MetricsRecord> rows;
  for (const auto& [task, a] : acc) {
    MetricsRecord r;
    r.task = task;
    r.step = step;
    r.psnr = a.psnr_sum / static_cast<double>(a.count);
    r.ssim = std::clamp(a.ssim_sum / static_cast<double>(a.count), 0.0, 1.0);
    rows.push_back(std::move(r));
  }
  return rows;
}

double moving_average(const std::vector<double>& xs, size_t begin, size_t count) {
  double s = 0;
  for (size_t i = begin; i < begin + count; ++i) s += xs[i];
  return s / static_cast<double>(count);
}

}  // namespace

std::vector<MetricsRecord> evaluate(const RestorationNet& net, const Dataset& val,
                                    int64_t step) {
  check_param(val.size() > 0, "evaluate: empty validation set");
  std::map<std::string, TaskAccum> acc;
  for (int64_t i = 0; i < val.size(); ++i) {
    DegradationSample s = val.get(0, i);
    Tensor restored = net.restore(s.degraded);
    TaskAccum& a = acc[task_name(s.label)];
    a.psnr_sum += psnr(restored, s.clean);
    a.ssim_sum += ssim_value(restored, s.clean);
    a.count += 1;
  }
  return summarize(acc, step);
}

std::vector<MetricsRecord> degraded_baseline(const Dataset& val) {
  check_param(val.size() > 0, "degraded_baseline: empty validation set");
  std::map<std::string, TaskAccum> acc;
  for (int64_t i = 0; i < val.size(); ++i) {
    DegradationSample s = val.get(0, i);
    TaskAccum& a = acc[task_name(s.label)];
    a.psnr_sum += psnr(s.degraded, s.clean);
    a.ssim_sum += ssim_value(s.degraded, s.clean);
    a.count += 1;
  }
  return summarize(acc, 0);
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_data,
                  const Dataset& val_data, const std::string& out_dir,
                  const std::string& resume_from) {
  cfg.validate();
  check_param(train_data.size() > 0, "train: empty training set");
  fs::create_directories(out_dir);

  const ModelConfig mcfg = cfg.model_config();
  ParamStore store;
  Rng init_rng(derive_seed(cfg.seed, hash_tag("model-init")));
  RestorationNet net(store, mcfg, init_rng);
  Adam opt(store, cfg.lr, cfg.beta1, cfg.beta2);
  Rng prompt_rng(derive_seed(cfg.seed, hash_tag("prompt-stream")));

  const nlohmann::json cfg_json = cfg;
  const int64_t steps_per_epoch =
      (train_data.size() + cfg.batch - 1) / cfg.batch;
  const int64_t end_step = cfg.total_steps(steps_per_epoch);
  check_param(end_step > 0, "train: run length is zero steps");

  int64_t step = 0;
  if (!resume_from.empty()) {
    Checkpoint ck = load_checkpoint(resume_from);
    load_params(ck, store);
    load_optimizer(ck, opt);
    if (!ck.rng.empty()) prompt_rng = Rng::deserialize(ck.rng);
    step = ck.step;
    check_param(step <= end_step, "train: checkpoint is already past the run end");
  }

  const int64_t start_step = step;
  const std::string rolling_path = (fs::path(out_dir) / "checkpoint_last.ckpt").string();
  const std::string final_path = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();

  auto save_state = [&](const std::string& path, int64_t at_step) {
    save_checkpoint(path,
                    snapshot_state(mcfg, cfg_json, store, &opt, &prompt_rng, at_step));
  };
  save_state(rolling_path, step);

  TrainResult result;
  for (; step < end_step; ++step) {
    opt.lr = cfg.lr_at(step, steps_per_epoch);

    std::vector<Tensor> degraded, clean;
    degraded.reserve(static_cast<size_t>(cfg.batch));
    clean.reserve(static_cast<size_t>(cfg.batch));
    for (int64_t j = 0; j < cfg.batch; ++j) {
      const int64_t k = step * cfg.batch + j;
      DegradationSample s =
          train_data.get(k / train_data.size(), k % train_data.size());
      degraded.push_back(std::move(s.degraded));
      clean.push_back(std::move(s.clean));
    }
    Var x(stack_batch(degraded));
    Var target(stack_batch(clean));

    Var pred = net.forward(x, &prompt_rng, cfg.stochastic_prompts);
    Var loss = restoration_loss(pred, target, cfg.loss_lambda, cfg.lambda_orth,
                                net.orthogonality_penalties());
    const double loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      raise<TrainingError>("train: loss diverged to ", loss_value, " at step ", step,
                           "; last good state is ", rolling_path);
    }
    result.loss_history.push_back(loss_value);

    store.zero_grads();
    backward(loss);
    opt.step();
    net.renormalize_prototypes();

    const int64_t done = step + 1;
    if (cfg.eval_every > 0 && done % cfg.eval_every == 0 && done < end_step) {
      std::vector<MetricsRecord> rows = evaluate(net, val_data, done);
      append_metrics_csv(metrics_path, rows);
      for (MetricsRecord& r : rows) result.metrics.push_back(std::move(r));
      save_state(rolling_path, done);
    }
  }

  std::vector<MetricsRecord> final_rows = evaluate(net, val_data, end_step);
  append_metrics_csv(metrics_path, final_rows);
  for (const MetricsRecord& r : final_rows) result.metrics.push_back(r);
  save_state(final_path, end_step);
  save_state(rolling_path, end_step);
  result.checkpoint_path = final_path;
  result.steps_run = end_step - start_step;

  nlohmann::json summary;
  summary["config"] = cfg_json;
  summary["steps"] = end_step;
  summary["final"] = nlohmann::json::array();
  double psnr_total = 0, ssim_total = 0;
  for (const MetricsRecord& r : final_rows) {
    summary["final"].push_back(
        {{"task", r.task}, {"psnr", r.psnr}, {"ssim", r.ssim}});
    psnr_total += r.psnr;
    ssim_total += r.ssim;
  }
  summary["avg_psnr"] = psnr_total / static_cast<double>(final_rows.size());
  summary["avg_ssim"] = ssim_total / static_cast<double>(final_rows.size());
  if (result.loss_history.size() >= 200) {
    summary["loss_avg_first_100"] = moving_average(result.loss_history, 0, 100);
    summary["loss_avg_last_100"] =
        moving_average(result.loss_history, result.loss_history.size() - 100, 100);
  }
  std::ofstream sum_out((fs::path(out_dir) / "summary.json").string());
  sum_out << summary.dump(2) << '\n';

  return result;
}

std::vector<AblationRow> run_ablation(
    const std::vector<std::pair<std::string, TrainConfig>>& variants,
    const Dataset& train_data, const Dataset& val_data, const std::string& out_dir) {
  check_param(!variants.empty(), "run_ablation: no variants given");
  for (const auto& [name, cfg] : variants) {
    check_param(!name.empty(), "run_ablation: unnamed variant");
    cfg.validate();
  }
  fs::create_directories(out_dir);

  std::vector<AblationRow> rows;
  for (const auto& [name, cfg] : variants) {
    TrainResult res =
        train(cfg, train_data, val_data, (fs::path(out_dir) / name).string());
    AblationRow row;
    row.name = name;
    const int64_t last_step = res.metrics.empty() ? 0 : res.metrics.back().step;
    for (const MetricsRecord& r : res.metrics) {
      if (r.step == last_step) row.per_task.push_back(r);
    }
    for (const MetricsRecord& r : row.per_task) {
      row.avg_psnr += r.psnr;
      row.avg_ssim += r.ssim;
    }
    row.avg_psnr /= static_cast<double>(row.per_task.size());
    row.avg_ssim /= static_cast<double>(row.per_task.size());
    rows.push_back(std::move(row));
  }

  std::ofstream table((fs::path(out_dir) / "ablation.csv").string());
  table << "variant,task,psnr,ssim\n";
  for (const AblationRow& row : rows) {
    for (const MetricsRecord& r : row.per_task) {
      table << row.name << ',' << r.task << ',' << r.psnr << ',' << r.ssim << '\n';
    }
    table << row.name << ",average," << row.avg_psnr << ',' << row.avg_ssim << '\n';
  }
  return rows;
}

}  // namespace cgir
