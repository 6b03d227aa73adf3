#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cgir/checkpoint.hpp"
#include "cgir/degrade.hpp"

namespace cgir {

// Optimization run description. A run length is given either in epochs over
// the dataset (with the halving epoch) or directly in steps (halved at the
// midpoint unless lr_halve_step says otherwise); exactly one of epochs/steps
// must be positive.
struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9, beta2 = 0.999;
  int64_t epochs = 0;
  int64_t steps = 2000;
  int64_t batch = 8;
  int64_t lr_halve_epoch = 0;
  int64_t lr_halve_step = 0;  // 0 with steps set: halve at steps / 2
  double loss_lambda = 0.4;
  double lambda_orth = 0.01;
  uint64_t seed = 0;
  int64_t eval_every = 500;  // 0: evaluate only at the end
  bool stochastic_prompts = true;

  // Model plan knobs and the ablation switches of the comparison tables.
  int64_t embed_dim = 16;
  int heads = 2;
  bool disable_pcgrm = false;
  bool disable_dafmm = false;
  ProtoInit init_mode = ProtoInit::Orthogonal;
  std::vector<int64_t> cluster_counts_override;  // empty, or one count per stage

  void validate() const;
  ModelConfig model_config() const;
  int64_t total_steps(int64_t steps_per_epoch) const;
  int64_t halve_step(int64_t steps_per_epoch) const;
  double lr_at(int64_t step, int64_t steps_per_epoch) const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct MetricsRecord {
  std::string task;
  double psnr = 0.0;
  double ssim = 0.0;
  int64_t step = 0;
};

struct TrainResult {
  std::vector<double> loss_history;    // one entry per optimization step
  std::vector<MetricsRecord> metrics;  // evaluation rows in emission order
  std::string checkpoint_path;         // final snapshot
  int64_t steps_run = 0;
};

// Restores every sample of `val` at full frame (the dataset decides the crop
// policy; pass one built with patch = 0) and averages PSNR/SSIM per task.
std::vector<MetricsRecord> evaluate(const RestorationNet& net, const Dataset& val,
                                    int64_t step);

// Full loop: Adam with the configured schedule, prototype renormalization
// after every step, periodic evaluation appended to <out_dir>/metrics.csv, a
// rolling last-good checkpoint, and a JSON summary on completion. A non-
// finite loss raises TrainingError; the newest rolling checkpoint survives.
// resume_from continues a saved run bit-exactly.
TrainResult train(const TrainConfig& cfg, const Dataset& train_data,
                  const Dataset& val_data, const std::string& out_dir,
                  const std::string& resume_from = "");

struct AblationRow {
  std::string name;
  std::vector<MetricsRecord> per_task;  // final-step records
  double avg_psnr = 0.0;
  double avg_ssim = 0.0;
};

// Trains each named variant with the shared data and writes a comparison
// table to <out_dir>/ablation.csv plus one run directory per variant.
std::vector<AblationRow> run_ablation(
    const std::vector<std::pair<std::string, TrainConfig>>& variants,
    const Dataset& train_data, const Dataset& val_data, const std::string& out_dir);

// Comparison baselines for the metric rows: PSNR/SSIM of the degraded inputs
// against their clean targets, per task.
std::vector<MetricsRecord> degraded_baseline(const Dataset& val);

}  // namespace cgir
