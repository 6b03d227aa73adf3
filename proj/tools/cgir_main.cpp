#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cgir/diagnostics.hpp"
#include "cgir/image.hpp"
#include "cgir/train.hpp"

namespace fs = std::filesystem;

namespace {

using namespace cgir;

// Shared dataset selection: a paired folder tree when --data-root is given,
// otherwise synthetic degradations over procedural clean images.
struct DataOpts {
  std::string data_root;
  std::vector<std::string> tasks = {"noise", "rain", "haze"};
  int64_t cleans = 16;
  int64_t first_clean = 0;
  int64_t image_size = 96;
  int64_t expansion = 1;
  uint64_t seed = 0;
};

void add_data_options(CLI::App* cmd, DataOpts& d) {
  cmd->add_option("--data-root", d.data_root,
                  "paired folder dataset <root>/<task>/{degraded,clean}");
  cmd->add_option("--tasks", d.tasks, "synthetic task mix")->delimiter(',');
  cmd->add_option("--cleans", d.cleans, "clean images per synthetic task");
  cmd->add_option("--first-clean", d.first_clean,
                  "first procedural clean index");
  cmd->add_option("--image-size", d.image_size, "synthetic clean image side");
  cmd->add_option("--expansion", d.expansion,
                  "synthetic samples per clean image and epoch");
}

std::unique_ptr<Dataset> make_dataset(const DataOpts& d, int64_t patch,
                                      bool augment) {
  if (!d.data_root.empty())
    return std::make_unique<FolderDataset>(d.data_root, patch, augment, d.seed);
  check_param(!d.tasks.empty(), "no tasks selected");
  check_param(d.cleans >= 1, "need at least one clean image per task");
  std::map<Task, std::vector<Tensor>> cleans;
  std::map<Task, int64_t> expansion;
  for (const std::string& name : d.tasks) {
    Task t = task_from_name(name);
    for (int64_t i = 0; i < d.cleans; ++i)
      cleans[t].push_back(
          procedural_clean(d.first_clean + i, d.image_size, d.image_size));
    expansion[t] = d.expansion;
  }
  return std::make_unique<SyntheticDataset>(std::move(cleans), std::move(expansion),
                                            patch, augment, d.seed);
}

// Rebuilds the network a checkpoint describes and loads its weights. The
// store must outlive the returned net (parameters are shared, not copied).
std::unique_ptr<RestorationNet> load_model(const std::string& path,
                                           ParamStore& store, Checkpoint& ck) {
  ck = load_checkpoint(path);
  Rng scratch(0);  // init values are overwritten by the load
  auto net = std::make_unique<RestorationNet>(store, ck.model, scratch);
  load_params(ck, store);
  return net;
}

// Probe image for the image-centric diagnostics: an explicit PNG, or a
// procedural clean optionally run through one synthetic degradation.
Tensor pick_image(const std::string& image_path, const std::string& task,
                  int64_t clean_index, int64_t image_size, uint64_t seed) {
  if (!image_path.empty()) return load_png(image_path);
  Tensor clean = procedural_clean(clean_index, image_size, image_size);
  if (task.empty()) return clean;
  return synthesize_sample(clean, task_from_name(task), TaskParamRanges{}, 0,
                           false, seed)
      .degraded;
}

std::string pad4(int64_t n) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << n;
  return os.str();
}

void print_metric_table(const std::vector<MetricsRecord>& base,
                        const std::vector<MetricsRecord>& restored) {
  std::cout << std::fixed << std::setprecision(2);
  std::cout << "task        degraded     restored     gain      ssim\n";
  double gain_sum = 0.0;
  for (size_t i = 0; i < restored.size(); ++i) {
    const double gain = restored[i].psnr - base[i].psnr;
    gain_sum += gain;
    std::cout << std::left << std::setw(12) << restored[i].task << std::right
              << std::setw(6) << base[i].psnr << " dB" << std::setw(7)
              << restored[i].psnr << " dB" << std::setw(6) << std::showpos
              << gain << std::noshowpos << " dB" << std::setw(10)
              << std::setprecision(3) << restored[i].ssim
              << std::setprecision(2) << '\n';
  }
  std::cout << "average gain " << std::showpos
            << gain_sum / static_cast<double>(restored.size()) << std::noshowpos
            << " dB\n";
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRecord>& rows) {
  std::ofstream out(path);
  check_param(out.good(), "cannot open ", path, " for writing");
  out << "step,task,psnr,ssim\n";
  for (const MetricsRecord& r : rows)
    out << r.step << ',' << r.task << ',' << r.psnr << ',' << r.ssim << '\n';
}

// ----- synth -----------------------------------------------------------

struct SynthOpts {
  std::string out;
  std::vector<std::string> tasks = {"noise", "rain", "haze"};
  int64_t count = 8;
  int64_t image_size = 64;
  int64_t first_clean = 0;
  uint64_t seed = 0;
};

void run_synth(const SynthOpts& o) {
  check_param(o.count >= 1, "synth: count must be positive");
  for (const std::string& name : o.tasks) {
    const Task task = task_from_name(name);
    const fs::path task_dir = fs::path(o.out) / name;
    fs::create_directories(task_dir / "degraded");
    fs::create_directories(task_dir / "clean");
    for (int64_t i = 0; i < o.count; ++i) {
      Tensor clean =
          procedural_clean(o.first_clean + i, o.image_size, o.image_size);
      DegradationSample s =
          synthesize_sample(clean, task, TaskParamRanges{}, 0, false,
                            derive_seed(o.seed, hash_tag(name), static_cast<uint64_t>(i)));
      const std::string stem = pad4(i) + ".png";
      save_png((task_dir / "degraded" / stem).string(), s.degraded);
      save_png((task_dir / "clean" / stem).string(), s.clean);
    }
    std::cout << "wrote " << o.count << " pairs to " << task_dir.string() << '\n';
  }
}

// ----- train / ablate ---------------------------------------------------

struct TrainCliOpts {
  std::string config_path;
  std::string out;
  std::string resume;
  DataOpts data;
  int64_t val_cleans = 4;
  int64_t val_image_size = 64;
  int64_t patch = 64;
  std::string rows = "toggles";  // ablate only
};

// Builds the run configuration: config file first, then flag overrides on
// top. Passing only --epochs or only --steps flips the run-length mode.
TrainConfig build_train_config(const TrainCliOpts& o, CLI::App* cmd) {
  TrainConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    check_param(in.good(), "cannot read config file ", o.config_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      raise<ParameterError>("config file ", o.config_path, ": ", e.what());
    }
    cfg = j.get<TrainConfig>();
  }

  auto set_if = [cmd](const char* name, auto& field) {
    const CLI::Option* opt = cmd->get_option(name);
    if (opt->count() > 0)
      field = opt->as<std::remove_reference_t<decltype(field)>>();
  };
  set_if("--steps", cfg.steps);
  set_if("--epochs", cfg.epochs);
  set_if("--batch", cfg.batch);
  set_if("--lr", cfg.lr);
  set_if("--eval-every", cfg.eval_every);
  set_if("--seed", cfg.seed);
  set_if("--embed-dim", cfg.embed_dim);
  set_if("--heads", cfg.heads);
  set_if("--clusters", cfg.cluster_counts_override);

  const bool steps_set = cmd->count("--steps") > 0;
  const bool epochs_set = cmd->count("--epochs") > 0;
  if (steps_set && !epochs_set) cfg.epochs = 0;
  if (epochs_set && !steps_set) cfg.steps = 0;

  if (cmd->count("--init") > 0)
    cfg.init_mode = cmd->get_option("--init")->as<std::string>() == "random"
                        ? ProtoInit::Random
                        : ProtoInit::Orthogonal;
  if (cmd->count("--disable-pcgrm") > 0) cfg.disable_pcgrm = true;
  if (cmd->count("--disable-dafmm") > 0) cfg.disable_dafmm = true;
  if (cmd->count("--deterministic-prompts") > 0) cfg.stochastic_prompts = false;
  return cfg;
}

void add_train_options(CLI::App* cmd, TrainCliOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration");
  cmd->add_option("--out", o.out, "output directory")->required();
  add_data_options(cmd, o.data);
  cmd->add_option("--val-cleans", o.val_cleans, "validation cleans per task");
  cmd->add_option("--val-image-size", o.val_image_size,
                  "validation frame side");
  cmd->add_option("--patch", o.patch, "training crop size");

  cmd->add_option("--steps", "optimization steps");
  cmd->add_option("--epochs", "dataset passes (alternative to --steps)");
  cmd->add_option("--batch", "batch size");
  cmd->add_option("--lr", "peak learning rate");
  cmd->add_option("--eval-every", "evaluation cadence in steps");
  cmd->add_option("--seed", "run seed");
  cmd->add_option("--embed-dim", "stage-1 channel width");
  cmd->add_option("--heads", "attention heads");
  cmd->add_option("--clusters", "per-stage cluster counts")->expected(4);
  cmd->add_option("--init", "prototype init")
      ->check(CLI::IsMember({"orthogonal", "random"}));
  cmd->add_flag("--disable-pcgrm", "train without routing");
  cmd->add_flag("--disable-dafmm", "train without frequency modulation");
  cmd->add_flag("--deterministic-prompts", "use cluster means, no prompt noise");
}

// The validation stream mirrors the training mix but draws its clean images
// from past the training range so frames are never shared.
std::unique_ptr<Dataset> make_val_dataset(const TrainCliOpts& o,
                                          const std::string& val_root) {
  if (!val_root.empty()) {
    DataOpts v = o.data;
    v.data_root = val_root;
    return make_dataset(v, 0, false);
  }
  DataOpts v = o.data;
  v.data_root.clear();
  v.cleans = o.val_cleans;
  v.first_clean = o.data.first_clean + o.data.cleans;
  v.image_size = o.val_image_size;
  v.expansion = 1;
  v.seed = derive_seed(o.data.seed, hash_tag("val-data"));
  return make_dataset(v, 0, false);
}

void run_train(const TrainCliOpts& o, CLI::App* cmd, const std::string& val_root) {
  TrainConfig cfg = build_train_config(o, cmd);
  cfg.validate();
  DataOpts d = o.data;
  d.seed = derive_seed(d.seed, hash_tag("train-data"));
  std::unique_ptr<Dataset> train_data = make_dataset(d, o.patch, true);
  std::unique_ptr<Dataset> val_data = make_val_dataset(o, val_root);

  TrainResult res = train(cfg, *train_data, *val_data, o.out, o.resume);
  std::cout << "trained " << res.steps_run << " steps; final checkpoint "
            << res.checkpoint_path << '\n';

  std::vector<MetricsRecord> base = degraded_baseline(*val_data);
  std::vector<MetricsRecord> final_rows(res.metrics.end() - static_cast<int64_t>(base.size()),
                                        res.metrics.end());
  print_metric_table(base, final_rows);
}

void run_ablate(const TrainCliOpts& o, CLI::App* cmd, const std::string& val_root) {
  TrainConfig base = build_train_config(o, cmd);
  base.validate();
  DataOpts d = o.data;
  d.seed = derive_seed(d.seed, hash_tag("train-data"));
  std::unique_ptr<Dataset> train_data = make_dataset(d, o.patch, true);
  std::unique_ptr<Dataset> val_data = make_val_dataset(o, val_root);

  std::vector<std::pair<std::string, TrainConfig>> variants;
  if (o.rows == "toggles" || o.rows == "both") {
    TrainConfig wtb = base;
    wtb.disable_pcgrm = true;
    wtb.disable_dafmm = true;
    TrainConfig routed = base;
    routed.disable_dafmm = true;
    TrainConfig freq = base;
    freq.disable_pcgrm = true;
    TrainConfig full = base;
    full.disable_pcgrm = false;
    full.disable_dafmm = false;
    variants.emplace_back("wtb_only", wtb);
    variants.emplace_back("pcgrm_only", routed);
    variants.emplace_back("dafmm_only", freq);
    variants.emplace_back("full", full);
  }
  if (o.rows == "clusters" || o.rows == "both") {
    for (std::vector<int64_t> counts :
         {std::vector<int64_t>{2, 2, 2, 2}, std::vector<int64_t>{3, 3, 3, 3},
          std::vector<int64_t>{4, 4, 4, 4}, std::vector<int64_t>{5, 4, 3, 2}}) {
      TrainConfig v = base;
      v.disable_pcgrm = false;
      v.cluster_counts_override = counts;
      std::string name = "clusters";
      for (int64_t c : counts) name += "_" + std::to_string(c);
      variants.emplace_back(name, v);
    }
  }
  check_param(!variants.empty(), "ablate: unknown row set '", o.rows, "'");

  std::vector<AblationRow> rows =
      run_ablation(variants, *train_data, *val_data, o.out);
  std::cout << std::fixed << std::setprecision(2);
  std::cout << "variant                 avg psnr   avg ssim\n";
  for (const AblationRow& r : rows)
    std::cout << std::left << std::setw(24) << r.name << std::right
              << std::setw(6) << r.avg_psnr << " dB" << std::setw(9)
              << std::setprecision(3) << r.avg_ssim << std::setprecision(2)
              << '\n';
  std::cout << "table written to " << (fs::path(o.out) / "ablation.csv").string()
            << '\n';
}

// ----- eval -------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint;
  std::string out_csv;
  DataOpts data;
};

void run_eval(const EvalOpts& o) {
  ParamStore store;
  Checkpoint ck;
  std::unique_ptr<RestorationNet> net = load_model(o.checkpoint, store, ck);
  std::unique_ptr<Dataset> val = make_dataset(o.data, 0, false);

  std::vector<MetricsRecord> base = degraded_baseline(*val);
  std::vector<MetricsRecord> restored = evaluate(*net, *val, ck.step);
  print_metric_table(base, restored);
  if (!o.out_csv.empty()) {
    write_metrics_csv(o.out_csv, restored);
    std::cout << "metrics written to " << o.out_csv << '\n';
  }
}

// ----- diagnose ---------------------------------------------------------

struct DiagOpts {
  std::string checkpoint;
  std::string out = ".";
  DataOpts data;
  std::string image;
  std::string task;
  int64_t clean_index = 0;
  int64_t image_size = 64;
  int stage = 0;
  int bins = 16;
};

void run_diag_stats(const DiagOpts& o) {
  ParamStore store;
  Checkpoint ck;
  std::unique_ptr<RestorationNet> net = load_model(o.checkpoint, store, ck);
  std::unique_ptr<Dataset> data = make_dataset(o.data, 0, false);
  std::vector<RoutingTrace> traces = collect_traces(*net, *data);
  std::vector<StageStats> stats = routing_stats(traces);

  fs::create_directories(o.out);
  write_traces(traces, (fs::path(o.out) / "traces.csv").string());
  write_stage_stats_csv(stats, (fs::path(o.out) / "stage_stats.csv").string());
  write_utilization_csv(stats, (fs::path(o.out) / "utilization.csv").string());

  std::cout << std::fixed << std::setprecision(3);
  for (const StageStats& s : stats)
    std::cout << "stage " << s.stage << ": samples " << s.samples
              << "  mean entropy " << s.mean_entropy << "  purity " << s.purity
              << '\n';
  std::cout << "reports written to " << o.out << '\n';
}

void run_diag_affinity(const DiagOpts& o) {
  ParamStore store;
  Checkpoint ck;
  std::unique_ptr<RestorationNet> net = load_model(o.checkpoint, store, ck);
  Tensor img = pick_image(o.image, o.task, o.clean_index, o.image_size,
                          o.data.seed);
  AffinityMaps maps = affinity_map(*net, img, o.stage);

  fs::create_directories(o.out);
  write_affinity_csv(maps, (fs::path(o.out) / "affinity.csv").string());
  write_affinity_png(maps, (fs::path(o.out) / "affinity.png").string());

  std::cout << std::fixed << std::setprecision(4);
  const Tensor& m = maps.cosines;
  for (int64_t n = 0; n < m.dim(0); ++n) {
    Scalar sum = 0.0;
    for (int64_t y = 0; y < m.dim(1); ++y)
      for (int64_t x = 0; x < m.dim(2); ++x) sum += m.at({n, y, x});
    std::cout << "prototype " << n << ": mean cosine "
              << sum / static_cast<Scalar>(m.dim(1) * m.dim(2)) << '\n';
  }
  std::cout << "maps written to " << o.out << '\n';
}

void run_diag_mse(const DiagOpts& o) {
  ParamStore store;
  Checkpoint ck;
  std::unique_ptr<RestorationNet> net = load_model(o.checkpoint, store, ck);
  check_param(ck.model.use_pcgrm, "diagnose mse: routing is disabled in this model");
  fs::create_directories(o.out);
  std::cout << std::fixed << std::setprecision(4);
  for (size_t l = 0; l < net->routers().size(); ++l) {
    Tensor m = prototype_mse_matrix(net->routers()[l].bank());
    const std::string stem = "prototype_mse_stage" + std::to_string(l);
    write_matrix_csv(m, (fs::path(o.out) / (stem + ".csv")).string());
    write_matrix_png(m, (fs::path(o.out) / (stem + ".png")).string());
    Scalar sum = 0.0;
    const int64_t n = m.dim(0);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) sum += m.at({i, j});
    const int64_t off_diag = n * (n - 1);
    std::cout << "stage " << l << ": mean off-diagonal mse "
              << (off_diag > 0 ? sum / static_cast<Scalar>(off_diag) : 0.0)
              << '\n';
  }
  std::cout << "matrices written to " << o.out << '\n';
}

void run_diag_embed(const DiagOpts& o) {
  ParamStore store;
  Checkpoint ck;
  std::unique_ptr<RestorationNet> net = load_model(o.checkpoint, store, ck);
  std::unique_ptr<Dataset> data = make_dataset(o.data, 0, false);
  std::vector<EmbeddingRow> rows = export_embeddings(*net, *data, o.stage);

  fs::create_directories(o.out);
  write_embeddings_csv(rows, (fs::path(o.out) / "embeddings.csv").string());
  const int dims = rows.front().feature.size() >= 2 ? 2 : 1;
  Tensor scores = pca_project(rows, dims);
  write_pca_csv(rows, scores, (fs::path(o.out) / "pca.csv").string());

  std::cout << std::fixed << std::setprecision(4);
  std::cout << "stage " << o.stage << ": separability ratio "
            << separability_ratio(rows) << '\n';
  std::cout << "exports written to " << o.out << '\n';
}

void run_diag_spectrum(const DiagOpts& o) {
  ParamStore store;
  Checkpoint ck;
  std::unique_ptr<RestorationNet> net = load_model(o.checkpoint, store, ck);
  Tensor img = pick_image(o.image, o.task, o.clean_index, o.image_size,
                          o.data.seed);
  std::vector<SpectrumRow> rows = spectrum_profile(*net, img, o.bins);

  fs::create_directories(o.out);
  write_spectrum_csv(rows, (fs::path(o.out) / "spectrum.csv").string());
  std::cout << std::fixed << std::setprecision(4);
  for (const SpectrumRow& r : rows)
    std::cout << "level " << r.level << ' ' << r.component
              << ": high-frequency fraction " << r.high_fraction << '\n';
  std::cout << "profile written to " << o.out << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cluster-routed all-in-one image restoration toolkit"};
  app.require_subcommand(1);

  SynthOpts synth;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "write a synthetic paired dataset to disk");
  synth_cmd->add_option("--out", synth.out, "dataset root")->required();
  synth_cmd->add_option("--tasks", synth.tasks, "degradations to emit")
      ->delimiter(',');
  synth_cmd->add_option("--count", synth.count, "pairs per task");
  synth_cmd->add_option("--image-size", synth.image_size, "frame side");
  synth_cmd->add_option("--first-clean", synth.first_clean,
                        "first procedural clean index");
  synth_cmd->add_option("--seed", synth.seed, "generation seed");
  synth_cmd->callback([&] { run_synth(synth); });

  TrainCliOpts train_opts;
  std::string train_val_root;
  CLI::App* train_cmd = app.add_subcommand("train", "optimize a model");
  add_train_options(train_cmd, train_opts);
  train_cmd->add_option("--val-root", train_val_root, "validation folder dataset");
  train_cmd->add_option("--resume", train_opts.resume, "checkpoint to continue");
  train_cmd->callback([&] { run_train(train_opts, train_cmd, train_val_root); });

  TrainCliOpts ablate_opts;
  std::string ablate_val_root;
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "train a comparison matrix of variants");
  add_train_options(ablate_cmd, ablate_opts);
  ablate_cmd->add_option("--val-root", ablate_val_root, "validation folder dataset");
  ablate_cmd->add_option("--rows", ablate_opts.rows, "variant set")
      ->check(CLI::IsMember({"toggles", "clusters", "both"}));
  ablate_cmd->callback([&] { run_ablate(ablate_opts, ablate_cmd, ablate_val_root); });

  EvalOpts eval_opts;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "score a checkpoint against a dataset");
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint)->required();
  eval_cmd->add_option("--out", eval_opts.out_csv, "optional metrics CSV");
  add_data_options(eval_cmd, eval_opts.data);
  eval_cmd->add_option("--seed", eval_opts.data.seed, "dataset seed");
  eval_cmd->callback([&] { run_eval(eval_opts); });

  DiagOpts diag;
  CLI::App* diag_cmd =
      app.add_subcommand("diagnose", "routing and spectrum analysis");
  diag_cmd->require_subcommand(1);

  CLI::App* stats_cmd =
      diag_cmd->add_subcommand("stats", "routing statistics over a dataset");
  stats_cmd->add_option("--checkpoint", diag.checkpoint)->required();
  stats_cmd->add_option("--out", diag.out, "report directory");
  add_data_options(stats_cmd, diag.data);
  stats_cmd->add_option("--seed", diag.data.seed, "dataset seed");
  stats_cmd->callback([&] { run_diag_stats(diag); });

  CLI::App* affinity_cmd =
      diag_cmd->add_subcommand("affinity", "per-pixel prototype affinity maps");
  affinity_cmd->add_option("--checkpoint", diag.checkpoint)->required();
  affinity_cmd->add_option("--out", diag.out, "report directory");
  affinity_cmd->add_option("--stage", diag.stage, "encoder stage");
  affinity_cmd->add_option("--image", diag.image, "probe PNG");
  affinity_cmd->add_option("--task", diag.task, "degrade the procedural probe");
  affinity_cmd->add_option("--clean-index", diag.clean_index,
                           "procedural probe index");
  affinity_cmd->add_option("--image-size", diag.image_size, "procedural probe side");
  affinity_cmd->add_option("--seed", diag.data.seed, "degradation seed");
  affinity_cmd->callback([&] { run_diag_affinity(diag); });

  CLI::App* mse_cmd =
      diag_cmd->add_subcommand("mse", "pairwise prototype distance matrices");
  mse_cmd->add_option("--checkpoint", diag.checkpoint)->required();
  mse_cmd->add_option("--out", diag.out, "report directory");
  mse_cmd->callback([&] { run_diag_mse(diag); });

  CLI::App* embed_cmd =
      diag_cmd->add_subcommand("embed", "pooled stage features with 2-D projection");
  embed_cmd->add_option("--checkpoint", diag.checkpoint)->required();
  embed_cmd->add_option("--out", diag.out, "report directory");
  embed_cmd->add_option("--stage", diag.stage, "encoder stage");
  add_data_options(embed_cmd, diag.data);
  embed_cmd->add_option("--seed", diag.data.seed, "dataset seed");
  embed_cmd->callback([&] { run_diag_embed(diag); });

  CLI::App* spectrum_cmd =
      diag_cmd->add_subcommand("spectrum", "decoder frequency-split energy profile");
  spectrum_cmd->add_option("--checkpoint", diag.checkpoint)->required();
  spectrum_cmd->add_option("--out", diag.out, "report directory");
  spectrum_cmd->add_option("--bins", diag.bins, "radial bins");
  spectrum_cmd->add_option("--image", diag.image, "probe PNG");
  spectrum_cmd->add_option("--task", diag.task, "degrade the procedural probe");
  spectrum_cmd->add_option("--clean-index", diag.clean_index,
                           "procedural probe index");
  spectrum_cmd->add_option("--image-size", diag.image_size, "procedural probe side");
  spectrum_cmd->add_option("--seed", diag.data.seed, "degradation seed");
  spectrum_cmd->callback([&] { run_diag_spectrum(diag); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return 2;
  } catch (const ParameterError& e) {
    std::cerr << "parameter error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
