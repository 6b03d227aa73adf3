#include "cgir/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "cgir/image.hpp"
#include "cgir/ops.hpp"

namespace cgir {

namespace {

void check_clean(const Tensor& clean, const char* who) {
  check_shape(clean.rank() == 3 && clean.dim(0) == 3, who, ": expected (3,H,W), got ",
              shape_str(clean.shape()));
}

Tensor clip01(Tensor t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = t[i] < 0.0 ? 0.0 : (t[i] > 1.0 ? 1.0 : t[i]);
  return t;
}

// Normalized kernels for the blur task and the rain streak smearing.
Tensor gaussian_kernel(int64_t k) {
  Tensor ker = Tensor::empty({k, k});
  const Scalar sigma = std::max(0.5, static_cast<Scalar>(k) / 4.0);
  const Scalar c = static_cast<Scalar>(k / 2);
  Scalar sum = 0.0;
  for (int64_t y = 0; y < k; ++y)
    for (int64_t x = 0; x < k; ++x) {
      const Scalar dy = (y - c) / sigma, dx = (x - c) / sigma;
      const Scalar v = std::exp(-0.5 * (dy * dy + dx * dx));
      ker.at({y, x}) = v;
      sum += v;
    }
  for (int64_t i = 0; i < k * k; ++i) ker[i] /= sum;
  return ker;
}

// Line through the kernel center at `angle_rad` from vertical, rasterized by
// fine stepping, then normalized to unit sum.
Tensor motion_kernel(int64_t k, Scalar angle_rad) {
  Tensor ker = Tensor::zeros({k, k});
  const Scalar c = static_cast<Scalar>(k / 2);
  const Scalar dy = std::cos(angle_rad), dx = std::sin(angle_rad);
  const Scalar half = static_cast<Scalar>(k) / 2.0;
  for (Scalar t = -half; t <= half; t += 0.25) {
    const int64_t y = static_cast<int64_t>(std::lround(c + t * dy));
    const int64_t x = static_cast<int64_t>(std::lround(c + t * dx));
    if (y >= 0 && y < k && x >= 0 && x < k) ker.at({y, x}) += 1.0;
  }
  Scalar sum = 0.0;
  for (int64_t i = 0; i < k * k; ++i) sum += ker[i];
  for (int64_t i = 0; i < k * k; ++i) ker[i] /= sum;
  return ker;
}

Tensor blur_channels(const Tensor& img, const Tensor& ker) {
  NoGrad ng;
  Var x(img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}).clone());
  return blur2d_fixed(x, ker).val().reshaped(img.shape());
}

}  // namespace

const char* task_name(Task t) {
  switch (t) {
    case Task::Noise: return "noise";
    case Task::Haze: return "haze";
    case Task::Rain: return "rain";
    case Task::Blur: return "blur";
    case Task::LowLight: return "lowlight";
  }
  raise<ParameterError>("task_name: bad enum value");
}

Task task_from_name(const std::string& name) {
  for (Task t : kAllTasks)
    if (name == task_name(t)) return t;
  raise<ParameterError>("unknown task '", name,
                        "' (expected noise, haze, rain, blur, or lowlight)");
}

DegradationSample add_gaussian_noise(const Tensor& clean, Scalar sigma, uint64_t seed) {
  check_clean(clean, "add_gaussian_noise");
  check_param(sigma >= 0.0, "add_gaussian_noise: sigma must be >= 0, got ", sigma);
  DegradationSample s;
  s.clean = clean.clone();
  s.label = Task::Noise;
  s.params["sigma"] = sigma;
  s.rng_seed = seed;
  if (sigma == 0.0) {
    s.degraded = clean.clone();
    return s;
  }
  Rng rng(seed);
  Tensor noisy = clean.clone();
  const Scalar sd = sigma / 255.0;
  for (int64_t i = 0; i < noisy.numel(); ++i) noisy[i] += sd * rng.normal();
  s.degraded = clip01(std::move(noisy));
  return s;
}

DegradationSample synth_haze(const Tensor& clean, Scalar transmission, Scalar airlight,
                             uint64_t seed) {
  check_clean(clean, "synth_haze");
  check_param(transmission > 0.0 && transmission <= 1.0,
              "synth_haze: transmission must be in (0,1], got ", transmission);
  check_param(airlight >= 0.0 && airlight <= 1.0,
              "synth_haze: airlight must be in [0,1], got ", airlight);
  DegradationSample s;
  s.clean = clean.clone();
  s.label = Task::Haze;
  s.params["transmission"] = transmission;
  s.params["airlight"] = airlight;
  s.rng_seed = seed;
  if (transmission == 1.0) {
    s.degraded = clean.clone();
    return s;
  }
  Tensor hazy = clean.clone();
  const Scalar add = airlight * (1.0 - transmission);
  for (int64_t i = 0; i < hazy.numel(); ++i) hazy[i] = hazy[i] * transmission + add;
  s.degraded = clip01(std::move(hazy));
  return s;
}

DegradationSample synth_rain(const Tensor& clean, int64_t streak_count,
                             Scalar streak_intensity, Scalar angle_deg, uint64_t seed) {
  check_clean(clean, "synth_rain");
  check_param(streak_count >= 0, "synth_rain: streak_count must be >= 0");
  check_param(streak_intensity >= 0.0, "synth_rain: streak_intensity must be >= 0");
  DegradationSample s;
  s.clean = clean.clone();
  s.label = Task::Rain;
  s.params["streak_count"] = static_cast<Scalar>(streak_count);
  s.params["streak_intensity"] = streak_intensity;
  s.params["angle_deg"] = angle_deg;
  s.rng_seed = seed;
  if (streak_count == 0 || streak_intensity == 0.0) {
    s.degraded = clean.clone();
    return s;
  }

  const int64_t h = clean.dim(1), w = clean.dim(2);
  Rng rng(seed);
  Tensor layer = Tensor::zeros({h, w});
  const Scalar base_rad = angle_deg * M_PI / 180.0;
  for (int64_t i = 0; i < streak_count; ++i) {
    const Scalar cy = rng.uniform(0.0, static_cast<Scalar>(h));
    const Scalar cx = rng.uniform(0.0, static_cast<Scalar>(w));
    const Scalar len = rng.uniform(0.10, 0.22) * static_cast<Scalar>(std::min(h, w));
    const Scalar rad = base_rad + rng.uniform(-3.0, 3.0) * M_PI / 180.0;
    const Scalar gain = streak_intensity * rng.uniform(0.6, 1.0);
    const Scalar dy = std::cos(rad), dx = std::sin(rad);
    for (Scalar t = -len / 2; t <= len / 2; t += 0.5) {
      const int64_t y = static_cast<int64_t>(std::lround(cy + t * dy));
      const int64_t x = static_cast<int64_t>(std::lround(cx + t * dx));
      if (y >= 0 && y < h && x >= 0 && x < w)
        layer.at({y, x}) = std::max(layer.at({y, x}), gain);
    }
  }

  // Smearing along the fall direction softens the rasterized lines.
  Tensor smeared = blur_channels(layer.reshaped({1, h, w}), motion_kernel(5, base_rad))
                       .reshaped({h, w});
  Tensor rainy = clean.clone();
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < h * w; ++i) rainy[c * h * w + i] += smeared[i];
  s.degraded = clip01(std::move(rainy));
  return s;
}

DegradationSample synth_blur(const Tensor& clean, int64_t kernel_size, BlurKind kind,
                             uint64_t seed) {
  check_clean(clean, "synth_blur");
  check_param(kernel_size >= 1 && kernel_size % 2 == 1,
              "synth_blur: kernel_size must be odd and >= 1, got ", kernel_size);
  DegradationSample s;
  s.clean = clean.clone();
  s.label = Task::Blur;
  s.params["kernel_size"] = static_cast<Scalar>(kernel_size);
  s.params["kind"] = kind == BlurKind::Gaussian ? 0.0 : 1.0;
  s.rng_seed = seed;
  if (kernel_size == 1) {
    s.degraded = clean.clone();
    return s;
  }
  Tensor ker;
  if (kind == BlurKind::Gaussian) {
    ker = gaussian_kernel(kernel_size);
  } else {
    Rng rng(seed);
    ker = motion_kernel(kernel_size, rng.uniform(0.0, M_PI));
  }
  s.degraded = clip01(blur_channels(clean, ker));
  return s;
}

DegradationSample synth_lowlight(const Tensor& clean, Scalar gamma, Scalar scale,
                                 uint64_t seed) {
  check_clean(clean, "synth_lowlight");
  check_param(gamma >= 1.0, "synth_lowlight: gamma must be >= 1, got ", gamma);
  check_param(scale > 0.0 && scale <= 1.0, "synth_lowlight: scale must be in (0,1], got ",
              scale);
  DegradationSample s;
  s.clean = clean.clone();
  s.label = Task::LowLight;
  s.params["gamma"] = gamma;
  s.params["scale"] = scale;
  s.rng_seed = seed;
  if (gamma == 1.0 && scale == 1.0) {
    s.degraded = clean.clone();
    return s;
  }
  Tensor dark = clean.clone();
  for (int64_t i = 0; i < dark.numel(); ++i)
    dark[i] = scale * std::pow(dark[i], gamma);
  s.degraded = clip01(std::move(dark));
  return s;
}

namespace {

// Crop offsets and flips shared by both dataset flavors. Draw order is part
// of the reproducibility contract, so both sides consume the rng identically
// whether or not augmentation changes anything.
struct Augment {
  int64_t y0 = 0, x0 = 0, size_h = 0, size_w = 0;
  bool hflip = false, vflip = false;
};

Augment draw_augment(Rng& rng, int64_t h, int64_t w, int64_t patch, bool augment) {
  Augment a;
  a.size_h = patch > 0 ? patch : h;
  a.size_w = patch > 0 ? patch : w;
  check_param(a.size_h <= h && a.size_w <= w,
              "dataset: patch larger than the source image");
  if (augment) {
    a.y0 = static_cast<int64_t>(rng.below(static_cast<uint64_t>(h - a.size_h + 1)));
    a.x0 = static_cast<int64_t>(rng.below(static_cast<uint64_t>(w - a.size_w + 1)));
    a.hflip = rng.coin();
    a.vflip = rng.coin();
  } else if (patch > 0) {
    // Deterministic center crop for evaluation.
    a.y0 = (h - a.size_h) / 2;
    a.x0 = (w - a.size_w) / 2;
  }
  return a;
}

Tensor apply_augment(const Tensor& img, const Augment& a) {
  Tensor out = Tensor::empty({img.dim(0), a.size_h, a.size_w});
  for (int64_t c = 0; c < img.dim(0); ++c)
    for (int64_t y = 0; y < a.size_h; ++y)
      for (int64_t x = 0; x < a.size_w; ++x) {
        const int64_t sy = a.y0 + (a.vflip ? a.size_h - 1 - y : y);
        const int64_t sx = a.x0 + (a.hflip ? a.size_w - 1 - x : x);
        out.at({c, y, x}) = img.at({c, sy, sx});
      }
  return out;
}

}  // namespace

DegradationSample synthesize_sample(const Tensor& clean_full, Task task,
                                    const TaskParamRanges& r, int64_t patch,
                                    bool augment, uint64_t seed) {
  check_clean(clean_full, "synthesize_sample");
  Rng rng(seed);
  Augment aug =
      draw_augment(rng, clean_full.dim(1), clean_full.dim(2), patch, augment);
  Tensor clean = apply_augment(clean_full, aug);

  // The generator gets its own child seed so its stream is independent of
  // how many draws the parameter sampling consumed.
  const uint64_t gen_seed = derive_seed(seed, hash_tag("generator"));
  DegradationSample s;
  switch (task) {
    case Task::Noise:
      s = add_gaussian_noise(clean, rng.uniform(r.noise_sigma_lo, r.noise_sigma_hi),
                             gen_seed);
      break;
    case Task::Haze:
      s = synth_haze(clean, rng.uniform(r.haze_t_lo, r.haze_t_hi),
                     rng.uniform(r.haze_air_lo, r.haze_air_hi), gen_seed);
      break;
    case Task::Rain: {
      const int64_t span = r.rain_count_hi - r.rain_count_lo;
      const int64_t count =
          r.rain_count_lo +
          (span > 0 ? static_cast<int64_t>(rng.below(static_cast<uint64_t>(span + 1)))
                    : 0);
      s = synth_rain(clean, count,
                     rng.uniform(r.rain_intensity_lo, r.rain_intensity_hi),
                     rng.uniform(r.rain_angle_lo, r.rain_angle_hi), gen_seed);
      break;
    }
    case Task::Blur:
      s = synth_blur(clean, r.blur_kernel,
                     rng.uniform() < r.blur_motion_prob ? BlurKind::LinearMotion
                                                        : BlurKind::Gaussian,
                     gen_seed);
      break;
    case Task::LowLight:
      s = synth_lowlight(clean, rng.uniform(r.low_gamma_lo, r.low_gamma_hi),
                         rng.uniform(r.low_scale_lo, r.low_scale_hi), gen_seed);
      break;
  }
  s.rng_seed = seed;
  return s;
}

SyntheticDataset::SyntheticDataset(std::map<Task, std::vector<Tensor>> cleans,
                                   std::map<Task, int64_t> expansion, int64_t patch,
                                   bool augment, uint64_t seed, TaskParamRanges ranges)
    : cleans_(std::move(cleans)),
      patch_(patch),
      augment_(augment),
      seed_(seed),
      ranges_(ranges) {
  check_param(patch_ == 0 || (patch_ >= 16 && patch_ % 16 == 0),
              "SyntheticDataset: patch must be 0 or a multiple of 16, got ", patch_);
  for (const auto& [task, bank] : cleans_) {
    int64_t repeats = 1;
    if (auto it = expansion.find(task); it != expansion.end()) {
      check_param(it->second >= 0, "SyntheticDataset: negative expansion ratio");
      repeats = it->second;
    }
    for (int64_t ci = 0; ci < static_cast<int64_t>(bank.size()); ++ci) {
      check_clean(bank[static_cast<size_t>(ci)], "SyntheticDataset");
      for (int64_t rep = 0; rep < repeats; ++rep)
        specs_.push_back({task, ci});
    }
  }
}

DegradationSample SyntheticDataset::get(int64_t epoch, int64_t index) const {
  check_param(index >= 0 && index < size(), "SyntheticDataset::get: index out of range");
  // Per-epoch shuffle of the spec order, independent of the per-sample seeds.
  std::vector<int64_t> order(specs_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng(derive_seed(seed_, static_cast<uint64_t>(epoch), hash_tag("order")));
  if (augment_) order_rng.shuffle(order);
  const Spec& spec = specs_[static_cast<size_t>(order[static_cast<size_t>(index)])];

  const uint64_t sample_seed =
      derive_seed(seed_, static_cast<uint64_t>(epoch), static_cast<uint64_t>(index));
  const Tensor& clean =
      cleans_.at(spec.task)[static_cast<size_t>(spec.clean_index)];
  return synthesize_sample(clean, spec.task, ranges_, patch_, augment_, sample_seed);
}

FolderDataset::FolderDataset(const std::string& root, int64_t patch, bool augment,
                             uint64_t seed)
    : patch_(patch), augment_(augment), seed_(seed) {
  namespace fs = std::filesystem;
  check_param(patch_ == 0 || (patch_ >= 16 && patch_ % 16 == 0),
              "FolderDataset: patch must be 0 or a positive multiple of 16, got ", patch_);
  check_param(fs::is_directory(root), "FolderDataset: no such directory: ", root);
  std::vector<std::string> task_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) task_dirs.push_back(e.path().filename().string());
  std::sort(task_dirs.begin(), task_dirs.end());

  for (const std::string& dirname : task_dirs) {
    Task task = task_from_name(dirname);  // unknown folder name -> ParameterError
    const fs::path deg = fs::path(root) / dirname / "degraded";
    const fs::path cln = fs::path(root) / dirname / "clean";
    check_param(fs::is_directory(deg) && fs::is_directory(cln),
                "FolderDataset: ", dirname, " needs degraded/ and clean/ subfolders");
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(deg))
      if (e.path().extension() == ".png") names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const std::string& name : names) {
      const fs::path cpath = cln / name;
      if (!fs::exists(cpath)) continue;
      entries_.push_back({task, (deg / name).string(), cpath.string()});
    }
  }
  check_param(!entries_.empty(), "FolderDataset: no paired .png files under ", root);
}

DegradationSample FolderDataset::get(int64_t epoch, int64_t index) const {
  check_param(index >= 0 && index < size(), "FolderDataset::get: index out of range");
  std::vector<int64_t> order(entries_.size());
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng(derive_seed(seed_, static_cast<uint64_t>(epoch), hash_tag("order")));
  if (augment_) order_rng.shuffle(order);
  const Entry& e = entries_[static_cast<size_t>(order[static_cast<size_t>(index)])];

  Tensor degraded = load_png(e.degraded_path);
  Tensor clean = load_png(e.clean_path);
  check_shape(degraded.shape() == clean.shape(),
              "FolderDataset: degraded/clean size mismatch for ", e.degraded_path);

  const uint64_t sample_seed =
      derive_seed(seed_, static_cast<uint64_t>(epoch), static_cast<uint64_t>(index));
  Rng rng(sample_seed);
  Augment aug = draw_augment(rng, clean.dim(1), clean.dim(2), patch_, augment_);

  DegradationSample s;
  s.degraded = apply_augment(degraded, aug);
  s.clean = apply_augment(clean, aug);
  s.label = e.task;
  s.rng_seed = sample_seed;
  return s;
}

}  // namespace cgir
