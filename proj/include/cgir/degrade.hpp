#pragma once

#include <map>
#include <string>
#include <vector>

#include "cgir/rng.hpp"
#include "cgir/tensor.hpp"

namespace cgir {

enum class Task { Noise, Haze, Rain, Blur, LowLight };

constexpr Task kAllTasks[] = {Task::Noise, Task::Haze, Task::Rain, Task::Blur,
                              Task::LowLight};

const char* task_name(Task t);
Task task_from_name(const std::string& name);  // unknown name -> ParameterError

// One paired training example. Regenerating through the same generator with
// the same clean input and rng_seed reproduces `degraded` bit for bit.
struct DegradationSample {
  Tensor degraded;  // (3,H,W) in [0,1]
  Tensor clean;     // same shape
  Task label = Task::Noise;
  std::map<std::string, Scalar> params;
  uint64_t rng_seed = 0;
};

// Generators. `clean` is (3,H,W) in [0,1]; each derives all randomness from
// `seed`. Every generator is the identity at its null parameter.

// degraded = clip(clean + n), n ~ N(0, (sigma/255)^2) i.i.d. Sigma uses
// 8-bit units to match the usual {15, 25, 50} convention.
DegradationSample add_gaussian_noise(const Tensor& clean, Scalar sigma, uint64_t seed);

// Atmospheric scattering blend: degraded = clean * t + airlight * (1 - t)
// with a global transmission t in (0,1] and airlight in [0,1].
DegradationSample synth_haze(const Tensor& clean, Scalar transmission,
                             Scalar airlight, uint64_t seed);

// Additive oriented streaks, motion blurred along their own direction, shared
// across channels. `angle_deg` is measured from vertical (0 = falling rain).
DegradationSample synth_rain(const Tensor& clean, int64_t streak_count,
                             Scalar streak_intensity, Scalar angle_deg, uint64_t seed);

enum class BlurKind { Gaussian, LinearMotion };

// Convolution with a normalized kernel, reflect padding. kernel_size must be
// odd; 1 produces the delta kernel. LinearMotion draws its direction from
// the seed.
DegradationSample synth_blur(const Tensor& clean, int64_t kernel_size, BlurKind kind,
                             uint64_t seed);

// degraded = scale * clean^gamma, gamma >= 1, scale in (0,1].
DegradationSample synth_lowlight(const Tensor& clean, Scalar gamma, Scalar scale,
                                 uint64_t seed);

// Per-task parameter ranges sampled once per generated example. Defaults are
// tuned so every task visibly degrades the input (restoration headroom of
// several dB) while staying invertible enough to learn at small scale.
struct TaskParamRanges {
  Scalar noise_sigma_lo = 25.0, noise_sigma_hi = 25.0;
  Scalar haze_t_lo = 0.3, haze_t_hi = 0.7;
  Scalar haze_air_lo = 0.7, haze_air_hi = 0.95;
  int64_t rain_count_lo = 60, rain_count_hi = 100;
  Scalar rain_intensity_lo = 0.3, rain_intensity_hi = 0.6;
  Scalar rain_angle_lo = -25.0, rain_angle_hi = 25.0;
  int64_t blur_kernel = 9;
  Scalar blur_motion_prob = 0.5;
  Scalar low_gamma_lo = 1.8, low_gamma_hi = 2.8;
  Scalar low_scale_lo = 0.25, low_scale_hi = 0.55;
};

// Crop/flip augmentation plus parameter draw plus degradation, all driven by
// one seed so a sample can be regenerated exactly. patch == 0 keeps the full
// image; augmentation then reduces to the degradation itself.
DegradationSample synthesize_sample(const Tensor& clean_full, Task task,
                                    const TaskParamRanges& ranges, int64_t patch,
                                    bool augment, uint64_t seed);

// A deterministic stream of paired samples. get(epoch, index) is pure: the
// sample's seed derives from (dataset seed, epoch, index), so epochs reshuffle
// and re-randomize while any sample stays individually reproducible.
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual int64_t size() const = 0;
  virtual DegradationSample get(int64_t epoch, int64_t index) const = 0;
};

class SyntheticDataset : public Dataset {
 public:
  // cleans: per-task clean image banks. expansion: repeats per clean image
  // and epoch (missing task -> 1).
  SyntheticDataset(std::map<Task, std::vector<Tensor>> cleans,
                   std::map<Task, int64_t> expansion, int64_t patch, bool augment,
                   uint64_t seed, TaskParamRanges ranges = {});

  int64_t size() const override { return static_cast<int64_t>(specs_.size()); }
  DegradationSample get(int64_t epoch, int64_t index) const override;

 private:
  struct Spec {
    Task task;
    int64_t clean_index;
  };
  std::map<Task, std::vector<Tensor>> cleans_;
  std::vector<Spec> specs_;
  int64_t patch_;
  bool augment_;
  uint64_t seed_;
  TaskParamRanges ranges_;
};

// Paired folders: <root>/<task>/{degraded,clean}/<name>.png. Only names
// present in both subfolders are used; tasks are the subdirectories whose
// names parse. Samples are loaded on demand; augmentation matches the
// synthetic path (same crop and flips applied to both sides).
class FolderDataset : public Dataset {
 public:
  FolderDataset(const std::string& root, int64_t patch, bool augment, uint64_t seed);

  int64_t size() const override { return static_cast<int64_t>(entries_.size()); }
  DegradationSample get(int64_t epoch, int64_t index) const override;

 private:
  struct Entry {
    Task task;
    std::string degraded_path, clean_path;
  };
  std::vector<Entry> entries_;
  int64_t patch_;
  bool augment_;
  uint64_t seed_;
};

}  // namespace cgir
