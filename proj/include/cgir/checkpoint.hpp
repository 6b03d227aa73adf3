#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cgir/backbone.hpp"
#include "cgir/nn.hpp"

namespace cgir {

// Versioned binary training snapshot: a JSON header describing the model
// plan, the run configuration, and the parameter layout, followed by the raw
// double-precision payload (parameters, then both Adam moment sets). The
// payload is written byte for byte, so save -> load -> save reproduces the
// file and a resumed run continues the exact trajectory.

struct Checkpoint {
  ModelConfig model;
  nlohmann::json train;  // opaque echo of the run configuration
  int64_t step = 0;
  std::string rng;  // serialized generator state, empty when not tracked

  std::vector<std::pair<std::string, Tensor>> params;

  bool has_optimizer = false;
  int64_t adam_t = 0;
  double adam_lr = 0.0;
  std::vector<Tensor> adam_m, adam_v;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
// Malformed or truncated files raise IoError.
Checkpoint load_checkpoint(const std::string& path);

// Deep-copies the live training state into a Checkpoint. opt and rng may be
// null for inference-only snapshots.
Checkpoint snapshot_state(const ModelConfig& model, const nlohmann::json& train_cfg,
                          const ParamStore& store, const Adam* opt, const Rng* rng,
                          int64_t step);

// Writes saved values back into a compatible store / optimizer. Any name,
// order, or shape mismatch raises StateError.
void load_params(const Checkpoint& ck, ParamStore& store);
void load_optimizer(const Checkpoint& ck, Adam& opt);

nlohmann::json model_to_json(const ModelConfig& cfg);
ModelConfig model_from_json(const nlohmann::json& j);

}  // namespace cgir
