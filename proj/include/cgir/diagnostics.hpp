#pragma once

#include <string>
#include <vector>

#include "cgir/backbone.hpp"
#include "cgir/degrade.hpp"
#include "cgir/routing.hpp"
#include "cgir/tensor.hpp"

namespace cgir {

// One routing decision for one sample at one stage, flattened for offline
// analysis. Expert picks are stored slot-major: with K1 selected clusters
// and K2 picks per cluster, entry j*K2 + t is pick t inside cluster
// selected[j], and expert_weights lines up index for index.
struct RoutingTrace {
  int stage = 0;
  std::string sample_id;
  Task label = Task::Noise;
  std::vector<Scalar> posterior;      // full cluster posterior, sums to 1
  std::vector<int64_t> selected;      // top-K1 cluster ids
  std::vector<int64_t> expert_sel;    // flattened per-slot expert ids
  std::vector<Scalar> expert_weights; // matching renormalized weights
};

// Runs the net over the dataset (epoch 0, deterministic prompts) and records
// one trace per sample per routing stage. Routing must be enabled.
std::vector<RoutingTrace> collect_traces(const RestorationNet& net,
                                         const Dataset& data);

// Line-delimited export, one record per line, fields comma-separated with
// vector fields packed as semicolon-joined runs.
void write_traces(const std::vector<RoutingTrace>& traces,
                  const std::string& path);

// Per-stage aggregate of a trace collection. Purity is the standard cluster
// purity: assign each sample to its argmax cluster, count the majority label
// inside each cluster, divide the sum of majorities by the sample count.
// Expert utilization is the selection frequency of each (cluster, expert)
// slot among all picks at the stage, stored cluster-major with
// experts_per_cluster inferred as 1 + the largest expert id seen.
struct StageStats {
  int stage = 0;
  int64_t samples = 0;
  int64_t n_clusters = 0;
  int64_t experts_per_cluster = 0;
  Scalar mean_entropy = 0.0;    // mean posterior entropy, nats
  Scalar argmax_entropy = 0.0;  // entropy of the argmax histogram, nats
  Scalar purity = 0.0;
  std::vector<int64_t> cluster_counts;    // argmax histogram, size N
  std::vector<Scalar> expert_utilization; // size N * M, sums to 1 when nonempty
};

// Aggregates traces per stage, ordered by stage id. Empty input or a
// posterior that does not sum to 1 within 1e-6 raises ParameterError.
std::vector<StageStats> routing_stats(const std::vector<RoutingTrace>& traces);

void write_stage_stats_csv(const std::vector<StageStats>& stats,
                           const std::string& path);
void write_utilization_csv(const std::vector<StageStats>& stats,
                           const std::string& path);

// Per-pixel cosine similarity between the post-MoE feature map at `stage`
// and every prototype of that stage's router. `cosines` is (N, H_l, W_l)
// with raw values in [-1, 1]. Requires routing enabled and stage in [0, 4).
struct AffinityMaps {
  int stage = 0;
  Tensor cosines;
};

AffinityMaps affinity_map(const RestorationNet& net, const Tensor& img,
                          int stage);

// Long-format dump: prototype,row,col,cosine with raw values.
void write_affinity_csv(const AffinityMaps& maps, const std::string& path);
// Grayscale strip, one tile per prototype separated by a white gutter. Each
// tile is min-max normalized on its own for contrast; the CSV keeps the raw
// numbers.
void write_affinity_png(const AffinityMaps& maps, const std::string& path);

// Pairwise mean-squared distance between prototype rows: out[i][j] =
// ||P_i - P_j||^2 / D. Symmetric with a zero diagonal; orthonormal rows give
// 2/D off the diagonal.
Tensor prototype_mse_matrix(const PrototypeBank& bank);

// Plain numeric CSV, one matrix row per line.
void write_matrix_csv(const Tensor& m, const std::string& path);
// Grayscale heatmap, min-max normalized, each entry an 8x8 pixel block.
void write_matrix_png(const Tensor& m, const std::string& path);

// Pooled post-MoE stage feature for one sample.
struct EmbeddingRow {
  std::string sample_id;
  Task label = Task::Noise;
  std::vector<Scalar> feature;
};

// One row per dataset sample (epoch 0, deterministic prompts); feature width
// equals the stage channel width. Stage must lie in [0, 4).
std::vector<EmbeddingRow> export_embeddings(const RestorationNet& net,
                                            const Dataset& data, int stage);

void write_embeddings_csv(const std::vector<EmbeddingRow>& rows,
                          const std::string& path);

// PCA projection of the embedding rows onto the top `dims` principal
// components, for plotting. Column signs are fixed so the largest-magnitude
// loading of each component is positive, which keeps the output
// deterministic. Returns (n, dims).
Tensor pca_project(const std::vector<EmbeddingRow>& rows, int dims = 2);

void write_pca_csv(const std::vector<EmbeddingRow>& rows, const Tensor& scores,
                   const std::string& path);

// Mean pairwise distance between label centroids divided by the mean
// distance of each sample to its own centroid. Above 1 means labels are
// farther apart than they are wide. Needs at least two distinct labels.
Scalar separability_ratio(const std::vector<EmbeddingRow>& rows);

// Fraction of spectral energy in the outer half of the frequency radii:
// power beyond 0.5 of the largest representable radius over total power,
// DC included in the total. Constant maps give 0, a Nyquist checkerboard 1.
// Accepts (C,H,W) or (B,C,H,W).
Scalar high_freq_energy_fraction(const Tensor& map);

// Radial spectrum of the decoder-side frequency split for one image: for
// each decoder level, the approximation band and its mined low component,
// binned by normalized frequency radius into `bins` energy fractions.
struct SpectrumRow {
  int level = 0;             // decoder level, deepest first
  std::string component;     // "ll" or "low"
  Scalar high_fraction = 0.0;
  std::vector<Scalar> radial; // per-bin energy fractions, sum to 1
};

std::vector<SpectrumRow> spectrum_profile(const RestorationNet& net,
                                          const Tensor& img, int bins = 16);

void write_spectrum_csv(const std::vector<SpectrumRow>& rows,
                        const std::string& path);

}  // namespace cgir
