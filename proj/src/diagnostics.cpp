#include "cgir/diagnostics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "cgir/common.hpp"
#include "cgir/image.hpp"
#include "cgir/spectral.hpp"

namespace cgir {

namespace {

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path);
  if (!out) raise<IoError>("cannot open ", path, " for writing");
  out << std::setprecision(std::numeric_limits<Scalar>::max_digits10);
  return out;
}

template <typename T>
void write_joined(std::ostream& out, const std::vector<T>& v, char sep) {
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out << sep;
    out << v[i];
  }
}

Tensor to_batched(const Tensor& img) {
  if (img.rank() == 3)
    return img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
  check_shape(img.rank() == 4 && img.dim(0) == 1,
              "expected a single (3,H,W) or (1,3,H,W) image");
  return img;
}

Scalar entropy_nats(const std::vector<Scalar>& p) {
  Scalar h = 0.0;
  for (Scalar v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Energy per normalized-radius bin plus the outer-half fraction, summed over
// batch and channels. Radius 0 is DC; 1 is the largest representable
// frequency for the map's size.
std::vector<Scalar> radial_energy(const Tensor& map, int bins,
                                  Scalar* high_fraction) {
  NoGrad ng;
  Tensor f = map;
  if (f.rank() == 3) f = f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)});
  check_shape(f.rank() == 4, "radial_energy: expected (C,H,W) or (B,C,H,W)");
  check_param(bins >= 1, "radial_energy: bins must be positive");
  const int64_t b = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
  ComplexVar z = fft2(Var(f));
  const Tensor& re = z.re.val();
  const Tensor& im = z.im.val();

  const Scalar fu_max = static_cast<Scalar>(h / 2) / static_cast<Scalar>(h);
  const Scalar fv_max = static_cast<Scalar>(w / 2) / static_cast<Scalar>(w);
  const Scalar r_max = std::sqrt(fu_max * fu_max + fv_max * fv_max);

  std::vector<Scalar> acc(static_cast<size_t>(bins), 0.0);
  Scalar total = 0.0, high = 0.0;
  for (int64_t i = 0; i < b; ++i)
    for (int64_t j = 0; j < c; ++j)
      for (int64_t u = 0; u < h; ++u)
        for (int64_t v = 0; v < w; ++v) {
          const Scalar pr = re.at({i, j, u, v});
          const Scalar pi = im.at({i, j, u, v});
          const Scalar p = pr * pr + pi * pi;
          const Scalar fu = static_cast<Scalar>(std::min(u, h - u)) /
                            static_cast<Scalar>(h);
          const Scalar fv = static_cast<Scalar>(std::min(v, w - v)) /
                            static_cast<Scalar>(w);
          const Scalar r = r_max > 0.0
                               ? std::sqrt(fu * fu + fv * fv) / r_max
                               : 0.0;
          const int bin = std::min(bins - 1, static_cast<int>(r * bins));
          acc[static_cast<size_t>(bin)] += p;
          if (r > 0.5) high += p;
          total += p;
        }
  if (total > 0.0) {
    for (Scalar& v : acc) v /= total;
    high /= total;
  }
  if (high_fraction) *high_fraction = high;
  return acc;
}

}  // namespace

std::vector<RoutingTrace> collect_traces(const RestorationNet& net,
                                         const Dataset& data) {
  check_param(net.config().use_pcgrm,
              "collect_traces: routing is disabled in this model");
  NoGrad ng;
  std::vector<RoutingTrace> traces;
  for (int64_t i = 0; i < data.size(); ++i) {
    DegradationSample sample = data.get(0, i);
    ForwardTrace fwd;
    net.forward(Var(to_batched(sample.degraded)), nullptr, false, &fwd);
    for (size_t l = 0; l < fwd.decisions.size(); ++l) {
      const RoutingDecision& dec = fwd.decisions[l];
      RoutingTrace t;
      t.stage = static_cast<int>(l);
      t.sample_id = std::to_string(i);
      t.label = sample.label;
      const Tensor& post = dec.full_posterior.val();
      for (int64_t n = 0; n < post.dim(1); ++n)
        t.posterior.push_back(post.at({0, n}));
      t.selected = dec.selected[0];
      for (size_t j = 0; j < dec.expert_sel[0].size(); ++j) {
        const Tensor& w = dec.expert_weights[0][j].val();
        for (int64_t e = 0; e < w.dim(1); ++e) {
          t.expert_sel.push_back(dec.expert_sel[0][j][static_cast<size_t>(e)]);
          t.expert_weights.push_back(w.at({0, e}));
        }
      }
      traces.push_back(std::move(t));
    }
  }
  return traces;
}

void write_traces(const std::vector<RoutingTrace>& traces,
                  const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "stage,sample_id,label,posterior,selected,expert_sel,expert_weights\n";
  for (const RoutingTrace& t : traces) {
    out << t.stage << ',' << t.sample_id << ',' << task_name(t.label) << ',';
    write_joined(out, t.posterior, ';');
    out << ',';
    write_joined(out, t.selected, ';');
    out << ',';
    write_joined(out, t.expert_sel, ';');
    out << ',';
    write_joined(out, t.expert_weights, ';');
    out << '\n';
  }
}

std::vector<StageStats> routing_stats(const std::vector<RoutingTrace>& traces) {
  check_param(!traces.empty(), "routing_stats: no traces");
  std::map<int, std::vector<const RoutingTrace*>> by_stage;
  for (const RoutingTrace& t : traces) by_stage[t.stage].push_back(&t);

  constexpr size_t kTasks = sizeof(kAllTasks) / sizeof(kAllTasks[0]);
  std::vector<StageStats> out;
  for (const auto& [stage, group] : by_stage) {
    StageStats s;
    s.stage = stage;
    s.samples = static_cast<int64_t>(group.size());
    s.n_clusters = static_cast<int64_t>(group.front()->posterior.size());
    check_param(s.n_clusters > 0, "routing_stats: empty posterior at stage ",
                stage);
    s.cluster_counts.assign(static_cast<size_t>(s.n_clusters), 0);

    int64_t max_expert = -1;
    for (const RoutingTrace* t : group) {
      check_param(static_cast<int64_t>(t->posterior.size()) == s.n_clusters,
                  "routing_stats: posterior width varies within stage ", stage);
      Scalar sum = 0.0;
      for (Scalar p : t->posterior) sum += p;
      check_param(std::abs(sum - 1.0) <= 1e-6,
                  "routing_stats: posterior of sample ", t->sample_id,
                  " sums to ", sum);
      for (int64_t e : t->expert_sel) max_expert = std::max(max_expert, e);
    }
    s.experts_per_cluster = max_expert + 1;

    // Argmax assignment, label tallies per cluster, expert pick tallies.
    std::vector<std::array<int64_t, kTasks>> labels(
        static_cast<size_t>(s.n_clusters));
    for (auto& row : labels) row.fill(0);
    std::vector<int64_t> picks(
        static_cast<size_t>(s.n_clusters * std::max<int64_t>(s.experts_per_cluster, 1)),
        0);
    int64_t total_picks = 0;
    Scalar entropy_sum = 0.0;
    for (const RoutingTrace* t : group) {
      entropy_sum += entropy_nats(t->posterior);
      const size_t arg = static_cast<size_t>(
          std::max_element(t->posterior.begin(), t->posterior.end()) -
          t->posterior.begin());
      s.cluster_counts[arg] += 1;
      labels[arg][static_cast<size_t>(t->label)] += 1;
      if (!t->expert_sel.empty()) {
        check_param(!t->selected.empty() &&
                        t->expert_sel.size() % t->selected.size() == 0,
                    "routing_stats: ragged expert picks in sample ",
                    t->sample_id);
        const size_t per_slot = t->expert_sel.size() / t->selected.size();
        for (size_t idx = 0; idx < t->expert_sel.size(); ++idx) {
          const int64_t c = t->selected[idx / per_slot];
          const int64_t e = t->expert_sel[idx];
          check_param(c >= 0 && c < s.n_clusters && e >= 0,
                      "routing_stats: pick out of range in sample ",
                      t->sample_id);
          picks[static_cast<size_t>(c * s.experts_per_cluster + e)] += 1;
          ++total_picks;
        }
      }
    }
    s.mean_entropy = entropy_sum / static_cast<Scalar>(s.samples);

    std::vector<Scalar> argmax_dist;
    int64_t majority_sum = 0;
    for (int64_t c = 0; c < s.n_clusters; ++c) {
      argmax_dist.push_back(static_cast<Scalar>(s.cluster_counts[static_cast<size_t>(c)]) /
                            static_cast<Scalar>(s.samples));
      majority_sum += *std::max_element(labels[static_cast<size_t>(c)].begin(),
                                        labels[static_cast<size_t>(c)].end());
    }
    s.argmax_entropy = entropy_nats(argmax_dist);
    s.purity = static_cast<Scalar>(majority_sum) / static_cast<Scalar>(s.samples);

    if (total_picks > 0) {
      s.expert_utilization.resize(picks.size());
      for (size_t i = 0; i < picks.size(); ++i)
        s.expert_utilization[i] =
            static_cast<Scalar>(picks[i]) / static_cast<Scalar>(total_picks);
    } else {
      s.experts_per_cluster = 0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_stage_stats_csv(const std::vector<StageStats>& stats,
                           const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "stage,samples,n_clusters,mean_entropy,argmax_entropy,purity\n";
  for (const StageStats& s : stats)
    out << s.stage << ',' << s.samples << ',' << s.n_clusters << ','
        << s.mean_entropy << ',' << s.argmax_entropy << ',' << s.purity
        << '\n';
}

void write_utilization_csv(const std::vector<StageStats>& stats,
                           const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "stage,cluster,expert,fraction\n";
  for (const StageStats& s : stats)
    for (int64_t c = 0; c < s.n_clusters; ++c)
      for (int64_t e = 0; e < s.experts_per_cluster; ++e)
        out << s.stage << ',' << c << ',' << e << ','
            << s.expert_utilization[static_cast<size_t>(c * s.experts_per_cluster + e)]
            << '\n';
}

AffinityMaps affinity_map(const RestorationNet& net, const Tensor& img,
                          int stage) {
  check_param(stage >= 0 && stage < 4, "affinity_map: stage must lie in [0,4), got ",
              stage);
  check_param(net.config().use_pcgrm,
              "affinity_map: routing is disabled in this model");
  NoGrad ng;
  ForwardTrace trace;
  trace.capture_maps = true;
  net.forward(Var(to_batched(img)), nullptr, false, &trace);
  AffinityMaps out;
  out.stage = stage;
  out.cosines = net.routers()[static_cast<size_t>(stage)].pixel_affinity(
      trace.stage_maps[static_cast<size_t>(stage)]);
  return out;
}

void write_affinity_csv(const AffinityMaps& maps, const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "prototype,row,col,cosine\n";
  const Tensor& m = maps.cosines;
  for (int64_t n = 0; n < m.dim(0); ++n)
    for (int64_t y = 0; y < m.dim(1); ++y)
      for (int64_t x = 0; x < m.dim(2); ++x)
        out << n << ',' << y << ',' << x << ',' << m.at({n, y, x}) << '\n';
}

void write_affinity_png(const AffinityMaps& maps, const std::string& path) {
  const Tensor& m = maps.cosines;
  const int64_t n = m.dim(0), h = m.dim(1), w = m.dim(2);
  const int64_t gutter = 2;
  Tensor img = Tensor::full({3, h, n * w + (n - 1) * gutter}, 1.0);
  for (int64_t p = 0; p < n; ++p) {
    Scalar lo = m.at({p, 0, 0}), hi = lo;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        lo = std::min(lo, m.at({p, y, x}));
        hi = std::max(hi, m.at({p, y, x}));
      }
    const Scalar span = hi - lo;
    const int64_t x0 = p * (w + gutter);
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const Scalar v =
            span > 0.0 ? (m.at({p, y, x}) - lo) / span : 0.5;
        for (int64_t c = 0; c < 3; ++c) img.at({c, y, x0 + x}) = v;
      }
  }
  save_png(path, img);
}

Tensor prototype_mse_matrix(const PrototypeBank& bank) {
  NoGrad ng;
  const Tensor& p = bank.prototypes.val();
  const int64_t n = p.dim(0), d = p.dim(1);
  Tensor out = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      Scalar acc = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const Scalar diff = p.at({i, k}) - p.at({j, k});
        acc += diff * diff;
      }
      acc /= static_cast<Scalar>(d);
      out.at({i, j}) = acc;
      out.at({j, i}) = acc;
    }
  return out;
}

void write_matrix_csv(const Tensor& m, const std::string& path) {
  check_shape(m.rank() == 2, "write_matrix_csv: expected a matrix");
  std::ofstream out = open_csv(path);
  for (int64_t i = 0; i < m.dim(0); ++i) {
    for (int64_t j = 0; j < m.dim(1); ++j) {
      if (j) out << ',';
      out << m.at({i, j});
    }
    out << '\n';
  }
}

void write_matrix_png(const Tensor& m, const std::string& path) {
  check_shape(m.rank() == 2, "write_matrix_png: expected a matrix");
  const int64_t cell = 8;
  const int64_t rows = m.dim(0), cols = m.dim(1);
  Scalar lo = m.at({0, 0}), hi = lo;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) {
      lo = std::min(lo, m.at({i, j}));
      hi = std::max(hi, m.at({i, j}));
    }
  const Scalar span = hi - lo;
  Tensor img = Tensor::zeros({3, rows * cell, cols * cell});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) {
      const Scalar v = span > 0.0 ? (m.at({i, j}) - lo) / span : 0.5;
      for (int64_t y = i * cell; y < (i + 1) * cell; ++y)
        for (int64_t x = j * cell; x < (j + 1) * cell; ++x)
          for (int64_t c = 0; c < 3; ++c) img.at({c, y, x}) = v;
    }
  save_png(path, img);
}

std::vector<EmbeddingRow> export_embeddings(const RestorationNet& net,
                                            const Dataset& data, int stage) {
  check_param(stage >= 0 && stage < 4,
              "export_embeddings: stage must lie in [0,4), got ", stage);
  NoGrad ng;
  std::vector<EmbeddingRow> rows;
  for (int64_t i = 0; i < data.size(); ++i) {
    DegradationSample sample = data.get(0, i);
    ForwardTrace trace;
    net.forward(Var(to_batched(sample.degraded)), nullptr, false, &trace);
    const Tensor& feat = trace.stage_features[static_cast<size_t>(stage)];
    EmbeddingRow row;
    row.sample_id = std::to_string(i);
    row.label = sample.label;
    for (int64_t c = 0; c < feat.dim(1); ++c)
      row.feature.push_back(feat.at({0, c}));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_embeddings_csv(const std::vector<EmbeddingRow>& rows,
                          const std::string& path) {
  check_param(!rows.empty(), "write_embeddings_csv: no rows");
  std::ofstream out = open_csv(path);
  out << "sample_id,label";
  for (size_t c = 0; c < rows.front().feature.size(); ++c) out << ",f" << c;
  out << '\n';
  for (const EmbeddingRow& r : rows) {
    out << r.sample_id << ',' << task_name(r.label);
    for (Scalar v : r.feature) out << ',' << v;
    out << '\n';
  }
}

Tensor pca_project(const std::vector<EmbeddingRow>& rows, int dims) {
  check_param(!rows.empty(), "pca_project: no rows");
  const int64_t n = static_cast<int64_t>(rows.size());
  const int64_t d = static_cast<int64_t>(rows.front().feature.size());
  check_param(dims >= 1 && dims <= d, "pca_project: dims must lie in [1, ", d,
              "], got ", dims);
  for (const EmbeddingRow& r : rows)
    check_param(static_cast<int64_t>(r.feature.size()) == d,
                "pca_project: ragged feature widths");

  Eigen::MatrixXd x(n, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      x(i, j) = rows[static_cast<size_t>(i)].feature[static_cast<size_t>(j)];
  x.rowwise() -= x.colwise().mean();

  Eigen::MatrixXd cov = n > 1
                            ? Eigen::MatrixXd(x.transpose() * x /
                                              static_cast<double>(n - 1))
                            : Eigen::MatrixXd::Zero(d, d);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success)
    raise<NumericalError>("pca_project: eigensolver failed");

  // Eigenvalues come back ascending; take the top `dims` columns and pin
  // each component's sign to its largest-magnitude loading.
  Eigen::MatrixXd basis(d, dims);
  for (int k = 0; k < dims; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(d - 1 - k);
    int argmax = 0;
    v.cwiseAbs().maxCoeff(&argmax);
    if (v(argmax) < 0.0) v = -v;
    basis.col(k) = v;
  }
  Eigen::MatrixXd scores = x * basis;

  Tensor out = Tensor::zeros({n, dims});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < dims; ++k) out.at({i, k}) = scores(i, k);
  return out;
}

void write_pca_csv(const std::vector<EmbeddingRow>& rows, const Tensor& scores,
                   const std::string& path) {
  check_shape(scores.rank() == 2 &&
                  scores.dim(0) == static_cast<int64_t>(rows.size()),
              "write_pca_csv: scores do not match rows");
  std::ofstream out = open_csv(path);
  out << "sample_id,label";
  for (int64_t k = 0; k < scores.dim(1); ++k) out << ",pc" << (k + 1);
  out << '\n';
  for (size_t i = 0; i < rows.size(); ++i) {
    out << rows[i].sample_id << ',' << task_name(rows[i].label);
    for (int64_t k = 0; k < scores.dim(1); ++k)
      out << ',' << scores.at({static_cast<int64_t>(i), k});
    out << '\n';
  }
}

Scalar separability_ratio(const std::vector<EmbeddingRow>& rows) {
  check_param(!rows.empty(), "separability_ratio: no rows");
  const size_t d = rows.front().feature.size();
  std::map<Task, std::vector<Scalar>> centroids;
  std::map<Task, int64_t> counts;
  for (const EmbeddingRow& r : rows) {
    check_param(r.feature.size() == d, "separability_ratio: ragged rows");
    auto& c = centroids[r.label];
    c.resize(d, 0.0);
    for (size_t j = 0; j < d; ++j) c[j] += r.feature[j];
    counts[r.label] += 1;
  }
  check_param(centroids.size() >= 2,
              "separability_ratio: need at least two labels, got ",
              centroids.size());
  for (auto& [task, c] : centroids)
    for (Scalar& v : c) v /= static_cast<Scalar>(counts[task]);

  Scalar within = 0.0;
  for (const EmbeddingRow& r : rows) {
    const auto& c = centroids[r.label];
    Scalar acc = 0.0;
    for (size_t j = 0; j < d; ++j) {
      const Scalar diff = r.feature[j] - c[j];
      acc += diff * diff;
    }
    within += std::sqrt(acc);
  }
  within /= static_cast<Scalar>(rows.size());

  Scalar between = 0.0;
  int64_t pairs = 0;
  for (auto a = centroids.begin(); a != centroids.end(); ++a)
    for (auto b = std::next(a); b != centroids.end(); ++b) {
      Scalar acc = 0.0;
      for (size_t j = 0; j < d; ++j) {
        const Scalar diff = a->second[j] - b->second[j];
        acc += diff * diff;
      }
      between += std::sqrt(acc);
      ++pairs;
    }
  between /= static_cast<Scalar>(pairs);

  if (within == 0.0) return std::numeric_limits<Scalar>::infinity();
  return between / within;
}

Scalar high_freq_energy_fraction(const Tensor& map) {
  Scalar high = 0.0;
  radial_energy(map, 2, &high);
  return high;
}

std::vector<SpectrumRow> spectrum_profile(const RestorationNet& net,
                                          const Tensor& img, int bins) {
  check_param(net.config().use_dafmm,
              "spectrum_profile: frequency modulation is disabled in this model");
  check_param(bins >= 1, "spectrum_profile: bins must be positive");
  NoGrad ng;
  ForwardTrace trace;
  trace.capture_spectra = true;
  net.forward(Var(to_batched(img)), nullptr, false, &trace);
  std::vector<SpectrumRow> out;
  for (size_t idx = 0; idx < trace.ll_bands.size(); ++idx) {
    SpectrumRow ll;
    ll.level = static_cast<int>(idx);
    ll.component = "ll";
    ll.radial = radial_energy(trace.ll_bands[idx], bins, &ll.high_fraction);
    out.push_back(std::move(ll));

    SpectrumRow low;
    low.level = static_cast<int>(idx);
    low.component = "low";
    low.radial = radial_energy(trace.low_mined[idx], bins, &low.high_fraction);
    out.push_back(std::move(low));
  }
  return out;
}

void write_spectrum_csv(const std::vector<SpectrumRow>& rows,
                        const std::string& path) {
  std::ofstream out = open_csv(path);
  out << "level,component,high_fraction,bin,energy_fraction\n";
  for (const SpectrumRow& r : rows)
    for (size_t b = 0; b < r.radial.size(); ++b)
      out << r.level << ',' << r.component << ',' << r.high_fraction << ','
          << b << ',' << r.radial[b] << '\n';
}

}  // namespace cgir
