#include "cgir/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cgir {

namespace {

constexpr char kMagic[8] = {'C', 'G', 'I', 'R', 'C', 'K', 'P', '\n'};
constexpr uint32_t kVersion = 1;

void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(Scalar)));
}

Tensor read_tensor(std::istream& in, const Shape& shape) {
  Tensor t = Tensor::empty(shape);
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(Scalar)));
  return t;
}

std::string init_name(ProtoInit mode) {
  return mode == ProtoInit::Orthogonal ? "orthogonal" : "random";
}

ProtoInit init_from_name(const std::string& name) {
  if (name == "orthogonal") return ProtoInit::Orthogonal;
  if (name == "random") return ProtoInit::Random;
  raise<ParameterError>("unknown prototype init mode '", name, "'");
}

}  // namespace

nlohmann::json model_to_json(const ModelConfig& cfg) {
  return nlohmann::json{{"embed_dim", cfg.embed_dim},
                        {"stage_depths", cfg.stage_depths},
                        {"cluster_counts", cfg.cluster_counts},
                        {"k1_counts", cfg.k1_counts},
                        {"experts_per_cluster", cfg.experts_per_cluster},
                        {"k2", cfg.k2},
                        {"heads", cfg.heads},
                        {"fsb_k", cfg.fsb_k},
                        {"proto_init", init_name(cfg.proto_init)},
                        {"use_pcgrm", cfg.use_pcgrm},
                        {"use_dafmm", cfg.use_dafmm}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
  cfg.stage_depths = j.value("stage_depths", cfg.stage_depths);
  cfg.cluster_counts = j.value("cluster_counts", cfg.cluster_counts);
  cfg.k1_counts = j.value("k1_counts", cfg.k1_counts);
  cfg.experts_per_cluster = j.value("experts_per_cluster", cfg.experts_per_cluster);
  cfg.k2 = j.value("k2", cfg.k2);
  cfg.heads = j.value("heads", cfg.heads);
  cfg.fsb_k = j.value("fsb_k", cfg.fsb_k);
  cfg.proto_init = init_from_name(j.value("proto_init", std::string("orthogonal")));
  cfg.use_pcgrm = j.value("use_pcgrm", cfg.use_pcgrm);
  cfg.use_dafmm = j.value("use_dafmm", cfg.use_dafmm);
  return cfg;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["version"] = kVersion;
  header["model"] = model_to_json(ck.model);
  header["train"] = ck.train;
  header["step"] = ck.step;
  header["rng"] = ck.rng;
  header["has_optimizer"] = ck.has_optimizer;
  header["adam_t"] = ck.adam_t;
  header["adam_lr"] = ck.adam_lr;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, t] : ck.params) {
    names.push_back({{"name", name}, {"shape", t.shape()}});
  }
  header["params"] = std::move(names);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check_param(out.good(), "save_checkpoint: cannot open ", path);
  out.write(kMagic, sizeof(kMagic));
  const std::string text = header.dump();
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : ck.params) write_tensor(out, t);
  if (ck.has_optimizer) {
    for (const Tensor& t : ck.adam_m) write_tensor(out, t);
    for (const Tensor& t : ck.adam_v) write_tensor(out, t);
  }
  out.flush();
  if (!out.good()) raise<IoError>("save_checkpoint: write failed for ", path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) raise<IoError>("load_checkpoint: cannot open ", path);
  char magic[sizeof(kMagic)] = {};
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    raise<IoError>("load_checkpoint: ", path, " is not a checkpoint file");
  }
  const uint64_t header_len = read_u64(in);
  if (!in.good() || header_len == 0 || header_len > (64u << 20)) {
    raise<IoError>("load_checkpoint: corrupt header length in ", path);
  }
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in.good()) raise<IoError>("load_checkpoint: truncated header in ", path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    raise<IoError>("load_checkpoint: bad header in ", path, ": ", e.what());
  }
  if (header.value("version", 0u) != kVersion) {
    raise<IoError>("load_checkpoint: unsupported version in ", path);
  }

  Checkpoint ck;
  try {
    ck.model = model_from_json(header.at("model"));
    ck.train = header.value("train", nlohmann::json::object());
    ck.step = header.value("step", int64_t(0));
    ck.rng = header.value("rng", std::string());
    ck.has_optimizer = header.value("has_optimizer", false);
    ck.adam_t = header.value("adam_t", int64_t(0));
    ck.adam_lr = header.value("adam_lr", 0.0);
    for (const auto& entry : header.at("params")) {
      const std::string name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      ck.params.emplace_back(name, read_tensor(in, shape));
    }
    if (ck.has_optimizer) {
      for (const auto& [name, t] : ck.params)
        ck.adam_m.push_back(read_tensor(in, t.shape()));
      for (const auto& [name, t] : ck.params)
        ck.adam_v.push_back(read_tensor(in, t.shape()));
    }
  } catch (const nlohmann::json::exception& e) {
    raise<IoError>("load_checkpoint: malformed header fields in ", path, ": ",
                   e.what());
  }
  if (!in.good()) raise<IoError>("load_checkpoint: truncated payload in ", path);
  return ck;
}

Checkpoint snapshot_state(const ModelConfig& model, const nlohmann::json& train_cfg,
                          const ParamStore& store, const Adam* opt, const Rng* rng,
                          int64_t step) {
  Checkpoint ck;
  ck.model = model;
  ck.train = train_cfg;
  ck.step = step;
  if (rng != nullptr) ck.rng = rng->serialize();
  for (const auto& [name, p] : store.items()) {
    ck.params.emplace_back(name, p.val().clone());
  }
  if (opt != nullptr) {
    ck.has_optimizer = true;
    ck.adam_t = opt->step_count();
    ck.adam_lr = opt->lr;
    for (const Tensor& t : opt->moments1()) ck.adam_m.push_back(t.clone());
    for (const Tensor& t : opt->moments2()) ck.adam_v.push_back(t.clone());
  }
  return ck;
}

void load_params(const Checkpoint& ck, ParamStore& store) {
  if (static_cast<int64_t>(ck.params.size()) != store.size()) {
    raise<StateError>("checkpoint holds ", ck.params.size(), " parameters, model has ",
                      store.size());
  }
  for (size_t i = 0; i < ck.params.size(); ++i) {
    const auto& [name, saved] = ck.params[i];
    const auto& [live_name, live] = store.items()[i];
    if (name != live_name) {
      raise<StateError>("checkpoint parameter ", i, " is '", name, "', model expects '",
                        live_name, "'");
    }
    Tensor& dst = live.node()->value;
    if (!dst.same_shape(saved)) {
      raise<StateError>("checkpoint parameter '", name, "' has shape ",
                        shape_str(saved.shape()), ", model expects ",
                        shape_str(dst.shape()));
    }
    std::memcpy(dst.data(), saved.data(),
                static_cast<size_t>(saved.numel()) * sizeof(Scalar));
  }
}

void load_optimizer(const Checkpoint& ck, Adam& opt) {
  if (!ck.has_optimizer) {
    raise<StateError>("checkpoint carries no optimizer state");
  }
  if (opt.moments1().size() != ck.adam_m.size()) {
    raise<StateError>("optimizer state size mismatch: checkpoint ", ck.adam_m.size(),
                      ", live ", opt.moments1().size());
  }
  opt.set_step_count(ck.adam_t);
  opt.lr = ck.adam_lr;
  for (size_t i = 0; i < ck.adam_m.size(); ++i) {
    if (!opt.moments1()[i].same_shape(ck.adam_m[i])) {
      raise<StateError>("optimizer moment ", i, " shape mismatch");
    }
    std::memcpy(opt.moments1()[i].data(), ck.adam_m[i].data(),
                static_cast<size_t>(ck.adam_m[i].numel()) * sizeof(Scalar));
    std::memcpy(opt.moments2()[i].data(), ck.adam_v[i].data(),
                static_cast<size_t>(ck.adam_v[i].numel()) * sizeof(Scalar));
  }
}

}  // namespace cgir
