#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vremd/config.hpp"
#include "vremd/heads.hpp"
#include "vremd/model.hpp"
#include "vremd/rng.hpp"

namespace vremd {

struct TrainConfig {
  std::size_t steps = 400;
  std::size_t batch_size = 4;
  double learning_rate = 2e-3;
  std::size_t lr_drop_step = 300;  // divided by ten from here on
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient norm cap, 0 disables
  bool freeze_backbone = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate < 0 || weight_decay < 0 || eps <= 0)
      throw std::invalid_argument("train config: rates must be nonnegative");
    if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be positive");
  }
};

template <class Real>
struct TrainSample {
  FrameSequence<Real> input;
  Heatmaps<Real> target;
  std::vector<bool> visibility;
};

template <class Real>
using SampleSource = std::function<TrainSample<Real>(std::size_t)>;

struct StepLog {
  std::size_t step;
  double loss;
  double lr;
};

// Decoupled-weight-decay adaptive-moment optimizer.
template <class Real>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const TrainConfig& cfg, const ParamList<Real>& params) : cfg_(cfg) {
    for (const auto& p : params) {
      m_[p.name].assign(p.value.size(), Real(0));
      v_[p.name].assign(p.value.size(), Real(0));
    }
  }

  void step(const ParamList<Real>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (const auto& p : params) {
      auto& m = m_.at(p.name);
      auto& v = v_.at(p.name);
      auto& w = p.value.data_mut();
      const bool has = p.value.has_grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double g = has ? double(p.value.grad()[i]) : 0.0;
        m[i] = Real(cfg_.beta1 * double(m[i]) + (1 - cfg_.beta1) * g);
        v[i] = Real(cfg_.beta2 * double(v[i]) + (1 - cfg_.beta2) * g * g);
        const double mhat = double(m[i]) / bc1;
        const double vhat = double(v[i]) / bc2;
        w[i] = Real(double(w[i]) -
                    lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                          cfg_.weight_decay * double(w[i])));
      }
    }
  }

  std::size_t steps_taken() const { return t_; }
  std::map<std::string, std::vector<Real>>& first_moments() { return m_; }
  std::map<std::string, std::vector<Real>>& second_moments() { return v_; }
  void set_steps_taken(std::size_t t) { t_ = t; }

 private:
  TrainConfig cfg_;
  std::map<std::string, std::vector<Real>> m_, v_;
  std::size_t t_ = 0;
};

// Caps the global gradient norm across all parameters.
template <class Real>
void clip_grad_norm(const ParamList<Real>& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (const auto& p : params)
    if (p.value.has_grad())
      for (Real g : p.value.grad()) sq += double(g) * double(g);
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const Real scale = Real(max_norm / norm);
  for (const auto& p : params)
    if (p.value.has_grad())
      for (auto& v : p.value.grad_mut()) v *= scale;
}

template <class Real>
struct TrainResult {
  std::vector<StepLog> log;
  AdamW<Real> optimizer;
  Rng rng{0};
};

// Single-threaded optimization loop. Samples are pulled from the source in a
// fixed order, so a given (seed, config) pair replays bit-identically.
template <class Real>
TrainResult<Real> train(Model<Real>& model, const SampleSource<Real>& source,
                        const TrainConfig& cfg,
                        std::ostream* metric_csv = nullptr) {
  cfg.validate();
  auto all_params = model.named_params();
  ParamList<Real> trainable;
  for (const auto& p : all_params) {
    if (cfg.freeze_backbone && p.name.rfind("backbone", 0) == 0) continue;
    trainable.push_back(p);
  }

  TrainResult<Real> result;
  result.optimizer = AdamW<Real>(cfg, trainable);
  result.rng = Rng(cfg.seed);
  if (metric_csv) *metric_csv << "step,loss,lr\n";

  std::size_t cursor = 0;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double lr = step >= cfg.lr_drop_step ? cfg.learning_rate / 10.0
                                               : cfg.learning_rate;
    for (const auto& p : trainable) p.value.zero_grad();

    Tensor<Real> loss;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      TrainSample<Real> sample = source(cursor++);
      auto out = model.forward(sample.input);
      Tensor<Real> l = heatmap_loss(out.combined, sample.target,
                                    sample.visibility);
      loss = loss.defined() ? add(loss, l) : l;
    }
    loss = mul_scalar(loss, Real(1) / Real(cfg.batch_size));

    const double loss_value = double(loss.item());
    if (!std::isfinite(loss_value)) {
      const std::string culprit = first_nonfinite(loss);
      throw std::runtime_error(
          "non-finite loss at step " + std::to_string(step) +
          "; first non-finite tensor: " +
          (culprit.empty() ? std::string("loss") : culprit));
    }

    loss.backward();
    clip_grad_norm(trainable, cfg.clip_norm);
    result.optimizer.step(trainable, lr);

    result.log.push_back({step, loss_value, lr});
    if (metric_csv) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", step, loss_value, lr);
      *metric_csv << buf;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// checkpoint file format
//
//   bytes 0..7   magic "VRMD0001"
//   u32          metadata length, then that many bytes of key=value lines
//   u32          record count
//   per record   u32 name length, name bytes, u8 dtype (0=f64, 1=f32),
//                u32 rank, u64 extents..., raw little-endian payload
//   bytes        trailing marker "END0"
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'V', 'R', 'M', 'D',
                                             '0', '0', '0', '1'};

namespace detail {

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& in, T& v, const std::string& what) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("corrupt checkpoint: truncated " + what);
}

template <class Real>
constexpr std::uint8_t dtype_tag() {
  return sizeof(Real) == 8 ? 0 : 1;
}

template <class Real>
void write_record(std::ostream& out, const std::string& name,
                  const Shape& shape, const std::vector<Real>& data) {
  write_pod(out, std::uint32_t(name.size()));
  out.write(name.data(), name.size());
  write_pod(out, dtype_tag<Real>());
  write_pod(out, std::uint32_t(shape.size()));
  for (auto e : shape) write_pod(out, std::uint64_t(e));
  out.write(reinterpret_cast<const char*>(data.data()),
            data.size() * sizeof(Real));
}

}  // namespace detail

template <class Real>
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<Real> data;
};

template <class Real>
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointRecord<Real>> records;

  const CheckpointRecord<Real>* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }
};

inline void model_config_to_metadata(const ModelConfig& c,
                                     std::map<std::string, std::string>& m) {
  auto put = [&](const std::string& k, auto v) {
    m["model." + k] = std::to_string(v);
  };
  put("channels", c.channels);
  put("img_h", c.img_h);
  put("img_w", c.img_w);
  put("patch", c.patch);
  put("dim", c.dim);
  put("heads", c.heads);
  put("backbone_depth", c.backbone_depth);
  put("mlp_ratio", c.mlp_ratio);
  put("joints", c.joints);
  put("hkme_depth_human", c.hkme_depth_human);
  put("hkme_depth_keypoint", c.hkme_depth_keypoint);
  put("hkme_depth_spatial", c.hkme_depth_spatial);
  put("hkme_depth_temporal", c.hkme_depth_temporal);
  put("bmd_depth", c.bmd_depth);
  put("sample_count", c.sample_count);
  put("offset_hidden", c.offset_hidden);
  put("token_hidden", c.token_hidden);
  put("motion_channels", c.motion_channels);
  put("use_hkme", int(c.use_hkme));
  put("use_human_mask", int(c.use_human_mask));
  put("use_keypoint_mask", int(c.use_keypoint_mask));
  put("use_bmd", int(c.use_bmd));
  put("bidirectional", int(c.bidirectional));
  put("constraint_from_backbone", int(c.constraint_from_backbone));
  put("sigmoid_human_mask", int(c.sigmoid_human_mask));
  m["model.max_offset_radius"] = std::to_string(c.max_offset_radius);
  m["model.dca_mode"] = dca_mode_name(c.dca_mode);
}

inline ModelConfig model_config_from_metadata(
    const std::map<std::string, std::string>& m) {
  ModelConfig c;
  auto get = [&](const std::string& k, std::size_t fallback) -> std::size_t {
    auto it = m.find("model." + k);
    return it == m.end() ? fallback : std::stoul(it->second);
  };
  c.channels = get("channels", c.channels);
  c.img_h = get("img_h", c.img_h);
  c.img_w = get("img_w", c.img_w);
  c.patch = get("patch", c.patch);
  c.dim = get("dim", c.dim);
  c.heads = get("heads", c.heads);
  c.backbone_depth = get("backbone_depth", c.backbone_depth);
  c.mlp_ratio = get("mlp_ratio", c.mlp_ratio);
  c.joints = get("joints", c.joints);
  c.hkme_depth_human = get("hkme_depth_human", c.hkme_depth_human);
  c.hkme_depth_keypoint = get("hkme_depth_keypoint", c.hkme_depth_keypoint);
  c.hkme_depth_spatial = get("hkme_depth_spatial", c.hkme_depth_spatial);
  c.hkme_depth_temporal = get("hkme_depth_temporal", c.hkme_depth_temporal);
  c.bmd_depth = get("bmd_depth", c.bmd_depth);
  c.sample_count = get("sample_count", c.sample_count);
  c.offset_hidden = get("offset_hidden", c.offset_hidden);
  c.token_hidden = get("token_hidden", c.token_hidden);
  c.motion_channels = get("motion_channels", c.motion_channels);
  c.use_hkme = get("use_hkme", 1) != 0;
  c.use_human_mask = get("use_human_mask", 1) != 0;
  c.use_keypoint_mask = get("use_keypoint_mask", 1) != 0;
  c.use_bmd = get("use_bmd", 1) != 0;
  c.bidirectional = get("bidirectional", 1) != 0;
  c.constraint_from_backbone = get("constraint_from_backbone", 0) != 0;
  c.sigmoid_human_mask = get("sigmoid_human_mask", 0) != 0;
  if (auto it = m.find("model.max_offset_radius"); it != m.end())
    c.max_offset_radius = std::stod(it->second);
  if (auto it = m.find("model.dca_mode"); it != m.end()) {
    if (it->second == "dc") c.dca_mode = DcaMode::kDeformConv;
    else if (it->second == "da") c.dca_mode = DcaMode::kDeformAttention;
    else c.dca_mode = DcaMode::kDeformCrossAttention;
  }
  return c;
}

// Reads only the header block, so callers can dispatch on dtype before
// committing to a template instantiation.
inline std::map<std::string, std::string> load_checkpoint_metadata(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "VRMD", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint version mismatch: expected VRMD0001");
  std::uint32_t meta_len = 0;
  detail::read_pod(in, meta_len, "metadata length");
  std::string metadata(meta_len, '\0');
  in.read(metadata.data(), meta_len);
  if (!in) throw std::runtime_error("corrupt checkpoint: truncated metadata");
  std::map<std::string, std::string> out;
  std::istringstream ms(metadata);
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos)
      out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

template <class Real>
void save_checkpoint(const std::string& path, const Model<Real>& model,
                     AdamW<Real>* optimizer = nullptr,
                     const Rng* rng = nullptr, std::size_t step = 0,
                     std::map<std::string, std::string> extra = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);

  std::map<std::string, std::string> meta = std::move(extra);
  model_config_to_metadata(model.cfg, meta);
  meta["format_version"] = "1";
  meta["dtype"] = sizeof(Real) == 8 ? "f64" : "f32";
  meta["step"] = std::to_string(step);
  if (rng) meta["rng_state"] = rng->state();
  if (optimizer)
    meta["opt.t"] = std::to_string(optimizer->steps_taken());

  std::ostringstream ms;
  for (const auto& [k, v] : meta) ms << k << "=" << v << "\n";
  const std::string metadata = ms.str();

  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_pod(out, std::uint32_t(metadata.size()));
  out.write(metadata.data(), metadata.size());

  auto params = model.named_params();
  std::uint32_t count = std::uint32_t(params.size());
  if (optimizer) count += 2 * std::uint32_t(params.size());
  detail::write_pod(out, count);
  for (const auto& p : params)
    detail::write_record(out, p.name, p.value.shape(), p.value.data());
  if (optimizer) {
    for (const auto& p : params)
      detail::write_record(out, "opt.m." + p.name, p.value.shape(),
                           optimizer->first_moments().at(p.name));
    for (const auto& p : params)
      detail::write_record(out, "opt.v." + p.name, p.value.shape(),
                           optimizer->second_moments().at(p.name));
  }
  out.write("END0", 4);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[8];
  in.read(magic, 8);
  if (!in) throw std::runtime_error("corrupt checkpoint: too short: " + path);
  if (std::memcmp(magic, "VRMD", 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error(
        "checkpoint version mismatch: expected VRMD0001, found " +
        std::string(magic, 8));

  Checkpoint<Real> ckpt;
  std::uint32_t meta_len = 0;
  detail::read_pod(in, meta_len, "metadata length");
  std::string metadata(meta_len, '\0');
  in.read(metadata.data(), meta_len);
  if (!in) throw std::runtime_error("corrupt checkpoint: truncated metadata");
  std::istringstream ms(metadata);
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos)
      ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
  }

  const std::string want_dtype = sizeof(Real) == 8 ? "f64" : "f32";
  if (ckpt.metadata.count("dtype") && ckpt.metadata.at("dtype") != want_dtype)
    throw std::runtime_error("checkpoint dtype " + ckpt.metadata.at("dtype") +
                             " does not match requested " + want_dtype);

  std::uint32_t count = 0;
  detail::read_pod(in, count, "record count");
  for (std::uint32_t r = 0; r < count; ++r) {
    CheckpointRecord<Real> rec;
    std::uint32_t name_len = 0;
    detail::read_pod(in, name_len, "record name length");
    if (name_len > 4096)
      throw std::runtime_error("corrupt checkpoint: unreasonable name length");
    rec.name.resize(name_len);
    in.read(rec.name.data(), name_len);
    std::uint8_t dtype = 0;
    detail::read_pod(in, dtype, "dtype tag");
    if (dtype != detail::dtype_tag<Real>())
      throw std::runtime_error("checkpoint dtype mismatch in record " +
                               rec.name);
    std::uint32_t rank = 0;
    detail::read_pod(in, rank, "rank");
    if (rank > 8) throw std::runtime_error("corrupt checkpoint: rank > 8");
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::uint64_t e = 0;
      detail::read_pod(in, e, "extent");
      rec.shape.push_back(std::size_t(e));
      numel *= std::size_t(e);
    }
    rec.data.resize(numel);
    in.read(reinterpret_cast<char*>(rec.data.data()), numel * sizeof(Real));
    if (!in)
      throw std::runtime_error("corrupt checkpoint: truncated payload of " +
                               rec.name);
    ckpt.records.push_back(std::move(rec));
  }
  char tail[4];
  in.read(tail, 4);
  if (!in || std::memcmp(tail, "END0", 4) != 0)
    throw std::runtime_error("corrupt checkpoint: missing end marker");
  return ckpt;
}

// Rebuilds the model (and optionally the optimizer/rng state) recorded in a
// checkpoint. Loaded forward passes replay bit-identically.
template <class Real>
Model<Real> restore_model(const Checkpoint<Real>& ckpt) {
  Model<Real> model(model_config_from_metadata(ckpt.metadata));
  for (auto& p : model.named_params()) {
    const auto* rec = ckpt.find(p.name);
    if (!rec)
      throw std::runtime_error("checkpoint is missing parameter " + p.name);
    if (rec->shape != p.value.shape())
      throw std::runtime_error("checkpoint shape mismatch for " + p.name);
    p.value.data() = rec->data;
  }
  return model;
}

template <class Real>
void restore_optimizer(const Checkpoint<Real>& ckpt, const Model<Real>& model,
                       AdamW<Real>& optimizer) {
  for (const auto& p : model.named_params()) {
    const auto* m = ckpt.find("opt.m." + p.name);
    const auto* v = ckpt.find("opt.v." + p.name);
    if (m) optimizer.first_moments()[p.name] = m->data;
    if (v) optimizer.second_moments()[p.name] = v->data;
  }
  if (auto it = ckpt.metadata.find("opt.t"); it != ckpt.metadata.end())
    optimizer.set_steps_taken(std::stoul(it->second));
}

}  // namespace vremd
