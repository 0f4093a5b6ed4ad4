#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "vremd/backbone.hpp"
#include "vremd/bmd.hpp"
#include "vremd/heads.hpp"
#include "vremd/hkme.hpp"
#include "vremd/tensor.hpp"

namespace vremd {

struct ModelConfig {
  std::size_t channels = 1;
  std::size_t img_h = 64;
  std::size_t img_w = 48;
  std::size_t patch = 8;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t backbone_depth = 2;
  std::size_t mlp_ratio = 2;
  std::size_t joints = 15;

  std::size_t hkme_depth_human = 1;
  std::size_t hkme_depth_keypoint = 1;
  std::size_t hkme_depth_spatial = 1;
  std::size_t hkme_depth_temporal = 1;

  std::size_t bmd_depth = 2;
  std::size_t sample_count = 4;
  std::size_t offset_hidden = 8;
  double max_offset_radius = 0.0;  // 0 -> derived from the grid diagonal

  std::size_t token_hidden = 64;
  std::size_t motion_channels = 16;

  // ablation switches
  bool use_hkme = true;  // off: no token pathway, motion constrained by F_t
  bool use_human_mask = true;
  bool use_keypoint_mask = true;
  bool use_bmd = true;
  bool bidirectional = true;
  DcaMode dca_mode = DcaMode::kDeformCrossAttention;
  bool constraint_from_backbone = false;
  bool sigmoid_human_mask = false;

  std::size_t grid_h() const { return img_h / patch; }
  std::size_t grid_w() const { return img_w / patch; }
  std::size_t tokens() const { return grid_h() * grid_w(); }
  std::size_t heatmap_h() const { return img_h / 4; }
  std::size_t heatmap_w() const { return img_w / 4; }

  BackboneConfig backbone() const {
    return {channels, img_h, img_w, patch, dim, heads, backbone_depth,
            mlp_ratio};
  }
  HkmeConfig hkme() const {
    HkmeConfig c;
    c.dim = dim;
    c.joints = joints;
    c.heads = heads;
    c.mlp_ratio = mlp_ratio;
    c.depth_human = hkme_depth_human;
    c.depth_keypoint = hkme_depth_keypoint;
    c.depth_spatial = hkme_depth_spatial;
    c.depth_temporal = hkme_depth_temporal;
    c.use_human_mask = use_human_mask;
    c.use_keypoint_mask = use_keypoint_mask;
    c.sigmoid_human_mask = sigmoid_human_mask;
    return c;
  }
  BmdConfig bmd() const {
    BmdConfig c;
    c.dim = dim;
    c.grid_h = grid_h();
    c.grid_w = grid_w();
    c.sample_count = sample_count;
    c.depth = bmd_depth;
    c.offset_hidden = offset_hidden;
    c.max_offset_radius = max_offset_radius;
    c.mode = dca_mode;
    c.bidirectional = bidirectional;
    return c;
  }
  HeadsConfig heads_cfg() const {
    return {dim,          joints,      grid_h(),     grid_w(),
            heatmap_h(),  heatmap_w(), token_hidden, motion_channels};
  }

  // A complete but much smaller instance for exhaustive gradient checks.
  static ModelConfig tiny() {
    ModelConfig c;
    c.img_h = 32;
    c.img_w = 32;
    c.patch = 8;  // 4x4 token grid
    c.dim = 8;
    c.heads = 2;
    c.joints = 3;
    c.sample_count = 2;
    c.offset_hidden = 4;
    c.token_hidden = 16;
    c.motion_channels = 8;
    return c;
  }
};

template <class Real>
struct ModelOutput {
  Heatmaps<Real> combined;   // H_t
  Heatmaps<Real> from_tokens;  // H_k (zero maps when the token path is off)
  Heatmaps<Real> from_motion;  // H_m
  HkmeOutput<Real> hkme;  // empty tensors when the token path is disabled
  BmdTrace<Real> bmd;  // empty tensors when the motion stream is disabled
  FeatureSequence<Real> features;
};

// Dual-stream pose model: enhanced visual tokens on one path, disentangled
// motion on the other, combined at the heatmap level. With the token path
// removed the prediction comes from the decoder alone, and the motion stream
// falls back to the backbone's key-frame features as its constraint.
template <class Real>
struct Model {
  ModelConfig cfg;
  Backbone<Real> backbone;
  std::unique_ptr<Hkme<Real>> hkme;  // absent under the no-token-path ablation
  std::unique_ptr<Bmd<Real>> bmd;    // absent under the no-motion ablation
  TokenHead<Real> token_head;
  MotionHead<Real> motion_head;

  explicit Model(const ModelConfig& c, std::uint64_t seed = 0) : cfg(c) {
    Rng rng(seed);
    backbone = Backbone<Real>(c.backbone(), rng);
    if (c.use_hkme) hkme = std::make_unique<Hkme<Real>>(c.hkme(), rng);
    if (c.use_bmd) bmd = std::make_unique<Bmd<Real>>(c.bmd(), rng);
    if (c.use_hkme) token_head = TokenHead<Real>(c.heads_cfg(), rng);
    motion_head = MotionHead<Real>(c.heads_cfg(), rng);
    check_unique_names();
  }

  ModelOutput<Real> forward(const FrameSequence<Real>& seq) const {
    ModelOutput<Real> out;
    out.features = backbone.encode_frames(seq);
    Tensor<Real> key_feat = out.features.frame(1);
    if (hkme) out.hkme = hkme->forward(out.features);

    Tensor<Real> motion;
    if (bmd) {
      Tensor<Real> constraint = hkme && !cfg.constraint_from_backbone
                                    ? out.hkme.enhanced
                                    : key_feat;
      out.bmd = bmd->forward(out.features, constraint);
      motion = out.bmd.fused;
    } else {
      motion = Tensor<Real>::zeros({cfg.tokens(), cfg.dim});
    }

    out.from_motion = motion_head.forward(motion, key_feat);
    if (hkme) {
      out.from_tokens = token_head.forward(out.hkme.key_tokens);
      out.combined = combine(out.from_tokens, out.from_motion);
    } else {
      out.from_tokens = Heatmaps<Real>{Tensor<Real>::zeros(
          {cfg.joints, cfg.heatmap_h(), cfg.heatmap_w()})};
      out.combined = out.from_motion;
    }
    return out;
  }

  ParamList<Real> named_params() const {
    ParamList<Real> out;
    backbone.params("backbone", out);
    if (hkme) hkme->params("hkme", out);
    if (bmd) bmd->params("bmd", out);
    if (hkme) token_head.params("token_head", out);
    motion_head.params("motion_head", out);
    for (auto& p : out) p.value.set_label(p.name);
    return out;
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& p : named_params()) n += p.value.size();
    return n;
  }

  void zero_grads() const {
    for (const auto& p : named_params()) p.value.zero_grad();
  }

  // Copies values for every name present in both models.
  void copy_params_from(const Model& other) {
    std::map<std::string, Tensor<Real>> theirs;
    for (const auto& p : other.named_params()) theirs.emplace(p.name, p.value);
    for (auto& p : named_params()) {
      auto it = theirs.find(p.name);
      if (it != theirs.end() && it->second.size() == p.value.size())
        p.value.data() = it->second.data();
    }
  }

 private:
  void check_unique_names() const {
    std::set<std::string> seen;
    for (const auto& p : named_params())
      if (!seen.insert(p.name).second)
        throw std::logic_error("duplicate parameter name: " + p.name);
  }
};

}  // namespace vremd
