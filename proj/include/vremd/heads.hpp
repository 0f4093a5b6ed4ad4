#pragma once

#include <string>
#include <vector>

#include "vremd/nn.hpp"
#include "vremd/tensor.hpp"

namespace vremd {

// Per-joint spatial probability maps.
template <class Real>
struct Heatmaps {
  Tensor<Real> maps;  // (J, H_h, W_h)

  std::size_t joints() const { return maps.shape()[0]; }
  std::size_t height() const { return maps.shape()[1]; }
  std::size_t width() const { return maps.shape()[2]; }
};

struct HeadsConfig {
  std::size_t dim = 32;
  std::size_t joints = 15;
  std::size_t grid_h = 8;
  std::size_t grid_w = 6;
  std::size_t heatmap_h = 16;
  std::size_t heatmap_w = 12;
  std::size_t token_hidden = 64;
  std::size_t motion_channels = 16;

  std::size_t upsample_stages() const {
    if (heatmap_h % grid_h != 0 || heatmap_w % grid_w != 0 ||
        heatmap_h / grid_h != heatmap_w / grid_w)
      throw std::invalid_argument(
          "heads: heatmap " + std::to_string(heatmap_h) + "x" +
          std::to_string(heatmap_w) + " is not an integer upscale of grid " +
          std::to_string(grid_h) + "x" + std::to_string(grid_w));
    std::size_t ratio = heatmap_h / grid_h;
    std::size_t stages = 0;
    while (ratio > 1) {
      if (ratio % 2 != 0)
        throw std::invalid_argument("heads: upscale ratio must be a power of 2");
      ratio /= 2;
      ++stages;
    }
    return stages;
  }
};

// Keypoint tokens -> per-joint maps through a shared MLP.
template <class Real>
struct TokenHead {
  Mlp<Real> mlp;
  HeadsConfig cfg;

  TokenHead() = default;
  TokenHead(const HeadsConfig& c, Rng& rng)
      : mlp(c.dim, c.token_hidden, c.heatmap_h * c.heatmap_w, rng), cfg(c) {}

  Heatmaps<Real> forward(const Tensor<Real>& key_tokens /* (J, D) */) const {
    Tensor<Real> flat = mlp.forward(key_tokens);  // (J, H*W)
    return {reshape(flat, {cfg.joints, cfg.heatmap_h, cfg.heatmap_w})};
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    mlp.params(prefix + ".mlp", out);
  }
};

// Motion representation and key-frame features, concatenated on the feature
// axis and decoded by stride-2 transposed-convolution stages (zero insertion
// followed by a 3x3 convolution). The final per-pixel projection starts at
// zero so the motion pathway contributes nothing until trained.
template <class Real>
struct MotionHead {
  std::vector<Conv3x3<Real>> stages;
  Conv3x3<Real> entry;   // used when no upsampling is needed
  Linear<Real> to_joints;
  HeadsConfig cfg;

  MotionHead() = default;
  MotionHead(const HeadsConfig& c, Rng& rng)
      : to_joints(Linear<Real>::zero_init(c.motion_channels, c.joints)),
        cfg(c) {
    const std::size_t n_stages = c.upsample_stages();
    if (n_stages == 0) {
      entry = Conv3x3<Real>(2 * c.dim, c.motion_channels, rng);
    } else {
      for (std::size_t i = 0; i < n_stages; ++i)
        stages.emplace_back(i == 0 ? 2 * c.dim : c.motion_channels,
                            c.motion_channels, rng);
    }
  }

  Heatmaps<Real> forward(const Tensor<Real>& motion /* (N, D) */,
                         const Tensor<Real>& key_feat /* (N, D) */) const {
    if (motion.shape() != key_feat.shape())
      throw std::invalid_argument("motion head: motion " +
                                  shape_str(motion.shape()) +
                                  " and key features " +
                                  shape_str(key_feat.shape()) + " disagree");
    if (motion.shape()[0] != cfg.grid_h * cfg.grid_w)
      throw std::invalid_argument(
          "motion head: token count " + std::to_string(motion.shape()[0]) +
          " does not fit grid " + std::to_string(cfg.grid_h) + "x" +
          std::to_string(cfg.grid_w));
    Tensor<Real> x = concat<Real>({motion, key_feat}, 1);  // (N, 2D)
    x = reshape(x, {cfg.grid_h, cfg.grid_w, 2 * cfg.dim});
    if (stages.empty()) {
      x = gelu(entry.forward(x));
    } else {
      for (const auto& s : stages) x = gelu(s.forward(zero_upsample2x(x)));
    }
    const std::size_t hw = cfg.heatmap_h * cfg.heatmap_w;
    Tensor<Real> flat =
        to_joints.forward(reshape(x, {hw, cfg.motion_channels}));  // (HW, J)
    return {reshape(transpose(flat), {cfg.joints, cfg.heatmap_h,
                                      cfg.heatmap_w})};
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    if (stages.empty()) {
      entry.params(prefix + ".entry", out);
    } else {
      for (std::size_t i = 0; i < stages.size(); ++i)
        stages[i].params(prefix + ".stage" + std::to_string(i), out);
    }
    to_joints.params(prefix + ".to_joints", out);
  }
};

// Equal-weight combination of the two prediction pathways.
template <class Real>
Heatmaps<Real> combine(const Heatmaps<Real>& h_k, const Heatmaps<Real>& h_m) {
  if (h_k.maps.shape() != h_m.maps.shape())
    throw std::invalid_argument("combine: heatmap shapes differ, " +
                                shape_str(h_k.maps.shape()) + " vs " +
                                shape_str(h_m.maps.shape()));
  return {mul_scalar(add(h_k.maps, h_m.maps), Real(0.5))};
}

// Mean squared error over visible joints; invisible joints drop out of both
// the sum and the normalizer. `sum_reduction` switches off the pixel mean.
template <class Real>
Tensor<Real> heatmap_loss(const Heatmaps<Real>& pred,
                          const Heatmaps<Real>& gt,
                          const std::vector<bool>& visibility,
                          bool sum_reduction = false) {
  if (pred.maps.shape() != gt.maps.shape())
    throw std::invalid_argument("heatmap_loss: shapes differ, " +
                                shape_str(pred.maps.shape()) + " vs " +
                                shape_str(gt.maps.shape()));
  const std::size_t j = pred.joints();
  if (visibility.size() != j)
    throw std::invalid_argument("heatmap_loss: visibility size " +
                                std::to_string(visibility.size()) +
                                " does not match joint count " +
                                std::to_string(j));
  std::vector<Real> mask(j);
  std::size_t visible = 0;
  for (std::size_t i = 0; i < j; ++i) {
    mask[i] = visibility[i] ? Real(1) : Real(0);
    visible += visibility[i] ? 1 : 0;
  }
  Tensor<Real> vis = Tensor<Real>::from_data({j, 1, 1}, std::move(mask));
  Tensor<Real> diff = sub(pred.maps, gt.maps);
  Tensor<Real> total = sum(mul(mul(diff, diff), vis));
  if (sum_reduction) return total;
  const std::size_t px = pred.height() * pred.width();
  const Real denom = static_cast<Real>(std::max<std::size_t>(visible, 1) * px);
  return mul_scalar(total, Real(1) / denom);
}

}  // namespace vremd
