#pragma once

#include <array>
#include <string>
#include <vector>

#include "vremd/nn.hpp"
#include "vremd/tensor.hpp"

namespace vremd {

// Three consecutive crops of the same person: the key frame and its two
// temporal neighbors. Images are (C, H, W) in [0, 1].
template <class Real>
struct FrameSequence {
  std::array<Tensor<Real>, 3> frames;  // t-1, t, t+1
  std::array<long, 3> frame_indices = {0, 1, 2};
};

// Per-frame token grids produced by the backbone.
template <class Real>
struct FeatureSequence {
  Tensor<Real> features;  // (3, N, D)
  std::size_t grid_h = 0, grid_w = 0;
  std::size_t dim = 0;

  std::size_t tokens() const { return grid_h * grid_w; }
  Tensor<Real> frame(std::size_t i) const {
    return reshape(slice(features, 0, i, 1), {tokens(), dim});
  }
};

struct BackboneConfig {
  std::size_t channels = 1;
  std::size_t img_h = 64;
  std::size_t img_w = 48;
  std::size_t patch = 8;
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t depth = 2;
  std::size_t mlp_ratio = 2;

  std::size_t grid_h() const { return img_h / patch; }
  std::size_t grid_w() const { return img_w / patch; }
  std::size_t tokens() const { return grid_h() * grid_w(); }
};

// Non-overlapping patch tokenization with a learned linear projection and
// learned absolute positional embeddings.
template <class Real>
struct PatchEmbed {
  Linear<Real> proj;
  Tensor<Real> pos;
  BackboneConfig cfg;

  PatchEmbed() = default;
  PatchEmbed(const BackboneConfig& c, Rng& rng)
      : proj(c.patch * c.patch * c.channels, c.dim, rng),
        pos(Tensor<Real>::trunc_normal({c.tokens(), c.dim}, rng, kInitStd)),
        cfg(c) {}

  Tensor<Real> forward(const Tensor<Real>& image) const {
    const auto& s = image.shape();
    if (s.size() != 3 || s[0] != cfg.channels)
      throw std::invalid_argument("patch_embed: expected image (" +
                                  std::to_string(cfg.channels) + ",H,W), got " +
                                  shape_str(s));
    if (s[1] % cfg.patch != 0)
      throw std::invalid_argument("patch_embed: image height " +
                                  std::to_string(s[1]) +
                                  " not divisible by patch size " +
                                  std::to_string(cfg.patch));
    if (s[2] % cfg.patch != 0)
      throw std::invalid_argument("patch_embed: image width " +
                                  std::to_string(s[2]) +
                                  " not divisible by patch size " +
                                  std::to_string(cfg.patch));
    const std::size_t gh = s[1] / cfg.patch, gw = s[2] / cfg.patch;
    const std::size_t n = gh * gw;
    const std::size_t plen = cfg.patch * cfg.patch * cfg.channels;

    // Pure data movement; the image itself carries no gradient.
    std::vector<Real> patches(n * plen);
    const auto& v = image.data();
    for (std::size_t gy = 0; gy < gh; ++gy)
      for (std::size_t gx = 0; gx < gw; ++gx) {
        Real* dst = patches.data() + (gy * gw + gx) * plen;
        for (std::size_t c = 0; c < cfg.channels; ++c)
          for (std::size_t py = 0; py < cfg.patch; ++py)
            for (std::size_t px = 0; px < cfg.patch; ++px)
              *dst++ = v[(c * s[1] + gy * cfg.patch + py) * s[2] +
                         gx * cfg.patch + px];
      }
    Tensor<Real> tok = Tensor<Real>::from_data({n, plen}, std::move(patches));
    return add(proj.forward(tok), pos);
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    proj.params(prefix + ".proj", out);
    out.push_back({prefix + ".pos", pos});
  }
};

// ViT encoder applied independently to each frame with shared weights.
template <class Real>
struct Backbone {
  PatchEmbed<Real> embed;
  std::vector<TransformerBlock<Real>> blocks;
  LayerNorm<Real> norm;
  BackboneConfig cfg;

  Backbone() = default;
  Backbone(const BackboneConfig& c, Rng& rng) : embed(c, rng), norm(c.dim), cfg(c) {
    for (std::size_t i = 0; i < c.depth; ++i)
      blocks.emplace_back(c.dim, c.heads, c.mlp_ratio, rng);
  }

  Tensor<Real> encode(const Tensor<Real>& image) const {
    Tensor<Real> x = embed.forward(image);
    for (const auto& b : blocks) x = b.forward(x);
    return norm.forward(x);
  }

  FeatureSequence<Real> encode_frames(const FrameSequence<Real>& seq) const {
    std::vector<Tensor<Real>> parts;
    for (const auto& frame : seq.frames) {
      Tensor<Real> f = encode(frame);  // (N, D)
      parts.push_back(reshape(f, {1, cfg.tokens(), cfg.dim}));
    }
    FeatureSequence<Real> out;
    out.features = concat<Real>(parts, 0);
    out.grid_h = cfg.grid_h();
    out.grid_w = cfg.grid_w();
    out.dim = cfg.dim;
    return out;
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    embed.params(prefix + ".embed", out);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].params(prefix + ".block" + std::to_string(i), out);
    norm.params(prefix + ".norm", out);
  }
};

}  // namespace vremd
