#pragma once

#include <string>
#include <vector>

#include "vremd/backbone.hpp"
#include "vremd/nn.hpp"
#include "vremd/tensor.hpp"

namespace vremd {

struct HkmeConfig {
  std::size_t dim = 32;
  std::size_t joints = 15;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t depth_human = 1;     // spatial blocks around the human token
  std::size_t depth_keypoint = 1;  // joint spatio-temporal blocks
  std::size_t depth_spatial = 1;   // per-frame blocks before temporal mixing
  std::size_t depth_temporal = 1;  // per-position blocks across frames
  bool use_human_mask = true;
  bool use_keypoint_mask = true;
  bool sigmoid_human_mask = false;  // optional squashing of the raw mask
};

// Masks exposed for tests and overlay rendering.
template <class Real>
struct MaskSet {
  Tensor<Real> human_mask;      // (3, N, 1)
  Tensor<Real> confidence_map;  // (3J, 3N), rows softmax-normalized
  Tensor<Real> keypoint_mask;   // (3N, 1)
};

template <class Real>
struct HumanMaskResult {
  Tensor<Real> selected;  // (3, N, D) masked features
  Tensor<Real> mask;      // (3, N, 1)
  Tensor<Real> refined;   // (3, N, D) features after the human-token blocks
  Tensor<Real> token;     // (3, 1, D) human token after the blocks
};

template <class Real>
struct KeypointMaskResult {
  Tensor<Real> filtered;         // (3N, D) masked multi-frame features
  Tensor<Real> tokens;           // (3J, D) keypoint tokens after the blocks
  Tensor<Real> confidence_map;   // (3J, 3N)
  Tensor<Real> mask;             // (3N, 1)
  Tensor<Real> features;         // (3N, D) pre-mask multi-frame features
};

template <class Real>
struct HkmeOutput {
  Tensor<Real> enhanced;    // (N, D)
  Tensor<Real> key_tokens;  // (J, D) key-frame keypoint tokens
  MaskSet<Real> masks;
};

// Coarse-to-fine token refinement: a learned human token gates person-related
// tokens, learned keypoint tokens gate joint-related tokens, and a decoupled
// spatial/temporal stack aggregates the three frames into one grid.
template <class Real>
struct Hkme {
  Tensor<Real> human_token;     // (1, D)
  Tensor<Real> keypoint_tokens; // (J, D), shared across frames
  std::vector<TransformerBlock<Real>> human_blocks;
  std::vector<TransformerBlock<Real>> keypoint_blocks;
  std::vector<TransformerBlock<Real>> spatial_blocks;
  std::vector<TransformerBlock<Real>> temporal_blocks;
  Mlp<Real> reduce;  // 3D -> D after temporal concatenation
  HkmeConfig cfg;

  Hkme() = default;
  Hkme(const HkmeConfig& c, Rng& rng)
      : human_token(Tensor<Real>::trunc_normal({1, c.dim}, rng, kInitStd)),
        keypoint_tokens(
            Tensor<Real>::trunc_normal({c.joints, c.dim}, rng, kInitStd)),
        reduce(3 * c.dim, c.dim, c.dim, rng),
        cfg(c) {
    for (std::size_t i = 0; i < c.depth_human; ++i)
      human_blocks.emplace_back(c.dim, c.heads, c.mlp_ratio, rng);
    for (std::size_t i = 0; i < c.depth_keypoint; ++i)
      keypoint_blocks.emplace_back(c.dim, c.heads, c.mlp_ratio, rng);
    for (std::size_t i = 0; i < c.depth_spatial; ++i)
      spatial_blocks.emplace_back(c.dim, c.heads, c.mlp_ratio, rng);
    for (std::size_t i = 0; i < c.depth_temporal; ++i)
      temporal_blocks.emplace_back(c.dim, c.heads, c.mlp_ratio, rng);
  }

  // Per frame: prepend the human token, run the spatial blocks, then gate
  // the tokens with their similarity to the refined human token.
  HumanMaskResult<Real> human_mask_select(
      const FeatureSequence<Real>& feats) const {
    const std::size_t n = feats.tokens(), d = feats.dim;
    std::vector<Tensor<Real>> selected, masks, refined, tokens;
    for (std::size_t f = 0; f < 3; ++f) {
      Tensor<Real> x = concat<Real>({human_token, feats.frame(f)}, 0);
      for (const auto& b : human_blocks) x = b.forward(x);
      Tensor<Real> tok = slice(x, 0, 0, 1);      // (1, D)
      Tensor<Real> fbar = slice(x, 0, 1, n);     // (N, D)
      Tensor<Real> mask = matmul(fbar, transpose(tok));  // (N, 1)
      if (cfg.sigmoid_human_mask) mask = sigmoid(mask);
      if (!cfg.use_human_mask) mask = Tensor<Real>::ones({n, 1});
      selected.push_back(reshape(mul(fbar, mask), {1, n, d}));
      masks.push_back(reshape(mask, {1, n, 1}));
      refined.push_back(reshape(fbar, {1, n, d}));
      tokens.push_back(reshape(tok, {1, 1, d}));
    }
    return {concat<Real>(selected, 0), concat<Real>(masks, 0),
            concat<Real>(refined, 0), concat<Real>(tokens, 0)};
  }

  // Append the keypoint tokens to every frame, attend jointly over the
  // flattened multi-frame sequence, then gate tokens by the summed
  // keypoint-to-token confidence rows.
  KeypointMaskResult<Real> keypoint_mask_refine(
      const Tensor<Real>& coarse /* (3, N, D) */) const {
    const std::size_t n = coarse.shape()[1], d = coarse.shape()[2];
    const std::size_t j = cfg.joints;
    std::vector<Tensor<Real>> per_frame;
    for (std::size_t f = 0; f < 3; ++f) {
      Tensor<Real> frame = reshape(slice(coarse, 0, f, 1), {n, d});
      per_frame.push_back(concat<Real>({frame, keypoint_tokens}, 0));
    }
    Tensor<Real> x = concat<Real>(per_frame, 0);  // (3(N+J), D)
    for (const auto& b : keypoint_blocks) x = b.forward(x);

    std::vector<Tensor<Real>> feat_parts, token_parts;
    for (std::size_t f = 0; f < 3; ++f) {
      const std::size_t base = f * (n + j);
      feat_parts.push_back(slice(x, 0, base, n));
      token_parts.push_back(slice(x, 0, base + n, j));
    }
    Tensor<Real> f_hat = concat<Real>(feat_parts, 0);    // (3N, D)
    Tensor<Real> t_hat = concat<Real>(token_parts, 0);   // (3J, D)

    Tensor<Real> map = softmax(matmul(t_hat, transpose(f_hat)), 1);  // (3J, 3N)
    Tensor<Real> mask = reshape(sum(map, 0), {3 * n, 1});
    if (!cfg.use_keypoint_mask) mask = Tensor<Real>::ones({3 * n, 1});
    Tensor<Real> filtered = mul(f_hat, mask);
    return {filtered, t_hat, map, mask, f_hat};
  }

  // Frame-level spatial blocks, then per-position temporal blocks across the
  // three frames; the three temporal outputs per position are concatenated
  // and reduced back to D.
  Tensor<Real> spatiotemporal_aggregate(
      const Tensor<Real>& filtered /* (3N, D) */) const {
    const std::size_t n = filtered.shape()[0] / 3;
    const std::size_t d = filtered.shape()[1];
    std::vector<Tensor<Real>> frames;
    for (std::size_t f = 0; f < 3; ++f) {
      Tensor<Real> x = slice(filtered, 0, f * n, n);
      for (const auto& b : spatial_blocks) x = b.forward(x);
      frames.push_back(reshape(x, {1, n, d}));
    }
    Tensor<Real> stacked = transpose(concat<Real>(frames, 0), 0, 1);  // (N,3,D)

    std::vector<Tensor<Real>> rows;
    for (std::size_t p = 0; p < n; ++p) {
      Tensor<Real> seq = reshape(slice(stacked, 0, p, 1), {3, d});
      for (const auto& b : temporal_blocks) seq = b.forward(seq);
      rows.push_back(reshape(seq, {1, 3 * d}));
    }
    return reduce.forward(concat<Real>(rows, 0));  // (N, D)
  }

  HkmeOutput<Real> forward(const FeatureSequence<Real>& feats) const {
    const std::size_t j = cfg.joints;
    auto human = human_mask_select(feats);
    auto keypoint = keypoint_mask_refine(human.selected);
    Tensor<Real> enhanced = spatiotemporal_aggregate(keypoint.filtered);
    // key-frame rows sit in the middle block of the gathered tokens
    Tensor<Real> key_tokens = slice(keypoint.tokens, 0, j, j);
    MaskSet<Real> masks{human.mask, keypoint.confidence_map, keypoint.mask};
    return {enhanced, key_tokens, masks};
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    out.push_back({prefix + ".human_token", human_token});
    out.push_back({prefix + ".keypoint_tokens", keypoint_tokens});
    auto blocks = [&](const char* name,
                      const std::vector<TransformerBlock<Real>>& bs) {
      for (std::size_t i = 0; i < bs.size(); ++i)
        bs[i].params(prefix + "." + name + std::to_string(i), out);
    };
    blocks("human_block", human_blocks);
    blocks("keypoint_block", keypoint_blocks);
    blocks("spatial_block", spatial_blocks);
    blocks("temporal_block", temporal_blocks);
    reduce.params(prefix + ".reduce", out);
  }
};

}  // namespace vremd
