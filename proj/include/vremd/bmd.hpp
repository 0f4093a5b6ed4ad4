#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vremd/backbone.hpp"
#include "vremd/nn.hpp"
#include "vremd/tensor.hpp"

namespace vremd {

enum class DcaMode { kDeformConv, kDeformAttention, kDeformCrossAttention };

inline const char* dca_mode_name(DcaMode m) {
  switch (m) {
    case DcaMode::kDeformConv: return "dc";
    case DcaMode::kDeformAttention: return "da";
    default: return "dca";
  }
}

struct BmdConfig {
  std::size_t dim = 32;
  std::size_t grid_h = 8;
  std::size_t grid_w = 6;
  std::size_t sample_count = 4;  // offsets predicted per query
  std::size_t depth = 2;         // stacked blocks
  std::size_t offset_hidden = 8;
  double max_offset_radius = 0.0;  // 0 -> half the grid diagonal / 4
  DcaMode mode = DcaMode::kDeformCrossAttention;
  bool bidirectional = true;

  std::size_t tokens() const { return grid_h * grid_w; }
  double offset_radius() const {
    if (max_offset_radius > 0.0) return max_offset_radius;
    const double diag =
        std::sqrt(double(grid_h) * grid_h + double(grid_w) * grid_w);
    return diag / 8.0;
  }
};

// Forward/backward feature residuals relative to the key frame.
template <class Real>
struct MotionFeatures {
  Tensor<Real> forward_res;   // F_{t+1} - F_t, (N, D)
  Tensor<Real> backward_res;  // F_{t-1} - F_t, (N, D)
  std::size_t grid_h = 0, grid_w = 0;
};

template <class Real>
MotionFeatures<Real> motion_residuals(const FeatureSequence<Real>& feats) {
  MotionFeatures<Real> m;
  m.forward_res = sub(feats.frame(2), feats.frame(1));
  m.backward_res = sub(feats.frame(0), feats.frame(1));
  m.grid_h = feats.grid_h;
  m.grid_w = feats.grid_w;
  return m;
}

// Per-query sampling geometry.
template <class Real>
struct OffsetField {
  Tensor<Real> offsets;           // (N, N_s, 2), bounded by the radius
  Tensor<Real> reference_points;  // (N, 2) fixed cell centers
};

// Cell centers mapped into the grid's node span, so unperturbed samples sit
// strictly inside the interpolation cells.
template <class Real>
Tensor<Real> reference_points(std::size_t grid_h, std::size_t grid_w) {
  std::vector<Real> pts(grid_h * grid_w * 2);
  for (std::size_t i = 0; i < grid_h; ++i)
    for (std::size_t j = 0; j < grid_w; ++j) {
      const std::size_t n = i * grid_w + j;
      pts[n * 2 + 0] = static_cast<Real>((j + 0.5) * (grid_w - 1) / grid_w);
      pts[n * 2 + 1] = static_cast<Real>((i + 0.5) * (grid_h - 1) / grid_h);
    }
  return Tensor<Real>::from_data({grid_h * grid_w, 2}, std::move(pts));
}

// Deformable cross attention. Queries come from the motion features, the
// enhanced feature steers where the sampler looks, and keys/values are
// bilinear samples of the motion grid at reference-plus-offset locations.
template <class Real>
struct DcaParams {
  Linear<Real> wq, wk, wv, wz;  // bias-free mapping matrices
  Conv3x3<Real> psi;            // offset feature extraction over the grid
  Linear<Real> theta;           // projection to 2*N_s offsets, zero-init
  BmdConfig cfg;

  DcaParams() = default;
  DcaParams(const BmdConfig& c, Rng& rng)
      : wq(c.dim, c.dim, rng, false),
        wk(c.dim, c.dim, rng, false),
        wv(c.dim, c.dim, rng, false),
        wz(c.dim, c.dim, rng, false),
        psi(c.mode == DcaMode::kDeformAttention ? c.dim : 2 * c.dim,
            c.offset_hidden, rng),
        theta(Linear<Real>::zero_init(c.offset_hidden, 2 * c.sample_count)),
        cfg(c) {}

  // offsets = tanh(theta(gelu(psi(q (+) z)))) * radius, laid out per query.
  OffsetField<Real> generate_offsets(const Tensor<Real>& q,
                                     const Tensor<Real>& z) const {
    const std::size_t n = cfg.tokens();
    Tensor<Real> cat = cfg.mode == DcaMode::kDeformAttention
                           ? q
                           : concat<Real>({q, z}, 1);
    Tensor<Real> grid = reshape(cat, {cfg.grid_h, cfg.grid_w, cat.shape()[1]});
    Tensor<Real> hid = gelu(psi.forward(grid));
    Tensor<Real> raw = theta.forward(reshape(hid, {n, cfg.offset_hidden}));
    Tensor<Real> bounded =
        mul_scalar(tanh(raw), static_cast<Real>(cfg.offset_radius()));
    return {reshape(bounded, {n, cfg.sample_count, 2}),
            reference_points<Real>(cfg.grid_h, cfg.grid_w)};
  }

  // Attention over the N_s sampled locations of each query.
  Tensor<Real> attend(const Tensor<Real>& motion_grid /* (H,W,D) */,
                      const Tensor<Real>& q /* (N,D) */,
                      const Tensor<Real>& locations /* (N,N_s,2) */) const {
    const std::size_t n = cfg.tokens(), d = cfg.dim, ns = cfg.sample_count;
    Tensor<Real> flat = reshape(locations, {n * ns, 2});
    Tensor<Real> samples = bilinear_sample(motion_grid, flat);  // (N*N_s, D)
    Tensor<Real> k = reshape(wk.forward(samples), {n, ns, d});
    Tensor<Real> v = reshape(wv.forward(samples), {n, ns, d});
    Tensor<Real> q3 = reshape(q, {n, 1, d});
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
    Tensor<Real> logits = mul_scalar(sum(mul(q3, k), 2), scale);  // (N, N_s)
    Tensor<Real> attn = reshape(softmax(logits, 1), {n, ns, 1});
    return sum(mul(attn, v), 1);  // (N, D)
  }

  Tensor<Real> forward(const Tensor<Real>& x /* (N,D) motion */,
                       const Tensor<Real>& constraint /* (N,D) */,
                       OffsetField<Real>* trace = nullptr) const {
    Tensor<Real> q = wq.forward(x);
    Tensor<Real> z = wz.forward(constraint);
    OffsetField<Real> field = generate_offsets(q, z);
    if (trace) *trace = field;
    Tensor<Real> locations =
        add(field.offsets, reshape(field.reference_points,
                                   {cfg.tokens(), 1, 2}));
    Tensor<Real> grid = reshape(x, {cfg.grid_h, cfg.grid_w, cfg.dim});
    return attend(grid, q, locations);
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    wq.params(prefix + ".wq", out);
    wk.params(prefix + ".wk", out);
    wv.params(prefix + ".wv", out);
    wz.params(prefix + ".wz", out);
    psi.params(prefix + ".psi", out);
    theta.params(prefix + ".theta", out);
  }
};

// Comparison baseline: deformable convolution with one predicted offset per
// kernel tap. Kept minimal.
template <class Real>
struct DeformConvParams {
  Conv3x3<Real> psi;
  Linear<Real> theta;       // hidden -> 2*9 tap offsets, zero-init
  Tensor<Real> tap_weight;  // (9, D, D)
  BmdConfig cfg;

  DeformConvParams() = default;
  DeformConvParams(const BmdConfig& c, Rng& rng)
      : psi(c.dim, c.offset_hidden, rng),
        theta(Linear<Real>::zero_init(c.offset_hidden, 18)),
        tap_weight(Tensor<Real>::trunc_normal({9, c.dim, c.dim}, rng, kInitStd)),
        cfg(c) {}

  Tensor<Real> forward(const Tensor<Real>& x /* (N,D) */) const {
    const std::size_t n = cfg.tokens(), d = cfg.dim;
    Tensor<Real> grid = reshape(x, {cfg.grid_h, cfg.grid_w, d});
    Tensor<Real> hid = gelu(psi.forward(grid));
    Tensor<Real> raw = theta.forward(reshape(hid, {n, cfg.offset_hidden}));
    Tensor<Real> delta = reshape(
        mul_scalar(tanh(raw), static_cast<Real>(cfg.offset_radius())),
        {n, 9, 2});
    Tensor<Real> refs = reference_points<Real>(cfg.grid_h, cfg.grid_w);

    std::vector<Real> taps(9 * 2);
    for (int ty = -1; ty <= 1; ++ty)
      for (int tx = -1; tx <= 1; ++tx) {
        const std::size_t t = (ty + 1) * 3 + (tx + 1);
        taps[t * 2 + 0] = static_cast<Real>(tx);
        taps[t * 2 + 1] = static_cast<Real>(ty);
      }
    Tensor<Real> tap_base = Tensor<Real>::from_data({1, 9, 2}, std::move(taps));
    Tensor<Real> locations =
        add(add(delta, tap_base), reshape(refs, {n, 1, 2}));
    Tensor<Real> samples =
        reshape(bilinear_sample(grid, reshape(locations, {n * 9, 2})),
                {n, 9, d});
    Tensor<Real> out;
    for (std::size_t t = 0; t < 9; ++t) {
      Tensor<Real> s = reshape(slice(samples, 1, t, 1), {n, d});
      Tensor<Real> w = reshape(slice(tap_weight, 0, t, 1), {d, d});
      Tensor<Real> term = matmul(s, w);
      out = out.defined() ? add(out, term) : term;
    }
    return out;
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    psi.params(prefix + ".psi", out);
    theta.params(prefix + ".theta", out);
    out.push_back({prefix + ".tap_weight", tap_weight});
  }
};

// Dual-branch block: deformable cross attention next to plain cross
// attention, concatenated and mixed by an MLP, wrapped in a residual with a
// pre-norm on the motion stream. Both temporal directions share one block.
template <class Real>
struct AdcBlock {
  LayerNorm<Real> norm;
  DcaParams<Real> dca;
  DeformConvParams<Real> deform_conv;  // only populated in dc mode
  CrossAttention<Real> cross;
  Mlp<Real> mix;
  BmdConfig cfg;

  AdcBlock() = default;
  AdcBlock(const BmdConfig& c, Rng& rng) : norm(c.dim), cfg(c) {
    if (c.mode == DcaMode::kDeformConv) {
      deform_conv = DeformConvParams<Real>(c, rng);
    } else {
      dca = DcaParams<Real>(c, rng);
      cross = CrossAttention<Real>(c.dim, rng);
      mix = Mlp<Real>(2 * c.dim, 2 * c.dim, c.dim, rng);
    }
  }

  Tensor<Real> forward(const Tensor<Real>& m, const Tensor<Real>& constraint,
                       OffsetField<Real>* trace = nullptr) const {
    Tensor<Real> y = norm.forward(m);
    if (cfg.mode == DcaMode::kDeformConv)
      return add(m, deform_conv.forward(y));
    Tensor<Real> branch_a = dca.forward(y, constraint, trace);
    // queries from the constraint select motion content as keys/values
    Tensor<Real> branch_b = cross.forward(constraint, y);
    return add(m, mix.forward(concat<Real>({branch_a, branch_b}, 1)));
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    norm.params(prefix + ".norm", out);
    if (cfg.mode == DcaMode::kDeformConv) {
      deform_conv.params(prefix + ".deform_conv", out);
    } else {
      dca.params(prefix + ".dca", out);
      cross.params(prefix + ".cross", out);
      mix.params(prefix + ".mix", out);
    }
  }
};

template <class Real>
struct BmdTrace {
  MotionFeatures<Real> residuals;
  Tensor<Real> pre_fusion_forward;
  Tensor<Real> pre_fusion_backward;
  std::vector<OffsetField<Real>> offset_fields;  // per block, fwd then bwd
  Tensor<Real> fused;  // (N, D)
};

// Bidirectional motion disentanglement: residuals run through stacked ADC
// blocks as two parallel streams and a fusion layer merges them.
template <class Real>
struct Bmd {
  std::vector<AdcBlock<Real>> blocks;
  Linear<Real> fuse;       // 2D -> D
  Linear<Real> merge_in;   // only when bidirectional separation is off
  BmdConfig cfg;

  Bmd() = default;
  Bmd(const BmdConfig& c, Rng& rng) : fuse(2 * c.dim, c.dim, rng), cfg(c) {
    for (std::size_t i = 0; i < c.depth; ++i) blocks.emplace_back(c, rng);
    if (!c.bidirectional) merge_in = Linear<Real>(2 * c.dim, c.dim, rng);
  }

  BmdTrace<Real> forward(const FeatureSequence<Real>& feats,
                         const Tensor<Real>& constraint) const {
    BmdTrace<Real> trace;
    trace.residuals = motion_residuals(feats);

    if (cfg.bidirectional) {
      Tensor<Real> fwd = trace.residuals.forward_res;
      Tensor<Real> bwd = trace.residuals.backward_res;
      for (const auto& b : blocks) {
        OffsetField<Real> of, ob;
        fwd = b.forward(fwd, constraint, &of);
        bwd = b.forward(bwd, constraint, &ob);
        trace.offset_fields.push_back(of);
        trace.offset_fields.push_back(ob);
      }
      trace.pre_fusion_forward = fwd;
      trace.pre_fusion_backward = bwd;
      trace.fused = fuse.forward(concat<Real>({fwd, bwd}, 1));
    } else {
      // joint stream: both residuals concatenated on the feature axis
      Tensor<Real> m = merge_in.forward(concat<Real>(
          {trace.residuals.forward_res, trace.residuals.backward_res}, 1));
      for (const auto& b : blocks) {
        OffsetField<Real> of;
        m = b.forward(m, constraint, &of);
        trace.offset_fields.push_back(of);
      }
      trace.pre_fusion_forward = m;
      trace.pre_fusion_backward = m;
      trace.fused = fuse.forward(concat<Real>({m, m}, 1));
    }
    return trace;
  }

  void params(const std::string& prefix, ParamList<Real>& out) const {
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].params(prefix + ".block" + std::to_string(i), out);
    fuse.params(prefix + ".fuse", out);
    if (!cfg.bidirectional) merge_in.params(prefix + ".merge_in", out);
  }
};

}  // namespace vremd
