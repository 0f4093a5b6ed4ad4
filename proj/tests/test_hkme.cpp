#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vremd/hkme.hpp"

using namespace vremd;
using T = Tensor<double>;

namespace {

HkmeConfig small_cfg() {
  HkmeConfig c;
  c.dim = 8;
  c.joints = 2;
  c.heads = 2;
  return c;
}

FeatureSequence<double> random_feats(std::size_t n, std::size_t d, Rng& rng) {
  FeatureSequence<double> fs;
  fs.features = T::randn({3, n, d}, rng, 0.5);
  fs.grid_h = 1;
  fs.grid_w = n;
  fs.dim = d;
  return fs;
}

}  // namespace

TEST_CASE("human mask: orthogonal token zeroes the selection") {
  // with no refinement blocks the mask is the raw dot product
  HkmeConfig c = small_cfg();
  c.depth_human = 0;
  Rng rng(1);
  Hkme<double> h(c, rng);
  h.human_token.data() = {1, 0, 0, 0, 0, 0, 0, 0};

  FeatureSequence<double> fs;
  std::vector<double> vals(3 * 4 * 8, 0.0);
  // tokens live entirely in coordinates 1..7, orthogonal to the human token
  Rng vr(2);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t d = 1; d < 8; ++d)
        vals[(f * 4 + n) * 8 + d] = vr.normal();
  fs.features = T::from_data({3, 4, 8}, vals);
  fs.grid_h = 1;
  fs.grid_w = 4;
  fs.dim = 8;

  auto res = h.human_mask_select(fs);
  for (double m : res.mask.data()) REQUIRE(m == 0.0);
  for (double v : res.selected.data()) REQUIRE(v == 0.0);
}

TEST_CASE("human mask flag forces ones and passes features through") {
  HkmeConfig c = small_cfg();
  c.use_human_mask = false;
  Rng rng(3);
  Hkme<double> h(c, rng);
  auto fs = random_feats(5, c.dim, rng);
  auto res = h.human_mask_select(fs);
  for (double m : res.mask.data()) REQUIRE(m == 1.0);
  for (std::size_t i = 0; i < res.selected.size(); ++i)
    REQUIRE(res.selected.data()[i] == res.refined.data()[i]);
}

TEST_CASE("human mask matches the elementwise loop oracle") {
  HkmeConfig c = small_cfg();
  Rng rng(4);
  Hkme<double> h(c, rng);
  const std::size_t n = 6, d = c.dim;
  auto fs = random_feats(n, d, rng);
  auto res = h.human_mask_select(fs);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k)
        dot += res.refined.at({f, i, k}) * res.token.at({f, 0, k});
      REQUIRE(std::abs(res.mask.at({f, i, 0}) - dot) < 1e-12);
      for (std::size_t k = 0; k < d; ++k)
        REQUIRE(std::abs(res.selected.at({f, i, k}) -
                         res.refined.at({f, i, k}) * dot) < 1e-12);
    }
}

TEST_CASE("mask scaling is exactly linear in the selection product") {
  HkmeConfig c = small_cfg();
  Rng rng(5);
  Hkme<double> h(c, rng);
  auto fs = random_feats(4, c.dim, rng);
  auto res = h.human_mask_select(fs);
  const double alpha = 3.25;
  T scaled = mul(res.refined, mul_scalar(res.mask, alpha));
  for (std::size_t i = 0; i < scaled.size(); ++i)
    REQUIRE(scaled.data()[i] ==
            Catch::Approx(alpha * res.selected.data()[i]).margin(1e-12));
}

TEST_CASE("keypoint confidence rows are distributions, mask mass is 3J") {
  HkmeConfig c = small_cfg();
  c.joints = 3;
  Rng rng(6);
  Hkme<double> h(c, rng);
  const std::size_t n = 5;
  T coarse = T::randn({3, n, c.dim}, rng, 0.5);
  auto res = h.keypoint_mask_refine(coarse);

  REQUIRE(res.confidence_map.shape() == Shape{9, 15});
  for (std::size_t r = 0; r < 9; ++r) {
    double total = 0;
    for (std::size_t t = 0; t < 15; ++t) total += res.confidence_map.at({r, t});
    REQUIRE(std::abs(total - 1.0) < 1e-6);
  }
  double mass = 0;
  for (double v : res.mask.data()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 9.0);
    mass += v;
  }
  REQUIRE(std::abs(mass - 9.0) < 1e-4);
}

TEST_CASE("keypoint mask saturates on a dominating token") {
  HkmeConfig c = small_cfg();
  c.joints = 1;
  c.depth_keypoint = 0;  // raw token/feature affinities
  Rng rng(7);
  Hkme<double> h(c, rng);
  h.keypoint_tokens.data() = {10, 0, 0, 0, 0, 0, 0, 0};

  const std::size_t n = 4;
  std::vector<double> vals(3 * n * 8, 0.0);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t i = 0; i < n; ++i)
      vals[(f * n + i) * 8] = (f == 1 && i == 2) ? 4.0 : 0.0;  // margin 40
  auto res = h.keypoint_mask_refine(T::from_data({3, n, 8}, vals));
  // every softmax row concentrates on token (frame 1, position 2)
  const std::size_t hot = 1 * n + 2;
  REQUIRE(res.mask.at({hot, 0}) >= 3.0 * (1.0 - 1e-6));
}

TEST_CASE("keypoint mask equals the explicit softmax-sum loop oracle") {
  HkmeConfig c = small_cfg();
  c.joints = 3;
  Rng rng(8);
  Hkme<double> h(c, rng);
  const std::size_t n = 5;
  T coarse = T::randn({3, n, c.dim}, rng, 0.5);
  auto res = h.keypoint_mask_refine(coarse);

  const std::size_t rows = 3 * c.joints, cols = 3 * n;
  std::vector<double> expect(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> logits(cols);
    double mx = -1e300;
    for (std::size_t t = 0; t < cols; ++t) {
      double dot = 0;
      for (std::size_t k = 0; k < c.dim; ++k)
        dot += res.tokens.at({r, k}) * res.features.at({t, k});
      logits[t] = dot;
      mx = std::max(mx, dot);
    }
    double denom = 0;
    for (double l : logits) denom += std::exp(l - mx);
    for (std::size_t t = 0; t < cols; ++t)
      expect[t] += std::exp(logits[t] - mx) / denom;
  }
  for (std::size_t t = 0; t < cols; ++t)
    REQUIRE(std::abs(res.mask.at({t, 0}) - expect[t]) < 1e-10);

  // filtered features are the masked multi-frame features
  for (std::size_t t = 0; t < cols; ++t)
    for (std::size_t k = 0; k < c.dim; ++k)
      REQUIRE(res.filtered.at({t, k}) ==
              Catch::Approx(res.features.at({t, k}) * res.mask.at({t, 0}))
                  .margin(1e-12));
}

TEST_CASE("aggregation output shape and temporal symmetry") {
  HkmeConfig c = small_cfg();
  Rng rng(9);
  Hkme<double> h(c, rng);
  const std::size_t n = 6;
  T filtered = T::randn({3 * n, c.dim}, rng, 0.5);
  T out = h.spatiotemporal_aggregate(filtered);
  REQUIRE(out.shape() == Shape{n, c.dim});

  // identical tokens make self-attention weights uniform by symmetry, so a
  // three-copy sequence behaves like a single token
  T u = T::randn({1, c.dim}, rng, 0.5);
  T three = concat<double>({u, u, u}, 0);
  T b3 = h.temporal_blocks[0].forward(three);
  T b1 = h.temporal_blocks[0].forward(u);
  for (std::size_t f = 0; f < 3; ++f)
    for (std::size_t k = 0; k < c.dim; ++k)
      REQUIRE(b3.at({f, k}) == Catch::Approx(b1.at({0, k})).margin(1e-12));
}

TEST_CASE("NaN at one position stays put only without spatial mixing") {
  HkmeConfig c = small_cfg();
  const std::size_t n = 6;
  {
    HkmeConfig nc = c;
    nc.depth_spatial = 0;
    Rng rng(10);
    Hkme<double> h(nc, rng);
    T filtered = T::randn({3 * n, c.dim}, rng, 0.5);
    for (std::size_t k = 0; k < c.dim; ++k)
      filtered.at({1 * n + 2, k}) = std::nan("");  // poison position 2, frame 1
    T out = h.spatiotemporal_aggregate(filtered);
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t k = 0; k < c.dim; ++k) {
        if (p == 2)
          REQUIRE(std::isnan(out.at({p, k})));
        else
          REQUIRE(std::isfinite(out.at({p, k})));
      }
  }
  {
    Rng rng(10);
    Hkme<double> h(c, rng);  // depth_spatial = 1 spreads the poison
    T filtered = T::randn({3 * n, c.dim}, rng, 0.5);
    for (std::size_t k = 0; k < c.dim; ++k)
      filtered.at({1 * n + 2, k}) = std::nan("");
    T out = h.spatiotemporal_aggregate(filtered);
    bool any_other_nan = false;
    for (std::size_t p = 0; p < n; ++p)
      if (p != 2 && std::isnan(out.at({p, 0}))) any_other_nan = true;
    REQUIRE(any_other_nan);
  }
}

TEST_CASE("forward contract: shapes, ablation grid, token gradients") {
  for (bool hm : {true, false})
    for (bool km : {true, false}) {
      HkmeConfig c = small_cfg();
      c.use_human_mask = hm;
      c.use_keypoint_mask = km;
      Rng rng(11);
      Hkme<double> h(c, rng);
      auto fs = random_feats(6, c.dim, rng);
      auto out = h.forward(fs);
      REQUIRE(out.enhanced.shape() == Shape{6, c.dim});
      REQUIRE(out.key_tokens.shape() == Shape{c.joints, c.dim});
      REQUIRE(out.enhanced.all_finite());
    }

  HkmeConfig c = small_cfg();
  Rng rng(12);
  Hkme<double> h(c, rng);
  h.human_token.set_requires_grad(true);
  h.keypoint_tokens.set_requires_grad(true);
  auto fs = random_feats(6, c.dim, rng);
  auto out = h.forward(fs);
  sum(out.enhanced).backward();
  double th_norm = 0, tk_norm = 0;
  for (double g : h.human_token.grad()) th_norm += g * g;
  for (double g : h.keypoint_tokens.grad()) tk_norm += g * g;
  REQUIRE(th_norm > 0.0);
  REQUIRE(tk_norm > 0.0);
}

TEST_CASE("hkme gradients pass the finite-difference check") {
  HkmeConfig c = small_cfg();
  Rng rng(13);
  Hkme<double> h(c, rng);
  auto fs = random_feats(4, c.dim, rng);
  ParamList<double> params;
  h.params("hkme", params);
  auto f = [&]() {
    auto out = h.forward(fs);
    return mean(mul(out.enhanced, out.enhanced)) +
           mean(mul(out.key_tokens, out.key_tokens));
  };
  auto res = check_gradients<double>(f, params, 1e-5, 1e-4);
  INFO("worst " << res.worst_param << " rel " << res.max_rel_err << " ad " << res.worst_ad << " fd " << res.worst_fd);
  REQUIRE(res.pass);
}
