#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "vremd/heads.hpp"

using namespace vremd;
using T = Tensor<double>;

namespace {

HeadsConfig small_cfg() {
  HeadsConfig c;
  c.dim = 8;
  c.joints = 3;
  c.grid_h = 2;
  c.grid_w = 2;
  c.heatmap_h = 4;
  c.heatmap_w = 4;
  c.token_hidden = 16;
  c.motion_channels = 8;
  return c;
}

}  // namespace

TEST_CASE("token head: shape, zero input, duplicate tokens") {
  auto c = small_cfg();
  Rng rng(1);
  TokenHead<double> head(c, rng);
  auto maps = head.forward(T::zeros({c.joints, c.dim}));
  REQUIRE(maps.maps.shape() == Shape{c.joints, c.heatmap_h, c.heatmap_w});
  for (double v : maps.maps.data()) REQUIRE(v == 0.0);  // zero biases at init

  T tokens = T::randn({c.joints, c.dim}, rng, 0.5);
  for (std::size_t k = 0; k < c.dim; ++k)
    tokens.at({1, k}) = tokens.at({0, k});
  auto m2 = head.forward(tokens);
  for (std::size_t y = 0; y < c.heatmap_h; ++y)
    for (std::size_t x = 0; x < c.heatmap_w; ++x)
      REQUIRE(m2.maps.at({0, y, x}) == m2.maps.at({1, y, x}));
}

TEST_CASE("motion head: shape, zero inputs, grid mismatch error") {
  auto c = small_cfg();
  Rng rng(2);
  MotionHead<double> head(c, rng);
  // randomize the output projection; it starts at zero
  for (auto& v : head.to_joints.weight.data()) v = rng.normal(0, 0.5);

  auto maps = head.forward(T::zeros({4, c.dim}), T::zeros({4, c.dim}));
  REQUIRE(maps.maps.shape() == Shape{c.joints, c.heatmap_h, c.heatmap_w});
  for (double v : maps.maps.data()) REQUIRE(v == 0.0);

  T m = T::randn({4, c.dim}, rng, 0.5);
  auto m2 = head.forward(m, m);
  REQUIRE(m2.maps.all_finite());

  REQUIRE_THROWS_WITH(head.forward(T::zeros({5, c.dim}), T::zeros({5, c.dim})),
                      Catch::Matchers::ContainsSubstring("grid"));
  REQUIRE_THROWS_WITH(head.forward(T::zeros({4, c.dim}), T::zeros({4, 9})),
                      Catch::Matchers::ContainsSubstring("disagree"));
}

TEST_CASE("motion head starts silent: fresh weights yield all-zero maps") {
  auto c = small_cfg();
  Rng rng(3);
  MotionHead<double> head(c, rng);
  T m = T::randn({4, c.dim}, rng, 0.5);
  T f = T::randn({4, c.dim}, rng, 0.5);
  auto maps = head.forward(m, f);
  for (double v : maps.maps.data()) REQUIRE(v == 0.0);
}

TEST_CASE("two upsampling stages cover a 4x token-to-heatmap ratio") {
  HeadsConfig c = small_cfg();
  c.grid_h = 4;
  c.grid_w = 3;
  c.heatmap_h = 16;
  c.heatmap_w = 12;
  REQUIRE(c.upsample_stages() == 2);
  Rng rng(4);
  MotionHead<double> head(c, rng);
  auto maps = head.forward(T::randn({12, c.dim}, rng, 0.5),
                           T::randn({12, c.dim}, rng, 0.5));
  REQUIRE(maps.maps.shape() == Shape{c.joints, 16, 12});

  HeadsConfig bad = c;
  bad.heatmap_h = 15;
  REQUIRE_THROWS_AS(bad.upsample_stages(), std::invalid_argument);
}

TEST_CASE("combine is the exact equal-weight average") {
  auto c = small_cfg();
  Rng rng(5);
  Heatmaps<double> a{T::randn({c.joints, c.heatmap_h, c.heatmap_w}, rng, 1.0)};
  Heatmaps<double> b{T::randn({c.joints, c.heatmap_h, c.heatmap_w}, rng, 1.0)};

  auto same = combine(a, a);
  for (std::size_t i = 0; i < same.maps.size(); ++i)
    REQUIRE(same.maps.data()[i] == a.maps.data()[i]);

  Heatmaps<double> zero{T::zeros({c.joints, c.heatmap_h, c.heatmap_w})};
  auto half = combine(a, zero);
  for (std::size_t i = 0; i < half.maps.size(); ++i)
    REQUIRE(half.maps.data()[i] == 0.5 * a.maps.data()[i]);

  const double alpha = 2.5;
  auto scaled = combine(Heatmaps<double>{mul_scalar(a.maps, alpha)},
                        Heatmaps<double>{mul_scalar(b.maps, alpha)});
  auto base = combine(a, b);
  for (std::size_t i = 0; i < base.maps.size(); ++i)
    REQUIRE(scaled.maps.data()[i] ==
            Catch::Approx(alpha * base.maps.data()[i]).margin(1e-12));

  Heatmaps<double> wrong{T::zeros({c.joints, c.heatmap_h, 5})};
  REQUIRE_THROWS_AS(combine(a, wrong), std::invalid_argument);
}

TEST_CASE("heatmap loss: exact values and loop oracle") {
  auto c = small_cfg();
  Rng rng(6);
  std::vector<bool> vis(c.joints, true);
  Heatmaps<double> gt{T::randn({c.joints, c.heatmap_h, c.heatmap_w}, rng, 1.0)};

  REQUIRE(heatmap_loss(gt, gt, vis).item() == 0.0);

  Heatmaps<double> off{add_scalar(gt.maps, 1.0)};
  REQUIRE(heatmap_loss(off, gt, vis).item() == Catch::Approx(1.0).margin(1e-12));

  Heatmaps<double> pred{T::randn({c.joints, c.heatmap_h, c.heatmap_w}, rng, 1.0)};
  double acc = 0;
  for (std::size_t i = 0; i < pred.maps.size(); ++i) {
    const double d = pred.maps.data()[i] - gt.maps.data()[i];
    acc += d * d;
  }
  acc /= double(pred.maps.size());
  REQUIRE(std::abs(heatmap_loss(pred, gt, vis).item() - acc) < 1e-12);

  // sum reduction drops the pixel mean
  REQUIRE(std::abs(heatmap_loss(pred, gt, vis, true).item() -
                   acc * pred.maps.size()) < 1e-9);

  Heatmaps<double> wrong{T::zeros({c.joints, c.heatmap_h, 5})};
  REQUIRE_THROWS_AS(heatmap_loss(wrong, gt, vis), std::invalid_argument);
}

TEST_CASE("invisible joints drop out of the loss exactly") {
  auto c = small_cfg();
  Rng rng(7);
  Heatmaps<double> gt{T::randn({c.joints, c.heatmap_h, c.heatmap_w}, rng, 1.0)};
  Heatmaps<double> pred{T::randn({c.joints, c.heatmap_h, c.heatmap_w}, rng, 1.0)};

  std::vector<bool> vis(c.joints, true);
  vis[1] = false;
  const double masked = heatmap_loss(pred, gt, vis).item();

  // recompute over the remaining joints only
  Heatmaps<double> gt2{concat<double>({slice(gt.maps, 0, 0, 1),
                                       slice(gt.maps, 0, 2, 1)}, 0)};
  Heatmaps<double> pred2{concat<double>({slice(pred.maps, 0, 0, 1),
                                         slice(pred.maps, 0, 2, 1)}, 0)};
  std::vector<bool> vis2(2, true);
  REQUIRE(masked == Catch::Approx(heatmap_loss(pred2, gt2, vis2).item())
                        .margin(1e-12));

  // nothing visible: loss is zero, not NaN
  std::vector<bool> none(c.joints, false);
  REQUIRE(heatmap_loss(pred, gt, none).item() == 0.0);
}

TEST_CASE("head gradients pass the finite-difference check") {
  auto c = small_cfg();
  Rng rng(8);
  TokenHead<double> th(c, rng);
  MotionHead<double> mh(c, rng);
  for (auto& v : mh.to_joints.weight.data()) v = rng.normal(0, 0.3);

  T tokens = T::randn({c.joints, c.dim}, rng, 0.5);
  T motion = T::randn({4, c.dim}, rng, 0.5);
  T key = T::randn({4, c.dim}, rng, 0.5);
  Heatmaps<double> gt{T::randn({c.joints, c.heatmap_h, c.heatmap_w}, rng, 0.3)};
  std::vector<bool> vis(c.joints, true);
  vis[2] = false;

  ParamList<double> params;
  th.params("token_head", params);
  mh.params("motion_head", params);
  auto f = [&]() {
    auto combined = combine(th.forward(tokens), mh.forward(motion, key));
    return heatmap_loss(combined, gt, vis);
  };
  auto res = check_gradients<double>(f, params, 1e-5, 1e-4);
  INFO("worst " << res.worst_param << " rel " << res.max_rel_err);
  REQUIRE(res.pass);
}
