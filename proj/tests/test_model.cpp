#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "vremd/model.hpp"

using namespace vremd;
using T = Tensor<double>;

namespace {

FrameSequence<double> random_window(const ModelConfig& c, Rng& rng) {
  FrameSequence<double> seq;
  for (auto& f : seq.frames) {
    f = T::randn({c.channels, c.img_h, c.img_w}, rng, 0.3);
    for (auto& v : f.data()) v = std::min(1.0, std::max(0.0, 0.5 + v));
  }
  return seq;
}

}  // namespace

TEST_CASE("forward produces the full heatmap set with consistent shapes") {
  ModelConfig c = ModelConfig::tiny();
  Model<double> model(c, 1);
  Rng rng(2);
  auto out = model.forward(random_window(c, rng));
  const Shape want{c.joints, c.heatmap_h(), c.heatmap_w()};
  REQUIRE(out.combined.maps.shape() == want);
  REQUIRE(out.from_tokens.maps.shape() == want);
  REQUIRE(out.from_motion.maps.shape() == want);
  REQUIRE(out.hkme.enhanced.shape() == Shape{c.tokens(), c.dim});
  REQUIRE(out.combined.maps.all_finite());
}

TEST_CASE("parameter names are unique and the tiny model stays small") {
  ModelConfig c = ModelConfig::tiny();
  Model<double> model(c, 3);
  auto params = model.named_params();
  std::set<std::string> names;
  for (const auto& p : params) REQUIRE(names.insert(p.name).second);
  REQUIRE(model.param_count() < 50000);
}

TEST_CASE("identical frames: motion vanishes and the combined map halves") {
  ModelConfig c = ModelConfig::tiny();
  Model<double> model(c, 4);
  Rng rng(5);
  auto window = random_window(c, rng);
  window.frames[0] = window.frames[1];
  window.frames[2] = window.frames[1];
  auto out = model.forward(window);

  for (double v : out.bmd.fused.data()) REQUIRE(v == 0.0);
  for (double v : out.from_motion.maps.data()) REQUIRE(v == 0.0);
  for (std::size_t i = 0; i < out.combined.maps.size(); ++i)
    REQUIRE(out.combined.maps.data()[i] ==
            0.5 * out.from_tokens.maps.data()[i]);
}

TEST_CASE("ablation flags only change their own parameter groups") {
  ModelConfig c = ModelConfig::tiny();
  Model<double> full(c, 6);

  ModelConfig no_motion = c;
  no_motion.use_bmd = false;
  Model<double> ablated(no_motion, 6);

  std::set<std::string> full_names, ablated_names;
  for (const auto& p : full.named_params()) full_names.insert(p.name);
  for (const auto& p : ablated.named_params()) ablated_names.insert(p.name);
  for (const auto& n : ablated_names) REQUIRE(full_names.count(n) == 1);
  for (const auto& n : full_names)
    if (!ablated_names.count(n))
      REQUIRE(n.rfind("bmd", 0) == 0);

  // mask flags keep the parameter set identical
  ModelConfig no_masks = c;
  no_masks.use_human_mask = false;
  no_masks.use_keypoint_mask = false;
  Model<double> masked_off(no_masks, 6);
  std::set<std::string> masked_names;
  for (const auto& p : masked_off.named_params()) masked_names.insert(p.name);
  REQUIRE(masked_names == full_names);
}

TEST_CASE("disabling the motion stream equals zeroing the fusion layer") {
  ModelConfig c = ModelConfig::tiny();
  Model<double> full(c, 7);
  for (auto& v : full.bmd->fuse.weight.data()) v = 0.0;

  ModelConfig no_motion = c;
  no_motion.use_bmd = false;
  Model<double> ablated(no_motion, 7);
  ablated.copy_params_from(full);  // align the shared modules

  Rng rng(8);
  auto window = random_window(c, rng);
  auto a = full.forward(window);
  auto b = ablated.forward(window);
  REQUIRE(a.combined.maps.data() == b.combined.maps.data());
}

TEST_CASE("forward is bit-deterministic for a fixed seed") {
  ModelConfig c = ModelConfig::tiny();
  auto run = [&]() {
    Model<double> model(c, 9);
    Rng rng(10);
    auto out = model.forward(random_window(c, rng));
    return out.combined.maps.data();
  };
  REQUIRE(run() == run());
}

TEST_CASE("full-model gradients match finite differences") {
  ModelConfig c = ModelConfig::tiny();
  // shave the depths so the check stays quick; every module stays present
  c.backbone_depth = 1;
  c.bmd_depth = 1;
  Model<double> model(c, 11);
  Rng rng(12);
  auto window = random_window(c, rng);
  Heatmaps<double> gt{T::randn({c.joints, c.heatmap_h(), c.heatmap_w()},
                               rng, 0.3)};
  std::vector<bool> vis(c.joints, true);

  auto params = model.named_params();
  auto f = [&]() {
    auto out = model.forward(window);
    return heatmap_loss(out.combined, gt, vis);
  };
  auto res = check_gradients<double>(f, params, 1e-5, 1e-4);
  INFO("params " << model.param_count() << " worst " << res.worst_param
                 << " rel " << res.max_rel_err << " ad " << res.worst_ad
                 << " fd " << res.worst_fd);
  REQUIRE(res.pass);
}
