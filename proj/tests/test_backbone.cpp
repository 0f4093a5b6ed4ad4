#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vremd/backbone.hpp"

using namespace vremd;
using T = Tensor<double>;

namespace {

BackboneConfig small_cfg() {
  BackboneConfig c;
  c.channels = 1;
  c.img_h = 16;
  c.img_w = 16;
  c.patch = 8;
  c.dim = 8;
  c.heads = 2;
  c.depth = 1;
  return c;
}

FrameSequence<double> random_frames(const BackboneConfig& c, Rng& rng) {
  FrameSequence<double> seq;
  for (auto& f : seq.frames)
    f = T::randn({c.channels, c.img_h, c.img_w}, rng, 0.3);
  return seq;
}

}  // namespace

TEST_CASE("patch count follows the grid arithmetic") {
  BackboneConfig c;
  c.img_h = 64;
  c.img_w = 48;
  c.patch = 8;
  REQUIRE(c.tokens() == 48);
  Rng rng(0);
  Backbone<double> bb(c, rng);
  T img = T::zeros({1, 64, 48});
  T tok = bb.embed.forward(img);
  REQUIRE(tok.shape() == Shape{48, 32});
}

TEST_CASE("zero image with zero projection bias yields the positional table") {
  auto c = small_cfg();
  Rng rng(1);
  PatchEmbed<double> pe(c, rng);
  T img = T::zeros({1, c.img_h, c.img_w});
  T tok = pe.forward(img);
  for (std::size_t i = 0; i < tok.size(); ++i)
    REQUIRE(tok.data()[i] == pe.pos.data()[i]);
}

TEST_CASE("identical images produce identical token grids") {
  auto c = small_cfg();
  Rng rng(2);
  Backbone<double> bb(c, rng);
  T img = T::randn({1, c.img_h, c.img_w}, rng, 0.5);
  T a = bb.encode(img);
  T b = bb.encode(img);
  REQUIRE(a.data() == b.data());
}

TEST_CASE("divisibility errors name the offending extent") {
  auto c = small_cfg();
  Rng rng(3);
  Backbone<double> bb(c, rng);
  REQUIRE_THROWS_WITH(bb.encode(T::zeros({1, 17, 16})),
                      Catch::Matchers::ContainsSubstring("17"));
  REQUIRE_THROWS_WITH(bb.encode(T::zeros({1, 16, 20})),
                      Catch::Matchers::ContainsSubstring("20"));
}

TEST_CASE("encode_frames keeps the (3, N, D) contract across patch sizes") {
  for (std::size_t patch : {4u, 8u}) {
    BackboneConfig c = small_cfg();
    c.patch = patch;
    Rng rng(4);
    Backbone<double> bb(c, rng);
    auto seq = random_frames(c, rng);
    auto fs = bb.encode_frames(seq);
    REQUIRE(fs.features.shape() == Shape{3, c.tokens(), c.dim});
    REQUIRE(fs.grid_h * fs.grid_w == c.tokens());
  }
}

TEST_CASE("frame permutation permutes the output axis, weights are shared") {
  auto c = small_cfg();
  Rng rng(5);
  Backbone<double> bb(c, rng);
  auto seq = random_frames(c, rng);
  auto fs = bb.encode_frames(seq);

  FrameSequence<double> swapped;
  swapped.frames = {seq.frames[2], seq.frames[1], seq.frames[0]};
  auto fs2 = bb.encode_frames(swapped);
  for (std::size_t n = 0; n < c.tokens(); ++n)
    for (std::size_t d = 0; d < c.dim; ++d) {
      REQUIRE(fs2.features.at({0, n, d}) == fs.features.at({2, n, d}));
      REQUIRE(fs2.features.at({1, n, d}) == fs.features.at({1, n, d}));
      REQUIRE(fs2.features.at({2, n, d}) == fs.features.at({0, n, d}));
    }

  // two identical frames encode to bit-identical slices
  FrameSequence<double> twin;
  twin.frames = {seq.frames[0], seq.frames[1], seq.frames[0]};
  auto fs3 = bb.encode_frames(twin);
  for (std::size_t n = 0; n < c.tokens(); ++n)
    for (std::size_t d = 0; d < c.dim; ++d)
      REQUIRE(fs3.features.at({0, n, d}) == fs3.features.at({2, n, d}));
}

TEST_CASE("per-frame independence under NaN poisoning") {
  auto c = small_cfg();
  Rng rng(6);
  Backbone<double> bb(c, rng);
  auto seq = random_frames(c, rng);
  for (auto& v : seq.frames[2].data()) v = std::nan("");
  auto fs = bb.encode_frames(seq);
  for (std::size_t n = 0; n < c.tokens(); ++n)
    for (std::size_t d = 0; d < c.dim; ++d) {
      REQUIRE(std::isfinite(fs.features.at({0, n, d})));
      REQUIRE(std::isfinite(fs.features.at({1, n, d})));
      REQUIRE(std::isnan(fs.features.at({2, n, d})));
    }
}

TEST_CASE("backbone gradients pass the finite-difference check") {
  auto c = small_cfg();
  Rng rng(7);
  Backbone<double> bb(c, rng);
  auto seq = random_frames(c, rng);
  ParamList<double> params;
  bb.params("backbone", params);

  auto f = [&]() {
    auto fs = bb.encode_frames(seq);
    return mean(mul(fs.features, fs.features));
  };
  auto res = check_gradients<double>(f, params, 1e-5, 1e-4);
  INFO("worst " << res.worst_param << " rel " << res.max_rel_err << " ad " << res.worst_ad << " fd " << res.worst_fd);
  REQUIRE(res.pass);
}
