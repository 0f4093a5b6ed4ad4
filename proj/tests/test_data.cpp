#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vremd/data.hpp"
#include "vremd/posetrack.hpp"

using namespace vremd;
using T = Tensor<double>;

namespace {

SynthConfig small_scene(std::uint64_t seed = 7) {
  SynthConfig c;
  c.img_h = 96;
  c.img_w = 80;
  c.person_height = 48.0;
  c.seed = seed;
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synthetic windows are deterministic and annotated exactly") {
  auto cfg = small_scene();
  auto a = synth_sequence<double>(cfg, 3);
  auto b = synth_sequence<double>(cfg, 3);
  for (int f = 0; f < 3; ++f) {
    REQUIRE(a.frames.frames[f].data() == b.frames.frames[f].data());
    REQUIRE(a.annotations[f].joints == b.annotations[f].joints);
  }
  REQUIRE(a.annotations[0].frame_index == 2);
  REQUIRE(a.annotations[2].frame_index == 4);
  REQUIRE(a.annotations[1].joints.size() == 15);
  for (double v : a.frames.frames[1].data()) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}

TEST_CASE("rendered blobs peak within a pixel of the annotation") {
  auto cfg = small_scene(11);
  auto w = synth_sequence<double>(cfg, 2);
  const auto& img = w.frames.frames[1];
  const auto& ann = w.annotations[1];
  for (std::size_t j = 0; j < ann.joints.size(); ++j) {
    if (!ann.visibility[j]) continue;
    const double jx = ann.joints[j][0], jy = ann.joints[j][1];
    // the blob's local maximum sits on the rounded joint position
    double best = -1;
    int bx = -1, by = -1;
    for (int y = int(jy) - 3; y <= int(jy) + 3; ++y)
      for (int x = int(jx) - 3; x <= int(jx) + 3; ++x) {
        if (x < 0 || y < 0 || x >= int(cfg.img_w) || y >= int(cfg.img_h))
          continue;
        if (img.at({0, std::size_t(y), std::size_t(x)}) > best) {
          best = img.at({0, std::size_t(y), std::size_t(x)});
          bx = x;
          by = y;
        }
      }
    REQUIRE(std::abs(bx - jx) <= 1.0);
    REQUIRE(std::abs(by - jy) <= 1.0);
  }
}

TEST_CASE("distractors, occlusion, blur and background stay in range") {
  SynthConfig cfg = small_scene(13);
  cfg.distractors = 2;
  cfg.background_motion = true;
  cfg.blur = 3;
  cfg.occluders = 1;
  auto w = synth_sequence<double>(cfg, 5);
  for (int f = 0; f < 3; ++f) {
    REQUIRE(w.annotations[f].joints.size() == 15);  // target person only
    for (double v : w.frames.frames[f].data()) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
}

TEST_CASE("synth config validation") {
  SynthConfig bad = small_scene();
  bad.person_height = 500.0;
  REQUIRE_THROWS_WITH(synth_sequence<double>(bad, 0),
                      Catch::Matchers::ContainsSubstring("person height"));
  SynthConfig bad2 = small_scene();
  bad2.blur = 4;
  REQUIRE_THROWS_AS(synth_sequence<double>(bad2, 0), std::invalid_argument);
}

TEST_CASE("bbox expansion follows the centered scaling rule") {
  Bbox b{100, 100, 80, 120};
  Bbox e = expand_bbox(b, 1.25);
  REQUIRE(e.x == Catch::Approx(90.0));
  REQUIRE(e.y == Catch::Approx(85.0));
  REQUIRE(e.w == Catch::Approx(100.0));
  REQUIRE(e.h == Catch::Approx(150.0));
  REQUIRE_THROWS_WITH(expand_bbox({0, 0, 0, 10}),
                      Catch::Matchers::ContainsSubstring("degenerate"));
}

TEST_CASE("cropping clamps at borders without out-of-bounds reads") {
  auto cfg = small_scene(17);
  auto w = synth_sequence<double>(cfg, 1);
  Bbox touching{-10, -5, 60, 70};  // extends past the top-left corner
  auto crop = expand_and_crop(w, touching, 64, 48);
  REQUIRE(crop.frames.frames[0].shape() == Shape{1, 64, 48});
  for (int f = 0; f < 3; ++f)
    for (double v : crop.frames.frames[f].data())
      REQUIRE(std::isfinite(v));
}

TEST_CASE("crop transform round-trips within half a pixel") {
  Bbox rect{12, 20, 40, 40};
  Affine2D tf = crop_transform(rect, 48, 64);
  Affine2D inv = tf.inverse();
  Rng rng(19);
  for (int i = 0; i < 50; ++i) {
    const double x = rng.uniform(12, 52), y = rng.uniform(20, 60);
    const auto fwd = tf.apply(x, y);
    const auto back = inv.apply(fwd[0], fwd[1]);
    REQUIRE(std::abs(back[0] - x) < 0.5);
    REQUIRE(std::abs(back[1] - y) < 0.5);
  }
}

TEST_CASE("ground-truth heatmaps: peak one, decay, argmax") {
  PoseAnnotation ann;
  ann.joints = {{17.3, 22.9}, {40.0, 8.0}};
  ann.visibility = {true, false};
  auto maps = render_gt_heatmaps<double>(ann, 16, 12, 1.0, 4.0);
  REQUIRE(maps.maps.shape() == Shape{2, 16, 12});

  // joint 0 lands at heatmap (4.325, 5.725) -> pixel (4, 6)
  REQUIRE(maps.maps.at({0, 6, 4}) == 1.0);
  double best = -1;
  std::size_t bx = 0, by = 0;
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 12; ++x)
      if (maps.maps.at({0, y, x}) > best) {
        best = maps.maps.at({0, y, x});
        by = y;
        bx = x;
      }
  REQUIRE(bx == 4);
  REQUIRE(by == 6);

  // three sigmas out the value drops to exp(-4.5)
  REQUIRE(maps.maps.at({0, 6, 7}) == Catch::Approx(std::exp(-4.5)).margin(1e-12));

  // invisible joints render as zero maps
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 12; ++x)
      REQUIRE(maps.maps.at({1, y, x}) == 0.0);
}

TEST_CASE("identity augmentation leaves the window unchanged") {
  auto cfg = small_scene(23);
  auto w = synth_sequence<double>(cfg, 1);
  auto crop = expand_and_crop(w, bbox_from_annotation(w.annotations[1]), 64, 48);
  AugmentParams id;
  auto out = augment(crop, id);
  for (int f = 0; f < 3; ++f) {
    for (std::size_t j = 0; j < 15; ++j) {
      REQUIRE(out.annotations[f].joints[j][0] ==
              Catch::Approx(crop.annotations[f].joints[j][0]).margin(1e-9));
      REQUIRE(out.annotations[f].joints[j][1] ==
              Catch::Approx(crop.annotations[f].joints[j][1]).margin(1e-9));
    }
  }
}

TEST_CASE("double flip is the identity on annotations") {
  auto cfg = small_scene(29);
  auto w = synth_sequence<double>(cfg, 1);
  auto crop = expand_and_crop(w, bbox_from_annotation(w.annotations[1]), 64, 48);
  AugmentParams flip;
  flip.flip = true;
  auto once = augment(crop, flip);
  auto twice = augment(once, flip);
  for (int f = 0; f < 3; ++f)
    for (std::size_t j = 0; j < 15; ++j) {
      REQUIRE(twice.annotations[f].joints[j][0] ==
              Catch::Approx(crop.annotations[f].joints[j][0]).margin(1e-9));
      REQUIRE(twice.annotations[f].joints[j][1] ==
              Catch::Approx(crop.annotations[f].joints[j][1]).margin(1e-9));
      REQUIRE(twice.annotations[f].visibility[j] ==
              crop.annotations[f].visibility[j]);
    }
}

TEST_CASE("rotated annotations match the direct affine transform") {
  auto cfg = small_scene(31);
  auto w = synth_sequence<double>(cfg, 1);
  auto crop = expand_and_crop(w, bbox_from_annotation(w.annotations[1]), 64, 48);
  AugmentParams p;
  p.rotation_deg = 30.0;
  p.scale = 1.1;
  auto out = augment(crop, p);
  const Affine2D tf = augment_transform(p, 48, 64, crop.annotations[1]);
  for (int f = 0; f < 3; ++f)
    for (std::size_t j = 0; j < 15; ++j) {
      const auto q = tf.apply(crop.annotations[f].joints[j][0],
                              crop.annotations[f].joints[j][1]);
      REQUIRE(out.annotations[f].joints[j][0] ==
              Catch::Approx(q[0]).margin(1e-9));
      REQUIRE(out.annotations[f].joints[j][1] ==
              Catch::Approx(q[1]).margin(1e-9));
    }
}

TEST_CASE("all frames in a window share one augmentation transform") {
  // the transform is a single shared affine; verify a drawn pixel pattern
  // moves consistently across frames
  Rng rng(37);
  auto p = sample_augment(rng, AugmentRanges{});
  REQUIRE(p.scale >= 0.65);
  REQUIRE(p.scale <= 1.35);
  REQUIRE(std::abs(p.rotation_deg) <= 45.0);

  auto cfg = small_scene(41);
  auto w = synth_sequence<double>(cfg, 1);
  auto crop = expand_and_crop(w, bbox_from_annotation(w.annotations[1]), 64, 48);
  auto out = augment(crop, p);
  const Affine2D tf = augment_transform(p, 48, 64, crop.annotations[1]);
  const Affine2D expect = tf.compose(crop.transform);
  for (int i = 0; i < 6; ++i)
    REQUIRE(out.transform.m[i] == Catch::Approx(expect.m[i]).margin(1e-12));
}

TEST_CASE("dataset files round-trip byte-exactly") {
  namespace fs = std::filesystem;
  const std::string dir = fs::temp_directory_path() / "vremd_data_test";
  fs::remove_all(dir);

  auto cfg = small_scene(43);
  auto w = synth_sequence<double>(cfg, 2);
  write_window(dir + "/w0", w);
  write_window(dir + "/w0_again", w);
  for (const char* name : {"frame_0.pgm", "frame_1.pgm", "frame_2.pgm",
                           "annotations.txt"})
    REQUIRE(read_file(dir + "/w0/" + name) ==
            read_file(dir + "/w0_again/" + name));

  auto header = read_file(dir + "/w0/annotations.txt");
  REQUIRE(header.rfind("vremd-synth v1\n", 0) == 0);

  auto back = read_window<double>(dir + "/w0");
  for (int f = 0; f < 3; ++f) {
    REQUIRE(back.annotations[f].joints == w.annotations[f].joints);
    REQUIRE(back.annotations[f].visibility == w.annotations[f].visibility);
    // images quantize to 8 bits on disk
    for (std::size_t i = 0; i < back.frames.frames[f].size(); ++i)
      REQUIRE(std::abs(back.frames.frames[f].data()[i] -
                       w.frames.frames[f].data()[i]) <= 0.5 / 255.0 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST_CASE("posetrack-layout annotations load into PoseAnnotation") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "vremd_pt_test.json").string();
  {
    std::ofstream out(path);
    out << R"({"annotations": [
      {"image_id": 10, "track_id": 2,
       "keypoints": [12.0, 30.0, 1, 14.0, 31.5, 0, 16.0, 33.0, 1]}
    ]})";
  }
  auto anns = read_posetrack_annotations(path);
  REQUIRE(anns.size() == 1);
  REQUIRE(anns[0].frame_index == 10);
  REQUIRE(anns[0].person_id == 2);
  REQUIRE(anns[0].joints.size() == 3);
  REQUIRE(anns[0].joints[1][1] == 31.5);
  REQUIRE(anns[0].visibility == std::vector<bool>{true, false, true});
  fs::remove(path);

  {
    std::ofstream out(path);
    out << R"({"images": []})";
  }
  REQUIRE_THROWS_WITH(read_posetrack_annotations(path),
                      Catch::Matchers::ContainsSubstring("annotations"));
  fs::remove(path);
}
