// vremd: synthesize skeleton video windows, train and evaluate the pose
// model, render inference overlays, and verify gradients.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "vremd/vremd.hpp"

namespace fs = std::filesystem;
using namespace vremd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitVerification = 3;

std::size_t worker_count() {
  const char* env = std::getenv("VREMD_NUM_THREADS");
  if (!env) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n > 0 ? std::size_t(n) : 1;
}

std::string timestamp_run_dir(std::uint64_t seed) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", std::localtime(&t));
  return "runs/" + std::string(buf) + "-seed" + std::to_string(seed);
}

std::string ensure_out_dir(std::string out, std::uint64_t seed) {
  if (out.empty()) out = timestamp_run_dir(seed);
  fs::create_directories(out);
  return out;
}

// configuration keys shared by the config file and the CLI flags

ModelConfig model_from_reader(ConfigReader& r) {
  ModelConfig c;
  c.channels = std::size_t(r.get_long("model.channels", long(c.channels)));
  c.img_h = std::size_t(r.get_long("model.img_h", long(c.img_h)));
  c.img_w = std::size_t(r.get_long("model.img_w", long(c.img_w)));
  c.patch = std::size_t(r.get_long("model.patch", long(c.patch)));
  c.dim = std::size_t(r.get_long("model.dim", long(c.dim)));
  c.heads = std::size_t(r.get_long("model.heads", long(c.heads)));
  c.backbone_depth =
      std::size_t(r.get_long("model.backbone_depth", long(c.backbone_depth)));
  c.mlp_ratio = std::size_t(r.get_long("model.mlp_ratio", long(c.mlp_ratio)));
  c.joints = std::size_t(r.get_long("model.joints", long(c.joints)));
  c.hkme_depth_human = std::size_t(
      r.get_long("model.hkme_depth_human", long(c.hkme_depth_human)));
  c.hkme_depth_keypoint = std::size_t(
      r.get_long("model.hkme_depth_keypoint", long(c.hkme_depth_keypoint)));
  c.hkme_depth_spatial = std::size_t(
      r.get_long("model.hkme_depth_spatial", long(c.hkme_depth_spatial)));
  c.hkme_depth_temporal = std::size_t(
      r.get_long("model.hkme_depth_temporal", long(c.hkme_depth_temporal)));
  c.bmd_depth = std::size_t(r.get_long("model.bmd_depth", long(c.bmd_depth)));
  c.sample_count =
      std::size_t(r.get_long("model.sample_count", long(c.sample_count)));
  c.offset_hidden =
      std::size_t(r.get_long("model.offset_hidden", long(c.offset_hidden)));
  c.token_hidden =
      std::size_t(r.get_long("model.token_hidden", long(c.token_hidden)));
  c.motion_channels = std::size_t(
      r.get_long("model.motion_channels", long(c.motion_channels)));
  c.max_offset_radius =
      r.get_double("model.max_offset_radius", c.max_offset_radius);
  c.use_hkme = r.get_bool("model.use_hkme", c.use_hkme);
  c.use_human_mask = r.get_bool("model.use_human_mask", c.use_human_mask);
  c.use_keypoint_mask =
      r.get_bool("model.use_keypoint_mask", c.use_keypoint_mask);
  c.use_bmd = r.get_bool("model.use_bmd", c.use_bmd);
  c.bidirectional = r.get_bool("model.bidirectional", c.bidirectional);
  c.constraint_from_backbone = r.get_bool("model.constraint_from_backbone",
                                          c.constraint_from_backbone);
  c.sigmoid_human_mask =
      r.get_bool("model.sigmoid_human_mask", c.sigmoid_human_mask);
  const std::string mode = r.get_string("model.dca_mode", "dca");
  if (mode == "dc") c.dca_mode = DcaMode::kDeformConv;
  else if (mode == "da") c.dca_mode = DcaMode::kDeformAttention;
  else if (mode == "dca") c.dca_mode = DcaMode::kDeformCrossAttention;
  else throw std::invalid_argument("config key \"model.dca_mode\": expected dc/da/dca");
  return c;
}

TrainConfig train_from_reader(ConfigReader& r) {
  TrainConfig c;
  c.steps = std::size_t(r.get_long("train.steps", long(c.steps)));
  c.batch_size = std::size_t(r.get_long("train.batch_size", long(c.batch_size)));
  c.learning_rate = r.get_double("train.learning_rate", c.learning_rate);
  c.lr_drop_step =
      std::size_t(r.get_long("train.lr_drop_step", long(c.lr_drop_step)));
  c.weight_decay = r.get_double("train.weight_decay", c.weight_decay);
  c.clip_norm = r.get_double("train.clip_norm", c.clip_norm);
  c.freeze_backbone = r.get_bool("train.freeze_backbone", c.freeze_backbone);
  c.seed = std::uint64_t(r.get_long("train.seed", long(c.seed)));
  return c;
}

SynthConfig synth_from_reader(ConfigReader& r) {
  SynthConfig c;
  c.joints = std::size_t(r.get_long("synth.joints", long(c.joints)));
  c.img_h = std::size_t(r.get_long("synth.img_h", long(c.img_h)));
  c.img_w = std::size_t(r.get_long("synth.img_w", long(c.img_w)));
  c.distractors =
      std::size_t(r.get_long("synth.distractors", long(c.distractors)));
  c.background_motion =
      r.get_bool("synth.background_motion", c.background_motion);
  c.blur = std::size_t(r.get_long("synth.blur", long(c.blur)));
  c.occluders = std::size_t(r.get_long("synth.occluders", long(c.occluders)));
  c.person_height = r.get_double("synth.person_height", c.person_height);
  c.seed = std::uint64_t(r.get_long("synth.seed", long(c.seed)));
  return c;
}

struct Configs {
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
};

Configs load_configs(const std::string& path) {
  Configs c;
  if (path.empty()) return c;
  ConfigReader reader(parse_config_file(path));
  c.model = model_from_reader(reader);
  c.train = train_from_reader(reader);
  c.synth = synth_from_reader(reader);
  reader.reject_unknown();
  return c;
}

// ---------------------------------------------------------------------------
// rendering helpers
// ---------------------------------------------------------------------------

using Rgb = std::array<unsigned char, 3>;

std::vector<Rgb> gray_canvas(const Tensor<double>& image) {
  const std::size_t h = image.shape()[1], w = image.shape()[2];
  std::vector<Rgb> px(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    const double v = std::min(1.0, std::max(0.0, image.data()[i]));
    const auto g = static_cast<unsigned char>(std::lround(v * 255));
    px[i] = {g, g, g};
  }
  return px;
}

void draw_dot(std::vector<Rgb>& px, std::size_t h, std::size_t w, double x,
              double y, Rgb color) {
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      const long xx = std::lround(x) + dx, yy = std::lround(y) + dy;
      if (xx >= 0 && yy >= 0 && xx < long(w) && yy < long(h))
        px[yy * w + xx] = color;
    }
}

void draw_segment(std::vector<Rgb>& px, std::size_t h, std::size_t w,
                  double x0, double y0, double x1, double y1, Rgb color) {
  const int steps = std::max(2, int(std::hypot(x1 - x0, y1 - y0) * 2));
  for (int i = 0; i <= steps; ++i) {
    const double t = double(i) / steps;
    const long x = std::lround(x0 + (x1 - x0) * t);
    const long y = std::lround(y0 + (y1 - y0) * t);
    if (x >= 0 && y >= 0 && x < long(w) && y < long(h)) px[y * w + x] = color;
  }
}

void write_skeleton_overlay(const std::string& path,
                            const Tensor<double>& key_frame,
                            const PoseAnnotation& pose) {
  const std::size_t h = key_frame.shape()[1], w = key_frame.shape()[2];
  auto px = gray_canvas(key_frame);
  for (auto [a, b] : skeleton_edges(pose.joints.size()))
    draw_segment(px, h, w, pose.joints[a][0], pose.joints[a][1],
                 pose.joints[b][0], pose.joints[b][1], {40, 220, 60});
  for (const auto& j : pose.joints) draw_dot(px, h, w, j[0], j[1], {230, 40, 40});
  write_ppm(path, px, h, w);
}

void write_normalized_pgm(const std::string& path, const Tensor<double>& map,
                          std::size_t h, std::size_t w, std::size_t scale) {
  double lo = 1e300, hi = -1e300;
  for (double v : map.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo < 1e-12 ? 1.0 : hi - lo;
  std::vector<double> up(h * scale * w * scale);
  for (std::size_t y = 0; y < h * scale; ++y)
    for (std::size_t x = 0; x < w * scale; ++x)
      up[y * w * scale + x] =
          (map.data()[(y / scale) * w + x / scale] - lo) / span;
  write_pgm(path, Tensor<double>::from_data({h * scale, w * scale},
                                            std::move(up)));
}

void write_offset_overlay(const std::string& path,
                          const OffsetField<double>& field, std::size_t grid_h,
                          std::size_t grid_w) {
  const std::size_t scale = 16;
  const std::size_t h = grid_h * scale, w = grid_w * scale;
  std::vector<Rgb> px(h * w, Rgb{20, 20, 20});
  for (std::size_t gy = 0; gy < grid_h; ++gy)
    for (std::size_t gx = 0; gx < grid_w; ++gx)
      px[(gy * scale + scale / 2) * w + gx * scale + scale / 2] = {90, 90, 90};
  const std::size_t n = field.reference_points.shape()[0];
  const std::size_t ns = field.offsets.shape()[1];
  for (std::size_t i = 0; i < n; ++i) {
    const double rx = field.reference_points.at({i, 0}) * scale;
    const double ry = field.reference_points.at({i, 1}) * scale;
    for (std::size_t s = 0; s < ns; ++s) {
      const double tx = rx + field.offsets.at({i, s, 0}) * scale;
      const double ty = ry + field.offsets.at({i, s, 1}) * scale;
      draw_segment(px, h, w, rx, ry, tx, ty, {60, 120, 230});
      draw_dot(px, h, w, tx, ty, {230, 200, 40});
    }
    draw_dot(px, h, w, rx, ry, {230, 40, 40});
  }
  write_ppm(path, px, h, w);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int run_synth(const SynthConfig& base, std::size_t windows,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < windows; ++i) {
    SynthConfig cfg = base;
    cfg.seed = Rng::derive(base.seed, i).raw();
    auto window = synth_sequence<double>(cfg, 1 + long(i % 7));
    char name[32];
    std::snprintf(name, sizeof(name), "window_%05zu", i);
    write_window(out_dir + "/" + name, window);
  }
  std::ofstream manifest(out_dir + "/manifest.txt");
  manifest << kSynthFormatTag << "\nwindows " << windows << "\n";
  std::cout << "wrote " << windows << " windows (" << 3 * windows
            << " frames) to " << out_dir << "\n";
  return kExitOk;
}

template <class Real>
SampleSource<Real> directory_source(const std::string& dir,
                                    const ModelConfig& mc, bool augment_on,
                                    std::uint64_t seed) {
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() &&
        entry.path().filename().string().rfind("window_", 0) == 0)
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty())
    throw std::runtime_error("no window_* directories under " + dir);
  return [dirs, mc, augment_on, seed](std::size_t index) {
    auto window = read_window<Real>(dirs[index % dirs.size()]);
    std::optional<AugmentParams> aug;
    if (augment_on) {
      Rng ar = Rng::derive(seed ^ 0xa06u, index);
      aug = sample_augment(ar, AugmentRanges{});
    }
    return prepare_window(window, mc, aug).sample;
  };
}

template <class Real>
int run_train(const Configs& cfg, const std::string& data_dir,
              std::size_t pool, bool augment_on, const std::string& out_dir) {
  Model<Real> model(cfg.model, cfg.train.seed);
  std::cout << "model parameters: " << model.param_count() << "\n";

  SampleSource<Real> source =
      data_dir.empty()
          ? make_synth_source<Real>(cfg.synth, cfg.model, cfg.train.seed,
                                    augment_on, pool)
          : directory_source<Real>(data_dir, cfg.model, augment_on,
                                   cfg.train.seed);

  std::ofstream csv(out_dir + "/metrics.csv");
  auto result = train(model, source, cfg.train, &csv);
  save_checkpoint(out_dir + "/checkpoint.bin", model, &result.optimizer,
                  &result.rng, cfg.train.steps);
  std::cout << "step 0 loss " << result.log.front().loss << ", step "
            << result.log.back().step << " loss " << result.log.back().loss
            << "\n";
  std::cout << "checkpoint: " << out_dir << "/checkpoint.bin\n";
  return kExitOk;
}

template <class Real>
int run_eval(const std::string& ckpt_path, const SynthConfig& scene,
             std::size_t windows, std::uint64_t seed,
             const std::string& out_dir) {
  auto ckpt = load_checkpoint<Real>(ckpt_path);
  auto model = restore_model(ckpt);
  auto report =
      evaluate_model(model, scene, windows, seed, worker_count());
  std::ofstream csv(out_dir + "/report.csv");
  csv << report_csv(report);
  std::ofstream txt(out_dir + "/report.txt");
  txt << report_text(report);
  std::cout << report_text(report);
  return kExitOk;
}

template <class Real>
int run_infer(const std::string& ckpt_path, const SynthConfig& scene,
              std::uint64_t seed, long t, bool dump_masks, bool dump_offsets,
              const std::string& out_dir) {
  auto ckpt = load_checkpoint<Real>(ckpt_path);
  auto model = restore_model(ckpt);

  SynthConfig cfg = scene;
  cfg.seed = Rng::derive(seed, 0).raw();
  auto window = synth_sequence<Real>(cfg, t);
  auto prepared = prepare_window(window, model.cfg);
  auto out = model.forward(prepared.sample.input);
  const double stride =
      double(model.cfg.img_h) / double(model.cfg.heatmap_h());
  auto decoded = decode(out.combined, Affine2D::identity(), stride);

  Tensor<double> key(Tensor<double>::from_data(
      prepared.sample.input.frames[1].shape(),
      std::vector<double>(prepared.sample.input.frames[1].data().begin(),
                          prepared.sample.input.frames[1].data().end())));
  write_skeleton_overlay(out_dir + "/overlay.ppm", key, decoded.annotation);

  const auto names = joint_names(model.cfg.joints);
  for (std::size_t j = 0; j < model.cfg.joints; ++j) {
    Tensor<Real> map = reshape(slice(out.combined.maps, 0, j, 1),
                               {model.cfg.heatmap_h(), model.cfg.heatmap_w()});
    Tensor<double> map64 = Tensor<double>::from_data(
        map.shape(), std::vector<double>(map.data().begin(), map.data().end()));
    write_normalized_pgm(out_dir + "/heatmap_" + names[j] + ".pgm", map64,
                         model.cfg.heatmap_h(), model.cfg.heatmap_w(), 8);
  }

  if (dump_masks) {
    for (int f = 0; f < 3; ++f) {
      Tensor<Real> hm = reshape(slice(out.hkme.masks.human_mask, 0, f, 1),
                                {model.cfg.grid_h(), model.cfg.grid_w()});
      Tensor<double> hm64 = Tensor<double>::from_data(
          hm.shape(), std::vector<double>(hm.data().begin(), hm.data().end()));
      write_normalized_pgm(out_dir + "/mask_h_f" + std::to_string(f) + ".pgm",
                           hm64, model.cfg.grid_h(), model.cfg.grid_w(), 8);
      const std::size_t n = model.cfg.tokens();
      Tensor<Real> km = reshape(
          slice(out.hkme.masks.keypoint_mask, 0, f * n, n),
          {model.cfg.grid_h(), model.cfg.grid_w()});
      Tensor<double> km64 = Tensor<double>::from_data(
          km.shape(), std::vector<double>(km.data().begin(), km.data().end()));
      write_normalized_pgm(out_dir + "/mask_k_f" + std::to_string(f) + ".pgm",
                           km64, model.cfg.grid_h(), model.cfg.grid_w(), 8);
    }
  }

  if (dump_offsets && model.cfg.use_bmd) {
    for (std::size_t i = 0; i < out.bmd.offset_fields.size(); ++i) {
      OffsetField<double> field;
      const auto& f = out.bmd.offset_fields[i];
      field.offsets = Tensor<double>::from_data(
          f.offsets.shape(), std::vector<double>(f.offsets.data().begin(),
                                                 f.offsets.data().end()));
      field.reference_points = Tensor<double>::from_data(
          f.reference_points.shape(),
          std::vector<double>(f.reference_points.data().begin(),
                              f.reference_points.data().end()));
      const char* dir_tag =
          model.cfg.bidirectional ? (i % 2 == 0 ? "fwd" : "bwd") : "joint";
      write_offset_overlay(out_dir + "/offsets_block" +
                               std::to_string(i / (model.cfg.bidirectional ? 2 : 1)) +
                               "_" + dir_tag + ".ppm",
                           field, model.cfg.grid_h(), model.cfg.grid_w());
    }
  }

  std::cout << "overlay and heatmaps written to " << out_dir << "\n";
  return kExitOk;
}

int run_gradcheck(std::size_t seeds, double step, double tolerance,
                  bool inject_wrong_sign, bool zero_params) {
  bool all_pass = true;
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    ModelConfig mc = ModelConfig::tiny();
    Model<double> model(mc, seed);
    SynthConfig scene;
    scene.img_h = 72;
    scene.img_w = 72;
    scene.person_height = 40.0;
    scene.joints = mc.joints;
    scene.seed = Rng::derive(seed, 77).raw();
    auto window = synth_sequence<double>(scene, 1);
    auto prepared = prepare_window(window, mc);

    auto params = model.named_params();
    if (zero_params) params.clear();
    auto f = [&]() {
      auto out = model.forward(prepared.sample.input);
      return heatmap_loss(out.combined, prepared.sample.target,
                          prepared.sample.visibility);
    };
    auto res = check_gradients<double>(f, params, step, tolerance);
    if (inject_wrong_sign && !params.empty()) {
      // test hook: flip the largest reverse-mode gradient and re-compare it
      // against its own central difference; the checker must catch this
      for (const auto& p : params) p.value.zero_grad();
      f().backward();
      double best = -1;
      std::size_t pi = 0, ci = 0;
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].value.has_grad()) continue;
        const auto& g = params[k].value.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          if (std::abs(g[i]) > best) {
            best = std::abs(g[i]);
            pi = k;
            ci = i;
          }
      }
      const double flipped = -params[pi].value.grad()[ci];
      auto& w = params[pi].value.data_mut();
      const double keep = w[ci];
      w[ci] = keep + step;
      const double fp = f().item();
      w[ci] = keep - step;
      const double fm = f().item();
      w[ci] = keep;
      const double fd = (fp - fm) / (2 * step);
      const double rel = std::abs(flipped - fd) /
                         std::max({std::abs(flipped), std::abs(fd), 1e-5});
      res.pass = res.pass && rel < tolerance;
      res.max_rel_err = std::max(res.max_rel_err, rel);
      res.worst_param = params[pi].name + " (sign flipped)";
    }
    std::cout << "seed " << seed << ": "
              << (res.pass ? "pass" : "FAIL")
              << " (params " << (zero_params ? 0 : model.param_count())
              << ", max rel err " << res.max_rel_err << " at "
              << (res.worst_param.empty() ? "-" : res.worst_param) << ")\n";
    all_pass = all_pass && res.pass;
  }
  if (!all_pass) {
    std::cout << "gradient verification FAILED\n";
    return kExitVerification;
  }
  std::cout << "gradient verification passed\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vremd: dual-stream video pose estimation on synthetic "
               "moving-skeleton sequences"};
  app.name("vremd");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "print help for every subcommand");

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path,
                 "configuration file (key = value lines, # comments)");
  app.add_option("--out", out_dir,
                 "output directory (default: runs/<timestamp>-seed<seed>)");
  app.add_option("--seed", seed, "master seed")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "write synthetic windows to disk");
  std::size_t synth_windows = 8;
  std::size_t distractors = 0, occluders = 0, blur = 0;
  bool background_motion = false;
  synth->add_option("--windows", synth_windows, "number of 3-frame windows")
      ->capture_default_str();
  synth->add_option("--distractors", distractors,
                    "non-target moving persons per scene")
      ->capture_default_str();
  synth->add_option("--occluders", occluders, "moving occluder rectangles")
      ->capture_default_str();
  synth->add_option("--blur", blur, "box blur width (odd, 0 = off)")
      ->capture_default_str();
  synth->add_flag("--background-motion", background_motion,
                  "animate the scene background");

  // train
  auto* tr = app.add_subcommand("train", "train a model on synthetic windows");
  std::size_t steps = 400, batch = 4, lr_drop = 300, pool = 64;
  double lr = 2e-3;
  bool freeze_backbone = false, no_augment = false;
  bool no_human_mask = false, no_keypoint_mask = false, no_bmd = false,
       no_bs = false, no_hkme = false;
  std::string dca_mode = "dca", data_dir, dtype = "f64";
  tr->add_option("--steps", steps, "optimization steps")->capture_default_str();
  tr->add_option("--batch", batch, "windows per step")->capture_default_str();
  tr->add_option("--lr", lr, "initial learning rate")->capture_default_str();
  tr->add_option("--lr-drop", lr_drop, "step at which lr divides by ten")
      ->capture_default_str();
  tr->add_option("--windows", pool, "synthetic training pool size")
      ->capture_default_str();
  tr->add_option("--data", data_dir, "train from a synth dataset directory");
  tr->add_option("--dtype", dtype, "parameter precision (f64 or f32)")
      ->check(CLI::IsMember({"f64", "f32"}))
      ->capture_default_str();
  tr->add_flag("--freeze-backbone", freeze_backbone,
               "keep backbone weights fixed");
  tr->add_flag("--no-augment", no_augment, "disable training augmentation");
  tr->add_flag("--no-human-mask", no_human_mask, "disable the human mask");
  tr->add_flag("--no-keypoint-mask", no_keypoint_mask,
               "disable the keypoint mask");
  tr->add_flag("--no-bmd", no_bmd, "disable the motion stream");
  tr->add_flag("--no-hkme", no_hkme,
               "disable the token enhancement path entirely");
  tr->add_flag("--no-bs", no_bs, "process both temporal directions jointly");
  tr->add_option("--dca-mode", dca_mode,
                 "motion attention variant: dc, da, or dca")
      ->check(CLI::IsMember({"dc", "da", "dca"}))
      ->capture_default_str();
  tr->add_option("--distractors", distractors,
                 "non-target persons in training scenes")
      ->capture_default_str();
  tr->add_flag("--background-motion", background_motion,
               "animate training backgrounds");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path;
  std::size_t eval_windows = 32;
  ev->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("--windows", eval_windows, "held-out windows to score")
      ->capture_default_str();
  ev->add_option("--distractors", distractors,
                 "non-target persons in eval scenes")
      ->capture_default_str();
  ev->add_flag("--background-motion", background_motion,
               "animate eval backgrounds");

  // infer
  auto* in = app.add_subcommand("infer", "run one window and render overlays");
  long infer_t = 1;
  bool dump_masks = false, dump_offsets = false;
  in->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  in->add_option("--t", infer_t, "key-frame time index")->capture_default_str();
  in->add_flag("--dump-masks", dump_masks,
               "write human/keypoint mask images");
  in->add_flag("--dump-offsets", dump_offsets,
               "write sampling-location visualizations");

  // gradcheck
  auto* gc = app.add_subcommand(
      "gradcheck", "verify reverse-mode gradients against finite differences");
  std::size_t gc_seeds = 1;
  double gc_step = 1e-5, gc_tol = 1e-4;
  bool inject_wrong_sign = false, zero_params = false;
  gc->add_option("--seeds", gc_seeds, "fresh models to check")
      ->capture_default_str();
  gc->add_option("--step", gc_step, "finite-difference step")
      ->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "max relative error")
      ->capture_default_str();
  gc->add_flag("--inject-wrong-sign", inject_wrong_sign,
               "test hook: flip one gradient sign, expect failure")
      ->group("");
  gc->add_flag("--zero-params", zero_params,
               "test hook: check an empty parameter set")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    Configs cfg = load_configs(config_path);
    if (app.count("--seed")) {
      cfg.train.seed = seed;
      cfg.synth.seed = seed;
    } else {
      seed = cfg.train.seed;
    }

    if (synth->parsed()) {
      if (synth->count("--distractors")) cfg.synth.distractors = distractors;
      if (synth->count("--occluders")) cfg.synth.occluders = occluders;
      if (synth->count("--blur")) cfg.synth.blur = blur;
      if (synth->count("--background-motion"))
        cfg.synth.background_motion = background_motion;
      return run_synth(cfg.synth, synth_windows,
                       ensure_out_dir(out_dir, seed));
    }

    if (tr->parsed()) {
      if (no_bmd && tr->count("--dca-mode"))
        throw CLI::ValidationError(
            "--dca-mode cannot be combined with --no-bmd");
      if (tr->count("--steps")) cfg.train.steps = steps;
      if (tr->count("--batch")) cfg.train.batch_size = batch;
      if (tr->count("--lr")) cfg.train.learning_rate = lr;
      if (tr->count("--lr-drop")) cfg.train.lr_drop_step = lr_drop;
      if (tr->count("--freeze-backbone")) cfg.train.freeze_backbone = true;
      if (no_human_mask) cfg.model.use_human_mask = false;
      if (no_keypoint_mask) cfg.model.use_keypoint_mask = false;
      if (no_bmd) cfg.model.use_bmd = false;
      if (no_hkme) cfg.model.use_hkme = false;
      if (no_bs) cfg.model.bidirectional = false;
      if (tr->count("--dca-mode")) {
        cfg.model.dca_mode = dca_mode == "dc"   ? DcaMode::kDeformConv
                             : dca_mode == "da" ? DcaMode::kDeformAttention
                                                : DcaMode::kDeformCrossAttention;
      }
      if (tr->count("--distractors")) cfg.synth.distractors = distractors;
      if (tr->count("--background-motion"))
        cfg.synth.background_motion = background_motion;
      cfg.synth.joints = cfg.model.joints;
      const std::string run_dir = ensure_out_dir(out_dir, cfg.train.seed);
      return dtype == "f32"
                 ? run_train<float>(cfg, data_dir, pool, !no_augment, run_dir)
                 : run_train<double>(cfg, data_dir, pool, !no_augment, run_dir);
    }

    if (ev->parsed()) {
      if (ev->count("--distractors")) cfg.synth.distractors = distractors;
      if (ev->count("--background-motion"))
        cfg.synth.background_motion = background_motion;
      auto meta = load_checkpoint_metadata(ckpt_path);
      cfg.synth.joints = model_config_from_metadata(meta).joints;
      const std::string run_dir = ensure_out_dir(out_dir, seed);
      return meta.at("dtype") == "f32"
                 ? run_eval<float>(ckpt_path, cfg.synth, eval_windows, seed,
                                   run_dir)
                 : run_eval<double>(ckpt_path, cfg.synth, eval_windows, seed,
                                    run_dir);
    }

    if (in->parsed()) {
      auto meta = load_checkpoint_metadata(ckpt_path);
      cfg.synth.joints = model_config_from_metadata(meta).joints;
      const std::string run_dir = ensure_out_dir(out_dir, seed);
      return meta.at("dtype") == "f32"
                 ? run_infer<float>(ckpt_path, cfg.synth, seed, infer_t,
                                    dump_masks, dump_offsets, run_dir)
                 : run_infer<double>(ckpt_path, cfg.synth, seed, infer_t,
                                     dump_masks, dump_offsets, run_dir);
    }

    if (gc->parsed())
      return run_gradcheck(gc_seeds, gc_step, gc_tol, inject_wrong_sign,
                           zero_params);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
