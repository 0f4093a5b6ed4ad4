#pragma once

#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "vremd/data.hpp"
#include "vremd/eval.hpp"
#include "vremd/model.hpp"
#include "vremd/trainer.hpp"

namespace vremd {

inline constexpr double kHeatmapSigma = 1.0;

// Crops a scene window around the target person and renders the training
// target for the key frame.
template <class Real>
struct PreparedWindow {
  TrainSample<Real> sample;
  PoseAnnotation key_annotation;  // in crop coordinates
  PoseAnnotation scene_annotation;
  Affine2D transform;  // scene -> crop pixels
};

template <class Real>
PreparedWindow<Real> prepare_window(
    const SynthWindow<Real>& window, const ModelConfig& mc,
    const std::optional<AugmentParams>& aug = std::nullopt) {
  const Bbox box = bbox_from_annotation(window.annotations[1]);
  CroppedWindow<Real> crop =
      expand_and_crop(window, box, mc.img_h, mc.img_w);
  if (aug) crop = augment(crop, *aug);

  PreparedWindow<Real> out;
  out.sample.input = crop.frames;
  out.sample.target = render_gt_heatmaps<Real>(
      crop.annotations[1], mc.heatmap_h(), mc.heatmap_w(), kHeatmapSigma,
      double(mc.img_h) / double(mc.heatmap_h()));
  out.sample.visibility = crop.annotations[1].visibility;
  out.key_annotation = crop.annotations[1];
  out.scene_annotation = window.annotations[1];
  out.transform = crop.transform;
  return out;
}

// Deterministic stream of synthetic training samples: a fresh scene per
// index, optional shared-affine augmentation, all derived from one seed.
template <class Real>
SampleSource<Real> make_synth_source(SynthConfig scene, const ModelConfig& mc,
                                     std::uint64_t seed, bool augment_on,
                                     std::size_t pool = 0,
                                     AugmentRanges ranges = {}) {
  return [=](std::size_t index) {
    const std::size_t window = pool ? index % pool : index;
    SynthConfig cfg = scene;
    cfg.seed = Rng::derive(seed, window).raw();
    auto synth = synth_sequence<Real>(cfg, 1 + long(window % 7));
    std::optional<AugmentParams> aug;
    if (augment_on) {
      Rng ar = Rng::derive(seed ^ 0xa06u, index);
      aug = sample_augment(ar, ranges);
    }
    return prepare_window(synth, mc, aug).sample;
  };
}

// Runs the model over `count` held-out windows and scores the decoded poses
// against the exact generator annotations in scene coordinates. The model is
// shared read-only across workers; results merge in index order, so the
// report does not depend on the worker count.
template <class Real>
EvalReport evaluate_model(const Model<Real>& model, SynthConfig scene,
                          std::size_t count, std::uint64_t seed,
                          std::size_t workers = 1) {
  std::vector<PoseAnnotation> preds(count), gts(count);
  const double stride = double(model.cfg.img_h) / double(model.cfg.heatmap_h());

  auto run_window = [&](std::size_t i) {
    SynthConfig cfg = scene;
    cfg.seed = Rng::derive(seed, i).raw();
    auto window = synth_sequence<Real>(cfg, 1 + long(i % 7));
    auto prepared = prepare_window(window, model.cfg);
    auto out = model.forward(prepared.sample.input);
    auto decoded = decode(out.combined, prepared.transform, stride);
    preds[i] = decoded.annotation;
    gts[i] = prepared.scene_annotation;
  };

  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) run_window(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w]() {
        for (std::size_t i = w; i < count; i += workers) run_window(i);
      });
    for (auto& t : pool) t.join();
  }
  return compute_map(preds, gts, default_head_size, 0.5,
                     joint_names(model.cfg.joints));
}

}  // namespace vremd
