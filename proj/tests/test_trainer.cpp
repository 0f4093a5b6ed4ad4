#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vremd/pipeline.hpp"
#include "vremd/trainer.hpp"

using namespace vremd;
using T = Tensor<double>;

namespace {

SynthConfig tiny_scene(std::uint64_t seed = 3) {
  SynthConfig s;
  s.img_h = 72;
  s.img_w = 72;
  s.person_height = 40.0;
  s.joints = 3;
  s.seed = seed;
  return s;
}

ModelConfig tiny_model_cfg() {
  ModelConfig c = ModelConfig::tiny();
  c.backbone_depth = 1;
  c.bmd_depth = 1;
  return c;
}

SampleSource<double> tiny_source(const ModelConfig& mc) {
  SynthConfig s = tiny_scene();
  return make_synth_source<double>(s, mc, 5, false, 4);
}

}  // namespace

TEST_CASE("adamw matches a hand-computed single-parameter update") {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  cfg.weight_decay = 0.01;
  T theta = T::from_data({1}, {2.0}, true);
  theta.set_label("theta");
  ParamList<double> params = {{"theta", theta}};
  AdamW<double> opt(cfg, params);

  double w = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 3; ++t) {
    const double g = 2.0 * w;  // gradient of w^2
    theta.zero_grad();
    mul(theta, theta).backward();
    REQUIRE(theta.grad()[0] == Catch::Approx(g).margin(1e-12));
    opt.step(params, cfg.learning_rate);

    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    const double mhat = m / (1 - std::pow(cfg.beta1, t));
    const double vhat = v / (1 - std::pow(cfg.beta2, t));
    w -= cfg.learning_rate *
         (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * w);
    REQUIRE(theta.data()[0] == Catch::Approx(w).margin(1e-10));
  }
}

TEST_CASE("zero learning rate leaves every parameter untouched") {
  ModelConfig mc = tiny_model_cfg();
  Model<double> model(mc, 7);
  std::map<std::string, std::vector<double>> before;
  for (const auto& p : model.named_params()) before[p.name] = p.value.data();

  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.0;
  cfg.weight_decay = 0.0;
  cfg.seed = 1;
  train(model, tiny_source(mc), cfg);
  for (const auto& p : model.named_params())
    REQUIRE(p.value.data() == before.at(p.name));
}

TEST_CASE("freezing the backbone keeps its weights bit-identical") {
  ModelConfig mc = tiny_model_cfg();
  Model<double> model(mc, 9);
  std::map<std::string, std::vector<double>> before;
  for (const auto& p : model.named_params()) before[p.name] = p.value.data();

  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch_size = 1;
  cfg.freeze_backbone = true;
  cfg.seed = 2;
  train(model, tiny_source(mc), cfg);
  bool any_changed = false;
  for (const auto& p : model.named_params()) {
    if (p.name.rfind("backbone", 0) == 0)
      REQUIRE(p.value.data() == before.at(p.name));
    else if (p.value.data() != before.at(p.name))
      any_changed = true;
  }
  REQUIRE(any_changed);
}

TEST_CASE("training logs are bit-identical across identical runs") {
  ModelConfig mc = tiny_model_cfg();
  auto run = [&]() {
    Model<double> model(mc, 11);
    TrainConfig cfg;
    cfg.steps = 4;
    cfg.batch_size = 2;
    cfg.seed = 3;
    std::ostringstream csv;
    auto result = train(model, tiny_source(mc), cfg, &csv);
    return std::pair(csv.str(), result.log);
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.first == b.first);
  REQUIRE(a.first.rfind("step,loss,lr\n", 0) == 0);
  for (std::size_t i = 0; i < a.second.size(); ++i) {
    REQUIRE(a.second[i].loss == b.second[i].loss);
    REQUIRE(a.second[i].lr == b.second[i].lr);
  }
}

TEST_CASE("learning rate drops by ten at the configured step") {
  ModelConfig mc = tiny_model_cfg();
  Model<double> model(mc, 13);
  TrainConfig cfg;
  cfg.steps = 4;
  cfg.batch_size = 1;
  cfg.lr_drop_step = 2;
  cfg.seed = 4;
  auto result = train(model, tiny_source(mc), cfg);
  REQUIRE(result.log[0].lr == cfg.learning_rate);
  REQUIRE(result.log[1].lr == cfg.learning_rate);
  REQUIRE(result.log[2].lr == cfg.learning_rate / 10.0);
  REQUIRE(result.log[3].lr == cfg.learning_rate / 10.0);
}

TEST_CASE("a poisoned parameter aborts with a named diagnostic") {
  ModelConfig mc = tiny_model_cfg();
  Model<double> model(mc, 15);
  for (auto& p : model.named_params())
    if (p.name == "hkme.human_token") p.value.data()[0] = std::nan("");
  TrainConfig cfg;
  cfg.steps = 1;
  cfg.batch_size = 1;
  REQUIRE_THROWS_WITH(train(model, tiny_source(mc), cfg),
                      Catch::Matchers::ContainsSubstring("non-finite") &&
                          Catch::Matchers::ContainsSubstring("human_token"));
}

TEST_CASE("checkpoint round-trip reproduces forward outputs bit-exactly") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "vremd_ckpt_test.bin").string();
  ModelConfig mc = tiny_model_cfg();
  Model<double> model(mc, 17);

  TrainConfig cfg;
  cfg.steps = 2;
  cfg.batch_size = 1;
  cfg.seed = 6;
  auto result = train(model, tiny_source(mc), cfg);
  save_checkpoint(path, model, &result.optimizer, &result.rng, cfg.steps);

  // magic sits at byte zero
  std::ifstream raw(path, std::ios::binary);
  char head[8];
  raw.read(head, 8);
  REQUIRE(std::string(head, 8) == "VRMD0001");

  auto ckpt = load_checkpoint<double>(path);
  REQUIRE(ckpt.metadata.at("step") == "2");
  REQUIRE(ckpt.metadata.at("dtype") == "f64");
  auto restored = restore_model(ckpt);

  auto source = tiny_source(mc);
  auto sample = source(123);
  auto a = model.forward(sample.input);
  auto b = restored.forward(sample.input);
  REQUIRE(a.combined.maps.data() == b.combined.maps.data());

  // optimizer state restores too
  AdamW<double> opt(cfg, restored.named_params());
  restore_optimizer(ckpt, restored, opt);
  REQUIRE(opt.steps_taken() == result.optimizer.steps_taken());
  fs::remove(path);
}

TEST_CASE("corrupt and mismatched checkpoints are rejected") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "vremd_ckpt_corrupt.bin").string();
  ModelConfig mc = tiny_model_cfg();
  Model<double> model(mc, 19);
  save_checkpoint<double>(path, model);

  // truncation anywhere in the stream reads back as corrupt
  const auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  REQUIRE_THROWS_WITH(load_checkpoint<double>(path),
                      Catch::Matchers::ContainsSubstring("corrupt") ||
                          Catch::Matchers::ContainsSubstring("truncated"));

  {
    std::ofstream out(path, std::ios::binary);
    out << "VRMD0002xxxxxxxxxxxxxxxx";
  }
  REQUIRE_THROWS_WITH(load_checkpoint<double>(path),
                      Catch::Matchers::ContainsSubstring("version"));

  {
    std::ofstream out(path, std::ios::binary);
    out << "JUNKJUNKJUNK";
  }
  REQUIRE_THROWS_WITH(load_checkpoint<double>(path),
                      Catch::Matchers::ContainsSubstring("not a checkpoint"));
  fs::remove(path);
  REQUIRE_THROWS_AS(load_checkpoint<double>(path), std::runtime_error);
}

TEST_CASE("float32 models checkpoint with their own dtype tag") {
  namespace fs = std::filesystem;
  const std::string path =
      (fs::temp_directory_path() / "vremd_ckpt_f32.bin").string();
  ModelConfig mc = tiny_model_cfg();
  Model<float> model(mc, 21);
  save_checkpoint<float>(path, model);
  auto ckpt = load_checkpoint<float>(path);
  REQUIRE(ckpt.metadata.at("dtype") == "f32");
  auto restored = restore_model(ckpt);
  REQUIRE(restored.param_count() == model.param_count());
  REQUIRE_THROWS_WITH(load_checkpoint<double>(path),
                      Catch::Matchers::ContainsSubstring("dtype"));
  fs::remove(path);
}

TEST_CASE("gradient clipping caps the global norm") {
  T a = T::from_data({2}, {30.0, 40.0}, true);
  sum(mul(a, a)).backward();  // grad (60, 80), norm 100
  ParamList<double> params = {{"a", a}};
  clip_grad_norm(params, 1.0);
  const double norm = std::hypot(a.grad()[0], a.grad()[1]);
  REQUIRE(norm == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(a.grad()[0] / a.grad()[1] == Catch::Approx(60.0 / 80.0).margin(1e-12));
}
