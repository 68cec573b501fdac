#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "spinefuse/dsp.hpp"
#include "spinefuse/errors.hpp"
#include "spinefuse/phantom.hpp"
#include "spinefuse/trainer.hpp"

using namespace spinefuse;
namespace fs = std::filesystem;

namespace {

UniformTrace trace_of(std::vector<double> v) {
  UniformTrace t;
  t.spacing_mm = 0.5;
  t.values = std::move(v);
  return t;
}

TrainSequence synthetic_sequence(std::uint64_t seed) {
  SpinePhantom p;
  p.robot_speed_mm_s = 12.0;
  p.vertebra_centers_mm = {18, 46, 74, 102, 130};
  p.seed = seed;
  const PreprocessedScan ps = preprocess_scan(generate_scan(p), 0.5);
  return TrainSequence{"seq" + std::to_string(seed), ps.force, ps.us, ps.labels};
}

TrainConfig tiny_config(Modality modality, int epochs) {
  TrainConfig cfg;
  cfg.modality = modality;
  cfg.epochs = epochs;
  cfg.hidden_channels = 8;
  cfg.layers_per_stage = 5;
  cfg.seed = 99;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("adam: zero gradients leave parameters untouched, counter advances") {
  TrainConfig cfg;
  Rng rng(1);
  FusionModel m = initial_model(cfg, 0.5);
  const FusionModel before = m;
  ModelGrads g = make_zero_grads(m);
  AdamState st = make_adam_state(m);
  adam_step(m, g, st, cfg);
  CHECK(st.step == 1);
  auto va = tensor_views(m);
  FusionModel& b = const_cast<FusionModel&>(before);
  auto vb = tensor_views(b);
  for (std::size_t i = 0; i < va.size(); ++i)
    for (std::size_t j = 0; j < va[i].size; ++j)
      CHECK(va[i].data[j] == vb[i].data[j]);
}

TEST_CASE("adam: first step with uniform gradient moves each weight by ~lr") {
  TrainConfig cfg;
  cfg.learning_rate = 0.0005;
  FusionModel m = initial_model(cfg, 0.5);
  const FusionModel before = m;
  ModelGrads g = make_zero_grads(m);
  for (auto& v : tensor_views(g)) std::fill(v.data, v.data + v.size, 0.37);
  AdamState st = make_adam_state(m);
  adam_step(m, g, st, cfg);
  auto va = tensor_views(m);
  FusionModel& b = const_cast<FusionModel&>(before);
  auto vb = tensor_views(b);
  for (std::size_t i = 0; i < va.size(); ++i)
    for (std::size_t j = 0; j < va[i].size; ++j) {
      const double step = vb[i].data[j] - va[i].data[j];  // moved against +grad
      CHECK(step == doctest::Approx(cfg.learning_rate).epsilon(1e-4));
    }
}

TEST_CASE("adam aborts on non-finite gradients") {
  TrainConfig cfg;
  FusionModel m = initial_model(cfg, 0.5);
  ModelGrads g = make_zero_grads(m);
  g.stages[0].input_proj.w[0] = std::nan("");
  AdamState st = make_adam_state(m);
  CHECK_THROWS_AS(adam_step(m, g, st, cfg), numeric_error);
}

TEST_CASE("make_input stacks traces by modality and checks the shared grid") {
  UniformTrace f = trace_of({0.1, 0.2, 0.3});
  UniformTrace u = trace_of({0.9, 0.8, 0.7});
  const Seq fused = make_input(Modality::kFusion, f, u);
  CHECK(fused.channels == 2);
  CHECK(fused.at(0, 1) == 0.2);
  CHECK(fused.at(1, 2) == 0.7);
  const Seq fo = make_input(Modality::kForce, f, UniformTrace{});
  CHECK(fo.channels == 1);
  const Seq uo = make_input(Modality::kUltrasound, UniformTrace{}, u);
  CHECK(uo.at(0, 0) == 0.9);

  UniformTrace off = u;
  off.origin_mm = 3.0;
  CHECK_THROWS_AS(make_input(Modality::kFusion, f, off), param_error);
  UniformTrace shorter = u;
  shorter.values.pop_back();
  CHECK_THROWS_AS(make_input(Modality::kFusion, f, shorter), param_error);
  CHECK_THROWS_AS(make_input(Modality::kForce, UniformTrace{}, u), param_error);
}

TEST_CASE("train with zero epochs returns the initialization") {
  const TrainConfig cfg = tiny_config(Modality::kFusion, 0);
  const std::vector<TrainSequence> data = {synthetic_sequence(5)};
  TrainResult res = train(data, {}, cfg, 0.5);
  CHECK(res.history.empty());
  FusionModel init = initial_model(cfg, 0.5);
  auto va = tensor_views(res.model);
  auto vb = tensor_views(init);
  for (std::size_t i = 0; i < va.size(); ++i)
    for (std::size_t j = 0; j < va[i].size; ++j)
      CHECK(va[i].data[j] == vb[i].data[j]);
}

TEST_CASE("train rejects empty splits and bad configs") {
  const TrainConfig cfg = tiny_config(Modality::kFusion, 1);
  CHECK_THROWS_AS(train({}, {}, cfg, 0.5), param_error);
  TrainConfig bad = cfg;
  bad.batch_size = 2;
  CHECK_THROWS_AS(train({synthetic_sequence(1)}, {}, bad, 0.5), param_error);
  TrainConfig bad2 = cfg;
  bad2.learning_rate = 0.0;
  CHECK_THROWS_AS(validate(bad2), param_error);
}

TEST_CASE("a fusion run learns a single clean sequence") {
  SpinePhantom p;
  p.robot_speed_mm_s = 12.0;
  p.vertebra_centers_mm = {18, 46, 74, 102, 130};
  p.label_halfwidth_mm = 9.0;
  p.noise_std_force_n = 0.0;
  p.us_noise_std = 0.0;
  p.drift.amplitude_n = 0.0;
  p.seed = 8;
  const PreprocessedScan ps = preprocess_scan(generate_scan(p), 0.5);
  const std::vector<TrainSequence> data = {{"s", ps.force, ps.us, ps.labels}};

  TrainConfig cfg;
  cfg.modality = Modality::kFusion;
  cfg.hidden_channels = 24;
  cfg.layers_per_stage = 7;
  cfg.epochs = 110;
  cfg.seed = 99;
  const double ce_before = dataset_cross_entropy(initial_model(cfg, 0.5), data);
  TrainResult res = train(data, {}, cfg, 0.5);
  const double ce_after = dataset_cross_entropy(res.model, data);
  CHECK(ce_after < 0.5 * ce_before);
  CHECK(res.history.size() == 110);
  CHECK(frame_accuracy(res.model, data) > 0.9);
  // checkpoint invariant: retained accuracy >= every logged epoch
  for (const auto& e : res.history) CHECK(res.best_val_acc >= e.val_frame_acc);
}

TEST_CASE("training is bit-deterministic given the seed") {
  const std::vector<TrainSequence> data = {synthetic_sequence(2), synthetic_sequence(3)};
  const std::vector<TrainSequence> val = {synthetic_sequence(4)};
  const TrainConfig cfg = tiny_config(Modality::kFusion, 4);
  TrainResult a = train(data, val, cfg, 0.5);
  TrainResult b = train(data, val, cfg, 0.5);
  const fs::path dir = fs::temp_directory_path() / "spinefuse_trainer_det";
  fs::create_directories(dir);
  save_model(a.model, dir / "a.sfm");
  save_model(b.model, dir / "b.sfm");
  CHECK(slurp(dir / "a.sfm") == slurp(dir / "b.sfm"));
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_loss == b.history[i].train_loss);
    CHECK(a.history[i].val_frame_acc == b.history[i].val_frame_acc);
  }
  fs::remove_all(dir);
}

TEST_CASE("predict: output length, probabilities, and GAP-first tie-breaking") {
  const TrainSequence s = synthetic_sequence(6);
  TrainConfig cfg = tiny_config(Modality::kFusion, 0);
  FusionModel m = initial_model(cfg, 0.5);
  // zero everything: uniform probabilities everywhere, all ties -> GAP
  for (auto& v : tensor_views(m)) std::fill(v.data, v.data + v.size, 0.0);
  const Prediction pred = predict(m, s.force, s.us);
  CHECK(pred.labels.size() == s.force.size());
  CHECK(pred.probs.length == static_cast<int>(s.force.size()));
  for (int label : pred.labels.labels) CHECK(label == 0);
}

TEST_CASE("prediction is invariant to a constant logit offset") {
  const TrainSequence s = synthetic_sequence(7);
  TrainConfig cfg = tiny_config(Modality::kFusion, 0);
  cfg.seed = 123;
  FusionModel m = initial_model(cfg, 0.5);
  const Prediction base = predict(m, s.force, s.us);
  FusionModel shifted = m;
  for (double& b : shifted.stages.back().output_proj.b) b += 7.5;
  const Prediction moved = predict(shifted, s.force, s.us);
  CHECK(base.labels.labels == moved.labels.labels);
}

TEST_CASE("train config hash distinguishes configs and is stable") {
  TrainConfig a;
  const std::uint64_t ha = train_config_hash(a);
  CHECK(ha == train_config_hash(a));
  TrainConfig b = a;
  b.learning_rate = 0.001;
  CHECK(train_config_hash(b) != ha);
}
