#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "helpers.hpp"
#include "spinefuse/errors.hpp"
#include "spinefuse/rng.hpp"
#include "spinefuse/seqnet.hpp"

using namespace spinefuse;
using namespace spinefuse::testing;
namespace fs = std::filesystem;

namespace {

Conv3 single_channel_kernel(double w0, double w1, double w2) {
  Conv3 k;
  k.c_out = 1;
  k.c_in = 1;
  k.w = {w0, w1, w2};
  k.b = {0.0};
  return k;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("center-tap kernel is the identity at any dilation") {
  Rng rng(1);
  const Seq x = random_seq(1, 50, rng, -2.0, 2.0);
  for (int d : {1, 3, 16, 64, 200}) {
    const Seq y = dilated_conv1d(x, single_channel_kernel(0.0, 1.0, 0.0), d);
    REQUIRE(y.length == x.length);
    for (int t = 0; t < x.length; ++t) CHECK(y.at(0, t) == x.at(0, t));
  }
}

TEST_CASE("impulse response of [1,1,1] at dilation 4") {
  Seq x(1, 30);
  x.at(0, 10) = 1.0;
  const Seq y = dilated_conv1d(x, single_channel_kernel(1.0, 1.0, 1.0), 4);
  for (int t = 0; t < 30; ++t) {
    const double expect = (t == 6 || t == 10 || t == 14) ? 1.0 : 0.0;
    CHECK(y.at(0, t) == expect);
  }
}

TEST_CASE("dilated_conv1d matches a direct triple-loop oracle") {
  Rng rng(2);
  const int n = 32;
  const Seq x = random_seq(2, n, rng, -1.0, 1.0);
  Conv3 k;
  k.c_out = 3;
  k.c_in = 2;
  k.w.resize(3 * 2 * 3);
  k.b.resize(3);
  for (double& v : k.w) v = rng.uniform(-1.0, 1.0);
  for (double& v : k.b) v = rng.uniform(-1.0, 1.0);
  const int d = 2;
  const Seq y = dilated_conv1d(x, k, d);
  for (int o = 0; o < 3; ++o)
    for (int t = 0; t < n; ++t) {
      double acc = k.b[o];
      for (int ci = 0; ci < 2; ++ci)
        for (int i = -1; i <= 1; ++i) {
          const int s = t + d * i;
          if (s >= 0 && s < n)
            acc += k.w[(o * 2 + ci) * 3 + (i + 1)] * x.at(ci, s);
        }
      CHECK(std::abs(y.at(o, t) - acc) < 1e-12);
    }
}

TEST_CASE("dilated_conv1d rejects bad shapes") {
  Rng rng(3);
  const Seq x = random_seq(2, 10, rng);
  CHECK_THROWS_AS(dilated_conv1d(x, single_channel_kernel(1, 1, 1), 2), param_error);
  CHECK_THROWS_AS(dilated_conv1d(random_seq(1, 10, rng), single_channel_kernel(1, 1, 1), 0),
                  param_error);
}

TEST_CASE("all-zero stage yields uniform class probabilities") {
  ModelSpecs specs;  // fusion, 32 hidden, 9 layers
  Rng rng(4);
  FusionModel m = make_model(specs, rng);
  for (auto& view : tensor_views(m))
    std::fill(view.data, view.data + view.size, 0.0);
  const Seq x = random_seq(2, 40, rng);
  const StageOutput out = stage_forward(m.stages[0], x);
  for (int t = 0; t < 40; ++t)
    for (int c = 0; c < kNumClasses; ++c)
      CHECK(out.probs.at(c, t) == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
}

TEST_CASE("softmax columns sum to one and stay in (0,1)") {
  ModelSpecs specs;
  specs.hidden_channels = 8;
  specs.layers_per_stage = 4;
  Rng rng(5);
  const FusionModel m = make_model(specs, rng);
  const Seq x = random_seq(2, 64, rng);
  const StageOutput out = stage_forward(m.stages[0], x);
  for (int t = 0; t < 64; ++t) {
    double sum = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      const double p = out.probs.at(c, t);
      CHECK(p > 0.0);
      CHECK(p < 1.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("length preservation across awkward lengths") {
  ModelSpecs specs;
  specs.hidden_channels = 4;
  Rng rng(6);
  const FusionModel m = make_model(specs, rng);
  for (int n : {7, 100, 1023}) {
    const Seq x = random_seq(2, n, rng);
    const auto probs = model_forward(m, x);
    REQUIRE(probs.size() == 3);
    for (const Seq& p : probs) {
      CHECK(p.length == n);
      CHECK(p.channels == kNumClasses);
    }
  }
}

TEST_CASE("model_forward is deterministic and rejects wrong channel counts") {
  ModelSpecs specs;
  specs.hidden_channels = 6;
  specs.layers_per_stage = 3;
  Rng rng(7);
  const FusionModel m = make_model(specs, rng);
  const Seq x = random_seq(2, 55, rng);
  const auto a = model_forward(m, x);
  const auto b = model_forward(m, x);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].data == b[k].data);
  CHECK_THROWS_AS(model_forward(m, random_seq(1, 55, rng)), param_error);
}

TEST_CASE("pass-through refinement stages preserve the stage-1 argmax") {
  ModelSpecs specs;
  specs.hidden_channels = 8;
  specs.layers_per_stage = 3;
  Rng rng(8);
  FusionModel m = make_model(specs, rng);
  // stages 2 and 3: copy the 6 input probabilities into the first 6 hidden
  // channels, disable the residual layers, then blow the copies up into
  // dominant logits
  for (int k = 1; k < 3; ++k) {
    Stage& s = m.stages[k];
    std::fill(s.input_proj.w.begin(), s.input_proj.w.end(), 0.0);
    std::fill(s.input_proj.b.begin(), s.input_proj.b.end(), 0.0);
    for (int c = 0; c < kNumClasses; ++c) s.input_proj.w[c * s.input_proj.c_in + c] = 1.0;
    for (auto& layer : s.layers) {
      std::fill(layer.conv.w.begin(), layer.conv.w.end(), 0.0);
      std::fill(layer.conv.b.begin(), layer.conv.b.end(), 0.0);
      std::fill(layer.project.w.begin(), layer.project.w.end(), 0.0);
      std::fill(layer.project.b.begin(), layer.project.b.end(), 0.0);
    }
    std::fill(s.output_proj.w.begin(), s.output_proj.w.end(), 0.0);
    std::fill(s.output_proj.b.begin(), s.output_proj.b.end(), 0.0);
    for (int c = 0; c < kNumClasses; ++c) s.output_proj.w[c * s.output_proj.c_in + c] = 50.0;
  }
  const Seq x = random_seq(2, 80, rng);
  const auto probs = model_forward(m, x);
  for (int t = 0; t < 80; ++t) {
    auto argmax = [&](const Seq& p) {
      int best = 0;
      for (int c = 1; c < kNumClasses; ++c)
        if (p.at(c, t) > p.at(best, t)) best = c;
      return best;
    };
    CHECK(argmax(probs[2]) == argmax(probs[0]));
  }
}

// --- loss -----------------------------------------------------------------

TEST_CASE("one-hot correct probabilities give zero loss and zero gradients") {
  const int n = 25;
  LevelSegmentation target;
  target.labels.assign(n, 2);  // constant class, no transitions
  Seq probs(kNumClasses, n);
  for (int t = 0; t < n; ++t) probs.at(2, t) = 1.0;
  const LossResult res = seg_loss({probs, probs, probs}, target, LossSettings{});
  CHECK(std::abs(res.value) < 1e-6);
  for (const Seq& dz : res.dlogits)
    for (double g : dz.data) CHECK(std::abs(g) < 1e-9);
}

TEST_CASE("uniform probabilities cost ln 6 per stage") {
  const int n = 40;
  LevelSegmentation target;
  target.labels.assign(n, 0);
  Seq probs(kNumClasses, n);
  std::fill(probs.data.begin(), probs.data.end(), 1.0 / 6.0);
  const LossResult one = seg_loss({probs}, target, LossSettings{});
  CHECK(one.value == doctest::Approx(std::log(6.0)).epsilon(1e-9));
  const LossResult three = seg_loss({probs, probs, probs}, target, LossSettings{});
  CHECK(three.value == doctest::Approx(3.0 * std::log(6.0)).epsilon(1e-9));
  CHECK(three.last_stage_ce == doctest::Approx(std::log(6.0)).epsilon(1e-9));
}

TEST_CASE("loss gradients w.r.t. logits match finite differences") {
  Rng rng(9);
  const int n = 15;
  const LevelSegmentation target = random_labels(n, rng);
  const LossSettings ls{0.15, 4.0};
  std::vector<Seq> logits;
  for (int k = 0; k < 2; ++k) logits.push_back(random_seq(kNumClasses, n, rng, -1.5, 1.5));

  std::vector<Seq> probs;
  for (const Seq& z : logits) probs.push_back(softmax_columns(z));
  const LossResult res = seg_loss(probs, target, ls);
  // finite differences must respect the stop-gradient on the previous
  // position: freeze those log-probs at their base values
  const std::vector<Seq> base_logp = logp_of(probs);
  CHECK(frozen_prev_loss(probs, target, ls, base_logp) ==
        doctest::Approx(res.value).epsilon(1e-12));
  auto value_of = [&](const std::vector<Seq>& zs) {
    std::vector<Seq> perturbed;
    for (const Seq& z : zs) perturbed.push_back(softmax_columns(z));
    return frozen_prev_loss(perturbed, target, ls, base_logp);
  };

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    for (std::size_t i = 0; i < logits[k].data.size(); ++i) {
      auto zs = logits;
      zs[k].data[i] += h;
      const double lp = value_of(zs);
      zs[k].data[i] -= 2.0 * h;
      const double lm = value_of(zs);
      const double fd = (lp - lm) / (2.0 * h);
      const double a = res.dlogits[k].data[i];
      worst = std::max(worst, std::abs(a - fd) /
                                  std::max({std::abs(a), std::abs(fd), 1e-4}));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("loss rejects mismatched shapes") {
  LevelSegmentation target;
  target.labels.assign(10, 0);
  Seq probs(kNumClasses, 8);
  CHECK_THROWS_AS(seg_loss({probs}, target, LossSettings{}), param_error);
  LevelSegmentation empty;
  CHECK_THROWS_AS(seg_loss({Seq(kNumClasses, 0)}, empty, LossSettings{}), param_error);
}

// --- backward ---------------------------------------------------------------

TEST_CASE("a saturated correct model sits at a stationary point") {
  ModelSpecs specs;
  specs.modality = Modality::kUltrasound;
  specs.hidden_channels = 4;
  specs.layers_per_stage = 2;
  Rng rng(10);
  FusionModel m = make_model(specs, rng);
  for (auto& view : tensor_views(m))
    std::fill(view.data, view.data + view.size, 0.0);
  // every stage emits huge GAP logits -> probabilities are one-hot correct
  // for an all-GAP target
  for (auto& stage : m.stages) stage.output_proj.b[0] = 60.0;
  const int n = 30;
  Seq x = random_seq(1, n, rng);
  LevelSegmentation target;
  target.labels.assign(n, 0);
  BackwardResult res = backward(m, x, target, LossSettings{});
  CHECK(res.loss.value < 1e-6);
  auto views = tensor_views(res.grads);
  for (const auto& v : views)
    for (std::size_t i = 0; i < v.size; ++i) CHECK(std::abs(v.data[i]) < 1e-6);
}

TEST_CASE("parameter gradients match finite differences on tiny instances") {
  for (std::uint64_t seed : {0ull, 1ull, 2ull, 3ull, 4ull}) {
    TinyInstance inst = make_tiny_instance(seed);
    const GradCheckResult res =
        fd_gradcheck(inst.model, inst.input, inst.target, LossSettings{});
    CAPTURE(seed);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-4);
    CHECK(res.checked > 500);
  }
}

TEST_CASE("repeated backward calls return identical gradients (batch 1)") {
  TinyInstance inst = make_tiny_instance(7);
  BackwardResult a = backward(inst.model, inst.input, inst.target, LossSettings{});
  BackwardResult b = backward(inst.model, inst.input, inst.target, LossSettings{});
  ModelGrads& ga = a.grads;
  ModelGrads& gb = b.grads;
  const auto va = tensor_views(ga);
  const auto vb = tensor_views(gb);
  REQUIRE(va.size() == vb.size());
  for (std::size_t i = 0; i < va.size(); ++i)
    for (std::size_t j = 0; j < va[i].size; ++j)
      CHECK(va[i].data[j] == vb[i].data[j]);
}

// --- receptive field and equivariance ---------------------------------------

TEST_CASE("single-stage impulse support is exactly 1023 grid points") {
  ModelSpecs specs;
  specs.modality = Modality::kUltrasound;
  specs.hidden_channels = 8;
  specs.layers_per_stage = 9;  // dilations 1..256
  specs.num_stages = 1;
  Rng rng(11);
  const FusionModel m = make_model(specs, rng);
  const int n = 2200, t0 = 1100;
  const Seq zeros(1, n);
  Seq impulse = zeros;
  impulse.at(0, t0) = 1.0;
  const Seq base = stage_forward(m.stages[0], zeros).logits;
  const Seq hit = stage_forward(m.stages[0], impulse).logits;
  int lo = n, hi = -1;
  for (int t = 0; t < n; ++t) {
    bool changed = false;
    for (int c = 0; c < kNumClasses; ++c)
      if (base.at(c, t) != hit.at(c, t)) changed = true;
    if (changed) {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
  }
  CHECK(lo == t0 - 511);
  CHECK(hi == t0 + 511);
  CHECK(hi - lo + 1 == 1023);
}

TEST_CASE("translation equivariance away from the boundaries") {
  ModelSpecs specs;
  specs.modality = Modality::kUltrasound;
  specs.hidden_channels = 6;
  specs.layers_per_stage = 9;
  specs.num_stages = 1;
  Rng rng(12);
  const FusionModel m = make_model(specs, rng);
  const int n = 2400, shift = 17;
  Rng sig_rng(13);
  Seq x(1, n), xs(1, n);
  for (int t = 0; t < n; ++t) x.at(0, t) = sig_rng.uniform01();
  for (int t = 0; t < n; ++t)
    xs.at(0, t) = (t - shift >= 0 && t - shift < n) ? x.at(0, t - shift) : 0.0;
  const Seq y = stage_forward(m.stages[0], x).logits;
  const Seq ys = stage_forward(m.stages[0], xs).logits;
  const int margin = 1023 + shift;
  for (int t = margin; t < n - margin; ++t)
    for (int c = 0; c < kNumClasses; ++c)
      CHECK(ys.at(c, t + shift) == y.at(c, t));
}

// --- serialization -----------------------------------------------------------

TEST_CASE("model save/load round-trips bytes and behavior") {
  ModelSpecs specs;
  specs.hidden_channels = 5;
  specs.layers_per_stage = 3;
  Rng rng(14);
  FusionModel m = make_model(specs, rng);
  m.train_config_hash = 0xDEADBEEFCAFEF00Dull;

  const fs::path dir = fs::temp_directory_path() / "spinefuse_seqnet_test";
  fs::create_directories(dir);
  const fs::path p1 = dir / "m1.sfm", p2 = dir / "m2.sfm";
  save_model(m, p1);
  const FusionModel loaded = load_model(p1);
  save_model(loaded, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(loaded.train_config_hash == m.train_config_hash);
  CHECK(loaded.specs == m.specs);

  Rng in_rng(15);
  const Seq x = random_seq(2, 33, in_rng);
  const auto a = model_forward(m, x);
  const auto b = model_forward(loaded, x);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].data == b[k].data);
  fs::remove_all(dir);
}

TEST_CASE("loading a truncated or corrupt model file fails cleanly") {
  ModelSpecs specs;
  specs.hidden_channels = 4;
  specs.layers_per_stage = 2;
  Rng rng(16);
  FusionModel m = make_model(specs, rng);
  const fs::path dir = fs::temp_directory_path() / "spinefuse_seqnet_test2";
  fs::create_directories(dir);
  const fs::path p = dir / "m.sfm";
  save_model(m, p);

  const std::string bytes = slurp(p);
  const fs::path trunc = dir / "trunc.sfm";
  {
    std::ofstream out(trunc, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_model(trunc), data_error);

  const fs::path garbage = dir / "garbage.sfm";
  {
    std::ofstream out(garbage, std::ios::binary);
    out << "not a model";
  }
  CHECK_THROWS_AS(load_model(garbage), data_error);
  CHECK_THROWS_AS(load_model(dir / "missing.sfm"), data_error);
  fs::remove_all(dir);
}
