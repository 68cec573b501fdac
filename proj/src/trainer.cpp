#include "spinefuse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"
#include "spinefuse/errors.hpp"
#include "spinefuse/rng.hpp"

namespace spinefuse {

namespace {

// rng fork tags
constexpr std::uint64_t kInitStream = 101;
constexpr std::uint64_t kShuffleStream = 202;

LossSettings loss_settings(const TrainConfig& cfg) {
  return LossSettings{cfg.lambda_smooth, cfg.tau};
}

void check_sequence(const TrainSequence& s, Modality modality) {
  const UniformTrace& primary = modality == Modality::kUltrasound ? s.us : s.force;
  if (primary.size() == 0)
    throw param_error("sequence '" + s.id + "': missing trace for modality");
  if (s.labels.size() != primary.size())
    throw param_error("sequence '" + s.id + "': trace length " +
                      std::to_string(primary.size()) + " != labels length " +
                      std::to_string(s.labels.size()));
}

}  // namespace

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& why) {
    throw param_error("train config: " + why);
  };
  if (!(cfg.learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (cfg.epochs < 0) fail("epochs must be >= 0");
  if (cfg.batch_size != 1) fail("batch_size must be 1");
  if (!(cfg.adam_beta1 > 0.0 && cfg.adam_beta1 < 1.0)) fail("adam_beta1 in (0,1)");
  if (!(cfg.adam_beta2 > 0.0 && cfg.adam_beta2 < 1.0)) fail("adam_beta2 in (0,1)");
  if (!(cfg.adam_eps > 0.0)) fail("adam_eps must be > 0");
  if (cfg.lambda_smooth < 0.0) fail("lambda_smooth must be >= 0");
  if (!(cfg.tau > 0.0)) fail("tau must be > 0");
  if (cfg.hidden_channels < 1 || cfg.layers_per_stage < 1 || cfg.num_stages < 1)
    fail("architecture sizes must be >= 1");
}

AdamState make_adam_state(const FusionModel& model) {
  AdamState st;
  st.m.assign(param_count(model), 0.0);
  st.v.assign(param_count(model), 0.0);
  return st;
}

void adam_step(FusionModel& model, ModelGrads& grads, AdamState& state,
               const TrainConfig& cfg) {
  const auto params = tensor_views(model);
  const auto gviews = tensor_views(grads);
  if (params.size() != gviews.size())
    throw param_error("adam_step: grads do not match model");

  state.step += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  std::size_t off = 0;
  for (std::size_t tv = 0; tv < params.size(); ++tv) {
    if (params[tv].size != gviews[tv].size)
      throw param_error("adam_step: tensor shape mismatch");
    double* p = params[tv].data;
    const double* g = gviews[tv].data;
    for (std::size_t i = 0; i < params[tv].size; ++i, ++off) {
      const double gi = g[i];
      if (!std::isfinite(gi))
        throw numeric_error("adam_step: non-finite gradient at parameter " +
                            std::to_string(off));
      state.m[off] = b1 * state.m[off] + (1.0 - b1) * gi;
      state.v[off] = b2 * state.v[off] + (1.0 - b2) * gi * gi;
      const double mhat = state.m[off] / bc1;
      const double vhat = state.v[off] / bc2;
      p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

Seq make_input(Modality modality, const UniformTrace& force,
               const UniformTrace& us) {
  if (force.size() > 0 && us.size() > 0) {
    if (force.size() != us.size() || force.spacing_mm != us.spacing_mm ||
        force.origin_mm != us.origin_mm)
      throw param_error("make_input: force and us traces not on a shared grid");
  }
  switch (modality) {
    case Modality::kForce: {
      if (force.size() == 0) throw param_error("make_input: force trace empty");
      Seq in(1, static_cast<int>(force.size()));
      std::copy(force.values.begin(), force.values.end(), in.row(0));
      return in;
    }
    case Modality::kUltrasound: {
      if (us.size() == 0) throw param_error("make_input: us trace empty");
      Seq in(1, static_cast<int>(us.size()));
      std::copy(us.values.begin(), us.values.end(), in.row(0));
      return in;
    }
    case Modality::kFusion: {
      if (force.size() == 0 || us.size() == 0)
        throw param_error("make_input: fusion needs both traces");
      Seq in(2, static_cast<int>(force.size()));
      std::copy(force.values.begin(), force.values.end(), in.row(0));
      std::copy(us.values.begin(), us.values.end(), in.row(1));
      return in;
    }
  }
  throw param_error("make_input: bad modality");
}

FusionModel initial_model(const TrainConfig& cfg, double grid_spacing_mm) {
  ModelSpecs specs;
  specs.modality = cfg.modality;
  specs.hidden_channels = cfg.hidden_channels;
  specs.layers_per_stage = cfg.layers_per_stage;
  specs.num_stages = cfg.num_stages;
  specs.grid_spacing_mm = grid_spacing_mm;
  Rng init = Rng(cfg.seed).fork(kInitStream);
  FusionModel m = make_model(specs, init);
  m.train_config_hash = train_config_hash(cfg);
  return m;
}

double frame_accuracy(const FusionModel& model,
                      const std::vector<TrainSequence>& set) {
  std::size_t correct = 0, total = 0;
  for (const auto& s : set) {
    const Prediction pred = predict(model, s.force, s.us);
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      correct += pred.labels.labels[i] == s.labels.labels[i] ? 1u : 0u;
    }
    total += s.labels.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

double dataset_cross_entropy(const FusionModel& model,
                             const std::vector<TrainSequence>& set) {
  double ce_sum = 0.0;
  std::size_t total = 0;
  for (const auto& s : set) {
    const Seq input = make_input(model.specs.modality, s.force, s.us);
    const std::vector<Seq> probs = model_forward(model, input);
    const Seq& last = probs.back();
    for (std::size_t t = 0; t < s.labels.size(); ++t) {
      const double p = last.at(s.labels.labels[t], static_cast<int>(t));
      ce_sum += -std::log(std::max(p, kLogProbFloor));
    }
    total += s.labels.size();
  }
  return total == 0 ? 0.0 : ce_sum / static_cast<double>(total);
}

TrainResult train(const std::vector<TrainSequence>& train_set,
                  const std::vector<TrainSequence>& val_set,
                  const TrainConfig& cfg, double grid_spacing_mm) {
  validate(cfg);
  if (train_set.empty()) throw param_error("train: empty training split");
  for (const auto& s : train_set) check_sequence(s, cfg.modality);
  for (const auto& s : val_set) check_sequence(s, cfg.modality);

  TrainResult res;
  res.model = initial_model(cfg, grid_spacing_mm);
  FusionModel current = res.model;
  AdamState adam = make_adam_state(current);
  Rng shuffle_rng = Rng(cfg.seed).fork(kShuffleStream);
  const LossSettings ls = loss_settings(cfg);
  const std::vector<TrainSequence>& score_set =
      val_set.empty() ? train_set : val_set;

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  res.best_val_acc = -1.0;
  res.best_epoch = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    for (const std::size_t idx : order) {
      const TrainSequence& s = train_set[idx];
      const Seq input = make_input(cfg.modality, s.force, s.us);
      BackwardResult back = backward(current, input, s.labels, ls);
      if (!std::isfinite(back.loss.value))
        throw numeric_error("train: non-finite loss at epoch " +
                            std::to_string(epoch) + ", sequence '" + s.id + "'");
      adam_step(current, back.grads, adam, cfg);
      loss_sum += back.loss.value;
    }
    const double val_acc = frame_accuracy(current, score_set);
    res.history.push_back(
        {epoch, loss_sum / static_cast<double>(train_set.size()), val_acc});
    if (val_acc > res.best_val_acc) {
      res.best_val_acc = val_acc;
      res.best_epoch = epoch;
      res.model = current;
    }
  }
  if (cfg.epochs == 0) {
    res.best_val_acc = frame_accuracy(res.model, score_set);
  }
  return res;
}

Prediction predict(const FusionModel& model, const UniformTrace& force,
                   const UniformTrace& us) {
  const Seq input = make_input(model.specs.modality, force, us);
  std::vector<Seq> probs = model_forward(model, input);
  Prediction out;
  out.probs = std::move(probs.back());
  out.labels.labels.resize(out.probs.length);
  for (int t = 0; t < out.probs.length; ++t) {
    int best = 0;
    double best_p = out.probs.at(0, t);
    for (int c = 1; c < out.probs.channels; ++c) {
      if (out.probs.at(c, t) > best_p) {  // strict: ties keep the lower index
        best_p = out.probs.at(c, t);
        best = c;
      }
    }
    out.labels.labels[t] = best;
  }
  return out;
}

std::uint64_t train_config_hash(const TrainConfig& cfg) {
  const nlohmann::json j{{"learning_rate", cfg.learning_rate},
                         {"epochs", cfg.epochs},
                         {"batch_size", cfg.batch_size},
                         {"adam_beta1", cfg.adam_beta1},
                         {"adam_beta2", cfg.adam_beta2},
                         {"adam_eps", cfg.adam_eps},
                         {"lambda_smooth", cfg.lambda_smooth},
                         {"tau", cfg.tau},
                         {"seed", cfg.seed},
                         {"modality", to_string(cfg.modality)},
                         {"hidden_channels", cfg.hidden_channels},
                         {"layers_per_stage", cfg.layers_per_stage},
                         {"num_stages", cfg.num_stages}};
  const std::string s = j.dump();
  // FNV-1a
  std::uint64_t h = 14695981039346656037ull;
  for (const char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace spinefuse
