#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spinefuse/seqnet.hpp"
#include "spinefuse/types.hpp"

namespace spinefuse {

struct TrainConfig {
  double learning_rate = 0.0005;
  int epochs = 110;
  int batch_size = 1;  // the recipe is strictly batch 1
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda_smooth = 0.15;
  double tau = 4.0;
  std::uint64_t seed = 0;
  Modality modality = Modality::kFusion;
  int hidden_channels = 32;
  int layers_per_stage = 9;
  int num_stages = 3;
};

void validate(const TrainConfig& cfg);  // throws param_error

struct AdamState {
  std::vector<double> m;  // first moments, flat canonical tensor order
  std::vector<double> v;  // second moments
  long step = 0;
};

AdamState make_adam_state(const FusionModel& model);

// One Adam update with bias correction. Throws numeric_error on NaN/Inf
// gradients.
void adam_step(FusionModel& model, ModelGrads& grads, AdamState& state,
               const TrainConfig& cfg);

struct TrainSequence {
  std::string id;
  UniformTrace force;
  UniformTrace us;
  LevelSegmentation labels;
};

struct EpochStats {
  int epoch = 0;          // 1-based
  double train_loss = 0;  // mean total loss over the epoch's sequences
  double val_frame_acc = 0;
};

struct TrainResult {
  FusionModel model;  // best-validation checkpoint
  std::vector<EpochStats> history;
  int best_epoch = 0;
  double best_val_acc = 0.0;
};

// Stacks the modality's traces into the network input. Fusion places force
// on channel 0 and ultrasound on channel 1; single-modality models take just
// their own trace (the other may be empty). Shared-grid mismatch between two
// non-empty traces is a param_error.
Seq make_input(Modality modality, const UniformTrace& force,
               const UniformTrace& us);

// The model initialization train() starts from (exposed so "epochs = 0
// returns the initialization" is checkable).
FusionModel initial_model(const TrainConfig& cfg, double grid_spacing_mm);

// Per-epoch seeded reshuffle, one Adam step per sequence, history of train
// loss and pooled validation frame accuracy, best-validation checkpoint
// retained. With an empty validation split the training split is scored
// instead.
TrainResult train(const std::vector<TrainSequence>& train_set,
                  const std::vector<TrainSequence>& val_set,
                  const TrainConfig& cfg, double grid_spacing_mm);

struct Prediction {
  LevelSegmentation labels;
  Seq probs;  // final-stage class probabilities
};

// Argmax over final-stage probabilities, ties broken toward the lower class
// index (GAP first).
Prediction predict(const FusionModel& model, const UniformTrace& force,
                   const UniformTrace& us);

// Fraction of positions where the prediction matches, pooled over sequences.
double frame_accuracy(const FusionModel& model,
                      const std::vector<TrainSequence>& set);

// Final-stage cross-entropy (no smoothing term), mean over positions,
// pooled over sequences.
double dataset_cross_entropy(const FusionModel& model,
                             const std::vector<TrainSequence>& set);

std::uint64_t train_config_hash(const TrainConfig& cfg);

}  // namespace spinefuse
