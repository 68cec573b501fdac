#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "spinefuse/rng.hpp"
#include "spinefuse/types.hpp"

namespace spinefuse {

// Channel-major 1D sequence: channel c occupies data[c*length .. (c+1)*length).
struct Seq {
  int channels = 0;
  int length = 0;
  std::vector<double> data;

  Seq() = default;
  Seq(int c, int n)
      : channels(c), length(n), data(static_cast<std::size_t>(c) * n, 0.0) {}

  double* row(int c) { return data.data() + static_cast<std::size_t>(c) * length; }
  const double* row(int c) const {
    return data.data() + static_cast<std::size_t>(c) * length;
  }
  double& at(int c, int t) { return data[static_cast<std::size_t>(c) * length + t]; }
  double at(int c, int t) const {
    return data[static_cast<std::size_t>(c) * length + t];
  }
};

// Kernel-size-3 convolution weights, w[(o*c_in + ci)*3 + i].
struct Conv3 {
  int c_out = 0, c_in = 0;
  std::vector<double> w;
  std::vector<double> b;
};

// 1x1 convolution weights, w[o*c_in + ci].
struct Pointwise {
  int c_out = 0, c_in = 0;
  std::vector<double> w;
  std::vector<double> b;
};

// One residual block: dilated conv -> ReLU -> 1x1 conv -> add input.
struct DilatedLayer {
  int dilation = 1;
  Conv3 conv;
  Pointwise project;
};

// One refinement stage: 1x1 input projection, a stack of dilated residual
// layers with dilation 2^l, and a 1x1 projection to class logits.
struct Stage {
  Pointwise input_proj;
  std::vector<DilatedLayer> layers;
  Pointwise output_proj;
};

struct ModelSpecs {
  Modality modality = Modality::kFusion;
  int hidden_channels = 32;
  int layers_per_stage = 9;
  int num_stages = 3;
  int num_classes = kNumClasses;
  double grid_spacing_mm = 0.5;
};

bool operator==(const ModelSpecs& a, const ModelSpecs& b);

struct FusionModel {
  ModelSpecs specs;
  std::vector<std::string> class_names;  // size num_classes
  std::uint64_t train_config_hash = 0;
  std::vector<Stage> stages;
};

// Kaiming-uniform fan-in init for conv weights, zero biases.
FusionModel make_model(const ModelSpecs& specs, Rng& rng);

std::size_t param_count(const FusionModel& m);

// Flat views over all parameter tensors in canonical (serialization) order:
// per stage, input_proj {w,b}, per layer conv {w,b} then project {w,b},
// output_proj {w,b}.
struct TensorView {
  double* data;
  std::size_t size;
};
std::vector<TensorView> tensor_views(FusionModel& m);

// Gradient holder mirroring the model's tensor shapes.
struct ModelGrads {
  std::vector<Stage> stages;
};
ModelGrads make_zero_grads(const FusionModel& m);
std::vector<TensorView> tensor_views(ModelGrads& g);

// --- forward -----------------------------------------------------------

// y[c_out, t] = b[c_out] + sum_{c_in, i} k[c_out,c_in,i] * x[c_in, t + d*(i-1)]
// Zero padding outside [0, N); output length equals input length.
Seq dilated_conv1d(const Seq& input, const Conv3& kernel, int dilation);

// Per-position softmax over channels.
Seq softmax_columns(const Seq& logits);

struct StageTrace {
  Seq input;
  Seq hidden0;  // after input_proj
  struct LayerTrace {
    Seq pre_relu;  // dilated conv output
    Seq relu;
    Seq out;  // residual sum, next layer's input
  };
  std::vector<LayerTrace> layers;
  Seq logits;
  Seq probs;
};

struct StageOutput {
  Seq logits;
  Seq probs;
};

StageOutput stage_forward(const Stage& stage, const Seq& input,
                          StageTrace* trace = nullptr);

struct ForwardTrace {
  std::vector<StageTrace> stages;
};

// Stage 1 consumes the input traces; stages 2..K consume the previous
// stage's softmax probabilities. Returns all stages' probs.
std::vector<Seq> model_forward(const FusionModel& m, const Seq& input,
                               ForwardTrace* trace = nullptr);

// --- loss ----------------------------------------------------------------

struct LossSettings {
  double lambda_smooth = 0.15;
  double tau = 4.0;
};

// Floor applied inside every log(prob): log(max(p, kLogProbFloor)).
inline constexpr double kLogProbFloor = 1e-8;

struct LossResult {
  double value = 0.0;            // summed over stages: CE + lambda * T-MSE
  double last_stage_ce = 0.0;    // plain cross-entropy of the final stage
  std::vector<Seq> dlogits;      // same shapes as the per-stage logits
};

// Cross-entropy plus truncated smoothing penalty on consecutive
// log-probabilities (previous position treated as constant). Gradients are
// returned with respect to the per-stage logits that produced `probs`.
LossResult seg_loss(const std::vector<Seq>& per_stage_probs,
                    const LevelSegmentation& target, const LossSettings& ls);

// --- backward --------------------------------------------------------------

struct BackwardResult {
  LossResult loss;
  ModelGrads grads;
};

// Exact reverse-mode gradients of seg_loss w.r.t. every weight and bias,
// including the coupling of stage k's input into stage k-1's softmax.
BackwardResult backward(const FusionModel& m, const Seq& input,
                        const LevelSegmentation& target,
                        const LossSettings& ls);

// --- serialization ---------------------------------------------------------

// File layout: 8-byte magic "SPNFMDL1", uint32 little-endian header length,
// JSON header (architecture + metadata), then param_count little-endian
// IEEE-754 doubles in canonical tensor order.
void save_model(const FusionModel& m, const std::filesystem::path& path);
FusionModel load_model(const std::filesystem::path& path);  // throws data_error

}  // namespace spinefuse
