#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "spinefuse/dataset.hpp"
#include "spinefuse/eval.hpp"
#include "spinefuse/phantom.hpp"
#include "spinefuse/trainer.hpp"

namespace spinefuse {

// Randomized corruption applied to training/validation sequences; each
// sequence draws at most one of the two signal corruptions.
struct TrainCorruption {
  double p_us_drop = 0.2;
  double p_force_attenuation = 0.2;
  double p_motion_burst = 0.1;
  std::array<double, 2> force_gain_range = {0.1, 0.3};
};

// Declarative cohort: counts per split plus per-subject parameter ranges.
struct CohortConfig {
  int n_train = 27;
  int n_val = 7;
  int n_test = 5;
  double scan_length_mm = 150.0;
  // 12 mm/s (a Dataset-2 speed): slow enough that the 0.3 Hz smoothing
  // leaves distinct per-vertebra structure in the force trace
  double robot_speed_mm_s = 12.0;
  double sample_rate_hz = 30.0;
  std::vector<double> applied_fz_choices_n = {10.0, 15.0};
  std::array<double, 2> bump_amplitude_range_mm = {1.0, 3.0};
  std::array<double, 2> bump_sigma_range_mm = {3.0, 6.0};
  // last center stays <= ~136 mm so the trailing force lobe is not clipped
  std::array<double, 2> first_center_range_mm = {16.0, 20.0};
  std::array<double, 2> center_spacing_range_mm = {25.0, 29.0};
  std::array<double, 2> us_peak_height_range = {0.6, 0.95};
  std::array<double, 2> us_peak_sigma_range_mm = {2.0, 4.0};
  std::array<double, 2> us_noise_std_range = {0.02, 0.05};
  std::array<double, 2> force_noise_std_range_n = {0.03, 0.1};
  std::array<double, 2> drift_amplitude_range_n = {0.5, 2.0};
  std::array<double, 2> drift_frequency_range_hz = {0.01, 0.03};
  double label_halfwidth_mm = 5.0;
  TrainCorruption train_corruption;
  // "clean": pristine test split. "mixed": every test sequence is corrupted,
  // alternating between dropped ultrasound peaks and attenuated force bumps.
  std::string test_corruption = "clean";
};

struct EvalConfig {
  std::string split = "test";
  std::string overlap = "iou";  // iou | recall
  double min_overlap = 0.5;
  double replay_hz = 0.0;  // > 0: stream raw samples at this rate first
};

struct RunConfig {
  std::uint64_t seed = 1234;
  double grid_spacing_mm = 0.5;
  CohortConfig cohort;
  TrainConfig train;
  EvalConfig eval;
};

RunConfig default_config();

nlohmann::json config_to_json(const RunConfig& cfg);
// Unknown keys are rejected (throws param_error), missing keys keep defaults.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);  // throws data_error

// `--set a.b.c=value` style override on the JSON document; the value is
// parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Deterministic cohort: phantoms plus split assignment, derived entirely
// from the config and seed.
std::vector<std::pair<SpinePhantom, Split>> build_cohort(const CohortConfig& c,
                                                         std::uint64_t seed);

}  // namespace spinefuse
