#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "spinefuse/types.hpp"

namespace spinefuse {

struct DriftParams {
  double amplitude_n = 0.0;
  double frequency_hz = 0.02;  // must stay below the 0.05 Hz removal cutoff
};

// Gaussian-shaped force transient from a sudden subject movement.
struct MotionBurst {
  double position_mm = 0.0;
  double width_mm = 1.0;
  double amplitude_n = 0.0;
};

struct CorruptionSpec {
  // Level indices (0 = L5 .. 4 = L1) whose ultrasound peak is removed,
  // simulating scarce visibility of the spinous process.
  std::vector<int> dropped_us_levels;
  // Per-level gain in [0,1] on the force bump, simulating muscular subjects.
  std::map<int, double> attenuated_force_levels;
  std::optional<MotionBurst> motion_burst;
};

// Geometric and physical description of one synthetic back plus the scan
// settings used to sweep it.
struct SpinePhantom {
  double scan_length_mm = 150.0;
  std::array<double, kNumLevels> vertebra_centers_mm = {20, 50, 80, 110, 140};
  std::array<double, kNumLevels> bump_amplitude_mm = {2, 2, 2, 2, 2};
  std::array<double, kNumLevels> bump_sigma_mm = {3, 3, 3, 3, 3};
  double applied_fz_n = 10.0;
  double robot_speed_mm_s = 20.0;
  double sample_rate_hz = 30.0;
  DriftParams drift;
  double noise_std_force_n = 0.05;
  std::array<double, kNumLevels> us_peak_height = {0.85, 0.85, 0.85, 0.85, 0.85};
  std::array<double, kNumLevels> us_peak_sigma_mm = {3, 3, 3, 3, 3};
  double us_noise_std = 0.02;
  double label_halfwidth_mm = 5.0;
  CorruptionSpec corruption;
  std::uint64_t seed = 0;
};

// Throws param_error on invariant violations (centers not strictly
// increasing or out of range, non-positive sigmas/rates, drift frequency at
// or above the removal cutoff, corruption gains outside [0,1], ...).
void validate(const SpinePhantom& p);

// Tissue height h(y) = sum_k A_k exp(-(y - mu_k)^2 / (2 sigma_k^2)).
// Deterministic and noise-free; y outside [0, scan_length] is a domain error.
double tissue_profile(const SpinePhantom& p, double y_mm);

// Small-angle reaction force Fy(y) = -Fz * dh/dy(y), before attenuation,
// noise and drift. Zero at each bump apex, extremal at mu_k +/- sigma_k.
double reaction_fy(const SpinePhantom& p, double y_mm);

// Time-indexed raw samples from one sweep.
struct ScanRecord {
  std::vector<double> timestamps_s;
  std::vector<double> positions_mm;  // robot_speed * t, monotone
  std::vector<double> fy_n;
  std::vector<double> fz_n;
  std::vector<double> us_prob;
  LevelSegmentation ground_truth;  // one label per sample

  std::size_t size() const { return timestamps_s.size(); }
};

// Samples at sample_rate while the probe advances at robot_speed. Fully
// deterministic given the phantom seed.
ScanRecord generate_scan(const SpinePhantom& p);

}  // namespace spinefuse
