#include "spinefuse/phantom.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "spinefuse/errors.hpp"
#include "spinefuse/rng.hpp"

namespace spinefuse {

namespace {

constexpr double kDriftCutoffHz = 0.05;

double gauss(double y, double mu, double sigma) {
  const double z = (y - mu) / sigma;
  return std::exp(-0.5 * z * z);
}

void check_domain(const SpinePhantom& p, double y_mm) {
  if (y_mm < 0.0 || y_mm > p.scan_length_mm)
    throw std::domain_error("position " + std::to_string(y_mm) +
                            " mm outside scan [0, " +
                            std::to_string(p.scan_length_mm) + "]");
}

double force_gain(const SpinePhantom& p, int level) {
  const auto it = p.corruption.attenuated_force_levels.find(level);
  return it == p.corruption.attenuated_force_levels.end() ? 1.0 : it->second;
}

// Fy with per-level attenuation applied to each bump's contribution.
double corrupted_fy(const SpinePhantom& p, double y) {
  double slope = 0.0;
  for (int k = 0; k < kNumLevels; ++k) {
    const double mu = p.vertebra_centers_mm[k];
    const double sig = p.bump_sigma_mm[k];
    slope += force_gain(p, k) * p.bump_amplitude_mm[k] *
             (-(y - mu) / (sig * sig)) * gauss(y, mu, sig);
  }
  return -p.applied_fz_n * slope;
}

bool us_dropped(const SpinePhantom& p, int level) {
  for (int d : p.corruption.dropped_us_levels)
    if (d == level) return true;
  return false;
}

}  // namespace

void validate(const SpinePhantom& p) {
  auto fail = [](const std::string& why) { throw param_error("phantom: " + why); };
  if (!(p.scan_length_mm > 0.0)) fail("scan_length must be > 0");
  if (!(p.sample_rate_hz > 0.0)) fail("sample_rate must be > 0");
  if (!(p.robot_speed_mm_s > 0.0)) fail("robot_speed must be > 0");
  for (int k = 0; k < kNumLevels; ++k) {
    if (!(p.vertebra_centers_mm[k] > 0.0) ||
        !(p.vertebra_centers_mm[k] < p.scan_length_mm))
      fail("vertebra center " + std::to_string(k) + " outside (0, scan_length)");
    if (k > 0 && !(p.vertebra_centers_mm[k] > p.vertebra_centers_mm[k - 1]))
      fail("vertebra centers must be strictly increasing");
    if (!(p.bump_sigma_mm[k] > 0.0)) fail("bump_sigma must be > 0");
    if (!(p.us_peak_sigma_mm[k] > 0.0)) fail("us_peak_sigma must be > 0");
    if (p.us_peak_height[k] < 0.0 || p.us_peak_height[k] > 1.0)
      fail("us_peak_height must be in [0,1]");
  }
  if (!(p.drift.frequency_hz < kDriftCutoffHz))
    fail("drift frequency must stay below the 0.05 Hz removal cutoff");
  if (p.noise_std_force_n < 0.0 || p.us_noise_std < 0.0) fail("noise std must be >= 0");
  if (!(p.label_halfwidth_mm > 0.0)) fail("label_halfwidth must be > 0");
  for (int d : p.corruption.dropped_us_levels)
    if (d < 0 || d >= kNumLevels) fail("dropped_us_levels index out of range");
  for (const auto& [level, gain] : p.corruption.attenuated_force_levels) {
    if (level < 0 || level >= kNumLevels) fail("attenuated_force_levels index out of range");
    if (gain < 0.0 || gain > 1.0) fail("attenuation gain must be in [0,1]");
  }
  if (p.corruption.motion_burst && !(p.corruption.motion_burst->width_mm > 0.0))
    fail("motion burst width must be > 0");
}

double tissue_profile(const SpinePhantom& p, double y_mm) {
  check_domain(p, y_mm);
  double h = 0.0;
  for (int k = 0; k < kNumLevels; ++k)
    h += p.bump_amplitude_mm[k] * gauss(y_mm, p.vertebra_centers_mm[k], p.bump_sigma_mm[k]);
  return h;
}

double reaction_fy(const SpinePhantom& p, double y_mm) {
  check_domain(p, y_mm);
  double slope = 0.0;
  for (int k = 0; k < kNumLevels; ++k) {
    const double mu = p.vertebra_centers_mm[k];
    const double sig = p.bump_sigma_mm[k];
    slope += p.bump_amplitude_mm[k] * (-(y_mm - mu) / (sig * sig)) * gauss(y_mm, mu, sig);
  }
  return -p.applied_fz_n * slope;
}

ScanRecord generate_scan(const SpinePhantom& p) {
  validate(p);
  const Rng root(p.seed);
  Rng fy_noise = root.fork(1);
  Rng fz_noise = root.fork(2);
  Rng us_noise = root.fork(3);

  const double duration_s = p.scan_length_mm / p.robot_speed_mm_s;
  const std::size_t count =
      static_cast<std::size_t>(std::floor(duration_s * p.sample_rate_hz + 1e-9)) + 1;

  ScanRecord r;
  r.timestamps_s.resize(count);
  r.positions_mm.resize(count);
  r.fy_n.resize(count);
  r.fz_n.resize(count);
  r.us_prob.resize(count);
  r.ground_truth.labels.resize(count);

  const auto& burst = p.corruption.motion_burst;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / p.sample_rate_hz;
    const double y = p.robot_speed_mm_s * t;
    r.timestamps_s[i] = t;
    r.positions_mm[i] = y;

    double fy = corrupted_fy(p, y);
    fy += p.drift.amplitude_n *
          (std::sin(2.0 * std::numbers::pi * p.drift.frequency_hz * t) +
           (t / duration_s - 0.5));  // sub-cutoff sinusoid plus a linear ramp
    fy += p.noise_std_force_n * fy_noise.gaussian();
    if (burst) fy += burst->amplitude_n * gauss(y, burst->position_mm, burst->width_mm);
    r.fy_n[i] = fy;

    r.fz_n[i] = p.applied_fz_n + p.noise_std_force_n * fz_noise.gaussian();

    double us = 0.0;
    for (int k = 0; k < kNumLevels; ++k) {
      if (us_dropped(p, k)) continue;
      us += p.us_peak_height[k] * gauss(y, p.vertebra_centers_mm[k], p.us_peak_sigma_mm[k]);
    }
    us += p.us_noise_std * us_noise.gaussian();
    r.us_prob[i] = std::clamp(us, 0.0, 1.0);

    int label = 0;
    double best = p.label_halfwidth_mm;
    for (int k = 0; k < kNumLevels; ++k) {
      const double d = std::abs(y - p.vertebra_centers_mm[k]);
      if (d <= best) {
        best = d;
        label = k + 1;  // class ids: 1 = L5 .. 5 = L1
      }
    }
    r.ground_truth.labels[i] = label;
  }
  return r;
}

}  // namespace spinefuse
