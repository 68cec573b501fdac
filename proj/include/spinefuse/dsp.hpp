#pragma once

#include <complex>
#include <string>
#include <vector>

#include "spinefuse/phantom.hpp"
#include "spinefuse/types.hpp"

namespace spinefuse {

// Cutoffs of the two conditioning filters.
inline constexpr double kDriftCutoffHz = 0.05;
inline constexpr double kSmoothCutoffHz = 0.3;

// Biquad z-domain coefficients, a0 normalized to 1.
struct BiquadCoeffs {
  double b0 = 0, b1 = 0, b2 = 0;
  double a1 = 0, a2 = 0;
};

// Analog Butterworth prototype + bilinear transform with frequency
// prewarping: DC gain exactly 1, magnitude exactly 1/sqrt(2) at the cutoff.
// Only order 2 is supported.
BiquadCoeffs design_butterworth_lp(int order, double cutoff_hz,
                                   double sample_rate_hz);

// H(e^{j 2 pi f / fs}).
std::complex<double> biquad_response(const BiquadCoeffs& c, double freq_hz,
                                     double sample_rate_hz);

// Maximum pole modulus (stability requires < 1).
double pole_radius(const BiquadCoeffs& c);

std::string coeffs_to_json(const BiquadCoeffs& c);

// Zero-phase filtering: odd-symmetric edge extension, forward pass, reverse,
// forward pass again, reverse. Output length equals input length. Inputs
// shorter than 13 samples are rejected.
std::vector<double> filtfilt(const BiquadCoeffs& c,
                             const std::vector<double>& x);

// x minus its 0.05 Hz low-passed copy.
std::vector<double> remove_drift(const std::vector<double>& x,
                                 double sample_rate_hz);

// Zero-phase 0.3 Hz low-pass, applied identically to force and ultrasound.
std::vector<double> smooth(const std::vector<double>& x,
                           double sample_rate_hz);

// (x - min) / (max - min); a flat signal maps to all zeros.
std::vector<double> normalize01(const std::vector<double>& x);

// Linear interpolation onto origin = positions[0], step = spacing, last
// point <= positions.back(). Duplicate positions are collapsed by averaging.
UniformTrace resample_to_grid(const std::vector<double>& positions_mm,
                              const std::vector<double>& values,
                              double spacing_mm);

struct PreprocessedScan {
  UniformTrace force;
  UniformTrace us;
  LevelSegmentation labels;  // nearest-neighbor regrid of the ground truth
};

// Force chain: remove_drift -> smooth -> normalize01 -> resample.
// Ultrasound chain: smooth -> normalize01 -> resample. Both traces share
// one grid; labels are regridded by nearest neighbor onto it.
PreprocessedScan preprocess_scan(const ScanRecord& record, double spacing_mm);

}  // namespace spinefuse
