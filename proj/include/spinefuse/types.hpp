#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace spinefuse {

// Class layout: 0 = GAP (no vertebra), then the five lumbar levels walking
// up the spine, L5 first.
inline constexpr int kNumLevels = 5;
inline constexpr int kNumClasses = kNumLevels + 1;
inline constexpr std::array<const char*, kNumClasses> kClassNames = {
    "GAP", "L5", "L4", "L3", "L2", "L1"};

int class_id_from_name(const std::string& name);  // throws data_error

// 1D signal on an equally spaced spatial grid.
struct UniformTrace {
  double origin_mm = 0.0;
  double spacing_mm = 0.0;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double position_mm(std::size_t i) const { return origin_mm + spacing_mm * static_cast<double>(i); }
};

// Per-grid-point class labels, the step-wise target the network trains on.
struct LevelSegmentation {
  std::vector<int> labels;  // values in [0, kNumClasses)

  std::size_t size() const { return labels.size(); }
};

enum class Modality { kForce, kUltrasound, kFusion };

const char* to_string(Modality m);
Modality modality_from_string(const std::string& s);  // throws param_error

// Stage-1 input channels: force and us alone are 1-channel, fusion stacks both.
inline int input_channels(Modality m) { return m == Modality::kFusion ? 2 : 1; }

}  // namespace spinefuse
