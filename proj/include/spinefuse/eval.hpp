#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spinefuse/types.hpp"

namespace spinefuse {

// One contiguous run of a level in mm coordinates; a grid point at index i
// owns the cell [origin + i*spacing, origin + (i+1)*spacing).
struct LevelSegment {
  int level = 0;  // class id, 1..5
  double start_mm = 0.0;
  double end_mm = 0.0;
  double centroid_mm = 0.0;  // (start + end) / 2
};

// Contiguous non-GAP runs become segments. Runs shorter than 2 grid points
// are discarded as spurious; when a class occurs in several runs the longest
// one represents it (ties -> the earlier run).
std::vector<LevelSegment> extract_segments(const LevelSegmentation& seg,
                                           double spacing_mm,
                                           double origin_mm = 0.0);

// Intersection-over-union of the two segments' intervals; the levels must
// match.
double level_overlap(const LevelSegment& pred, const LevelSegment& truth);

// The paper only says "overlap higher than 0.5"; IoU is the default reading,
// recall (intersection / truth length) is the alternative.
enum class OverlapKind { kIoU, kRecall };
const char* to_string(OverlapKind k);
OverlapKind overlap_kind_from_string(const std::string& s);

struct LevelOutcome {
  int level = 0;
  bool classified = false;
  double overlap = 0.0;
  std::optional<double> distance_mm;  // present when both segments exist
};

struct EvalReport {
  std::string modality;
  std::vector<LevelOutcome> per_level;  // one entry per level per sequence
  int n_correct = 0;
  int n_total = 0;
  // over correctly classified levels only; absent when none
  std::optional<double> mean_distance_mm;
  std::optional<double> std_distance_mm;
};

// Per level: classified iff both segments exist and overlap exceeds
// min_overlap; distance is |pred centroid - truth centroid|.
EvalReport evaluate(const LevelSegmentation& pred, const LevelSegmentation& truth,
                    double spacing_mm, OverlapKind kind = OverlapKind::kIoU,
                    double min_overlap = 0.5);

// Sums counts and pools classified distances across sequence reports.
EvalReport aggregate_reports(const std::vector<EvalReport>& reports,
                             const std::string& modality);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace spinefuse
