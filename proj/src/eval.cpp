#include "spinefuse/eval.hpp"

#include <algorithm>
#include <cmath>

#include "spinefuse/errors.hpp"

namespace spinefuse {

using nlohmann::json;

std::vector<LevelSegment> extract_segments(const LevelSegmentation& seg,
                                           double spacing_mm, double origin_mm) {
  if (!(spacing_mm > 0.0)) throw param_error("extract_segments: spacing must be > 0");
  struct Run {
    int level;
    std::size_t begin, end;  // grid index range [begin, end)
  };
  std::vector<Run> runs;
  std::size_t i = 0;
  const auto& labels = seg.labels;
  while (i < labels.size()) {
    if (labels[i] == 0) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < labels.size() && labels[j] == labels[i]) ++j;
    if (j - i >= 2) runs.push_back({labels[i], i, j});
    i = j;
  }

  // longest run per class, earlier run on ties
  std::vector<LevelSegment> out;
  for (int level = 1; level < kNumClasses; ++level) {
    const Run* best = nullptr;
    for (const Run& r : runs) {
      if (r.level != level) continue;
      if (best == nullptr || (r.end - r.begin) > (best->end - best->begin))
        best = &r;
    }
    if (best == nullptr) continue;
    LevelSegment s;
    s.level = level;
    s.start_mm = origin_mm + spacing_mm * static_cast<double>(best->begin);
    s.end_mm = origin_mm + spacing_mm * static_cast<double>(best->end);
    s.centroid_mm = 0.5 * (s.start_mm + s.end_mm);
    out.push_back(s);
  }
  return out;
}

namespace {

double interval_overlap(const LevelSegment& a, const LevelSegment& b,
                        OverlapKind kind) {
  const double inter =
      std::max(0.0, std::min(a.end_mm, b.end_mm) - std::max(a.start_mm, b.start_mm));
  if (kind == OverlapKind::kRecall) {
    const double truth_len = b.end_mm - b.start_mm;
    return truth_len > 0.0 ? inter / truth_len : 0.0;
  }
  const double uni = (a.end_mm - a.start_mm) + (b.end_mm - b.start_mm) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace

double level_overlap(const LevelSegment& pred, const LevelSegment& truth) {
  if (pred.level != truth.level)
    throw param_error("level_overlap: segments are for different levels");
  return interval_overlap(pred, truth, OverlapKind::kIoU);
}

const char* to_string(OverlapKind k) {
  return k == OverlapKind::kIoU ? "iou" : "recall";
}

OverlapKind overlap_kind_from_string(const std::string& s) {
  if (s == "iou") return OverlapKind::kIoU;
  if (s == "recall") return OverlapKind::kRecall;
  throw param_error("unknown overlap kind '" + s + "' (expected iou|recall)");
}

EvalReport evaluate(const LevelSegmentation& pred, const LevelSegmentation& truth,
                    double spacing_mm, OverlapKind kind, double min_overlap) {
  if (pred.size() != truth.size())
    throw param_error("evaluate: prediction and truth lengths differ");
  const auto pred_segs = extract_segments(pred, spacing_mm);
  const auto truth_segs = extract_segments(truth, spacing_mm);

  auto find = [](const std::vector<LevelSegment>& segs, int level) {
    for (const auto& s : segs)
      if (s.level == level) return &s - segs.data();
    return static_cast<std::ptrdiff_t>(-1);
  };

  EvalReport r;
  r.n_total = kNumLevels;
  std::vector<double> distances;
  for (int level = 1; level < kNumClasses; ++level) {
    LevelOutcome o;
    o.level = level;
    const auto pi = find(pred_segs, level);
    const auto ti = find(truth_segs, level);
    if (pi >= 0 && ti >= 0) {
      o.overlap = interval_overlap(pred_segs[pi], truth_segs[ti], kind);
      o.distance_mm = std::abs(pred_segs[pi].centroid_mm - truth_segs[ti].centroid_mm);
      o.classified = o.overlap > min_overlap;
    }
    if (o.classified) {
      ++r.n_correct;
      distances.push_back(*o.distance_mm);
    }
    r.per_level.push_back(o);
  }
  if (!distances.empty()) {
    double mean = 0.0;
    for (double d : distances) mean += d;
    mean /= static_cast<double>(distances.size());
    double var = 0.0;
    for (double d : distances) var += (d - mean) * (d - mean);
    var /= static_cast<double>(distances.size());
    r.mean_distance_mm = mean;
    r.std_distance_mm = std::sqrt(var);
  }
  return r;
}

EvalReport aggregate_reports(const std::vector<EvalReport>& reports,
                             const std::string& modality) {
  EvalReport agg;
  agg.modality = modality;
  std::vector<double> distances;
  for (const auto& r : reports) {
    agg.n_correct += r.n_correct;
    agg.n_total += r.n_total;
    for (const auto& o : r.per_level) {
      agg.per_level.push_back(o);
      if (o.classified && o.distance_mm) distances.push_back(*o.distance_mm);
    }
  }
  if (!distances.empty()) {
    double mean = 0.0;
    for (double d : distances) mean += d;
    mean /= static_cast<double>(distances.size());
    double var = 0.0;
    for (double d : distances) var += (d - mean) * (d - mean);
    var /= static_cast<double>(distances.size());
    agg.mean_distance_mm = mean;
    agg.std_distance_mm = std::sqrt(var);
  }
  return agg;
}

json report_to_json(const EvalReport& r) {
  json per = json::array();
  for (const auto& o : r.per_level) {
    json jo{{"level", kClassNames[o.level]},
            {"classified", o.classified},
            {"overlap", o.overlap}};
    jo["distance_mm"] = o.distance_mm ? json(*o.distance_mm) : json(nullptr);
    per.push_back(jo);
  }
  json j{{"modality", r.modality},
         {"per_level", per},
         {"aggregate",
          json{{"n_correct", r.n_correct},
               {"n_total", r.n_total},
               {"mean_distance_mm",
                r.mean_distance_mm ? json(*r.mean_distance_mm) : json(nullptr)},
               {"std_distance_mm",
                r.std_distance_mm ? json(*r.std_distance_mm) : json(nullptr)}}}};
  return j;
}

EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.modality = j.at("modality").get<std::string>();
    for (const auto& jo : j.at("per_level")) {
      LevelOutcome o;
      o.level = class_id_from_name(jo.at("level").get<std::string>());
      o.classified = jo.at("classified").get<bool>();
      o.overlap = jo.at("overlap").get<double>();
      if (!jo.at("distance_mm").is_null())
        o.distance_mm = jo.at("distance_mm").get<double>();
      r.per_level.push_back(o);
    }
    const json& agg = j.at("aggregate");
    r.n_correct = agg.at("n_correct").get<int>();
    r.n_total = agg.at("n_total").get<int>();
    if (!agg.at("mean_distance_mm").is_null())
      r.mean_distance_mm = agg.at("mean_distance_mm").get<double>();
    if (!agg.at("std_distance_mm").is_null())
      r.std_distance_mm = agg.at("std_distance_mm").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw data_error(std::string("bad eval report JSON: ") + e.what());
  }
}

}  // namespace spinefuse
