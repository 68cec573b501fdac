#include "spinefuse/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <thread>

#include "spinefuse/errors.hpp"

namespace spinefuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string seq_id(int id) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%03d", id);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw data_error("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open for writing: " + path.string());
  out << content;
  if (!out) throw data_error("write failed: " + path.string());
}

// Streams the raw record one sample at a time at the given rate, then runs
// the conditioning chain. The result is identical to offline preprocessing;
// only the wall-clock feed rate differs.
PreprocessedScan replay_preprocess(const ScanRecord& record, double spacing_mm,
                                   double replay_hz) {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(1.0 / replay_hz));
  ScanRecord streamed;
  auto deadline = clock::now();
  for (std::size_t i = 0; i < record.size(); ++i) {
    deadline += period;
    std::this_thread::sleep_until(deadline);
    streamed.timestamps_s.push_back(record.timestamps_s[i]);
    streamed.positions_mm.push_back(record.positions_mm[i]);
    streamed.fy_n.push_back(record.fy_n[i]);
    streamed.fz_n.push_back(record.fz_n[i]);
    streamed.us_prob.push_back(record.us_prob[i]);
    streamed.ground_truth.labels.push_back(record.ground_truth.labels[i]);
  }
  return preprocess_scan(streamed, spacing_mm);
}

struct EvalSequence {
  int id = 0;
  UniformTrace force;
  UniformTrace us;
  LevelSegmentation truth;
};

std::vector<EvalSequence> load_eval_split(const RunConfig& cfg,
                                          const fs::path& dataset_dir,
                                          Split split) {
  const fs::path prep_dir = locate_preprocessed(dataset_dir);
  const PreprocessedManifest prep = load_preprocessed_manifest(prep_dir);
  std::vector<EvalSequence> out;

  if (cfg.eval.replay_hz > 0.0) {
    // replay needs the raw scans, which live one level above preprocessed/
    const fs::path raw_dir =
        prep_dir == dataset_dir ? dataset_dir.parent_path() : dataset_dir;
    const DatasetManifest raw = load_dataset_manifest(raw_dir);
    std::map<int, const DatasetEntry*> by_id;
    for (const auto& e : raw.entries) by_id[e.id] = &e;
    for (const auto& e : prep.entries) {
      if (e.split != split) continue;
      const auto it = by_id.find(e.id);
      if (it == by_id.end())
        throw data_error("replay: raw scan for sequence " + std::to_string(e.id) +
                         " not found in " + raw_dir.string());
      const ScanRecord record = load_scan(raw_dir, *it->second);
      PreprocessedScan ps = replay_preprocess(record, prep.spacing_mm, cfg.eval.replay_hz);
      out.push_back({e.id, std::move(ps.force), std::move(ps.us), std::move(ps.labels)});
    }
    return out;
  }

  for (const auto& e : prep.entries) {
    if (e.split != split) continue;
    EvalSequence s;
    s.id = e.id;
    s.force = read_trace_csv(prep_dir / e.force_csv, prep.spacing_mm);
    s.us = read_trace_csv(prep_dir / e.us_csv, prep.spacing_mm);
    auto [pos, labels] = read_labels_csv(prep_dir / e.labels_csv);
    if (labels.size() != s.force.size())
      throw data_error(e.labels_csv + ": label count does not match trace length");
    s.truth = std::move(labels);
    out.push_back(std::move(s));
  }
  return out;
}

void write_plot_csv(const fs::path& path, const EvalSequence& s,
                    const LevelSegmentation& pred) {
  std::string out = "pos_mm,force,us,pred_level,true_level\n";
  for (std::size_t i = 0; i < s.force.size(); ++i) {
    out += fmt(s.force.position_mm(i));
    out += ',';
    out += fmt(s.force.values[i]);
    out += ',';
    out += fmt(s.us.values[i]);
    out += ',';
    out += kClassNames[pred.labels[i]];
    out += ',';
    out += kClassNames[s.truth.labels[i]];
    out += '\n';
  }
  write_text(path, out);
}

// Evaluate one model over the split; returns per-sequence reports (by id)
// and writes plot CSVs named plot_<tag><id>.csv.
std::vector<std::pair<int, EvalReport>> run_model_over(
    const RunConfig& cfg, const FusionModel& model,
    const std::vector<EvalSequence>& sequences, const fs::path& out_dir,
    const std::string& plot_tag) {
  const OverlapKind kind = overlap_kind_from_string(cfg.eval.overlap);
  std::vector<std::pair<int, EvalReport>> reports;
  for (const auto& s : sequences) {
    const Prediction pred = predict(model, s.force, s.us);
    EvalReport r = evaluate(pred.labels, s.truth, s.force.spacing_mm, kind,
                            cfg.eval.min_overlap);
    r.modality = to_string(model.specs.modality);
    write_plot_csv(out_dir / ("plot_" + plot_tag + seq_id(s.id) + ".csv"), s,
                   pred.labels);
    reports.emplace_back(s.id, std::move(r));
  }
  return reports;
}

json sequences_json(const std::vector<std::pair<int, EvalReport>>& reports) {
  json arr = json::array();
  for (const auto& [id, rep] : reports)
    arr.push_back(json{{"id", id}, {"report", report_to_json(rep)}});
  return arr;
}

EvalReport aggregate_of(const std::vector<std::pair<int, EvalReport>>& reports,
                        const std::string& modality) {
  std::vector<EvalReport> rs;
  rs.reserve(reports.size());
  for (const auto& [id, rep] : reports) rs.push_back(rep);
  return aggregate_reports(rs, modality);
}

}  // namespace

void write_effective_config(const RunConfig& cfg, const fs::path& out_dir) {
  write_text(out_dir / "effective_config.json", config_to_json(cfg).dump(2) + "\n");
}

fs::path locate_preprocessed(const fs::path& dir) {
  if (fs::exists(dir / "preprocessed" / "manifest.json")) return dir / "preprocessed";
  if (fs::exists(dir / "manifest.json")) {
    // distinguish a preprocessed manifest from a raw dataset manifest
    std::ifstream in(dir / "manifest.json");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw data_error((dir / "manifest.json").string() + ": " + e.what());
    }
    if (j.contains("spacing_mm")) return dir;
    throw data_error("no preprocessed data under " + dir.string() +
                     " (run the preprocess command first)");
  }
  throw data_error("no manifest.json under " + dir.string());
}

std::vector<TrainSequence> load_split(const fs::path& prep_dir,
                                      const PreprocessedManifest& manifest,
                                      Split split) {
  std::vector<TrainSequence> out;
  for (const auto& e : manifest.entries) {
    if (e.split != split) continue;
    TrainSequence s;
    s.id = seq_id(e.id);
    s.force = read_trace_csv(prep_dir / e.force_csv, manifest.spacing_mm);
    s.us = read_trace_csv(prep_dir / e.us_csv, manifest.spacing_mm);
    auto [pos, labels] = read_labels_csv(prep_dir / e.labels_csv);
    if (labels.size() != s.force.size())
      throw data_error(e.labels_csv + ": label count does not match trace length");
    s.labels = std::move(labels);
    out.push_back(std::move(s));
  }
  return out;
}

DatasetManifest cmd_generate(const RunConfig& cfg, const fs::path& out_dir) {
  if (out_dir.empty()) throw param_error("generate: missing output directory");
  const auto cohort = build_cohort(cfg.cohort, cfg.seed);
  std::vector<SpinePhantom> phantoms;
  std::vector<Split> splits;
  phantoms.reserve(cohort.size());
  for (const auto& [phantom, split] : cohort) {
    phantoms.push_back(phantom);
    splits.push_back(split);
  }
  ensure_dir(out_dir);
  DatasetManifest m = generate_dataset(phantoms, splits, out_dir);
  write_effective_config(cfg, out_dir);
  return m;
}

PreprocessedManifest cmd_preprocess(const RunConfig& cfg,
                                    const fs::path& dataset_dir,
                                    fs::path out_dir) {
  if (out_dir.empty()) out_dir = dataset_dir / "preprocessed";
  const DatasetManifest raw = load_dataset_manifest(dataset_dir);
  ensure_dir(out_dir);

  PreprocessedManifest prep;
  prep.spacing_mm = cfg.grid_spacing_mm;
  for (const auto& entry : raw.entries) {
    const ScanRecord record = load_scan(dataset_dir, entry);
    const PreprocessedScan ps = preprocess_scan(record, cfg.grid_spacing_mm);

    PreprocessedEntry e;
    e.id = entry.id;
    e.split = entry.split;
    e.force_csv = "force_" + seq_id(entry.id) + ".csv";
    e.us_csv = "us_" + seq_id(entry.id) + ".csv";
    e.labels_csv = "labels_" + seq_id(entry.id) + ".csv";
    write_trace_csv(ps.force, out_dir / e.force_csv);
    write_trace_csv(ps.us, out_dir / e.us_csv);
    std::vector<double> grid_pos(ps.force.size());
    for (std::size_t i = 0; i < grid_pos.size(); ++i)
      grid_pos[i] = ps.force.position_mm(i);
    write_labels_csv(grid_pos, ps.labels, out_dir / e.labels_csv);
    prep.entries.push_back(std::move(e));
  }
  save_preprocessed_manifest(prep, out_dir);
  write_effective_config(cfg, out_dir);
  return prep;
}

void write_history_csv(const std::vector<EpochStats>& history,
                       const fs::path& path) {
  std::string out = "epoch,train_loss,val_frame_acc\n";
  for (const auto& e : history) {
    out += std::to_string(e.epoch);
    out += ',';
    out += fmt(e.train_loss);
    out += ',';
    out += fmt(e.val_frame_acc);
    out += '\n';
  }
  write_text(path, out);
}

TrainOutput cmd_train(const RunConfig& cfg, Modality modality,
                      const fs::path& data_dir, const fs::path& out_dir) {
  if (out_dir.empty()) throw param_error("train: missing output directory");
  TrainConfig tc = cfg.train;
  tc.modality = modality;

  const fs::path prep_dir = locate_preprocessed(data_dir);
  const PreprocessedManifest prep = load_preprocessed_manifest(prep_dir);
  const auto train_set = load_split(prep_dir, prep, Split::kTrain);
  const auto val_set = load_split(prep_dir, prep, Split::kVal);

  ensure_dir(out_dir);
  TrainOutput out;
  out.result = train(train_set, val_set, tc, prep.spacing_mm);
  out.model_path =
      out_dir / ("model_" + std::string(to_string(modality)) + ".sfm");
  out.history_path =
      out_dir / ("history_" + std::string(to_string(modality)) + ".csv");
  save_model(out.result.model, out.model_path);
  write_history_csv(out.result.history, out.history_path);
  RunConfig echoed = cfg;
  echoed.train = tc;
  write_effective_config(echoed, out_dir);
  return out;
}

EvaluateOutput cmd_evaluate(const RunConfig& cfg, const fs::path& model_path,
                            const fs::path& dataset_dir,
                            const fs::path& out_dir) {
  if (out_dir.empty()) throw param_error("evaluate: missing output directory");
  const FusionModel model = load_model(model_path);
  const auto sequences =
      load_eval_split(cfg, dataset_dir, split_from_string(cfg.eval.split));
  ensure_dir(out_dir);

  EvaluateOutput out;
  out.per_sequence = run_model_over(cfg, model, sequences, out_dir, "");
  out.aggregate = aggregate_of(out.per_sequence, to_string(model.specs.modality));
  out.report_path = out_dir / "report.json";
  const json j{{"modality", to_string(model.specs.modality)},
               {"split", cfg.eval.split},
               {"overlap", cfg.eval.overlap},
               {"min_overlap", cfg.eval.min_overlap},
               {"sequences", sequences_json(out.per_sequence)},
               {"aggregate", report_to_json(out.aggregate).at("aggregate")}};
  write_text(out.report_path, j.dump(2) + "\n");
  write_effective_config(cfg, out_dir);
  return out;
}

CompareOutput cmd_compare(const RunConfig& cfg, const fs::path& force_model,
                          const fs::path& us_model, const fs::path& fusion_model,
                          const fs::path& dataset_dir, const fs::path& out_dir) {
  if (out_dir.empty()) throw param_error("compare: missing output directory");
  const FusionModel fm = load_model(force_model);
  const FusionModel um = load_model(us_model);
  const FusionModel xm = load_model(fusion_model);
  if (fm.specs.modality != Modality::kForce)
    throw param_error("compare: first model is not a force model");
  if (um.specs.modality != Modality::kUltrasound)
    throw param_error("compare: second model is not an ultrasound model");
  if (xm.specs.modality != Modality::kFusion)
    throw param_error("compare: third model is not a fusion model");

  const auto sequences =
      load_eval_split(cfg, dataset_dir, split_from_string(cfg.eval.split));
  ensure_dir(out_dir);

  CompareOutput out;
  out.comparison_path = out_dir / "comparison.json";
  json modalities = json::object();
  const struct {
    const FusionModel* model;
    const char* tag;
    EvalReport* agg;
  } runs[] = {{&fm, "force", &out.force},
              {&um, "us", &out.us},
              {&xm, "fusion", &out.fusion}};
  for (const auto& run : runs) {
    const auto reports = run_model_over(cfg, *run.model, sequences, out_dir,
                                        std::string(run.tag) + "_");
    *run.agg = aggregate_of(reports, run.tag);
    const json jr{{"modality", run.tag},
                  {"split", cfg.eval.split},
                  {"overlap", cfg.eval.overlap},
                  {"min_overlap", cfg.eval.min_overlap},
                  {"sequences", sequences_json(reports)},
                  {"aggregate", report_to_json(*run.agg).at("aggregate")}};
    write_text(out_dir / ("report_" + std::string(run.tag) + ".json"),
               jr.dump(2) + "\n");
    modalities[run.tag] = report_to_json(*run.agg).at("aggregate");
  }

  // Table-shaped summary: correctly classified levels and centroid distances
  const json j{{"split", cfg.eval.split},
               {"overlap", cfg.eval.overlap},
               {"min_overlap", cfg.eval.min_overlap},
               {"n_sequences", sequences.size()},
               {"modalities", modalities}};
  write_text(out.comparison_path, j.dump(2) + "\n");
  write_effective_config(cfg, out_dir);
  return out;
}

}  // namespace spinefuse
