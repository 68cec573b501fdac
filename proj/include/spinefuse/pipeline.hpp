#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "spinefuse/config.hpp"
#include "spinefuse/dataset.hpp"
#include "spinefuse/dsp.hpp"
#include "spinefuse/eval.hpp"
#include "spinefuse/trainer.hpp"

namespace spinefuse {

// Command implementations behind the CLI. Every command writes the effective
// config into its output directory and is deterministic given config + seed.

// Cohort generation per the config counts; returns the manifest.
DatasetManifest cmd_generate(const RunConfig& cfg,
                             const std::filesystem::path& out_dir);

// Runs the conditioning chain over every record in the dataset; writes
// uniform traces + regridded labels + manifest into out_dir (defaults to
// <dataset>/preprocessed when empty).
PreprocessedManifest cmd_preprocess(const RunConfig& cfg,
                                    const std::filesystem::path& dataset_dir,
                                    std::filesystem::path out_dir = {});

struct TrainOutput {
  std::filesystem::path model_path;
  std::filesystem::path history_path;
  TrainResult result;
};

// Trains cfg.train (with the given modality) on the dataset's train/val
// splits; writes model_<modality>.sfm and history.csv.
TrainOutput cmd_train(const RunConfig& cfg, Modality modality,
                      const std::filesystem::path& data_dir,
                      const std::filesystem::path& out_dir);

struct EvaluateOutput {
  std::filesystem::path report_path;
  EvalReport aggregate;
  std::vector<std::pair<int, EvalReport>> per_sequence;
};

// Evaluates a trained model on cfg.eval.split; writes report.json and one
// plot CSV (pos_mm,force,us,pred_level,true_level) per sequence. With
// cfg.eval.replay_hz > 0 the raw samples are streamed at that rate and
// preprocessed in-process before prediction (timing only; reports are
// identical to the offline path).
EvaluateOutput cmd_evaluate(const RunConfig& cfg,
                            const std::filesystem::path& model_path,
                            const std::filesystem::path& dataset_dir,
                            const std::filesystem::path& out_dir);

struct CompareOutput {
  std::filesystem::path comparison_path;
  EvalReport force;
  EvalReport us;
  EvalReport fusion;
};

// Three-way force / us / fusion comparison on a shared test split; writes
// per-modality reports, a summary table, and per-sequence plot CSVs.
CompareOutput cmd_compare(const RunConfig& cfg,
                          const std::filesystem::path& force_model,
                          const std::filesystem::path& us_model,
                          const std::filesystem::path& fusion_model,
                          const std::filesystem::path& dataset_dir,
                          const std::filesystem::path& out_dir);

// --- helpers shared with tests ---------------------------------------------

// Accepts either a dataset root (with a preprocessed/ subdirectory) or a
// preprocessed directory itself.
std::filesystem::path locate_preprocessed(const std::filesystem::path& dir);

std::vector<TrainSequence> load_split(const std::filesystem::path& prep_dir,
                                      const PreprocessedManifest& manifest,
                                      Split split);

void write_history_csv(const std::vector<EpochStats>& history,
                       const std::filesystem::path& path);

void write_effective_config(const RunConfig& cfg,
                            const std::filesystem::path& out_dir);

}  // namespace spinefuse
