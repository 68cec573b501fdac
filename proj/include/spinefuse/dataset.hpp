#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "spinefuse/phantom.hpp"
#include "spinefuse/types.hpp"

namespace spinefuse {

enum class Split { kTrain, kVal, kTest };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct DatasetEntry {
  int id = 0;
  Split split = Split::kTrain;
  std::uint64_t seed = 0;
  std::string scan_csv;  // filenames relative to the dataset directory
  std::string labels_csv;
  std::string phantom_json;
};

struct DatasetManifest {
  std::vector<DatasetEntry> entries;
};

nlohmann::json phantom_to_json(const SpinePhantom& p);
SpinePhantom phantom_from_json(const nlohmann::json& j);

// Writes one scan CSV (t_s,pos_mm,fy_n,fz_n,us_prob), one labels CSV
// (pos_mm,level), and one phantom JSON per phantom, plus manifest.json.
// Rerunning with the same phantoms produces byte-identical files.
DatasetManifest generate_dataset(const std::vector<SpinePhantom>& phantoms,
                                 const std::vector<Split>& splits,
                                 const std::filesystem::path& out_dir);

DatasetManifest load_dataset_manifest(const std::filesystem::path& dir);

// Scan CSV + labels CSV back into a full record.
ScanRecord load_scan(const std::filesystem::path& dir, const DatasetEntry& entry);

void write_scan_csv(const ScanRecord& r, const std::filesystem::path& path);
void write_labels_csv(const std::vector<double>& positions_mm,
                      const LevelSegmentation& labels,
                      const std::filesystem::path& path);
// Returns grid positions alongside the labels.
std::pair<std::vector<double>, LevelSegmentation> read_labels_csv(
    const std::filesystem::path& path);

void write_trace_csv(const UniformTrace& t, const std::filesystem::path& path);
// spacing_mm comes from the preprocessed manifest; the CSV position column
// is validated against it.
UniformTrace read_trace_csv(const std::filesystem::path& path, double spacing_mm);

// Preprocessed dataset (uniform traces + regridded labels).
struct PreprocessedEntry {
  int id = 0;
  Split split = Split::kTrain;
  std::string force_csv;
  std::string us_csv;
  std::string labels_csv;
};

struct PreprocessedManifest {
  double spacing_mm = 0.5;
  std::vector<PreprocessedEntry> entries;
};

void save_preprocessed_manifest(const PreprocessedManifest& m,
                                const std::filesystem::path& dir);
PreprocessedManifest load_preprocessed_manifest(const std::filesystem::path& dir);

}  // namespace spinefuse
