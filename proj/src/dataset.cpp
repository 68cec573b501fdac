#include "spinefuse/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spinefuse/errors.hpp"

namespace spinefuse {

using nlohmann::json;

namespace {

// %.17g round-trips doubles exactly, so files re-read bit-identical.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot open for writing: " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw data_error("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open: " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path,
                    std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw data_error(path.string() + ":" + std::to_string(line_no) +
                     ": not a number: '" + s + "'");
  return v;
}

// Parses a CSV with the given header into columns of doubles; `names` may be
// left unparsed for columns handled by the caller.
struct CsvTable {
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::filesystem::path& path,
                  const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open: " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line))
    throw data_error(path.string() + ": empty file");
  ++line_no;
  const auto head = split_csv_line(line);
  if (head != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    throw data_error(path.string() + ":1: bad header (expected '" + want + "')");
  }
  CsvTable t;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw data_error(path.string() + ":" + std::to_string(line_no) +
                       ": expected " + std::to_string(header.size()) +
                       " columns, got " + std::to_string(cells.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

template <std::size_t N>
json array_json(const std::array<double, N>& a) {
  return json(std::vector<double>(a.begin(), a.end()));
}

template <std::size_t N>
std::array<double, N> array_from_json(const json& j, const char* field) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != N)
    throw data_error(std::string("phantom field '") + field + "' must have " +
                     std::to_string(N) + " entries");
  std::array<double, N> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

}  // namespace

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw data_error("unknown split '" + s + "'");
}

json phantom_to_json(const SpinePhantom& p) {
  json corr;
  corr["dropped_us_levels"] = p.corruption.dropped_us_levels;
  json att = json::object();
  for (const auto& [level, gain] : p.corruption.attenuated_force_levels)
    att[std::to_string(level)] = gain;
  corr["attenuated_force_levels"] = att;
  if (p.corruption.motion_burst) {
    corr["motion_burst"] = json{{"position", p.corruption.motion_burst->position_mm},
                                {"width", p.corruption.motion_burst->width_mm},
                                {"amplitude", p.corruption.motion_burst->amplitude_n}};
  } else {
    corr["motion_burst"] = nullptr;
  }
  return json{{"scan_length", p.scan_length_mm},
              {"vertebra_centers", array_json(p.vertebra_centers_mm)},
              {"bump_amplitude_per_level", array_json(p.bump_amplitude_mm)},
              {"bump_sigma_per_level", array_json(p.bump_sigma_mm)},
              {"applied_fz", p.applied_fz_n},
              {"robot_speed", p.robot_speed_mm_s},
              {"sample_rate", p.sample_rate_hz},
              {"drift_params", json{{"amplitude", p.drift.amplitude_n},
                                    {"frequency", p.drift.frequency_hz}}},
              {"noise_std_force", p.noise_std_force_n},
              {"us_peak_height_per_level", array_json(p.us_peak_height)},
              {"us_peak_sigma_per_level", array_json(p.us_peak_sigma_mm)},
              {"us_noise_std", p.us_noise_std},
              {"label_halfwidth", p.label_halfwidth_mm},
              {"corruption", corr},
              {"seed", p.seed}};
}

SpinePhantom phantom_from_json(const json& j) {
  try {
    SpinePhantom p;
    p.scan_length_mm = j.at("scan_length").get<double>();
    p.vertebra_centers_mm =
        array_from_json<kNumLevels>(j.at("vertebra_centers"), "vertebra_centers");
    p.bump_amplitude_mm = array_from_json<kNumLevels>(
        j.at("bump_amplitude_per_level"), "bump_amplitude_per_level");
    p.bump_sigma_mm = array_from_json<kNumLevels>(j.at("bump_sigma_per_level"),
                                                  "bump_sigma_per_level");
    p.applied_fz_n = j.at("applied_fz").get<double>();
    p.robot_speed_mm_s = j.at("robot_speed").get<double>();
    p.sample_rate_hz = j.at("sample_rate").get<double>();
    p.drift.amplitude_n = j.at("drift_params").at("amplitude").get<double>();
    p.drift.frequency_hz = j.at("drift_params").at("frequency").get<double>();
    p.noise_std_force_n = j.at("noise_std_force").get<double>();
    p.us_peak_height = array_from_json<kNumLevels>(
        j.at("us_peak_height_per_level"), "us_peak_height_per_level");
    p.us_peak_sigma_mm = array_from_json<kNumLevels>(
        j.at("us_peak_sigma_per_level"), "us_peak_sigma_per_level");
    p.us_noise_std = j.at("us_noise_std").get<double>();
    p.label_halfwidth_mm = j.at("label_halfwidth").get<double>();
    const json& corr = j.at("corruption");
    p.corruption.dropped_us_levels =
        corr.at("dropped_us_levels").get<std::vector<int>>();
    for (const auto& [key, gain] : corr.at("attenuated_force_levels").items())
      p.corruption.attenuated_force_levels[std::stoi(key)] = gain.get<double>();
    if (corr.contains("motion_burst") && !corr.at("motion_burst").is_null()) {
      const json& mb = corr.at("motion_burst");
      p.corruption.motion_burst = MotionBurst{mb.at("position").get<double>(),
                                              mb.at("width").get<double>(),
                                              mb.at("amplitude").get<double>()};
    }
    p.seed = j.at("seed").get<std::uint64_t>();
    return p;
  } catch (const json::exception& e) {
    throw data_error(std::string("bad phantom JSON: ") + e.what());
  }
}

void write_scan_csv(const ScanRecord& r, const std::filesystem::path& path) {
  std::string out = "t_s,pos_mm,fy_n,fz_n,us_prob\n";
  for (std::size_t i = 0; i < r.size(); ++i) {
    out += fmt(r.timestamps_s[i]);
    out += ',';
    out += fmt(r.positions_mm[i]);
    out += ',';
    out += fmt(r.fy_n[i]);
    out += ',';
    out += fmt(r.fz_n[i]);
    out += ',';
    out += fmt(r.us_prob[i]);
    out += '\n';
  }
  write_file(path, out);
}

void write_labels_csv(const std::vector<double>& positions_mm,
                      const LevelSegmentation& labels,
                      const std::filesystem::path& path) {
  if (positions_mm.size() != labels.size())
    throw param_error("write_labels_csv: length mismatch");
  std::string out = "pos_mm,level\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out += fmt(positions_mm[i]);
    out += ',';
    out += kClassNames[labels.labels[i]];
    out += '\n';
  }
  write_file(path, out);
}

std::pair<std::vector<double>, LevelSegmentation> read_labels_csv(
    const std::filesystem::path& path) {
  const CsvTable t = read_csv(path, {"pos_mm", "level"});
  std::vector<double> pos;
  LevelSegmentation seg;
  pos.reserve(t.rows.size());
  seg.labels.reserve(t.rows.size());
  std::size_t line_no = 1;
  for (const auto& row : t.rows) {
    ++line_no;
    pos.push_back(parse_double(row[0], path, line_no));
    try {
      seg.labels.push_back(class_id_from_name(row[1]));
    } catch (const data_error&) {
      throw data_error(path.string() + ":" + std::to_string(line_no) +
                       ": unknown level '" + row[1] + "'");
    }
  }
  return {std::move(pos), std::move(seg)};
}

void write_trace_csv(const UniformTrace& t, const std::filesystem::path& path) {
  std::string out = "pos_mm,value\n";
  for (std::size_t i = 0; i < t.size(); ++i) {
    out += fmt(t.position_mm(i));
    out += ',';
    out += fmt(t.values[i]);
    out += '\n';
  }
  write_file(path, out);
}

UniformTrace read_trace_csv(const std::filesystem::path& path,
                            double spacing_mm) {
  const CsvTable t = read_csv(path, {"pos_mm", "value"});
  if (t.rows.size() < 2)
    throw data_error(path.string() + ": trace needs at least 2 rows");
  UniformTrace tr;
  std::vector<double> pos;
  std::size_t line_no = 1;
  for (const auto& row : t.rows) {
    ++line_no;
    pos.push_back(parse_double(row[0], path, line_no));
    tr.values.push_back(parse_double(row[1], path, line_no));
  }
  tr.origin_mm = pos.front();
  // the manifest's spacing is authoritative; the position column is a
  // readability aid, checked for consistency
  tr.spacing_mm = spacing_mm;
  const double derived =
      (pos.back() - pos.front()) / static_cast<double>(pos.size() - 1);
  if (std::abs(derived - spacing_mm) > 1e-9)
    throw data_error(path.string() + ": positions disagree with grid spacing " +
                     fmt(spacing_mm));
  return tr;
}

DatasetManifest generate_dataset(const std::vector<SpinePhantom>& phantoms,
                                 const std::vector<Split>& splits,
                                 const std::filesystem::path& out_dir) {
  if (splits.size() != phantoms.size())
    throw param_error("generate_dataset: splits/phantoms length mismatch");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw data_error("cannot create directory " + out_dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  json jentries = json::array();
  for (std::size_t i = 0; i < phantoms.size(); ++i) {
    char idbuf[8];
    std::snprintf(idbuf, sizeof(idbuf), "%03zu", i);
    DatasetEntry e;
    e.id = static_cast<int>(i);
    e.split = splits[i];
    e.seed = phantoms[i].seed;
    e.scan_csv = std::string("scan_") + idbuf + ".csv";
    e.labels_csv = std::string("labels_") + idbuf + ".csv";
    e.phantom_json = std::string("phantom_") + idbuf + ".json";

    const ScanRecord record = generate_scan(phantoms[i]);
    write_scan_csv(record, out_dir / e.scan_csv);
    write_labels_csv(record.positions_mm, record.ground_truth, out_dir / e.labels_csv);
    write_file(out_dir / e.phantom_json, phantom_to_json(phantoms[i]).dump(2) + "\n");

    jentries.push_back(json{{"id", e.id},
                            {"split", to_string(e.split)},
                            {"seed", e.seed},
                            {"scan_csv", e.scan_csv},
                            {"labels_csv", e.labels_csv},
                            {"phantom_json", e.phantom_json}});
    manifest.entries.push_back(std::move(e));
  }
  write_file(out_dir / "manifest.json",
             json{{"entries", jentries}}.dump(2) + "\n");
  return manifest;
}

DatasetManifest load_dataset_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw data_error(path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    for (const auto& je : j.at("entries")) {
      DatasetEntry e;
      e.id = je.at("id").get<int>();
      e.split = split_from_string(je.at("split").get<std::string>());
      e.seed = je.at("seed").get<std::uint64_t>();
      e.scan_csv = je.at("scan_csv").get<std::string>();
      e.labels_csv = je.at("labels_csv").get<std::string>();
      e.phantom_json = je.at("phantom_json").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw data_error(path.string() + ": " + e.what());
  }
  return m;
}

ScanRecord load_scan(const std::filesystem::path& dir, const DatasetEntry& entry) {
  const auto path = dir / entry.scan_csv;
  const CsvTable t = read_csv(path, {"t_s", "pos_mm", "fy_n", "fz_n", "us_prob"});
  ScanRecord r;
  std::size_t line_no = 1;
  for (const auto& row : t.rows) {
    ++line_no;
    r.timestamps_s.push_back(parse_double(row[0], path, line_no));
    r.positions_mm.push_back(parse_double(row[1], path, line_no));
    r.fy_n.push_back(parse_double(row[2], path, line_no));
    r.fz_n.push_back(parse_double(row[3], path, line_no));
    r.us_prob.push_back(parse_double(row[4], path, line_no));
  }
  auto [pos, labels] = read_labels_csv(dir / entry.labels_csv);
  if (pos.size() != r.size())
    throw data_error(entry.labels_csv + ": " + std::to_string(pos.size()) +
                     " labels for " + std::to_string(r.size()) + " samples");
  r.ground_truth = std::move(labels);
  return r;
}

void save_preprocessed_manifest(const PreprocessedManifest& m,
                                const std::filesystem::path& dir) {
  json jentries = json::array();
  for (const auto& e : m.entries) {
    jentries.push_back(json{{"id", e.id},
                            {"split", to_string(e.split)},
                            {"force_csv", e.force_csv},
                            {"us_csv", e.us_csv},
                            {"labels_csv", e.labels_csv}});
  }
  write_file(dir / "manifest.json",
             json{{"spacing_mm", m.spacing_mm}, {"entries", jentries}}.dump(2) + "\n");
}

PreprocessedManifest load_preprocessed_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw data_error(path.string() + ": " + e.what());
  }
  PreprocessedManifest m;
  try {
    m.spacing_mm = j.at("spacing_mm").get<double>();
    for (const auto& je : j.at("entries")) {
      PreprocessedEntry e;
      e.id = je.at("id").get<int>();
      e.split = split_from_string(je.at("split").get<std::string>());
      e.force_csv = je.at("force_csv").get<std::string>();
      e.us_csv = je.at("us_csv").get<std::string>();
      e.labels_csv = je.at("labels_csv").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw data_error(path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace spinefuse
