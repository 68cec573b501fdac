#include "spinefuse/config.hpp"

#include <algorithm>
#include <fstream>

#include "spinefuse/errors.hpp"
#include "spinefuse/rng.hpp"

namespace spinefuse {

using nlohmann::json;

namespace {

json range_json(const std::array<double, 2>& r) {
  return json::array({r[0], r[1]});
}

std::array<double, 2> range_from_json(const json& j, const std::string& name) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2 || v[0] > v[1])
    throw param_error("config: '" + name + "' must be [lo, hi]");
  return {v[0], v[1]};
}

// Recursive merge of `user` into `base`; every user key must already exist
// in base (objects recurse, everything else assigns).
void merge_into(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object())
    throw param_error("config: expected an object at '" +
                      (prefix.empty() ? "<root>" : prefix) + "'");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw param_error("config: unknown key '" + path + "'");
    if (base.at(key).is_object() && !base.at(key).is_null()) {
      merge_into(base.at(key), value, path);
    } else {
      base.at(key) = value;
    }
  }
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

json config_to_json(const RunConfig& cfg) {
  const auto& c = cfg.cohort;
  json cohort{{"n_train", c.n_train},
              {"n_val", c.n_val},
              {"n_test", c.n_test},
              {"scan_length_mm", c.scan_length_mm},
              {"robot_speed_mm_s", c.robot_speed_mm_s},
              {"sample_rate_hz", c.sample_rate_hz},
              {"applied_fz_choices_n", c.applied_fz_choices_n},
              {"bump_amplitude_range_mm", range_json(c.bump_amplitude_range_mm)},
              {"bump_sigma_range_mm", range_json(c.bump_sigma_range_mm)},
              {"first_center_range_mm", range_json(c.first_center_range_mm)},
              {"center_spacing_range_mm", range_json(c.center_spacing_range_mm)},
              {"us_peak_height_range", range_json(c.us_peak_height_range)},
              {"us_peak_sigma_range_mm", range_json(c.us_peak_sigma_range_mm)},
              {"us_noise_std_range", range_json(c.us_noise_std_range)},
              {"force_noise_std_range_n", range_json(c.force_noise_std_range_n)},
              {"drift_amplitude_range_n", range_json(c.drift_amplitude_range_n)},
              {"drift_frequency_range_hz", range_json(c.drift_frequency_range_hz)},
              {"label_halfwidth_mm", c.label_halfwidth_mm},
              {"train_corruption",
               json{{"p_us_drop", c.train_corruption.p_us_drop},
                    {"p_force_attenuation", c.train_corruption.p_force_attenuation},
                    {"p_motion_burst", c.train_corruption.p_motion_burst},
                    {"force_gain_range", range_json(c.train_corruption.force_gain_range)}}},
              {"test_corruption", c.test_corruption}};
  const auto& t = cfg.train;
  json train{{"learning_rate", t.learning_rate},
             {"epochs", t.epochs},
             {"batch_size", t.batch_size},
             {"adam_beta1", t.adam_beta1},
             {"adam_beta2", t.adam_beta2},
             {"adam_eps", t.adam_eps},
             {"lambda_smooth", t.lambda_smooth},
             {"tau", t.tau},
             {"seed", t.seed},
             {"modality", to_string(t.modality)},
             {"hidden_channels", t.hidden_channels},
             {"layers_per_stage", t.layers_per_stage},
             {"num_stages", t.num_stages}};
  json eval{{"split", cfg.eval.split},
            {"overlap", cfg.eval.overlap},
            {"min_overlap", cfg.eval.min_overlap},
            {"replay_hz", cfg.eval.replay_hz}};
  return json{{"seed", cfg.seed},
              {"grid_spacing_mm", cfg.grid_spacing_mm},
              {"cohort", cohort},
              {"train", train},
              {"eval", eval}};
}

RunConfig config_from_json(const json& user) {
  RunConfig defaults = default_config();
  defaults.train.seed = defaults.seed;
  json merged = config_to_json(defaults);
  try {
    merge_into(merged, user, "");
  } catch (const json::exception& e) {
    throw param_error(std::string("config: ") + e.what());
  }
  // train.seed follows the top-level seed unless set explicitly
  const bool train_seed_explicit =
      user.contains("train") && user.at("train").is_object() &&
      user.at("train").contains("seed");
  if (!train_seed_explicit) merged["train"]["seed"] = merged["seed"];

  try {
    RunConfig cfg;
    cfg.seed = merged.at("seed").get<std::uint64_t>();
    cfg.grid_spacing_mm = merged.at("grid_spacing_mm").get<double>();
    if (!(cfg.grid_spacing_mm > 0.0))
      throw param_error("config: grid_spacing_mm must be > 0");

    const json& jc = merged.at("cohort");
    CohortConfig& c = cfg.cohort;
    c.n_train = jc.at("n_train").get<int>();
    c.n_val = jc.at("n_val").get<int>();
    c.n_test = jc.at("n_test").get<int>();
    if (c.n_train < 0 || c.n_val < 0 || c.n_test < 0)
      throw param_error("config: cohort counts must be >= 0");
    c.scan_length_mm = jc.at("scan_length_mm").get<double>();
    c.robot_speed_mm_s = jc.at("robot_speed_mm_s").get<double>();
    c.sample_rate_hz = jc.at("sample_rate_hz").get<double>();
    c.applied_fz_choices_n = jc.at("applied_fz_choices_n").get<std::vector<double>>();
    if (c.applied_fz_choices_n.empty())
      throw param_error("config: applied_fz_choices_n must be nonempty");
    c.bump_amplitude_range_mm =
        range_from_json(jc.at("bump_amplitude_range_mm"), "bump_amplitude_range_mm");
    c.bump_sigma_range_mm =
        range_from_json(jc.at("bump_sigma_range_mm"), "bump_sigma_range_mm");
    c.first_center_range_mm =
        range_from_json(jc.at("first_center_range_mm"), "first_center_range_mm");
    c.center_spacing_range_mm =
        range_from_json(jc.at("center_spacing_range_mm"), "center_spacing_range_mm");
    c.us_peak_height_range =
        range_from_json(jc.at("us_peak_height_range"), "us_peak_height_range");
    c.us_peak_sigma_range_mm =
        range_from_json(jc.at("us_peak_sigma_range_mm"), "us_peak_sigma_range_mm");
    c.us_noise_std_range =
        range_from_json(jc.at("us_noise_std_range"), "us_noise_std_range");
    c.force_noise_std_range_n =
        range_from_json(jc.at("force_noise_std_range_n"), "force_noise_std_range_n");
    c.drift_amplitude_range_n =
        range_from_json(jc.at("drift_amplitude_range_n"), "drift_amplitude_range_n");
    c.drift_frequency_range_hz =
        range_from_json(jc.at("drift_frequency_range_hz"), "drift_frequency_range_hz");
    c.label_halfwidth_mm = jc.at("label_halfwidth_mm").get<double>();
    const json& tc = jc.at("train_corruption");
    c.train_corruption.p_us_drop = tc.at("p_us_drop").get<double>();
    c.train_corruption.p_force_attenuation = tc.at("p_force_attenuation").get<double>();
    c.train_corruption.p_motion_burst = tc.at("p_motion_burst").get<double>();
    c.train_corruption.force_gain_range =
        range_from_json(tc.at("force_gain_range"), "force_gain_range");
    c.test_corruption = jc.at("test_corruption").get<std::string>();
    if (c.test_corruption != "clean" && c.test_corruption != "mixed")
      throw param_error("config: test_corruption must be clean|mixed");

    const json& jt = merged.at("train");
    TrainConfig& t = cfg.train;
    t.learning_rate = jt.at("learning_rate").get<double>();
    t.epochs = jt.at("epochs").get<int>();
    t.batch_size = jt.at("batch_size").get<int>();
    t.adam_beta1 = jt.at("adam_beta1").get<double>();
    t.adam_beta2 = jt.at("adam_beta2").get<double>();
    t.adam_eps = jt.at("adam_eps").get<double>();
    t.lambda_smooth = jt.at("lambda_smooth").get<double>();
    t.tau = jt.at("tau").get<double>();
    t.seed = jt.at("seed").get<std::uint64_t>();
    t.modality = modality_from_string(jt.at("modality").get<std::string>());
    t.hidden_channels = jt.at("hidden_channels").get<int>();
    t.layers_per_stage = jt.at("layers_per_stage").get<int>();
    t.num_stages = jt.at("num_stages").get<int>();
    validate(t);

    const json& je = merged.at("eval");
    cfg.eval.split = je.at("split").get<std::string>();
    split_from_string(cfg.eval.split);  // validity check
    cfg.eval.overlap = je.at("overlap").get<std::string>();
    overlap_kind_from_string(cfg.eval.overlap);
    cfg.eval.min_overlap = je.at("min_overlap").get<double>();
    cfg.eval.replay_hz = je.at("replay_hz").get<double>();
    if (cfg.eval.replay_hz < 0.0)
      throw param_error("config: replay_hz must be >= 0");
    return cfg;
  } catch (const json::exception& e) {
    throw param_error(std::string("config: ") + e.what());
  } catch (const data_error& e) {
    throw param_error(std::string("config: ") + e.what());
  }
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw data_error("config file " + path + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw param_error("override must look like key.path=value: '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string value = assignment.substr(eq + 1);

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos
                                                   ? std::string::npos
                                                   : dot - start);
    if (!node->is_object() || !node->contains(key))
      throw param_error("override: unknown config key '" + path + "'");
    node = &node->at(key);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare strings like modality=fusion
  }
  *node = parsed;
}

std::vector<std::pair<SpinePhantom, Split>> build_cohort(const CohortConfig& c,
                                                         std::uint64_t seed) {
  std::vector<std::pair<SpinePhantom, Split>> out;
  const int total = c.n_train + c.n_val + c.n_test;
  const Rng root(seed);
  int test_index = 0;
  for (int i = 0; i < total; ++i) {
    const Split split = i < c.n_train              ? Split::kTrain
                        : i < c.n_train + c.n_val ? Split::kVal
                                                  : Split::kTest;
    Rng r = root.fork(0xC0A0 + static_cast<std::uint64_t>(i));

    SpinePhantom p;
    p.scan_length_mm = c.scan_length_mm;
    p.robot_speed_mm_s = c.robot_speed_mm_s;
    p.sample_rate_hz = c.sample_rate_hz;
    p.label_halfwidth_mm = c.label_halfwidth_mm;
    p.seed = splitmix64(seed ^ (0x5EED0000ull + static_cast<std::uint64_t>(i)));

    double center = r.uniform(c.first_center_range_mm[0], c.first_center_range_mm[1]);
    const double subject_amp =
        r.uniform(c.bump_amplitude_range_mm[0], c.bump_amplitude_range_mm[1]);
    for (int k = 0; k < kNumLevels; ++k) {
      p.vertebra_centers_mm[k] = center;
      if (k + 1 < kNumLevels)
        center += r.uniform(c.center_spacing_range_mm[0], c.center_spacing_range_mm[1]);
      p.bump_amplitude_mm[k] = subject_amp * r.uniform(0.85, 1.15);
      p.bump_sigma_mm[k] = r.uniform(c.bump_sigma_range_mm[0], c.bump_sigma_range_mm[1]);
      p.us_peak_height[k] =
          r.uniform(c.us_peak_height_range[0], c.us_peak_height_range[1]);
      p.us_peak_sigma_mm[k] =
          r.uniform(c.us_peak_sigma_range_mm[0], c.us_peak_sigma_range_mm[1]);
    }
    p.applied_fz_n =
        c.applied_fz_choices_n[r.below(c.applied_fz_choices_n.size())];
    p.noise_std_force_n =
        r.uniform(c.force_noise_std_range_n[0], c.force_noise_std_range_n[1]);
    p.us_noise_std = r.uniform(c.us_noise_std_range[0], c.us_noise_std_range[1]);
    p.drift.amplitude_n =
        r.uniform(c.drift_amplitude_range_n[0], c.drift_amplitude_range_n[1]);
    p.drift.frequency_hz =
        r.uniform(c.drift_frequency_range_hz[0], c.drift_frequency_range_hz[1]);

    auto pick_levels = [&r](int count) {
      std::vector<int> levels;
      while (static_cast<int>(levels.size()) < count) {
        const int k = static_cast<int>(r.below(kNumLevels));
        if (std::find(levels.begin(), levels.end(), k) == levels.end())
          levels.push_back(k);
      }
      return levels;
    };
    auto drop_us = [&](int count) {
      p.corruption.dropped_us_levels = pick_levels(count);
    };
    auto attenuate_force = [&](int count) {
      for (int k : pick_levels(count))
        p.corruption.attenuated_force_levels[k] = r.uniform(
            c.train_corruption.force_gain_range[0], c.train_corruption.force_gain_range[1]);
    };

    if (split == Split::kTest) {
      if (c.test_corruption == "mixed") {
        const int count = 1 + static_cast<int>(r.below(2));
        if (test_index % 2 == 0)
          drop_us(count);
        else
          attenuate_force(count);
      }
      ++test_index;
    } else {
      const double u = r.uniform01();
      const auto& tc = c.train_corruption;
      if (u < tc.p_us_drop) {
        drop_us(1 + static_cast<int>(r.below(2)));
      } else if (u < tc.p_us_drop + tc.p_force_attenuation) {
        attenuate_force(1 + static_cast<int>(r.below(2)));
      }
      if (r.uniform01() < tc.p_motion_burst) {
        MotionBurst mb;
        mb.position_mm = r.uniform(0.15 * c.scan_length_mm, 0.85 * c.scan_length_mm);
        mb.width_mm = r.uniform(1.0, 3.0);
        mb.amplitude_n = (r.uniform01() < 0.5 ? -1.0 : 1.0) * r.uniform(2.0, 6.0);
        p.corruption.motion_burst = mb;
      }
    }

    validate(p);
    out.emplace_back(std::move(p), split);
  }
  return out;
}

}  // namespace spinefuse
