// spinefuse — synthetic force/ultrasound vertebral level lab.
//
// Subcommands: generate | preprocess | train | evaluate | compare.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spinefuse/errors.hpp"
#include "spinefuse/pipeline.hpp"

namespace {

using spinefuse::RunConfig;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--set", args.overrides,
                  "dotted-path config override, e.g. --set train.epochs=20")
      ->take_all();
  cmd->add_option("--seed", args.seed, "top-level seed override")
      ->each([&args](const std::string&) { args.seed_set = true; });
}

RunConfig resolve_config(const CommonArgs& args) {
  nlohmann::json doc = nlohmann::json::object();
  if (!args.config_path.empty()) {
    std::ifstream in(args.config_path);
    if (!in) throw spinefuse::data_error("cannot open config file: " + args.config_path);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw spinefuse::data_error("config file " + args.config_path + ": " + e.what());
    }
  }
  // overrides and --seed operate on the full document so unknown keys are
  // caught; start from defaults merged with the file
  nlohmann::json full = spinefuse::config_to_json(spinefuse::config_from_json(doc));
  for (const auto& ov : args.overrides) spinefuse::apply_override(full, ov);
  if (args.seed_set) {
    full["seed"] = args.seed;
    const bool train_seed_explicit =
        (doc.contains("train") && doc.at("train").contains("seed"));
    bool override_train_seed = false;
    for (const auto& ov : args.overrides)
      if (ov.rfind("train.seed=", 0) == 0) override_train_seed = true;
    if (!train_seed_explicit && !override_train_seed)
      full["train"]["seed"] = args.seed;
  }
  return spinefuse::config_from_json(full);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic force/ultrasound fusion lab for vertebral level classification"};
  app.require_subcommand(1);

  CommonArgs gen_args, prep_args, train_args, eval_args, cmp_args;

  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset cohort");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset directory")->required();
  add_common(gen, gen_args);

  auto* prep = app.add_subcommand("preprocess", "condition and regrid a dataset");
  std::string prep_data, prep_out;
  prep->add_option("dataset", prep_data, "dataset directory")->required();
  prep->add_option("--out", prep_out, "output directory (default <dataset>/preprocessed)");
  add_common(prep, prep_args);

  auto* tr = app.add_subcommand("train", "train a model on a preprocessed dataset");
  std::string tr_data, tr_out, tr_modality = "fusion";
  tr->add_option("dataset", tr_data, "dataset (or preprocessed) directory")->required();
  tr->add_option("--modality", tr_modality, "force|us|fusion")
      ->check(CLI::IsMember({"force", "us", "fusion"}));
  tr->add_option("--out", tr_out, "output directory")->required();
  add_common(tr, train_args);

  auto* ev = app.add_subcommand("evaluate", "evaluate a model on a split");
  std::string ev_model, ev_data, ev_out;
  double ev_replay = -1.0;
  ev->add_option("model", ev_model, "model file")->required();
  ev->add_option("dataset", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "output directory")->required();
  ev->add_option("--replay-hz", ev_replay, "stream raw samples at this rate first");
  add_common(ev, eval_args);

  auto* cp = app.add_subcommand("compare", "three-way force/us/fusion comparison");
  std::string cp_force, cp_us, cp_fusion, cp_data, cp_out;
  double cp_replay = -1.0;
  cp->add_option("force_model", cp_force, "force-only model file")->required();
  cp->add_option("us_model", cp_us, "us-only model file")->required();
  cp->add_option("fusion_model", cp_fusion, "fusion model file")->required();
  cp->add_option("dataset", cp_data, "dataset directory")->required();
  cp->add_option("--out", cp_out, "output directory")->required();
  cp->add_option("--replay-hz", cp_replay, "stream raw samples at this rate first");
  add_common(cp, cmp_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      const RunConfig cfg = resolve_config(gen_args);
      const auto manifest = spinefuse::cmd_generate(cfg, gen_out);
      std::cout << "generated " << manifest.entries.size() << " sequences into "
                << gen_out << "\n";
    } else if (prep->parsed()) {
      const RunConfig cfg = resolve_config(prep_args);
      const auto manifest = spinefuse::cmd_preprocess(cfg, prep_data, prep_out);
      std::cout << "preprocessed " << manifest.entries.size() << " sequences (grid "
                << manifest.spacing_mm << " mm)\n";
    } else if (tr->parsed()) {
      const RunConfig cfg = resolve_config(train_args);
      const auto out = spinefuse::cmd_train(
          cfg, spinefuse::modality_from_string(tr_modality), tr_data, tr_out);
      std::cout << "trained " << tr_modality << ": best val acc "
                << out.result.best_val_acc << " (epoch " << out.result.best_epoch
                << ") -> " << out.model_path.string() << "\n";
    } else if (ev->parsed()) {
      RunConfig cfg = resolve_config(eval_args);
      if (ev_replay >= 0.0) cfg.eval.replay_hz = ev_replay;
      const auto out = spinefuse::cmd_evaluate(cfg, ev_model, ev_data, ev_out);
      std::cout << "evaluated: " << out.aggregate.n_correct << "/"
                << out.aggregate.n_total << " levels classified -> "
                << out.report_path.string() << "\n";
    } else if (cp->parsed()) {
      RunConfig cfg = resolve_config(cmp_args);
      if (cp_replay >= 0.0) cfg.eval.replay_hz = cp_replay;
      const auto out = spinefuse::cmd_compare(cfg, cp_force, cp_us, cp_fusion,
                                              cp_data, cp_out);
      std::cout << "compare: force " << out.force.n_correct << "/" << out.force.n_total
                << ", us " << out.us.n_correct << "/" << out.us.n_total
                << ", fusion " << out.fusion.n_correct << "/" << out.fusion.n_total
                << " -> " << out.comparison_path.string() << "\n";
    }
  } catch (const spinefuse::param_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const spinefuse::numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const spinefuse::data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
