#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "man/analysis.hpp"
#include "man/config.hpp"
#include "man/io_util.hpp"
#include "man/model.hpp"
#include "man/rng.hpp"
#include "man/training.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

std::string resolve_output_dir(const man::ExperimentConfig& cfg) {
  if (const char* env = std::getenv("MAN_OUTPUT_DIR")) return env;
  return cfg.output_dir;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  for (char c : s) {
    if (c == ',') {
      if (!item.empty()) out.push_back(item);
      item.clear();
    } else if (c != ' ') {
      item.push_back(c);
    }
  }
  if (!item.empty()) out.push_back(item);
  return out;
}

int cmd_train(const std::string& config_path) {
  const man::ExperimentConfig cfg = man::ExperimentConfig::load(config_path);
  const std::string out_dir = resolve_output_dir(cfg);
  man::ensure_directory(out_dir);

  man::ModelConfig mc = cfg.resolved_model();
  man::Seq2SeqModel model(mc, man::Rng::stream(cfg.seed, "init").next_u64());
  man::SyntheticTask task(cfg.task);

  std::cout << "training " << cfg.ordering << " (" << mc.ordering.kinds_str()
            << ") on " << man::task_kind_name(cfg.task.kind) << ", seed " << cfg.seed << "\n";
  const man::TrainingReport report = man::train(model, task, cfg.train);

  cfg.save(out_dir + "/config.cfg");
  report.write_csv(out_dir + "/report.csv");
  report.write_json(out_dir + "/report.json");
  man::save_checkpoint(model, out_dir + "/checkpoint");

  std::cout << "steps " << report.trained_steps
            << (report.early_stopped ? " (early stop)" : "")
            << "  token_acc " << report.final_token_acc
            << "  exact_match " << report.final_exact_match << "\n"
            << "artifacts in " << out_dir << "\n";
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, std::string orderings_arg,
               int n_seeds, bool include_smans) {
  const man::ExperimentConfig cfg = man::ExperimentConfig::load(config_path);
  const std::string out_dir = resolve_output_dir(cfg);
  man::ensure_directory(out_dir);

  std::vector<std::string> presets = split_list(orderings_arg);
  if (presets.empty()) presets = man::BlockOrdering::preset_names();
  if (include_smans) {
    presets.push_back("SMAN1");
    presets.push_back("SMAN2");
  }
  // Validate preset names up front so typos exit with a config error.
  for (const std::string& p : presets) {
    man::ModelConfig probe = cfg.model;
    try {
      man::apply_ordering_preset(probe, p);
    } catch (const std::invalid_argument& e) {
      throw man::ConfigError(e.what());
    }
  }

  std::vector<std::uint64_t> seeds = cfg.seeds;
  if (n_seeds > 0) {
    seeds.clear();
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  }

  man::ModelConfig mc = cfg.model;
  mc.vocab = cfg.task.vocab;

  std::cout << "ablation over " << presets.size() << " orderings x " << seeds.size() << " seeds\n";
  const man::AblationTable table = man::run_ablation(presets, mc, cfg.task, cfg.train, seeds);

  cfg.save(out_dir + "/config.cfg");
  table.write_csv(out_dir + "/ablation.csv");
  table.write_json(out_dir + "/ablation.json");
  std::cout << table.csv_string() << "artifacts in " << out_dir << "\n";
  return kExitOk;
}

int cmd_analyze(const std::string& config_path, const std::string& checkpoint,
                const std::string& windows_arg, const std::string& layers_arg,
                int dataset_size) {
  const man::ExperimentConfig cfg = man::ExperimentConfig::load(config_path);
  const std::string out_dir = resolve_output_dir(cfg);
  man::ensure_directory(out_dir);

  const man::ModelConfig mc = cfg.resolved_model();
  man::Seq2SeqModel model = man::load_checkpoint(checkpoint, mc);

  man::SyntheticTask task(cfg.task);
  man::Rng eval_rng = man::Rng::stream(cfg.seed, "data.eval");
  const int n = dataset_size > 0 ? dataset_size : cfg.train.eval_size;
  std::vector<std::vector<int>> dataset;
  for (const man::Sample& s : task.eval_set(n, eval_rng)) dataset.push_back(s.src);

  std::vector<int> windows;
  for (const std::string& w : split_list(windows_arg)) windows.push_back(std::stoi(w));

  std::vector<int> layers;
  if (layers_arg == "all") {
    for (int l = 1; l <= mc.enc_layers; ++l) layers.push_back(l);
  } else {
    for (const std::string& l : split_list(layers_arg)) layers.push_back(std::stoi(l));
  }

  const man::AttnRecord record = man::capture_attention(model, dataset, man::task_kind_name(cfg.task.kind));
  const man::LocalityReport report = man::build_locality_report(record, windows, layers);

  report.write_csv(out_dir + "/locality.csv");
  report.write_json(out_dir + "/locality.json");
  std::cout << report.csv_string() << "artifacts in " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mask-attention-network experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string orderings = "";
  int n_seeds = 0;
  bool include_smans = false;
  std::string checkpoint;
  std::string windows = "1,2,4";
  std::string layers = "all";
  int dataset_size = 0;

  CLI::App* train = app.add_subcommand("train", "train one model from a config file");
  train->add_option("--config", config_path, "experiment config file")->required();

  CLI::App* ablate = app.add_subcommand("ablate", "train every ordering preset and tabulate accuracy");
  ablate->add_option("--config", config_path, "experiment config file")->required();
  ablate->add_option("--orderings", orderings, "comma-separated preset names (default: C1..C5)");
  ablate->add_option("--seeds", n_seeds, "run N seeds starting at the config seed");
  ablate->add_flag("--smans", include_smans, "also run the SMAN1/SMAN2 static-mask presets");

  CLI::App* analyze = app.add_subcommand("analyze", "windowed attention-mass report for a trained model");
  analyze->add_option("--config", config_path, "experiment config file")->required();
  analyze->add_option("--checkpoint", checkpoint, "checkpoint base path (without .json/.bin)")->required();
  analyze->add_option("--windows", windows, "comma-separated window sizes (default 1,2,4)");
  analyze->add_option("--layers", layers, "comma-separated 1-based encoder layers or 'all'");
  analyze->add_option("--dataset-size", dataset_size, "number of held-out sentences (default: train.eval_size)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (ablate->parsed()) return cmd_ablate(config_path, orderings, n_seeds, include_smans);
    if (analyze->parsed()) return cmd_analyze(config_path, checkpoint, windows, layers, dataset_size);
  } catch (const man::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
