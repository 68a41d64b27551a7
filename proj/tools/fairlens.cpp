#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fairlens/errors.hpp"
#include "fairlens/experiment.hpp"
#include "fairlens/model.hpp"

namespace {

// Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 data error.
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitData = 4;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool no_center = false;
  bool no_removal = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* config = cmd->add_option("--config", opts.config_path, "Experiment config JSON");
  if (config_required) config->required();
  cmd->add_option("--out", opts.out_dir, "Output directory (overrides config out_dir)");
  cmd->add_option("--seed", opts.seed, "Run a single seed (overrides config seed list)");
  cmd->add_flag("--no-center", opts.no_center, "Uncentered PCA of the delta set");
  cmd->add_flag("--no-removal", opts.no_removal, "Skip the bias-removal arm");
}

fairlens::ExperimentConfig resolve_config(const CommonOpts& opts) {
  fairlens::ExperimentConfig cfg = fairlens::load_config(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.no_center) cfg.analysis.centered = false;
  if (opts.no_removal) cfg.analysis.apply_removal = false;
  return cfg;
}

std::vector<std::uint64_t> resolve_seeds(const fairlens::ExperimentConfig& cfg,
                                         const CommonOpts& opts) {
  if (opts.seed.has_value()) return {*opts.seed};
  return cfg.seeds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bias identification and mitigation for classifiers at desk scale"};
  app.require_subcommand(1);

  CommonOpts gen_opts, train_opts, analyze_opts, eval_opts;
  std::string study;
  std::string repro_out;
  std::optional<std::uint64_t> repro_seed;
  bool repro_list = false;
  bool repro_no_center = false;
  bool repro_no_removal = false;

  auto* generate = app.add_subcommand(
      "generate", "Write train/val/test CSVs and the skew table for each seed");
  add_common(generate, gen_opts, true);

  auto* train = app.add_subcommand(
      "train", "Train the configured variant; writes checkpoint.json and history.json");
  add_common(train, train_opts, true);

  auto* analyze = app.add_subcommand(
      "analyze", "Profile a checkpoint: prototypes, delta spectrum, bias direction");
  add_common(analyze, analyze_opts, true);

  auto* evaluate = app.add_subcommand(
      "evaluate", "Task score plus fairness metrics, with and without removal");
  add_common(evaluate, eval_opts, true);

  auto* reproduce =
      app.add_subcommand("reproduce", "Run a named study end to end over its seed list");
  reproduce->add_option("study", study, "Preset name (see --list)");
  reproduce->add_option("--out", repro_out, "Output directory override");
  reproduce->add_option("--seed", repro_seed, "Run a single seed");
  reproduce->add_flag("--list", repro_list, "List available studies");
  reproduce->add_flag("--no-center", repro_no_center, "Uncentered PCA of the delta set");
  reproduce->add_flag("--no-removal", repro_no_removal, "Skip the bias-removal arm");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      const auto cfg = resolve_config(gen_opts);
      for (std::uint64_t seed : resolve_seeds(cfg, gen_opts)) {
        fairlens::cmd_generate(cfg, seed);
        std::cout << "generated data for seed " << seed << "\n";
      }
    } else if (train->parsed()) {
      const auto cfg = resolve_config(train_opts);
      for (std::uint64_t seed : resolve_seeds(cfg, train_opts)) {
        fairlens::cmd_train(cfg, seed);
        std::cout << "trained " << cfg.variant << " for seed " << seed << "\n";
      }
    } else if (analyze->parsed()) {
      const auto cfg = resolve_config(analyze_opts);
      for (std::uint64_t seed : resolve_seeds(cfg, analyze_opts)) {
        fairlens::cmd_analyze(cfg, seed);
        std::cout << "profiled " << cfg.variant << " for seed " << seed << "\n";
      }
    } else if (evaluate->parsed()) {
      const auto cfg = resolve_config(eval_opts);
      for (std::uint64_t seed : resolve_seeds(cfg, eval_opts)) {
        fairlens::cmd_evaluate(cfg, seed);
        std::cout << "evaluated " << cfg.variant << " for seed " << seed << "\n";
      }
    } else if (reproduce->parsed()) {
      if (repro_list) {
        for (const std::string& name : fairlens::preset_names()) std::cout << name << "\n";
        return 0;
      }
      if (study.empty()) {
        std::cerr << "reproduce: missing study name (try --list)\n";
        return kExitConfig;
      }
      fairlens::ExperimentConfig cfg = fairlens::preset(study);
      if (repro_no_center) cfg.analysis.centered = false;
      if (repro_no_removal) cfg.analysis.apply_removal = false;
      if (!repro_out.empty()) cfg.out_dir = repro_out;
      if (repro_seed.has_value()) cfg.seeds = {*repro_seed};
      const auto report = fairlens::run_and_write_report(cfg);
      std::cout << fairlens::report_to_markdown(report);
    }
  } catch (const fairlens::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fairlens::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const fairlens::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
