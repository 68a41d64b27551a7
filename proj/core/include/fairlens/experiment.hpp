#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fairlens/bias.hpp"
#include "fairlens/dataset.hpp"
#include "fairlens/fairness.hpp"
#include "fairlens/model.hpp"

namespace fairlens {

struct AnalysisOptions {
  bool centered = true;        // mean-centered PCA of delta
  bool apply_removal = true;   // evaluate a bias-removal arm as well
  double multilabel_threshold = 1.0;  // ensemble score >= threshold => positive
};

struct ExperimentConfig {
  std::string name = "custom";
  TaskMode task = TaskMode::kMulticlass;
  GenConfig gen;
  std::string data_dir;  // when set, load CSVs from here instead of generating
  EncoderSpec encoder;
  int embed_dim = 128;
  TrainConfig train;
  std::string variant = "baseline";  // baseline | protected (single-run commands)
  AnalysisOptions analysis;
  std::string out_dir = "out";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int val_per_class = 100;
  int test_per_class = 200;
  double test_skew = 0.5;  // evaluation splits are balanced by default

  void validate() const;  // throws ConfigError
};

/// Parse/serialize the single-document JSON config. Parse errors report the
/// JSON pointer path of the offending field.
ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg, int indent = 2);

/// Named desk-scale reproductions.
std::vector<std::string> preset_names();
ExperimentConfig preset(const std::string& name);  // ConfigError lists names if unknown

/// In-memory splits for one seed. `cross` is the crossed-bias evaluation
/// split of the extreme-bias presets, empty otherwise.
struct DataBundle {
  Dataset train;
  Dataset val;
  Dataset test;
  Dataset cross;

  bool has_cross() const { return !cross.samples.empty(); }
};

DataBundle make_data(const ExperimentConfig& cfg, std::uint64_t seed);

/// Per-arm metrics of one seed. Fairness gaps are fractions; the task score
/// and cross accuracy are percent.
struct ArmMetrics {
  double task_score = 0.0;
  double amplification = 0.0;
  double amplification_noniid = 0.0;
  double parity = 0.0;
  double opportunity = 0.0;
  double odds = 0.0;
  double pc1_ratio = 0.0;
  double skewness = 0.0;
  double cross_accuracy = 0.0;  // NaN when the preset has no crossed split
  int best_epoch = -1;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, ArmMetrics> arms;  // baseline / protected / protected_removal
  double seconds = 0.0;
};

struct RunReport {
  ExperimentConfig config;
  std::vector<SeedResult> per_seed;
  // aggregate[arm][metric] = {mean, std}; filled by finalize_report.
  std::map<std::string, std::map<std::string, std::pair<double, double>>> aggregate;
  double total_seconds = 0.0;
};

/// Train one variant on a bundle. Writes nothing.
ClassifierModel train_variant(const ExperimentConfig& cfg, const DataBundle& data,
                              std::uint64_t seed, const std::string& variant,
                              TrainHistory* history = nullptr);

/// Features-only predictions over a dataset; removal (when `bias_dir` is
/// non-null) projects every feature off the direction before the heads.
PredictionLog predict_log(const ClassifierModel& model, const Dataset& ds,
                          const AnalysisOptions& opts, double temperature,
                          const Vector* bias_dir = nullptr);

/// Metrics for one trained arm: test metrics, train-profile summary, and
/// cross-split accuracy when present. `bias_dir` enables the removal path
/// and must come from the training split.
ArmMetrics evaluate_arm(const ClassifierModel& model, const DataBundle& data,
                        const ExperimentConfig& cfg, const Vector* bias_dir);

/// Full study over the config's seed list: baseline and protected arms,
/// plus protected_removal when analysis.apply_removal is set. Per-seed runs
/// honor the FAIRLENS_THREADS cap.
RunReport run_study(const ExperimentConfig& cfg);

std::string report_to_json(const RunReport& report, int indent = 2);
std::string report_to_markdown(const RunReport& report);

// ---- CLI commands. Each derives its file layout from (config, out, seed):
//   <out>/data/seed_<k>/{train,val,test,cross}.csv + skew.json
//   <out>/runs/<variant>/seed_<k>/{checkpoint,history,profile,metrics}.json
//   <out>/report.json + report.md  (reproduce)

void cmd_generate(const ExperimentConfig& cfg, std::uint64_t seed);
void cmd_train(const ExperimentConfig& cfg, std::uint64_t seed);
void cmd_analyze(const ExperimentConfig& cfg, std::uint64_t seed);
void cmd_evaluate(const ExperimentConfig& cfg, std::uint64_t seed);

/// run_study plus report.json / report.md under cfg.out_dir.
RunReport run_and_write_report(const ExperimentConfig& cfg);
RunReport cmd_reproduce(const std::string& study, const std::string& out_override,
                        std::optional<std::uint64_t> seed_override);

}  // namespace fairlens
