#include "fairlens/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "fairlens/errors.hpp"
#include "fairlens/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace fairlens {

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("config error at /seeds: need at least one seed");
  if (variant != "baseline" && variant != "protected")
    throw ConfigError("config error at /variant: must be 'baseline' or 'protected'");
  if (embed_dim < 1) throw ConfigError("config error at /embed_dim: must be >= 1");
  if (val_per_class < 0) throw ConfigError("config error at /val_per_class: must be >= 0");
  if (test_per_class < 2) throw ConfigError("config error at /test_per_class: must be >= 2");
  if (test_skew < 0.5 || test_skew > 1.0)
    throw ConfigError("config error at /test_skew: must lie in [0.5, 1]");
  if (analysis.multilabel_threshold < 0.0 || analysis.multilabel_threshold > 2.0)
    throw ConfigError("config error at /analysis/multilabel_threshold: must lie in [0, 2]");
  try {
    encoder.validate();
    train.validate();
    GenConfig g = gen;
    g.task = task;
    g.validate();
  } catch (const ConfigError& e) {
    throw ConfigError("config error: " + std::string(e.what()));
  }
  if (task != TaskMode::kMulticlass && gen.num_labels < 1)
    throw ConfigError("config error at /gen/num_labels: must be >= 1 for multilabel/binary");
  if (encoder.input_dim() != gen.feature_dim && data_dir.empty())
    throw ConfigError("config error at /encoder/widths: input width " +
                      std::to_string(encoder.input_dim()) + " != gen.feature_dim " +
                      std::to_string(gen.feature_dim));
}

// ---- JSON config ------------------------------------------------------

namespace {

void check_keys(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; }) == allowed.end()) {
      throw ConfigError("config error at " + path + "/" + it.key() + ": unknown field");
    }
  }
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& path, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config error at " + path + "/" + key + ": wrong type");
  }
}

GenConfig gen_from_json(const json& j, TaskMode task, const std::string& path) {
  check_keys(j, path,
             {"num_classes", "num_labels", "feature_dim", "per_class", "skew", "sigma",
              "attr_shift", "label_shift", "shift_mode", "seed"});
  GenConfig g;
  g.task = task;
  g.num_classes = get_field(j, "num_classes", path, g.num_classes);
  g.num_labels = get_field(j, "num_labels", path, g.num_labels);
  g.feature_dim = get_field(j, "feature_dim", path, g.feature_dim);
  g.per_class = get_field(j, "per_class", path, g.per_class);
  g.skew = get_field(j, "skew", path, g.skew);
  g.sigma = get_field(j, "sigma", path, g.sigma);
  g.attr_shift = get_field(j, "attr_shift", path, g.attr_shift);
  g.label_shift = get_field(j, "label_shift", path, g.label_shift);
  g.seed = get_field<std::uint64_t>(j, "seed", path, g.seed);
  const std::string mode = get_field<std::string>(j, "shift_mode", path, "shared");
  if (mode == "shared") g.shift_mode = ShiftMode::kSharedDirection;
  else if (mode == "per-class") g.shift_mode = ShiftMode::kPerClassDirection;
  else throw ConfigError("config error at " + path + "/shift_mode: must be 'shared' or 'per-class'");
  return g;
}

TrainConfig train_from_json(const json& j, const std::string& path) {
  check_keys(j, path,
             {"learning_rate", "momentum", "weight_decay", "batch_size", "epochs", "schedule",
              "step_factor", "step_period", "exp_decay", "temperature", "head_update", "seed"});
  TrainConfig t;
  t.learning_rate = get_field(j, "learning_rate", path, t.learning_rate);
  t.momentum = get_field(j, "momentum", path, t.momentum);
  t.weight_decay = get_field(j, "weight_decay", path, t.weight_decay);
  t.batch_size = get_field(j, "batch_size", path, t.batch_size);
  t.epochs = get_field(j, "epochs", path, t.epochs);
  t.step_factor = get_field(j, "step_factor", path, t.step_factor);
  t.step_period = get_field(j, "step_period", path, t.step_period);
  t.exp_decay = get_field(j, "exp_decay", path, t.exp_decay);
  t.temperature = get_field(j, "temperature", path, t.temperature);
  t.seed = get_field<std::uint64_t>(j, "seed", path, t.seed);
  const std::string sched = get_field<std::string>(j, "schedule", path, "step");
  if (sched == "step") t.schedule = LrSchedule::kStep;
  else if (sched == "exponential") t.schedule = LrSchedule::kExponential;
  else throw ConfigError("config error at " + path + "/schedule: must be 'step' or 'exponential'");
  const std::string update = get_field<std::string>(j, "head_update", path, "matched");
  if (update == "matched") t.head_update = HeadUpdate::kMatched;
  else if (update == "both") t.head_update = HeadUpdate::kBoth;
  else throw ConfigError("config error at " + path + "/head_update: must be 'matched' or 'both'");
  return t;
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError("config error: invalid JSON: " + std::string(e.what()));
  }
  check_keys(j, "",
             {"name", "task", "gen", "data_dir", "encoder", "embed_dim", "train", "variant",
              "analysis", "out_dir", "seeds", "val_per_class", "test_per_class", "test_skew"});
  ExperimentConfig cfg;
  cfg.name = get_field<std::string>(j, "name", "", cfg.name);
  cfg.task = task_mode_from_string(get_field<std::string>(j, "task", "", "multiclass"));
  if (j.contains("gen")) cfg.gen = gen_from_json(j.at("gen"), cfg.task, "/gen");
  cfg.gen.task = cfg.task;
  if (cfg.task == TaskMode::kBinary) cfg.gen.num_labels = 1;
  cfg.data_dir = get_field<std::string>(j, "data_dir", "", cfg.data_dir);
  if (j.contains("encoder")) {
    check_keys(j.at("encoder"), "/encoder", {"widths"});
    cfg.encoder.widths = get_field<std::vector<int>>(j.at("encoder"), "widths", "/encoder",
                                                     cfg.encoder.widths);
  } else {
    // Default encoder tracks the generated feature dimension.
    cfg.encoder.widths.front() = cfg.gen.feature_dim;
  }
  cfg.embed_dim = get_field(j, "embed_dim", "", cfg.embed_dim);
  if (j.contains("train")) cfg.train = train_from_json(j.at("train"), "/train");
  cfg.variant = get_field<std::string>(j, "variant", "", cfg.variant);
  if (j.contains("analysis")) {
    const json& a = j.at("analysis");
    check_keys(a, "/analysis", {"centered", "apply_removal", "multilabel_threshold"});
    cfg.analysis.centered = get_field(a, "centered", "/analysis", cfg.analysis.centered);
    cfg.analysis.apply_removal =
        get_field(a, "apply_removal", "/analysis", cfg.analysis.apply_removal);
    cfg.analysis.multilabel_threshold =
        get_field(a, "multilabel_threshold", "/analysis", cfg.analysis.multilabel_threshold);
  }
  cfg.out_dir = get_field<std::string>(j, "out_dir", "", cfg.out_dir);
  cfg.seeds = get_field<std::vector<std::uint64_t>>(j, "seeds", "", cfg.seeds);
  cfg.val_per_class = get_field(j, "val_per_class", "", cfg.val_per_class);
  cfg.test_per_class = get_field(j, "test_per_class", "", cfg.test_per_class);
  cfg.test_skew = get_field(j, "test_skew", "", cfg.test_skew);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

namespace {

json config_to_json_value(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["task"] = to_string(cfg.task);
  j["gen"] = {{"num_classes", cfg.gen.num_classes},
              {"num_labels", cfg.gen.num_labels},
              {"feature_dim", cfg.gen.feature_dim},
              {"per_class", cfg.gen.per_class},
              {"skew", cfg.gen.skew},
              {"sigma", cfg.gen.sigma},
              {"attr_shift", cfg.gen.attr_shift},
              {"label_shift", cfg.gen.label_shift},
              {"shift_mode",
               cfg.gen.shift_mode == ShiftMode::kSharedDirection ? "shared" : "per-class"},
              {"seed", cfg.gen.seed}};
  if (!cfg.data_dir.empty()) j["data_dir"] = cfg.data_dir;
  j["encoder"] = {{"widths", cfg.encoder.widths}};
  j["embed_dim"] = cfg.embed_dim;
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"momentum", cfg.train.momentum},
                {"weight_decay", cfg.train.weight_decay},
                {"batch_size", cfg.train.batch_size},
                {"epochs", cfg.train.epochs},
                {"schedule", cfg.train.schedule == LrSchedule::kStep ? "step" : "exponential"},
                {"step_factor", cfg.train.step_factor},
                {"step_period", cfg.train.step_period},
                {"exp_decay", cfg.train.exp_decay},
                {"temperature", cfg.train.temperature},
                {"head_update",
                 cfg.train.head_update == HeadUpdate::kMatched ? "matched" : "both"}};
  j["variant"] = cfg.variant;
  j["analysis"] = {{"centered", cfg.analysis.centered},
                   {"apply_removal", cfg.analysis.apply_removal},
                   {"multilabel_threshold", cfg.analysis.multilabel_threshold}};
  j["out_dir"] = cfg.out_dir;
  j["seeds"] = cfg.seeds;
  j["val_per_class"] = cfg.val_per_class;
  j["test_per_class"] = cfg.test_per_class;
  j["test_skew"] = cfg.test_skew;
  return j;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg, int indent) {
  return config_to_json_value(cfg).dump(indent);
}

// ---- Presets -----------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"cifar10s-synthetic", "celeba-synthetic", "imdb-eb-synthetic"};
}

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig cfg;
  cfg.name = name;
  if (name == "cifar10s-synthetic") {
    // Color-bias analog: 10 Gaussian classes, 95/5 attribute skew, shift
    // at 4 sigma along a shared direction; balanced evaluation splits.
    cfg.task = TaskMode::kMulticlass;
    cfg.gen.task = cfg.task;
    cfg.gen.num_classes = 10;
    cfg.gen.feature_dim = 32;
    cfg.gen.per_class = 500;
    cfg.gen.skew = 0.95;
    cfg.gen.sigma = 1.0;
    cfg.gen.attr_shift = 4.0;
    cfg.encoder.widths = {32, 64, 64, 32};
    cfg.embed_dim = 128;
    cfg.train.epochs = 60;
    cfg.train.batch_size = 128;
    cfg.train.temperature = 0.1;
    cfg.train.schedule = LrSchedule::kStep;
    cfg.train.step_period = 20;
    cfg.val_per_class = 100;
    cfg.test_per_class = 200;
  } else if (name == "celeba-synthetic") {
    // Face-attribute analog: 6 binary labels, each skewed 90/10 toward an
    // alternating attribute value; selection by validation weighted mAP.
    cfg.task = TaskMode::kMultilabel;
    cfg.gen.task = cfg.task;
    cfg.gen.num_labels = 6;
    cfg.gen.feature_dim = 32;
    cfg.gen.per_class = 2000;  // per attribute group
    cfg.gen.skew = 0.9;
    cfg.gen.sigma = 1.0;
    cfg.gen.attr_shift = 2.0;
    cfg.gen.label_shift = 2.0;
    cfg.encoder.widths = {32, 64, 64, 32};
    cfg.embed_dim = 128;
    cfg.train.epochs = 25;
    cfg.train.batch_size = 32;
    cfg.train.temperature = 0.05;
    cfg.train.schedule = LrSchedule::kStep;
    cfg.train.step_period = 10;
    cfg.val_per_class = 500;
    cfg.test_per_class = 1000;
  } else if (name == "imdb-eb-synthetic") {
    // Extreme-bias analog: training cells fully confound label and
    // attribute; the crossed split inverts them. Both protected heads are
    // updated and the lr decays exponentially per step.
    cfg.task = TaskMode::kBinary;
    cfg.gen.task = cfg.task;
    cfg.gen.num_labels = 1;
    cfg.gen.feature_dim = 32;
    cfg.gen.per_class = 1500;  // per (y, v) cell
    cfg.gen.sigma = 1.2;
    cfg.gen.attr_shift = 1.6;
    cfg.gen.label_shift = 1.0;
    cfg.encoder.widths = {32, 64, 64, 32};
    cfg.embed_dim = 128;
    cfg.train.epochs = 30;
    cfg.train.batch_size = 128;
    cfg.train.temperature = 0.1;
    cfg.train.schedule = LrSchedule::kExponential;
    cfg.train.exp_decay = 0.999;
    cfg.train.head_update = HeadUpdate::kBoth;
    cfg.analysis.apply_removal = false;  // PCA on a single delta row is not informative
    cfg.test_per_class = 750;
    cfg.val_per_class = 0;
  } else {
    std::string names;
    for (const std::string& n : preset_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("unknown preset '" + name + "'; available: " + names);
  }
  cfg.validate();
  return cfg;
}

// ---- Data --------------------------------------------------------------

DataBundle make_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  GenConfig gen = cfg.gen;
  gen.task = cfg.task;
  gen.seed = seed;
  DataBundle data;
  if (cfg.task == TaskMode::kBinary) {
    ExtremeBiasSplits splits = generate_extreme_bias(gen);
    data.train = std::move(splits.eb1);
    data.cross = std::move(splits.eb2);
    data.test = std::move(splits.test);
    data.val.task = TaskMode::kBinary;
    return data;
  }
  const Geometry geom = make_geometry(gen);
  data.train = sample_dataset(geom, gen, gen.skew, gen.per_class, derive_seed(seed, 1));
  if (cfg.val_per_class > 0)
    data.val = sample_dataset(geom, gen, cfg.test_skew, cfg.val_per_class, derive_seed(seed, 2));
  else
    data.val.task = cfg.task;
  data.test = sample_dataset(geom, gen, cfg.test_skew, cfg.test_per_class, derive_seed(seed, 3));
  return data;
}

// ---- Training and evaluation -------------------------------------------

ClassifierModel train_variant(const ExperimentConfig& cfg, const DataBundle& data,
                              std::uint64_t seed, const std::string& variant,
                              TrainHistory* history) {
  const bool baseline = variant == "baseline";
  if (!baseline && variant != "protected")
    throw ConfigError("train_variant: unknown variant '" + variant + "'");
  Rng init_rng(derive_seed(seed, baseline ? 21 : 22));
  ClassifierModel model = init_model(
      cfg.task, baseline ? HeadVariant::kBaseline : HeadVariant::kProtected, cfg.encoder,
      data.train.num_classes, data.train.num_labels, cfg.embed_dim, init_rng);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(seed, baseline ? 31 : 32);
  TrainHistory hist = train(model, data.train, data.val, tc);
  if (history != nullptr) *history = std::move(hist);
  return model;
}

PredictionLog predict_log(const ClassifierModel& model, const Dataset& ds,
                          const AnalysisOptions& opts, double temperature,
                          const Vector* bias_dir) {
  PredictionLog log;
  log.task = ds.task;
  log.num_classes = ds.num_classes;
  log.num_labels = ds.num_labels;
  const bool baseline = model.variant == HeadVariant::kBaseline;
  // The baseline emits probabilities in [0, 1]; the ensemble sums two
  // heads, so its scores live in [0, 2]. The same threshold knob drives
  // both at matching operating points.
  const double threshold = baseline ? opts.multilabel_threshold / 2.0 : opts.multilabel_threshold;
  for (const Sample& s : ds.samples) {
    PredictionRecord rec;
    rec.attribute = s.attribute;
    Vector h = forward_features(model, s.features);
    if (bias_dir != nullptr) h = remove_bias(h, *bias_dir);
    if (ds.task == TaskMode::kMulticlass) {
      rec.true_label = s.label;
      rec.predicted_label =
          baseline ? argmax_lowest(baseline_probs_from_features(model, h, 1.0))
                   : argmax_lowest(ensemble_probs_multiclass_from_features(model, h, temperature));
    } else {
      rec.true_labels = s.labels;
      rec.scores = baseline ? baseline_scores_multilabel_from_features(model, h)
                            : ensemble_scores_multilabel_from_features(model, h, temperature);
      for (double sc : rec.scores) rec.predicted_labels.push_back(sc >= threshold ? 1 : 0);
    }
    log.records.push_back(std::move(rec));
  }
  return log;
}

ArmMetrics evaluate_arm(const ClassifierModel& model, const DataBundle& data,
                        const ExperimentConfig& cfg, const Vector* bias_dir) {
  ArmMetrics m;
  const double tau = cfg.train.temperature;
  const PredictionLog log = predict_log(model, data.test, cfg.analysis, tau, bias_dir);
  const MetricReport report = evaluate_metrics(log, data.train.skew);
  m.task_score = report.task_score;
  m.amplification = report.amplification.value;
  m.amplification_noniid = report.amplification_noniid.value;
  m.parity = report.parity.value;
  m.opportunity = report.opportunity.value;
  m.odds = report.odds.value;

  const BiasProfile profile =
      bias_dir == nullptr
          ? profile_model(model, data.train, cfg.analysis.centered)
          : profile_model_removed(model, data.train, *bias_dir, cfg.analysis.centered);
  m.pc1_ratio = profile.ratios.empty() ? std::nan("") : profile.ratios[0];
  m.skewness = profile.skewness;

  if (data.has_cross()) {
    const PredictionLog cross_log = predict_log(model, data.cross, cfg.analysis, tau, bias_dir);
    m.cross_accuracy = per_class_accuracy(cross_log);
  } else {
    m.cross_accuracy = std::nan("");
  }
  return m;
}

// ---- Study -------------------------------------------------------------

namespace {

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  SeedResult result;
  result.seed = seed;
  const DataBundle data = make_data(cfg, seed);

  TrainHistory hist_base;
  const ClassifierModel base = train_variant(cfg, data, seed, "baseline", &hist_base);
  ArmMetrics base_metrics = evaluate_arm(base, data, cfg, nullptr);
  base_metrics.best_epoch = hist_base.best_epoch;
  result.arms["baseline"] = base_metrics;

  TrainHistory hist_prot;
  const ClassifierModel prot = train_variant(cfg, data, seed, "protected", &hist_prot);
  ArmMetrics prot_metrics = evaluate_arm(prot, data, cfg, nullptr);
  prot_metrics.best_epoch = hist_prot.best_epoch;
  result.arms["protected"] = prot_metrics;

  if (cfg.analysis.apply_removal) {
    // b comes from the training split only.
    const Vector b = profile_model(prot, data.train, cfg.analysis.centered).direction;
    ArmMetrics removed = evaluate_arm(prot, data, cfg, &b);
    removed.best_epoch = hist_prot.best_epoch;
    result.arms["protected_removal"] = removed;
  }

  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

int thread_cap() {
  if (const char* env = std::getenv("FAIRLENS_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min(4u, hw == 0 ? 1u : hw));
}

const std::vector<std::pair<std::string, double ArmMetrics::*>>& metric_fields() {
  static const std::vector<std::pair<std::string, double ArmMetrics::*>> fields = {
      {"task_score", &ArmMetrics::task_score},
      {"bias_amplification", &ArmMetrics::amplification},
      {"bias_amplification_noniid", &ArmMetrics::amplification_noniid},
      {"parity", &ArmMetrics::parity},
      {"opportunity", &ArmMetrics::opportunity},
      {"odds", &ArmMetrics::odds},
      {"pc1_ratio", &ArmMetrics::pc1_ratio},
      {"skewness", &ArmMetrics::skewness},
      {"cross_accuracy", &ArmMetrics::cross_accuracy},
  };
  return fields;
}

void finalize_report(RunReport& report) {
  report.aggregate.clear();
  if (report.per_seed.empty()) return;
  for (const auto& [arm, unused] : report.per_seed.front().arms) {
    (void)unused;
    for (const auto& [metric, member] : metric_fields()) {
      std::vector<double> values;
      for (const SeedResult& s : report.per_seed) values.push_back(s.arms.at(arm).*member);
      if (std::any_of(values.begin(), values.end(), [](double v) { return !std::isfinite(v); }))
        continue;  // e.g. cross_accuracy without a crossed split
      const double n = static_cast<double>(values.size());
      const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      const double stddev = values.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
      report.aggregate[arm][metric] = {mean, stddev};
    }
  }
}

}  // namespace

RunReport run_study(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  RunReport report;
  report.config = cfg;
  report.per_seed.resize(cfg.seeds.size());

  const int cap = std::max(1, std::min<int>(thread_cap(), static_cast<int>(cfg.seeds.size())));
  if (cap == 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
      report.per_seed[i] = run_seed(cfg, cfg.seeds[i]);
  } else {
    std::size_t next = 0;
    while (next < cfg.seeds.size()) {
      const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cap),
                                                      cfg.seeds.size() - next);
      std::vector<std::future<SeedResult>> futures;
      for (std::size_t k = 0; k < batch; ++k) {
        const std::uint64_t seed = cfg.seeds[next + k];
        futures.push_back(std::async(std::launch::async, [&cfg, seed] { return run_seed(cfg, seed); }));
      }
      for (std::size_t k = 0; k < batch; ++k) report.per_seed[next + k] = futures[k].get();
      next += batch;
    }
  }

  finalize_report(report);
  report.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---- Report rendering ---------------------------------------------------

std::string report_to_json(const RunReport& report, int indent) {
  json j;
  j["preset"] = report.config.name;
  j["task"] = to_string(report.config.task);
  j["task_score_name"] =
      report.config.task == TaskMode::kMulticlass ? "per_class_accuracy" : "weighted_map";
  j["config"] = config_to_json_value(report.config);
  j["bias_direction_provenance"] = "train";
  json seeds = json::array();
  for (const SeedResult& s : report.per_seed) seeds.push_back(s.seed);
  j["seeds"] = std::move(seeds);

  json arms;
  if (!report.per_seed.empty()) {
    for (const auto& [arm, unused] : report.per_seed.front().arms) {
      (void)unused;
      json per_seed = json::array();
      for (const SeedResult& s : report.per_seed) {
        const ArmMetrics& m = s.arms.at(arm);
        json row;
        row["seed"] = s.seed;
        row["best_epoch"] = m.best_epoch;
        for (const auto& [metric, member] : metric_fields()) row[metric] = m.*member;
        per_seed.push_back(std::move(row));
      }
      json aggregate;
      if (auto it = report.aggregate.find(arm); it != report.aggregate.end()) {
        for (const auto& [metric, stats] : it->second)
          aggregate[metric] = {{"mean", stats.first}, {"std", stats.second}};
      }
      arms[arm] = {{"per_seed", std::move(per_seed)}, {"aggregate", std::move(aggregate)}};
    }
  }
  j["arms"] = std::move(arms);

  json timing;
  timing["total_seconds"] = report.total_seconds;
  json per_seed_seconds = json::array();
  for (const SeedResult& s : report.per_seed) per_seed_seconds.push_back(s.seconds);
  timing["per_seed_seconds"] = std::move(per_seed_seconds);
  j["timing"] = std::move(timing);
  return j.dump(indent);
}

namespace {

std::string fmt2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string fmt3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string report_to_markdown(const RunReport& report) {
  const ExperimentConfig& cfg = report.config;
  const bool crossed_eval = cfg.task == TaskMode::kBinary || cfg.test_skew != cfg.gen.skew;
  const bool has_cross = !report.per_seed.empty() &&
                         report.aggregate.count("baseline") != 0U &&
                         report.aggregate.at("baseline").count("cross_accuracy") != 0U;

  std::ostringstream md;
  md << "# " << cfg.name << "\n\n";
  md << "Task: " << to_string(cfg.task) << "; seeds:";
  for (const SeedResult& s : report.per_seed) md << " " << s.seed;
  md << "\n\n";
  md << "Fairness gaps are percent (x100); the amplification column uses the "
     << (crossed_eval ? "non-i.i.d. (Wang)" : "i.i.d. (Zhao)") << " form.\n\n";

  const std::string score_col = cfg.task == TaskMode::kMulticlass ? "Acc. (%)" : "mAP (%)";
  md << "| Model | Loss | " << score_col << " | Bias | Parity (%) | Opp. (%) | Odds (%) |";
  if (has_cross) md << " Cross acc. (%) |";
  md << "\n|---|---|---|---|---|---|---|";
  if (has_cross) md << "---|";
  md << "\n";

  struct Row {
    const char* arm;
    const char* label;
    const char* loss;
  };
  const std::vector<Row> rows = {
      {"baseline", "Baseline", cfg.task == TaskMode::kMulticlass ? "N-way softmax" : "N 2-way softmax"},
      {"protected", "Protected", "N-way cos softmax x 2"},
      {"protected_removal", "+ removal", "N-way cos softmax x 2"},
  };
  for (const Row& row : rows) {
    const auto it = report.aggregate.find(row.arm);
    if (it == report.aggregate.end()) continue;
    const auto& agg = it->second;
    auto stat = [&](const std::string& key, double scale, bool three) -> std::string {
      const auto m = agg.find(key);
      if (m == agg.end()) return "-";
      const auto [mean, stddev] = m->second;
      return (three ? fmt3(mean * scale) : fmt2(mean * scale)) + " ± " +
             (three ? fmt3(stddev * scale) : fmt2(stddev * scale));
    };
    md << "| " << row.label << " | " << row.loss << " | " << stat("task_score", 1.0, false)
       << " | "
       << stat(crossed_eval ? "bias_amplification_noniid" : "bias_amplification", 1.0, true)
       << " | " << stat("parity", 100.0, false) << " | " << stat("opportunity", 100.0, false)
       << " | " << stat("odds", 100.0, false) << " |";
    if (has_cross) md << " " << stat("cross_accuracy", 1.0, false) << " |";
    md << "\n";
  }

  md << "\nProfile of the training-set delta spectrum (PC1 ratio / skewness):\n\n";
  for (const Row& row : rows) {
    const auto it = report.aggregate.find(row.arm);
    if (it == report.aggregate.end()) continue;
    const auto& agg = it->second;
    const auto pc1 = agg.find("pc1_ratio");
    const auto skew = agg.find("skewness");
    md << "- " << row.label << ": PC1 "
       << (pc1 != agg.end() ? fmt3(pc1->second.first) : std::string("-")) << ", skewness "
       << (skew != agg.end() ? fmt3(skew->second.first) : std::string("-")) << "\n";
  }
  return md.str();
}

// ---- CLI commands --------------------------------------------------------

namespace {

fs::path data_dir_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.data_dir.empty()) return cfg.data_dir;
  return fs::path(cfg.out_dir) / "data" / ("seed_" + std::to_string(seed));
}

fs::path run_dir_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  return fs::path(cfg.out_dir) / "runs" / cfg.variant / ("seed_" + std::to_string(seed));
}

DataBundle load_bundle(const ExperimentConfig& cfg, std::uint64_t seed) {
  const fs::path dir = data_dir_for(cfg, seed);
  const fs::path train_path = dir / "train.csv";
  if (!fs::exists(train_path))
    throw DataError("no dataset at '" + train_path.string() + "'; run `fairlens generate` first");
  DataBundle data;
  data.train = load_csv(train_path.string());
  data.val.task = data.train.task;
  if (fs::exists(dir / "val.csv")) data.val = load_csv((dir / "val.csv").string());
  data.test = load_csv((dir / "test.csv").string());
  data.cross.task = data.train.task;
  if (fs::exists(dir / "cross.csv")) data.cross = load_csv((dir / "cross.csv").string());
  return data;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!text.empty() && text.back() != '\n') out << "\n";
}

json history_to_json(const TrainHistory& history) {
  json epochs = json::array();
  for (const EpochStats& e : history.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"lr", e.lr},
                      {"train_loss", e.train_loss},
                      {"train_metric", e.train_metric},
                      {"val_metric", e.val_metric}});
  }
  return {{"epochs", std::move(epochs)}, {"best_epoch", history.best_epoch}};
}

}  // namespace

void cmd_generate(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const DataBundle data = make_data(cfg, seed);
  const fs::path dir = data_dir_for(cfg, seed);
  fs::create_directories(dir);
  save_csv(data.train, (dir / "train.csv").string());
  if (!data.val.samples.empty()) save_csv(data.val, (dir / "val.csv").string());
  save_csv(data.test, (dir / "test.csv").string());
  if (data.has_cross()) save_csv(data.cross, (dir / "cross.csv").string());
  save_skew_json(data.train.skew, (dir / "skew.json").string());
}

void cmd_train(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const DataBundle data = load_bundle(cfg, seed);
  const fs::path dir = run_dir_for(cfg, seed);
  fs::create_directories(dir);
  TrainHistory history;
  try {
    const ClassifierModel model = train_variant(cfg, data, seed, cfg.variant, &history);
    save_checkpoint(model, (dir / "checkpoint.json").string());
    write_text(dir / "history.json", history_to_json(history).dump(2));
  } catch (const DivergenceError& e) {
    write_text(dir / "history.json", history_to_json(e.history).dump(2));
    throw;
  }
}

void cmd_analyze(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const DataBundle data = load_bundle(cfg, seed);
  const fs::path dir = run_dir_for(cfg, seed);
  const fs::path checkpoint = dir / "checkpoint.json";
  if (!fs::exists(checkpoint))
    throw DataError("no checkpoint at '" + checkpoint.string() + "'; run `fairlens train` first");
  const ClassifierModel model = load_checkpoint(checkpoint.string());
  const BiasProfile profile = profile_model(model, data.train, cfg.analysis.centered);
  write_text(dir / "profile.json", profile_to_json(profile, true));
}

void cmd_evaluate(const ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const DataBundle data = load_bundle(cfg, seed);
  const fs::path dir = run_dir_for(cfg, seed);
  const fs::path checkpoint = dir / "checkpoint.json";
  if (!fs::exists(checkpoint))
    throw DataError("no checkpoint at '" + checkpoint.string() + "'; run `fairlens train` first");
  const ClassifierModel model = load_checkpoint(checkpoint.string());

  json out;
  out["variant"] = cfg.variant;
  out["seed"] = seed;
  const PredictionLog log = predict_log(model, data.test, cfg.analysis, cfg.train.temperature);
  out["metrics"] = json::parse(metric_report_to_json(evaluate_metrics(log, data.train.skew)));
  if (data.has_cross()) {
    const PredictionLog cross =
        predict_log(model, data.cross, cfg.analysis, cfg.train.temperature);
    out["cross_accuracy"] = per_class_accuracy(cross);
  }
  if (cfg.analysis.apply_removal && model.variant == HeadVariant::kProtected) {
    const Vector b = profile_model(model, data.train, cfg.analysis.centered).direction;
    const PredictionLog removed_log =
        predict_log(model, data.test, cfg.analysis, cfg.train.temperature, &b);
    out["metrics_with_removal"] =
        json::parse(metric_report_to_json(evaluate_metrics(removed_log, data.train.skew)));
    out["bias_direction_provenance"] = "train";
  }
  write_text(dir / "metrics.json", out.dump(2));
}

RunReport run_and_write_report(const ExperimentConfig& cfg) {
  const RunReport report = run_study(cfg);
  fs::create_directories(cfg.out_dir);
  write_text(fs::path(cfg.out_dir) / "report.json", report_to_json(report));
  write_text(fs::path(cfg.out_dir) / "report.md", report_to_markdown(report));
  return report;
}

RunReport cmd_reproduce(const std::string& study, const std::string& out_override,
                        std::optional<std::uint64_t> seed_override) {
  ExperimentConfig cfg = preset(study);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (seed_override.has_value()) cfg.seeds = {*seed_override};
  return run_and_write_report(cfg);
}

}  // namespace fairlens
