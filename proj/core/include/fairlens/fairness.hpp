#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fairlens/dataset.hpp"

namespace fairlens {

/// One evaluated sample. Multi-class uses true_label/predicted_label;
/// multi-label (and binary) use the per-attribute-label vectors plus the
/// ensemble scores.
struct PredictionRecord {
  int true_label = -1;
  int predicted_label = -1;
  std::vector<int> true_labels;
  std::vector<int> predicted_labels;
  std::vector<double> scores;
  int attribute = 0;
};

struct PredictionLog {
  TaskMode task = TaskMode::kMulticlass;
  int num_classes = 0;  // |Y| for multi-class
  int num_labels = 0;   // C for multi-label
  std::vector<PredictionRecord> records;

  /// Number of one-vs-rest rows: classes (multi-class) or labels.
  int num_rows() const {
    return task == TaskMode::kMulticlass ? num_classes : num_labels;
  }
};

struct CellCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t predicted_positive() const { return tp + fp; }
  std::int64_t actual_positive() const { return tp + fn; }
  std::int64_t actual_negative() const { return fp + tn; }
};

/// One-vs-rest confusion counts per (class-or-label, attribute) cell.
struct ConfusionSlice {
  int num_rows = 0;
  std::array<std::int64_t, 2> group_total = {0, 0};  // N^v
  std::vector<std::array<CellCounts, 2>> cells;      // [y][v]
};

ConfusionSlice build_confusion(const PredictionLog& log);

/// Metric value plus the classes skipped under the zero-denominator
/// convention (undefined per-class terms are dropped and the mean runs
/// over the evaluated classes).
struct MetricValue {
  double value = 0.0;
  std::vector<int> skipped;
};

/// Zhao-style bias amplification against the training skew: mean over the
/// dominant (s(y,v) > 1/2) cells of predicted attribute proportion minus
/// s(y,v). Positive means amplification. Raw signed value, not a percent.
MetricValue bias_amplification(const ConfusionSlice& slice, const SkewTable& skew);

/// Non-i.i.d. variant: mean over classes of max(P^0,P^1)/(P^0+P^1) - 0.5,
/// in [0, 0.5].
MetricValue bias_amplification_noniid(const ConfusionSlice& slice);

/// Statistical parity difference: mean over classes of the absolute gap in
/// predicted-positive rates between attribute groups. Fraction; callers
/// render x100.
MetricValue parity_difference(const ConfusionSlice& slice);

/// Difference of equality of opportunity: mean absolute TPR gap. Fraction.
MetricValue opportunity_difference(const ConfusionSlice& slice);

/// Difference of equalized odds: mean of 0.5(|FPR gap| + |TPR gap|). Fraction.
MetricValue equalized_odds_difference(const ConfusionSlice& slice);

/// Unweighted mean over classes of within-class accuracy, in percent.
/// Multi-label logs score each attribute label one-vs-rest. Throws if a
/// class has no ground-truth samples.
double per_class_accuracy(const PredictionLog& log);

struct WeightedMapResult {
  double map_percent = 0.0;
  std::vector<int> evaluated;  // attribute labels that entered the mean
  std::vector<int> excluded;   // single-class or single-group labels
};

/// Attribute-group-weighted mean average precision over the score-ranked
/// lists. Each record carries the weight (N0+N1)/(2*Nv) of its group in the
/// log, applied to both the positive mass and the rank-running totals; per
/// label AP = sum over positive ranks of weight * weighted precision,
/// divided by the total positive weight. Labels whose positives are a
/// single class or a single attribute group are excluded.
WeightedMapResult weighted_map(const PredictionLog& log);

struct MetricReport {
  TaskMode task = TaskMode::kMulticlass;
  double task_score = 0.0;  // per-class accuracy or weighted mAP, percent
  MetricValue amplification;        // i.i.d. (Zhao) form
  MetricValue amplification_noniid; // Wang form
  MetricValue parity;
  MetricValue opportunity;
  MetricValue odds;
};

/// Full metric suite for a log; amplification uses the training skew.
MetricReport evaluate_metrics(const PredictionLog& log, const SkewTable& train_skew);

/// Report JSON: metric name -> value, skipped classes, conventions used.
std::string metric_report_to_json(const MetricReport& report, int indent = 2);

}  // namespace fairlens
