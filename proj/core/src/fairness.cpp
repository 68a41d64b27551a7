#include "fairlens/fairness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace fairlens {

namespace {

void check_log(const PredictionLog& log) {
  if (log.records.empty()) throw std::invalid_argument("prediction log is empty");
  if (log.num_rows() <= 0) throw std::invalid_argument("prediction log has no classes");
  const std::size_t c = static_cast<std::size_t>(log.num_labels);
  for (const PredictionRecord& r : log.records) {
    if (r.attribute != 0 && r.attribute != 1)
      throw std::invalid_argument("prediction log attribute must be binary");
    if (log.task == TaskMode::kMulticlass) {
      if (r.true_label < 0 || r.true_label >= log.num_classes || r.predicted_label < 0 ||
          r.predicted_label >= log.num_classes)
        throw std::invalid_argument("prediction log label out of range");
    } else {
      if (r.true_labels.size() != c || r.predicted_labels.size() != c)
        throw std::invalid_argument("prediction log label vector shape mismatch");
    }
  }
}

}  // namespace

ConfusionSlice build_confusion(const PredictionLog& log) {
  check_log(log);
  ConfusionSlice slice;
  slice.num_rows = log.num_rows();
  slice.cells.assign(static_cast<std::size_t>(slice.num_rows), {});
  for (const PredictionRecord& r : log.records) {
    const std::size_t v = static_cast<std::size_t>(r.attribute);
    slice.group_total[v]++;
    for (int y = 0; y < slice.num_rows; ++y) {
      bool actual, predicted;
      if (log.task == TaskMode::kMulticlass) {
        actual = r.true_label == y;
        predicted = r.predicted_label == y;
      } else {
        actual = r.true_labels[static_cast<std::size_t>(y)] == 1;
        predicted = r.predicted_labels[static_cast<std::size_t>(y)] == 1;
      }
      CellCounts& cell = slice.cells[static_cast<std::size_t>(y)][v];
      if (actual && predicted) cell.tp++;
      else if (!actual && predicted) cell.fp++;
      else if (actual && !predicted) cell.fn++;
      else cell.tn++;
    }
  }
  return slice;
}

MetricValue bias_amplification(const ConfusionSlice& slice, const SkewTable& skew) {
  if (skew.num_rows() != static_cast<std::size_t>(slice.num_rows))
    throw std::invalid_argument("bias_amplification: skew table shape mismatch");
  MetricValue out;
  double sum = 0.0;
  int evaluated = 0;
  for (int y = 0; y < slice.num_rows; ++y) {
    const auto& cell = slice.cells[static_cast<std::size_t>(y)];
    const double p0 = static_cast<double>(cell[0].predicted_positive());
    const double p1 = static_cast<double>(cell[1].predicted_positive());
    if (p0 + p1 <= 0.0) {
      out.skipped.push_back(y);
      continue;
    }
    double term = 0.0;
    for (int v = 0; v < 2; ++v) {
      const double s = skew.ratio[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)];
      if (s > 0.5) term += (v == 0 ? p0 : p1) / (p0 + p1) - s;
    }
    sum += term;
    ++evaluated;
  }
  if (evaluated == 0) throw std::domain_error("bias_amplification: no class has predictions");
  out.value = sum / evaluated;
  return out;
}

MetricValue bias_amplification_noniid(const ConfusionSlice& slice) {
  MetricValue out;
  double sum = 0.0;
  int evaluated = 0;
  for (int y = 0; y < slice.num_rows; ++y) {
    const auto& cell = slice.cells[static_cast<std::size_t>(y)];
    const double p0 = static_cast<double>(cell[0].predicted_positive());
    const double p1 = static_cast<double>(cell[1].predicted_positive());
    if (p0 + p1 <= 0.0) {
      out.skipped.push_back(y);
      continue;
    }
    sum += std::max(p0, p1) / (p0 + p1) - 0.5;
    ++evaluated;
  }
  if (evaluated == 0) throw std::domain_error("bias_amplification_noniid: no class has predictions");
  out.value = sum / evaluated;
  return out;
}

MetricValue parity_difference(const ConfusionSlice& slice) {
  if (slice.group_total[0] == 0 || slice.group_total[1] == 0)
    throw std::domain_error("parity_difference: an attribute group is empty");
  MetricValue out;
  double sum = 0.0;
  for (int y = 0; y < slice.num_rows; ++y) {
    const auto& cell = slice.cells[static_cast<std::size_t>(y)];
    const double rate0 =
        static_cast<double>(cell[0].predicted_positive()) / static_cast<double>(slice.group_total[0]);
    const double rate1 =
        static_cast<double>(cell[1].predicted_positive()) / static_cast<double>(slice.group_total[1]);
    sum += std::abs(rate1 - rate0);
  }
  out.value = sum / slice.num_rows;
  return out;
}

MetricValue opportunity_difference(const ConfusionSlice& slice) {
  MetricValue out;
  double sum = 0.0;
  int evaluated = 0;
  for (int y = 0; y < slice.num_rows; ++y) {
    const auto& cell = slice.cells[static_cast<std::size_t>(y)];
    if (cell[0].actual_positive() == 0 || cell[1].actual_positive() == 0) {
      out.skipped.push_back(y);
      continue;
    }
    const double tpr0 = static_cast<double>(cell[0].tp) / static_cast<double>(cell[0].actual_positive());
    const double tpr1 = static_cast<double>(cell[1].tp) / static_cast<double>(cell[1].actual_positive());
    sum += std::abs(tpr1 - tpr0);
    ++evaluated;
  }
  if (evaluated == 0) throw std::domain_error("opportunity_difference: no evaluable class");
  out.value = sum / evaluated;
  return out;
}

MetricValue equalized_odds_difference(const ConfusionSlice& slice) {
  MetricValue out;
  double sum = 0.0;
  int evaluated = 0;
  for (int y = 0; y < slice.num_rows; ++y) {
    const auto& cell = slice.cells[static_cast<std::size_t>(y)];
    if (cell[0].actual_positive() == 0 || cell[1].actual_positive() == 0 ||
        cell[0].actual_negative() == 0 || cell[1].actual_negative() == 0) {
      out.skipped.push_back(y);
      continue;
    }
    const double tpr0 = static_cast<double>(cell[0].tp) / static_cast<double>(cell[0].actual_positive());
    const double tpr1 = static_cast<double>(cell[1].tp) / static_cast<double>(cell[1].actual_positive());
    const double fpr0 = static_cast<double>(cell[0].fp) / static_cast<double>(cell[0].actual_negative());
    const double fpr1 = static_cast<double>(cell[1].fp) / static_cast<double>(cell[1].actual_negative());
    sum += 0.5 * (std::abs(fpr1 - fpr0) + std::abs(tpr1 - tpr0));
    ++evaluated;
  }
  if (evaluated == 0) throw std::domain_error("equalized_odds_difference: no evaluable class");
  out.value = sum / evaluated;
  return out;
}

double per_class_accuracy(const PredictionLog& log) {
  check_log(log);
  double sum = 0.0;
  int terms = 0;
  if (log.task == TaskMode::kMulticlass) {
    for (int y = 0; y < log.num_classes; ++y) {
      std::int64_t total = 0;
      std::int64_t correct = 0;
      for (const PredictionRecord& r : log.records) {
        if (r.true_label != y) continue;
        ++total;
        if (r.predicted_label == y) ++correct;
      }
      if (total == 0)
        throw std::domain_error("per_class_accuracy: class " + std::to_string(y) +
                                " absent from ground truth");
      sum += static_cast<double>(correct) / static_cast<double>(total);
      ++terms;
    }
  } else {
    // Per attribute label, the two classes are presence and absence.
    for (int c = 0; c < log.num_labels; ++c) {
      for (int value = 0; value < 2; ++value) {
        std::int64_t total = 0;
        std::int64_t correct = 0;
        for (const PredictionRecord& r : log.records) {
          if (r.true_labels[static_cast<std::size_t>(c)] != value) continue;
          ++total;
          if (r.predicted_labels[static_cast<std::size_t>(c)] == value) ++correct;
        }
        if (total == 0)
          throw std::domain_error("per_class_accuracy: label " + std::to_string(c) + " value " +
                                  std::to_string(value) + " absent from ground truth");
        sum += static_cast<double>(correct) / static_cast<double>(total);
        ++terms;
      }
    }
  }
  return 100.0 * sum / terms;
}

namespace {

struct RankedRecord {
  double score;
  bool positive;
  double weight;
  std::size_t index;  // stable tie order
};

double weighted_average_precision(std::vector<RankedRecord> ranked) {
  std::stable_sort(ranked.begin(), ranked.end(), [](const RankedRecord& a, const RankedRecord& b) {
    return a.score > b.score;
  });
  double cum_all = 0.0;
  double cum_pos = 0.0;
  double total_pos = 0.0;
  double ap = 0.0;
  for (const RankedRecord& r : ranked) {
    cum_all += r.weight;
    if (r.positive) {
      cum_pos += r.weight;
      ap += r.weight * (cum_pos / cum_all);
      total_pos += r.weight;
    }
  }
  return ap / total_pos;
}

}  // namespace

WeightedMapResult weighted_map(const PredictionLog& log) {
  check_log(log);
  if (log.task == TaskMode::kMulticlass)
    throw std::invalid_argument("weighted_map: requires a multi-label log");
  std::array<std::int64_t, 2> group = {0, 0};
  for (const PredictionRecord& r : log.records) {
    if (r.scores.size() != static_cast<std::size_t>(log.num_labels))
      throw std::invalid_argument("weighted_map: score vector shape mismatch");
    group[static_cast<std::size_t>(r.attribute)]++;
  }
  if (group[0] == 0 || group[1] == 0)
    throw std::domain_error("weighted_map: an attribute group is empty");

  const double n = static_cast<double>(group[0] + group[1]);
  const std::array<double, 2> weight = {n / (2.0 * static_cast<double>(group[0])),
                                        n / (2.0 * static_cast<double>(group[1]))};

  WeightedMapResult out;
  double sum = 0.0;
  for (int c = 0; c < log.num_labels; ++c) {
    std::vector<RankedRecord> ranked;
    ranked.reserve(log.records.size());
    std::int64_t positives = 0;
    std::array<std::int64_t, 2> positive_groups = {0, 0};
    for (std::size_t i = 0; i < log.records.size(); ++i) {
      const PredictionRecord& r = log.records[i];
      const bool pos = r.true_labels[static_cast<std::size_t>(c)] == 1;
      if (pos) {
        ++positives;
        positive_groups[static_cast<std::size_t>(r.attribute)]++;
      }
      ranked.push_back({r.scores[static_cast<std::size_t>(c)], pos,
                        weight[static_cast<std::size_t>(r.attribute)], i});
    }
    // Mirrors the protocol of dropping attributes whose positives cover a
    // single class or a single attribute group.
    if (positives == 0 || positives == static_cast<std::int64_t>(log.records.size()) ||
        positive_groups[0] == 0 || positive_groups[1] == 0) {
      out.excluded.push_back(c);
      continue;
    }
    sum += weighted_average_precision(std::move(ranked));
    out.evaluated.push_back(c);
  }
  if (out.evaluated.empty()) throw std::domain_error("weighted_map: no evaluable attribute label");
  out.map_percent = 100.0 * sum / static_cast<double>(out.evaluated.size());
  return out;
}

MetricReport evaluate_metrics(const PredictionLog& log, const SkewTable& train_skew) {
  MetricReport report;
  report.task = log.task;
  const ConfusionSlice slice = build_confusion(log);
  report.amplification = bias_amplification(slice, train_skew);
  report.amplification_noniid = bias_amplification_noniid(slice);
  report.parity = parity_difference(slice);
  report.opportunity = opportunity_difference(slice);
  report.odds = equalized_odds_difference(slice);
  report.task_score = log.task == TaskMode::kMulticlass ? per_class_accuracy(log)
                                                        : weighted_map(log).map_percent;
  return report;
}

std::string metric_report_to_json(const MetricReport& report, int indent) {
  nlohmann::json j;
  j["task"] = to_string(report.task);
  j[report.task == TaskMode::kMulticlass ? "per_class_accuracy" : "weighted_map"] =
      report.task_score;
  auto metric = [](const MetricValue& m) {
    return nlohmann::json{{"value", m.value}, {"skipped_classes", m.skipped}};
  };
  j["bias_amplification"] = metric(report.amplification);
  j["bias_amplification_noniid"] = metric(report.amplification_noniid);
  j["parity_difference"] = metric(report.parity);
  j["opportunity_difference"] = metric(report.opportunity);
  j["equalized_odds_difference"] = metric(report.odds);
  j["conventions"] = {
      {"zero_denominator", "classes with undefined per-class ratios are skipped; "
                           "the mean runs over evaluated classes"},
      {"units", "parity/opportunity/odds are fractions (render x100 for percent); "
                "amplification is raw signed; task score is percent"},
  };
  return j.dump(indent);
}

}  // namespace fairlens
