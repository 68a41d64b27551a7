#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include <doctest.h>

#include "fairlens/fairness.hpp"
#include "fairlens/rng.hpp"

using namespace fairlens;

namespace {

PredictionLog multiclass_log(int num_classes, const std::vector<std::array<int, 3>>& rows) {
  // rows of {true, predicted, attribute}
  PredictionLog log;
  log.task = TaskMode::kMulticlass;
  log.num_classes = num_classes;
  for (const auto& [t, p, v] : rows) {
    PredictionRecord rec;
    rec.true_label = t;
    rec.predicted_label = p;
    rec.attribute = v;
    log.records.push_back(rec);
  }
  return log;
}

// ---- Naive per-record recount oracle (independent of ConfusionSlice) ----

struct NaiveCounts {
  double tp[2], fp[2], fn[2], tn[2], n[2];
};

NaiveCounts recount(const PredictionLog& log, int y) {
  NaiveCounts c{};
  for (const PredictionRecord& r : log.records) {
    const int v = r.attribute;
    const bool actual = log.task == TaskMode::kMulticlass
                            ? r.true_label == y
                            : r.true_labels[static_cast<std::size_t>(y)] == 1;
    const bool predicted = log.task == TaskMode::kMulticlass
                               ? r.predicted_label == y
                               : r.predicted_labels[static_cast<std::size_t>(y)] == 1;
    c.n[v] += 1;
    if (actual && predicted) c.tp[v] += 1;
    if (!actual && predicted) c.fp[v] += 1;
    if (actual && !predicted) c.fn[v] += 1;
    if (!actual && !predicted) c.tn[v] += 1;
  }
  return c;
}

double naive_parity(const PredictionLog& log) {
  double total_n[2] = {0, 0};
  for (const PredictionRecord& r : log.records) total_n[r.attribute] += 1;
  double sum = 0.0;
  for (int y = 0; y < log.num_rows(); ++y) {
    const NaiveCounts c = recount(log, y);
    sum += std::abs((c.tp[1] + c.fp[1]) / total_n[1] - (c.tp[0] + c.fp[0]) / total_n[0]);
  }
  return sum / log.num_rows();
}

double naive_opportunity(const PredictionLog& log, std::vector<int>* skipped = nullptr) {
  double sum = 0.0;
  int used = 0;
  for (int y = 0; y < log.num_rows(); ++y) {
    const NaiveCounts c = recount(log, y);
    if (c.tp[0] + c.fn[0] == 0 || c.tp[1] + c.fn[1] == 0) {
      if (skipped) skipped->push_back(y);
      continue;
    }
    sum += std::abs(c.tp[1] / (c.tp[1] + c.fn[1]) - c.tp[0] / (c.tp[0] + c.fn[0]));
    ++used;
  }
  return used > 0 ? sum / used : std::nan("");
}

double naive_odds(const PredictionLog& log) {
  double sum = 0.0;
  int used = 0;
  for (int y = 0; y < log.num_rows(); ++y) {
    const NaiveCounts c = recount(log, y);
    if (c.tp[0] + c.fn[0] == 0 || c.tp[1] + c.fn[1] == 0 || c.fp[0] + c.tn[0] == 0 ||
        c.fp[1] + c.tn[1] == 0)
      continue;
    const double tpr_gap =
        std::abs(c.tp[1] / (c.tp[1] + c.fn[1]) - c.tp[0] / (c.tp[0] + c.fn[0]));
    const double fpr_gap =
        std::abs(c.fp[1] / (c.fp[1] + c.tn[1]) - c.fp[0] / (c.fp[0] + c.tn[0]));
    sum += 0.5 * (tpr_gap + fpr_gap);
    ++used;
  }
  return used > 0 ? sum / used : std::nan("");
}

double naive_amplification(const PredictionLog& log, const SkewTable& skew) {
  double sum = 0.0;
  int used = 0;
  for (int y = 0; y < log.num_rows(); ++y) {
    const NaiveCounts c = recount(log, y);
    const double p0 = c.tp[0] + c.fp[0];
    const double p1 = c.tp[1] + c.fp[1];
    if (p0 + p1 == 0) continue;
    double term = 0.0;
    for (int v = 0; v < 2; ++v) {
      if (skew.ratio[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)] > 0.5)
        term += (v == 0 ? p0 : p1) / (p0 + p1) -
                skew.ratio[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)];
    }
    sum += term;
    ++used;
  }
  return sum / used;
}

double naive_amplification_noniid(const PredictionLog& log) {
  double sum = 0.0;
  int used = 0;
  for (int y = 0; y < log.num_rows(); ++y) {
    const NaiveCounts c = recount(log, y);
    const double p0 = c.tp[0] + c.fp[0];
    const double p1 = c.tp[1] + c.fp[1];
    if (p0 + p1 == 0) continue;
    sum += std::max(p0, p1) / (p0 + p1) - 0.5;
    ++used;
  }
  return sum / used;
}

double naive_per_class_accuracy(const PredictionLog& log) {
  double sum = 0.0;
  int terms = 0;
  if (log.task == TaskMode::kMulticlass) {
    for (int y = 0; y < log.num_classes; ++y) {
      double total = 0, correct = 0;
      for (const PredictionRecord& r : log.records) {
        if (r.true_label != y) continue;
        total += 1;
        correct += r.predicted_label == y;
      }
      sum += correct / total;
      ++terms;
    }
  } else {
    for (int c = 0; c < log.num_labels; ++c) {
      for (int value = 0; value < 2; ++value) {
        double total = 0, correct = 0;
        for (const PredictionRecord& r : log.records) {
          if (r.true_labels[static_cast<std::size_t>(c)] != value) continue;
          total += 1;
          correct += r.predicted_labels[static_cast<std::size_t>(c)] == value;
        }
        sum += correct / total;
        ++terms;
      }
    }
  }
  return 100.0 * sum / terms;
}

SkewTable uniform_skew(int rows, double toward_one) {
  SkewTable skew;
  skew.ratio.assign(static_cast<std::size_t>(rows), {1.0 - toward_one, toward_one});
  skew.count.assign(static_cast<std::size_t>(rows), {0, 0});
  return skew;
}

}  // namespace

TEST_CASE("build_confusion counts one-vs-rest cells") {
  const PredictionLog log = multiclass_log(2, {{0, 0, 0}, {0, 1, 0}, {1, 1, 1}, {1, 1, 1}});
  const ConfusionSlice slice = build_confusion(log);
  CHECK(slice.group_total[0] == 2);
  CHECK(slice.group_total[1] == 2);
  CHECK(slice.cells[0][0].tp == 1);
  CHECK(slice.cells[0][0].fn == 1);
  CHECK(slice.cells[1][0].fp == 1);
  CHECK(slice.cells[1][1].tp == 2);
  CHECK(slice.cells[0][1].tn == 2);

  SUBCASE("perfect predictions have no FP/FN") {
    const PredictionLog perfect = multiclass_log(3, {{0, 0, 0}, {1, 1, 1}, {2, 2, 0}});
    const ConfusionSlice s = build_confusion(perfect);
    for (const auto& row : s.cells)
      for (const auto& cell : row) {
        CHECK(cell.fp == 0);
        CHECK(cell.fn == 0);
      }
  }

  SUBCASE("constant predictor piles false positives on its class") {
    const PredictionLog constant = multiclass_log(2, {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}});
    const ConfusionSlice s = build_confusion(constant);
    CHECK(s.cells[0][0].fp == 1);  // the v=0 class-1 record
    CHECK(s.cells[0][1].fp == 1);  // the v=1 class-1 record
  }
}

TEST_CASE("bias_amplification hand-evaluated examples") {
  // s(y,1)=0.95; predicted positives split 19/1 -> term 19/20 - 0.95 = 0
  SkewTable skew = uniform_skew(1, 0.95);
  std::vector<std::array<int, 3>> rows;
  for (int i = 0; i < 19; ++i) rows.push_back({0, 0, 1});
  rows.push_back({0, 0, 0});
  PredictionLog log = multiclass_log(1, rows);
  // num_classes 1 is degenerate; use a 2-class variant with all mass on class 0
  log.num_classes = 2;
  SkewTable skew2 = uniform_skew(2, 0.95);
  const ConfusionSlice slice = build_confusion(log);
  const MetricValue amp = bias_amplification(slice, skew2);
  CHECK(amp.value == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(amp.skipped == std::vector<int>{1});  // class 1 never predicted

  // 20/0 split -> term +0.05
  std::vector<std::array<int, 3>> rows2;
  for (int i = 0; i < 20; ++i) rows2.push_back({0, 0, 1});
  PredictionLog log2 = multiclass_log(2, rows2);
  const MetricValue amp2 = bias_amplification(build_confusion(log2), skew2);
  CHECK(amp2.value == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("bias_amplification is zero when predictions match the skew") {
  // Two classes, skew 0.8 toward v=1 for class 0 and v=0 for class 1.
  SkewTable skew;
  skew.ratio = {{0.2, 0.8}, {0.8, 0.2}};
  skew.count = {{20, 80}, {80, 20}};
  std::vector<std::array<int, 3>> rows;
  for (int i = 0; i < 8; ++i) rows.push_back({0, 0, 1});
  for (int i = 0; i < 2; ++i) rows.push_back({0, 0, 0});
  for (int i = 0; i < 8; ++i) rows.push_back({1, 1, 0});
  for (int i = 0; i < 2; ++i) rows.push_back({1, 1, 1});
  const PredictionLog log = multiclass_log(2, rows);
  CHECK(bias_amplification(build_confusion(log), skew).value ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("bias_amplification_noniid examples") {
  SUBCASE("balanced predictions give 0") {
    const PredictionLog log = multiclass_log(2, {{0, 0, 0}, {0, 0, 1}, {1, 1, 0}, {1, 1, 1}});
    CHECK(bias_amplification_noniid(build_confusion(log)).value == doctest::Approx(0.0));
  }
  SUBCASE("single class fully on one attribute contributes 0.5") {
    const PredictionLog log = multiclass_log(2, {{0, 0, 1}, {0, 0, 1}, {1, 1, 0}, {1, 1, 1}});
    // class 0: max(0,2)/2 - 0.5 = 0.5; class 1: max(1,1)/2 - 0.5 = 0
    CHECK(bias_amplification_noniid(build_confusion(log)).value == doctest::Approx(0.25));
  }
  SUBCASE("3/1 split gives 0.25") {
    const PredictionLog log =
        multiclass_log(2, {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}, {0, 0, 1}, {1, 1, 0}, {1, 1, 1}});
    // class 0: 3/4 - 0.5 = 0.25; class 1: 0
    CHECK(bias_amplification_noniid(build_confusion(log)).value == doctest::Approx(0.125));
  }
}

TEST_CASE("parity_difference hand example") {
  // one class of interest: N^1 = N^0 = 10; predicted positives 6 vs 4 -> 0.2
  std::vector<std::array<int, 3>> rows;
  for (int i = 0; i < 6; ++i) rows.push_back({0, 0, 1});
  for (int i = 0; i < 4; ++i) rows.push_back({0, 1, 1});
  for (int i = 0; i < 4; ++i) rows.push_back({0, 0, 0});
  for (int i = 0; i < 6; ++i) rows.push_back({0, 1, 0});
  const PredictionLog log = multiclass_log(2, rows);
  const MetricValue parity = parity_difference(build_confusion(log));
  // class 0 gap 0.2, class 1 gap |4/10-6/10| = 0.2 -> mean 0.2
  CHECK(parity.value == doctest::Approx(0.2).epsilon(1e-12));

  SUBCASE("identical rates give zero") {
    const PredictionLog same = multiclass_log(2, {{0, 0, 0}, {0, 0, 1}, {1, 1, 0}, {1, 1, 1}});
    CHECK(parity_difference(build_confusion(same)).value == doctest::Approx(0.0));
  }
}

TEST_CASE("opportunity_difference hand example and invariances") {
  // class 0 recalls: v=1 -> 0.9 (9/10), v=0 -> 0.7 (7/10)
  std::vector<std::array<int, 3>> rows;
  for (int i = 0; i < 9; ++i) rows.push_back({0, 0, 1});
  rows.push_back({0, 1, 1});
  for (int i = 0; i < 7; ++i) rows.push_back({0, 0, 0});
  for (int i = 0; i < 3; ++i) rows.push_back({0, 1, 0});
  for (int v = 0; v < 2; ++v)
    for (int i = 0; i < 5; ++i) rows.push_back({1, 1, v});
  const PredictionLog log = multiclass_log(2, rows);
  const MetricValue opp = opportunity_difference(build_confusion(log));
  // class 0: |0.9 - 0.7| = 0.2; class 1: |1 - 1| = 0 -> mean 0.1
  CHECK(opp.value == doctest::Approx(0.1).epsilon(1e-12));

  SUBCASE("duplicating all records leaves rates unchanged") {
    PredictionLog doubled = log;
    for (const PredictionRecord& r : log.records) doubled.records.push_back(r);
    CHECK(opportunity_difference(build_confusion(doubled)).value ==
          doctest::Approx(opp.value).epsilon(1e-12));
  }

  SUBCASE("swapping attribute labels is a symmetry") {
    PredictionLog swapped = log;
    for (PredictionRecord& r : swapped.records) r.attribute = 1 - r.attribute;
    CHECK(opportunity_difference(build_confusion(swapped)).value ==
          doctest::Approx(opp.value).epsilon(1e-12));
    CHECK(parity_difference(build_confusion(swapped)).value ==
          doctest::Approx(parity_difference(build_confusion(log)).value).epsilon(1e-12));
    CHECK(equalized_odds_difference(build_confusion(swapped)).value ==
          doctest::Approx(equalized_odds_difference(build_confusion(log)).value).epsilon(1e-12));
  }
}

TEST_CASE("opportunity skips classes missing ground-truth positives in a group") {
  // class 0 recalls 0.9 vs 0.7; class 1 has positives only for v=1 -> skipped
  std::vector<std::array<int, 3>> rows;
  for (int i = 0; i < 9; ++i) rows.push_back({0, 0, 1});
  rows.push_back({0, 1, 1});
  for (int i = 0; i < 7; ++i) rows.push_back({0, 0, 0});
  for (int i = 0; i < 3; ++i) rows.push_back({0, 1, 0});
  for (int i = 0; i < 5; ++i) rows.push_back({1, 1, 1});
  const PredictionLog log = multiclass_log(2, rows);
  const MetricValue opp = opportunity_difference(build_confusion(log));
  CHECK(opp.value == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(opp.skipped == std::vector<int>{1});
}

TEST_CASE("equalized_odds hand example") {
  // Build a single-focus class with TPR gap 0.2 and FPR gap 0.1:
  // v=1: TP 9/10, FP 2/10; v=0: TP 7/10, FP 1/10.
  std::vector<std::array<int, 3>> rows;
  for (int i = 0; i < 9; ++i) rows.push_back({0, 0, 1});
  rows.push_back({0, 1, 1});
  for (int i = 0; i < 2; ++i) rows.push_back({1, 0, 1});
  for (int i = 0; i < 8; ++i) rows.push_back({1, 1, 1});
  for (int i = 0; i < 7; ++i) rows.push_back({0, 0, 0});
  for (int i = 0; i < 3; ++i) rows.push_back({0, 1, 0});
  rows.push_back({1, 0, 0});
  for (int i = 0; i < 9; ++i) rows.push_back({1, 1, 0});
  const PredictionLog log = multiclass_log(2, rows);
  const MetricValue odds = equalized_odds_difference(build_confusion(log));
  // class 0: 0.5(|0.9-0.7| + |0.2-0.1|) = 0.15
  // class 1 mirrors class 0 exactly (TPR gaps swap roles): also 0.15
  CHECK(odds.value == doctest::Approx(0.15).epsilon(1e-12));

  SUBCASE("perfect classifier gives zero") {
    const PredictionLog perfect = multiclass_log(2, {{0, 0, 0}, {0, 0, 1}, {1, 1, 0}, {1, 1, 1}});
    CHECK(equalized_odds_difference(build_confusion(perfect)).value == doctest::Approx(0.0));
  }
}

TEST_CASE("per_class_accuracy") {
  SUBCASE("perfect predictions give 100") {
    const PredictionLog log = multiclass_log(3, {{0, 0, 0}, {1, 1, 1}, {2, 2, 0}});
    CHECK(per_class_accuracy(log) == doctest::Approx(100.0));
  }
  SUBCASE("constant predictor on balanced classes gives 100/K") {
    const PredictionLog log =
        multiclass_log(4, {{0, 0, 0}, {1, 0, 0}, {2, 0, 1}, {3, 0, 1}});
    CHECK(per_class_accuracy(log) == doctest::Approx(25.0));
  }
  SUBCASE("missing class throws") {
    const PredictionLog log = multiclass_log(3, {{0, 0, 0}, {1, 1, 1}});
    CHECK_THROWS_AS(per_class_accuracy(log), std::domain_error);
  }
}

TEST_CASE("metrics equal the naive recount on random logs") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const int num_classes = 2 + static_cast<int>(rng.uniform_index(3));
    PredictionLog log;
    log.task = TaskMode::kMulticlass;
    log.num_classes = num_classes;
    // Each (y, v) cell gets 1..6 records with random predictions.
    for (int y = 0; y < num_classes; ++y)
      for (int v = 0; v < 2; ++v) {
        const int count = 1 + static_cast<int>(rng.uniform_index(6));
        for (int i = 0; i < count; ++i) {
          PredictionRecord rec;
          rec.true_label = y;
          rec.predicted_label = static_cast<int>(rng.uniform_index(num_classes));
          rec.attribute = v;
          log.records.push_back(rec);
        }
      }
    SkewTable skew;
    for (int y = 0; y < num_classes; ++y) {
      const double s = rng.uniform(0.0, 1.0);
      skew.ratio.push_back({1.0 - s, s});
      skew.count.push_back({0, 0});
    }

    const ConfusionSlice slice = build_confusion(log);
    CHECK(bias_amplification(slice, skew).value ==
          doctest::Approx(naive_amplification(log, skew)).epsilon(1e-12));
    CHECK(bias_amplification_noniid(slice).value ==
          doctest::Approx(naive_amplification_noniid(log)).epsilon(1e-12));
    CHECK(parity_difference(slice).value == doctest::Approx(naive_parity(log)).epsilon(1e-12));
    CHECK(opportunity_difference(slice).value ==
          doctest::Approx(naive_opportunity(log)).epsilon(1e-12));
    CHECK(equalized_odds_difference(slice).value ==
          doctest::Approx(naive_odds(log)).epsilon(1e-12));
    CHECK(per_class_accuracy(log) ==
          doctest::Approx(naive_per_class_accuracy(log)).epsilon(1e-12));
  }
}

namespace {

PredictionLog multilabel_log(int num_labels,
                             const std::vector<std::tuple<std::vector<int>, std::vector<double>, int>>& rows,
                             double threshold = 1.0) {
  PredictionLog log;
  log.task = TaskMode::kMultilabel;
  log.num_labels = num_labels;
  log.num_classes = 2;
  for (const auto& [labels, scores, attr] : rows) {
    PredictionRecord rec;
    rec.true_labels = labels;
    rec.scores = scores;
    for (double s : scores) rec.predicted_labels.push_back(s >= threshold ? 1 : 0);
    rec.attribute = attr;
    log.records.push_back(rec);
  }
  return log;
}

// Exhaustive weighted PR oracle: walks the ranked list accumulating
// weighted precision at every positive.
double oracle_weighted_ap(std::vector<std::tuple<double, int, double>> scored) {
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return std::get<0>(a) > std::get<0>(b);
  });
  long double cum_w = 0.0L, cum_pos = 0.0L, total_pos = 0.0L, ap = 0.0L;
  for (const auto& [score, positive, weight] : scored) {
    cum_w += weight;
    if (positive == 1) {
      cum_pos += weight;
      ap += weight * (cum_pos / cum_w);
      total_pos += weight;
    }
  }
  return static_cast<double>(ap / total_pos);
}

}  // namespace

TEST_CASE("weighted_map: balanced groups reduce to unweighted AP") {
  // 3 records per group, one label.
  const PredictionLog log = multilabel_log(
      1, {{{1}, {0.9}, 0}, {{0}, {0.8}, 0}, {{1}, {0.7}, 0},
          {{1}, {0.6}, 1}, {{0}, {0.4}, 1}, {{0}, {0.2}, 1}});
  const WeightedMapResult result = weighted_map(log);
  std::vector<std::tuple<double, int, double>> scored;
  for (const PredictionRecord& r : log.records)
    scored.emplace_back(r.scores[0], r.true_labels[0], 1.0);
  CHECK(result.map_percent == doctest::Approx(100.0 * oracle_weighted_ap(scored)).epsilon(1e-12));
}

TEST_CASE("weighted_map: perfect ranking gives 100 regardless of weights") {
  const PredictionLog log = multilabel_log(
      1, {{{1}, {0.9}, 0}, {{1}, {0.8}, 1}, {{0}, {0.3}, 0}, {{0}, {0.2}, 1}, {{0}, {0.1}, 1}});
  CHECK(weighted_map(log).map_percent == doctest::Approx(100.0).epsilon(1e-12));
}

TEST_CASE("weighted_map matches the exhaustive oracle on small mixed lists") {
  // 6-record list with N0=2, N1=4 and hand-checkable weights 6/4 and 6/8.
  const PredictionLog log = multilabel_log(
      1, {{{1}, {0.95}, 1}, {{0}, {0.9}, 0}, {{1}, {0.8}, 0},
          {{0}, {0.6}, 1}, {{1}, {0.5}, 1}, {{0}, {0.3}, 1}});
  const double w0 = 6.0 / (2.0 * 2.0);
  const double w1 = 6.0 / (2.0 * 4.0);
  std::vector<std::tuple<double, int, double>> scored;
  for (const PredictionRecord& r : log.records)
    scored.emplace_back(r.scores[0], r.true_labels[0], r.attribute == 0 ? w0 : w1);
  CHECK(weighted_map(log).map_percent ==
        doctest::Approx(100.0 * oracle_weighted_ap(scored)).epsilon(1e-10));
}

TEST_CASE("weighted_map exclusions") {
  SUBCASE("single-class ground truth is excluded") {
    const PredictionLog log = multilabel_log(
        2, {{{1, 1}, {0.9, 0.9}, 0}, {{1, 1}, {0.8, 0.8}, 1}, {{1, 0}, {0.7, 0.7}, 0},
            {{1, 0}, {0.2, 0.2}, 1}});
    // label 0 is all-positive -> excluded; label 1 has positives in both groups
    const WeightedMapResult result = weighted_map(log);
    CHECK(result.excluded == std::vector<int>{0});
    CHECK(result.evaluated == std::vector<int>{1});
  }
  SUBCASE("positives in one group only are excluded") {
    const PredictionLog log = multilabel_log(
        2, {{{1, 1}, {0.9, 0.9}, 0}, {{0, 1}, {0.8, 0.8}, 0}, {{0, 0}, {0.7, 0.7}, 1},
            {{0, 1}, {0.2, 0.2}, 1}});
    // label 0 positives live only in group 0
    const WeightedMapResult result = weighted_map(log);
    CHECK(result.excluded == std::vector<int>{0});
  }
  SUBCASE("no evaluable label throws") {
    const PredictionLog log =
        multilabel_log(1, {{{1}, {0.9}, 0}, {{1}, {0.8}, 1}});
    CHECK_THROWS_AS(weighted_map(log), std::domain_error);
  }
}

TEST_CASE("metric report json names the conventions") {
  const PredictionLog log = multiclass_log(2, {{0, 0, 0}, {0, 0, 1}, {1, 1, 0}, {1, 1, 1}});
  SkewTable skew = uniform_skew(2, 0.6);
  const MetricReport report = evaluate_metrics(log, skew);
  const std::string json_text = metric_report_to_json(report);
  CHECK(json_text.find("bias_amplification") != std::string::npos);
  CHECK(json_text.find("parity_difference") != std::string::npos);
  CHECK(json_text.find("conventions") != std::string::npos);
  CHECK(json_text.find("per_class_accuracy") != std::string::npos);
}
