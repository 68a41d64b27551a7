#include <benchmark/benchmark.h>

#include "fairlens/bias.hpp"
#include "fairlens/dataset.hpp"
#include "fairlens/fairness.hpp"
#include "fairlens/model.hpp"
#include "fairlens/rng.hpp"

using namespace fairlens;

namespace {

Matrix random_symmetric(Rng& rng, std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double v = rng.normal();
      m(i, j) = v;
      m(j, i) = v;
    }
  return m;
}

void BM_SymmetricEigen(benchmark::State& state) {
  Rng rng(1);
  const Matrix m = random_symmetric(rng, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(symmetric_eigen(m));
  }
}
BENCHMARK(BM_SymmetricEigen)->Arg(10)->Arg(32)->Arg(64);

void BM_LossMulticlass(benchmark::State& state) {
  Rng rng(2);
  ClassifierModel model = init_model(TaskMode::kMulticlass, HeadVariant::kProtected,
                                     EncoderSpec{{32, 64, 64, 32}}, 10, 0, 128, rng);
  std::vector<Sample> samples;
  for (int i = 0; i < state.range(0); ++i) {
    Sample s;
    s.features.resize(32);
    for (double& x : s.features) x = rng.normal();
    s.label = static_cast<int>(rng.uniform_index(10));
    s.attribute = static_cast<int>(rng.uniform_index(2));
    samples.push_back(std::move(s));
  }
  Batch batch;
  for (const Sample& s : samples) batch.push_back(&s);
  TrainConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_multiclass(model, batch, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LossMulticlass)->Arg(32)->Arg(128);

void BM_BuildConfusion(benchmark::State& state) {
  Rng rng(3);
  PredictionLog log;
  log.task = TaskMode::kMulticlass;
  log.num_classes = 10;
  for (int i = 0; i < state.range(0); ++i) {
    PredictionRecord rec;
    rec.true_label = static_cast<int>(rng.uniform_index(10));
    rec.predicted_label = static_cast<int>(rng.uniform_index(10));
    rec.attribute = static_cast<int>(rng.uniform_index(2));
    log.records.push_back(rec);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_confusion(log));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BuildConfusion)->Arg(1000)->Arg(10000);

void BM_RemoveBias(benchmark::State& state) {
  Rng rng(4);
  Vector h(static_cast<std::size_t>(state.range(0))), b(static_cast<std::size_t>(state.range(0)));
  for (double& x : h) x = rng.normal();
  for (double& x : b) x = rng.normal();
  for (auto _ : state) {
    benchmark::DoNotOptimize(remove_bias(h, b));
  }
}
BENCHMARK(BM_RemoveBias)->Arg(32)->Arg(128);

void BM_GenerateSynthetic(benchmark::State& state) {
  GenConfig cfg;
  cfg.num_classes = 10;
  cfg.feature_dim = 32;
  cfg.per_class = static_cast<int>(state.range(0));
  cfg.skew = 0.95;
  for (auto _ : state) {
    benchmark::DoNotOptimize(generate_synthetic(cfg));
  }
}
BENCHMARK(BM_GenerateSynthetic)->Arg(100)->Arg(500);

}  // namespace

BENCHMARK_MAIN();
