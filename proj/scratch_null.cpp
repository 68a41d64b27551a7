// Scratch: shuffled-null behavior across encoder widths (not in the build).
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "fairlens/bias.hpp"
#include "fairlens/experiment.hpp"
#include "fairlens/model.hpp"
#include "fairlens/rng.hpp"

using namespace fairlens;

int main(int argc, char** argv) {
  double sigma = argc > 1 ? std::atof(argv[1]) : 2.0;
  std::string enc = argc > 2 ? argv[2] : "32,64,32";
  int epochs = argc > 3 ? std::atoi(argv[3]) : 40;
  double wd = argc > 4 ? std::atof(argv[4]) : 5e-4;

  ExperimentConfig cfg = preset("cifar10s-synthetic");
  cfg.gen.sigma = sigma;
  cfg.gen.attr_shift = 4.0 * sigma;
  cfg.train.epochs = epochs;
  cfg.train.weight_decay = wd;
  cfg.encoder.widths.clear();
  for (std::size_t pos = 0; pos < enc.size();) {
    const std::size_t comma = enc.find(',', pos);
    cfg.encoder.widths.push_back(std::atoi(enc.substr(pos, comma - pos).c_str()));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }

  std::printf("sigma=%.1f enc=%s epochs=%d wd=%.0e\n", sigma, enc.c_str(), epochs, wd);
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    const DataBundle data = make_data(cfg, seed);
    const ClassifierModel base = train_variant(cfg, data, seed, "baseline");

    std::vector<Vector> features;
    std::vector<int> labels, attrs;
    for (const Sample& s : data.train.samples) {
      features.push_back(forward_features(base, s.features));
      labels.push_back(s.label);
      attrs.push_back(s.attribute);
    }
    const BiasProfile true_profile = profile_features(features, labels, attrs, 10, true);

    // uniform permutation null
    std::vector<int> uniform = attrs;
    Rng rng(derive_seed(seed, 777));
    rng.shuffle(uniform);
    const BiasProfile uniform_null = profile_features(features, labels, uniform, 10, true);

    // raw-input null for reference
    std::vector<Vector> raw;
    for (const Sample& s : data.train.samples) raw.push_back(s.features);
    const BiasProfile raw_null = profile_features(raw, labels, uniform, 10, true);

    std::printf("s%llu truePC1=%.3f trueSkew=%.2f | null=%.3f nullSkew=%.2f | rawNull=%.3f\n",
                (unsigned long long)seed, true_profile.ratios[0], true_profile.skewness,
                uniform_null.ratios[0], uniform_null.skewness, raw_null.ratios[0]);
  }
  return 0;
}
