// Scratch probe for preset-scale behavior (not part of the build).
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
  double sigma = argc > 1 ? std::atof(argv[1]) : 1.0;
  std::string enc = argc > 2 ? argv[2] : "32,64,64,32";
  int epochs = argc > 3 ? std::atoi(argv[3]) : 60;

  ExperimentConfig cfg = preset("cifar10s-synthetic");
  cfg.gen.sigma = sigma;
  cfg.gen.attr_shift = 4.0 * sigma;
  cfg.train.epochs = epochs;
  cfg.encoder.widths.clear();
  for (std::size_t pos = 0; pos < enc.size();) {
    const std::size_t comma = enc.find(',', pos);
    cfg.encoder.widths.push_back(std::atoi(enc.substr(pos, comma - pos).c_str()));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }

  std::printf("sigma=%.1f beta=%.1f enc=%s epochs=%d\n", sigma, cfg.gen.attr_shift, enc.c_str(),
              epochs);
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const DataBundle data = make_data(cfg, seed);
    const ClassifierModel base = train_variant(cfg, data, seed, "baseline");
    const ClassifierModel prot = train_variant(cfg, data, seed, "protected");

    const BiasProfile base_profile = profile_model(base, data.train, true);
    const BiasProfile prot_profile = profile_model(prot, data.train, true);
    const Vector b = prot_profile.direction;
    const BiasProfile removed_profile = profile_model_removed(prot, data.train, b, true);

    const ArmMetrics bm = evaluate_arm(base, data, cfg, nullptr);
    const ArmMetrics pm = evaluate_arm(prot, data, cfg, nullptr);
    const ArmMetrics rm = evaluate_arm(prot, data, cfg, &b);

    std::vector<Vector> features;
    std::vector<int> labels, attrs;
    for (const Sample& s : data.train.samples) {
      features.push_back(forward_features(base, s.features));
      labels.push_back(s.label);
      attrs.push_back(s.attribute);
    }
    Rng rng(derive_seed(seed, 777));
    rng.shuffle(attrs);
    const BiasProfile null_profile = profile_features(features, labels, attrs, 10, true);

    std::printf(
        "s%llu basePC1=%.3f baseSkew=%.2f | protPC1=%.3f protSkew=%.2f rmvdSkew=%.2f | "
        "null=%.3f\n",
        (unsigned long long)seed, base_profile.ratios[0], base_profile.skewness,
        prot_profile.ratios[0], prot_profile.skewness, removed_profile.skewness,
        null_profile.ratios[0]);
    std::printf(
        "   acc %.1f/%.1f/%.1f | parity %.4f->%.4f opp %.4f->%.4f odds %.4f->%.4f\n",
        bm.task_score, pm.task_score, rm.task_score, bm.parity, pm.parity, bm.opportunity,
        pm.opportunity, bm.odds, pm.odds);
  }
  return 0;
}
