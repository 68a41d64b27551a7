#include <algorithm>
#include <cmath>

#include <doctest.h>

#include "fairlens/bias.hpp"
#include "fairlens/dataset.hpp"
#include "fairlens/model.hpp"
#include "fairlens/rng.hpp"

using namespace fairlens;

namespace {

std::vector<Vector> random_rows(Rng& rng, std::size_t n, std::size_t dim) {
  std::vector<Vector> rows(n, Vector(dim));
  for (Vector& r : rows)
    for (double& x : r) x = rng.normal();
  return rows;
}

Vector random_unit_vec(Rng& rng, std::size_t dim) {
  Vector v(dim);
  for (double& x : v) x = rng.normal();
  const double n = norm(v);
  for (double& x : v) x /= n;
  return v;
}

// Householder-style random orthogonal map applied to each row.
std::vector<Vector> rotate_rows(const std::vector<Vector>& rows, Rng& rng) {
  const std::size_t dim = rows[0].size();
  const Vector u = random_unit_vec(rng, dim);
  std::vector<Vector> out;
  for (const Vector& r : rows) {
    Vector m(dim);
    const double proj = 2.0 * dot(r, u);
    for (std::size_t i = 0; i < dim; ++i) m[i] = r[i] - proj * u[i];
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace

TEST_CASE("compute_prototypes") {
  SUBCASE("single sample per cell returns the sample") {
    const std::vector<Vector> feats = {{1, 2}, {3, 4}, {5, 6}, {7, 8}};
    const std::vector<int> labels = {0, 0, 1, 1};
    const std::vector<int> attrs = {0, 1, 0, 1};
    const PrototypeTable table = compute_prototypes(feats, labels, attrs, 2);
    CHECK(table.mu[0][0] == Vector{1, 2});
    CHECK(table.mu[0][1] == Vector{3, 4});
    CHECK(table.mu[1][0] == Vector{5, 6});
    CHECK(table.mu[1][1] == Vector{7, 8});
  }

  SUBCASE("cell mean") {
    const std::vector<Vector> feats = {{0, 0}, {2, 0}, {9, 9}, {9, 9}};
    const std::vector<int> labels = {0, 0, 0, 0};
    const std::vector<int> attrs = {0, 0, 1, 1};
    const PrototypeTable table = compute_prototypes(feats, labels, attrs, 1);
    CHECK(table.mu[0][0] == Vector{1, 0});
  }

  SUBCASE("duplicating every sample changes nothing") {
    Rng rng(5);
    std::vector<Vector> feats = random_rows(rng, 12, 3);
    std::vector<int> labels, attrs;
    for (int i = 0; i < 12; ++i) {
      labels.push_back(i % 3);
      attrs.push_back((i / 3) % 2);
    }
    const PrototypeTable once = compute_prototypes(feats, labels, attrs, 3);
    std::vector<Vector> feats2 = feats;
    feats2.insert(feats2.end(), feats.begin(), feats.end());
    std::vector<int> labels2 = labels;
    labels2.insert(labels2.end(), labels.begin(), labels.end());
    std::vector<int> attrs2 = attrs;
    attrs2.insert(attrs2.end(), attrs.begin(), attrs.end());
    const PrototypeTable twice = compute_prototypes(feats2, labels2, attrs2, 3);
    for (int y = 0; y < 3; ++y)
      for (int v = 0; v < 2; ++v)
        for (std::size_t d = 0; d < 3; ++d)
          CHECK(once.mu[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)][d] ==
                doctest::Approx(twice.mu[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)][d])
                    .epsilon(1e-14));
  }

  SUBCASE("empty cell names (y, v)") {
    const std::vector<Vector> feats = {{1, 2}, {3, 4}};
    const std::vector<int> labels = {0, 1};
    const std::vector<int> attrs = {0, 0};
    CHECK_THROWS_WITH_AS(compute_prototypes(feats, labels, attrs, 2),
                         doctest::Contains("(y=0, v=1)"), std::domain_error);
  }
}

TEST_CASE("compute_delta") {
  PrototypeTable table;
  table.num_rows = 2;
  table.mu = {{Vector{0, 1}, Vector{1, 1}}, {Vector{2, 2}, Vector{2, 5}}};
  const std::vector<Vector> delta = compute_delta(table);
  CHECK(delta[0] == Vector{1, 0});
  CHECK(delta[1] == Vector{0, 3});

  SUBCASE("identical prototypes give zero vectors") {
    PrototypeTable same;
    same.num_rows = 1;
    same.mu = {{Vector{3, 3}, Vector{3, 3}}};
    CHECK(compute_delta(same)[0] == Vector{0, 0});
  }

  SUBCASE("swapping attribute roles negates every delta") {
    PrototypeTable swapped = table;
    for (auto& pair : swapped.mu) std::swap(pair[0], pair[1]);
    const std::vector<Vector> neg = compute_delta(swapped);
    for (std::size_t y = 0; y < 2; ++y)
      for (std::size_t d = 0; d < 2; ++d) CHECK(neg[y][d] == -delta[y][d]);
  }
}

TEST_CASE("spectrum on an antipodal pair") {
  const std::vector<Vector> delta = {{1, 0}, {-1, 0}};
  const Spectrum s = spectrum(delta, true);
  REQUIRE(s.ratios.size() == 1);
  CHECK(s.ratios[0] == doctest::Approx(1.0));
  CHECK(std::abs(s.components[0][0]) == doctest::Approx(1.0));
  CHECK(std::abs(s.components[0][1]) == doctest::Approx(0.0));
}

TEST_CASE("spectrum null oracle: isotropic rows have a flat spectrum") {
  // Monte-Carlo null over 20 seeds; medians of PC1 ratio and |skewness|.
  std::vector<double> max_ratios, abs_skews;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(900 + seed);
    const std::vector<Vector> delta = random_rows(rng, 10, 128);
    const Spectrum s = spectrum(delta, true);
    REQUIRE(s.ratios.size() == 9);  // rank cap: n - 1 when centered
    max_ratios.push_back(s.ratios[0]);
    abs_skews.push_back(std::abs(s.skewness));
  }
  std::sort(max_ratios.begin(), max_ratios.end());
  std::sort(abs_skews.begin(), abs_skews.end());
  CHECK(max_ratios[10] < 2.0 / 9.0);
  CHECK(abs_skews[10] < 1.0);
}

TEST_CASE("spectrum with a planted direction") {
  Rng rng(33);
  const Vector d = random_unit_vec(rng, 16);
  std::vector<Vector> delta;
  for (int i = 0; i < 8; ++i) {
    Vector row(16);
    for (std::size_t k = 0; k < 16; ++k) row[k] = d[k] + 0.01 * rng.normal();
    delta.push_back(std::move(row));
  }
  const Spectrum s = spectrum(delta, false);
  CHECK(s.ratios[0] > 0.99);
  CHECK(std::abs(dot(s.components[0], d)) > 0.999);
}

TEST_CASE("spectrum ratios are rotation invariant") {
  Rng rng(44);
  const std::vector<Vector> delta = random_rows(rng, 6, 12);
  const Spectrum base = spectrum(delta, true);
  const Spectrum rotated = spectrum(rotate_rows(delta, rng), true);
  REQUIRE(base.ratios.size() == rotated.ratios.size());
  for (std::size_t i = 0; i < base.ratios.size(); ++i)
    CHECK(base.ratios[i] == doctest::Approx(rotated.ratios[i]).epsilon(1e-8));
}

TEST_CASE("spectrum ratios sum to one and degenerate input throws") {
  Rng rng(45);
  const std::vector<Vector> delta = random_rows(rng, 5, 8);
  const Spectrum s = spectrum(delta, true);
  double sum = 0.0;
  for (double r : s.ratios) sum += r;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

  const std::vector<Vector> identical(4, Vector(8, 2.5));
  CHECK_THROWS_AS(spectrum(identical, true), std::domain_error);
}

TEST_CASE("bias_direction") {
  Rng rng(55);
  SUBCASE("planted direction is recovered up to sign") {
    const Vector d = random_unit_vec(rng, 16);
    std::vector<Vector> delta;
    for (int i = 0; i < 8; ++i) {
      Vector row(16);
      for (std::size_t k = 0; k < 16; ++k) row[k] = d[k] + 0.01 * rng.normal();
      delta.push_back(std::move(row));
    }
    const Vector b = bias_direction(delta, false);
    CHECK(std::abs(dot(b, d)) > 0.999);
    CHECK(norm(b) == doctest::Approx(1.0).epsilon(1e-12));
    // Sign rule: rows align with +d, so b . mean >= 0 forces b ~ +d.
    CHECK(dot(b, d) > 0.0);
  }

  SUBCASE("scaling the rows leaves the direction unchanged") {
    const std::vector<Vector> delta = random_rows(rng, 6, 10);
    std::vector<Vector> scaled = delta;
    for (Vector& r : scaled)
      for (double& x : r) x *= 3.0;
    const Vector a = bias_direction(delta, true);
    const Vector b = bias_direction(scaled, true);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-9));
  }

  SUBCASE("documented sign rule on a fixed mean") {
    // mean(delta) = (2, 0) -> b must be +(1, 0)
    const std::vector<Vector> delta = {{3, 0}, {1, 0}};
    const Vector b = bias_direction(delta, false);
    CHECK(b[0] == doctest::Approx(1.0));
    CHECK(std::abs(b[1]) < 1e-9);
  }
}

TEST_CASE("remove_bias") {
  SUBCASE("textbook cases") {
    CHECK(remove_bias({3, 4}, {1, 0}) == Vector{0, 4});
    const Vector h = {0, 4};
    CHECK(remove_bias(h, {1, 0}) == h);  // already orthogonal
    const Vector parallel = remove_bias({2, 0}, {1, 0});
    CHECK(parallel[0] == doctest::Approx(0.0));
    CHECK(parallel[1] == doctest::Approx(0.0));
  }
  SUBCASE("zero direction throws") {
    CHECK_THROWS_AS(remove_bias({1, 2}, {0, 0}), std::domain_error);
  }
  SUBCASE("orthogonality, idempotence, energy, linearity on random pairs") {
    Rng rng(66);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t dim = 2 + rng.uniform_index(30);
      Vector h(dim), b(dim);
      for (double& x : h) x = rng.normal();
      for (double& x : b) x = rng.normal() * rng.uniform(0.1, 10.0);
      if (norm(b) == 0.0) continue;
      const Vector ht = remove_bias(h, b);

      CHECK(std::abs(dot(ht, b) / norm(b)) <= 1e-9 * std::max(1.0, norm(h)));

      const Vector twice = remove_bias(ht, b);
      for (std::size_t i = 0; i < dim; ++i)
        CHECK(twice[i] == doctest::Approx(ht[i]).epsilon(1e-12));

      const double bn = norm(b);
      const double along = dot(h, b) / bn;
      CHECK(norm(h) * norm(h) ==
            doctest::Approx(norm(ht) * norm(ht) + along * along).epsilon(1e-9));
      CHECK(norm(ht) <= norm(h) * (1.0 + 1e-12));

      // linearity: P(alpha h1 + h2) = alpha P(h1) + P(h2)
      Vector h2(dim);
      for (double& x : h2) x = rng.normal();
      const double alpha = rng.uniform(-3.0, 3.0);
      Vector combo(dim);
      for (std::size_t i = 0; i < dim; ++i) combo[i] = alpha * h[i] + h2[i];
      const Vector lhs = remove_bias(combo, b);
      const Vector rhs_a = remove_bias(h, b);
      const Vector rhs_b = remove_bias(h2, b);
      for (std::size_t i = 0; i < dim; ++i)
        CHECK(lhs[i] == doctest::Approx(alpha * rhs_a[i] + rhs_b[i]).epsilon(1e-9));
    }
  }
}

TEST_CASE("mitigated_embed is the removal/projection composition") {
  Rng rng(77);
  const ClassifierModel m =
      init_model(TaskMode::kMulticlass, HeadVariant::kProtected, EncoderSpec{{5, 6, 4}}, 3, 0, 4, rng);
  Rng data_rng(78);
  Vector h(4), b(4);
  for (double& x : h) x = data_rng.normal();
  for (double& x : b) x = data_rng.normal();

  const Vector composed = mitigated_embed(m, h, b, 1);
  const Vector manual = project(m, remove_bias(h, b), 1);
  CHECK(composed == manual);

  SUBCASE("orthogonal b leaves the embedding unchanged") {
    // pick b orthogonal to h
    Vector orth = {h[1], -h[0], 0, 0};
    if (norm(orth) > 0) {
      const Vector z = project(m, h, 0);
      const Vector zt = mitigated_embed(m, h, orth, 0);
      for (std::size_t i = 0; i < z.size(); ++i)
        CHECK(zt[i] == doctest::Approx(z[i]).epsilon(1e-9));
    }
  }
}

namespace {

Dataset biased_dataset(double beta, std::uint64_t seed) {
  GenConfig cfg;
  cfg.task = TaskMode::kMulticlass;
  cfg.num_classes = 6;
  cfg.feature_dim = 16;
  cfg.per_class = 300;
  cfg.skew = 0.9;
  cfg.sigma = 1.0;
  cfg.attr_shift = beta;
  cfg.seed = seed;
  return generate_synthetic(cfg);
}

ClassifierModel quick_model(const Dataset& ds, std::uint64_t seed) {
  Rng rng(seed);
  ClassifierModel m = init_model(TaskMode::kMulticlass, HeadVariant::kBaseline,
                                 EncoderSpec{{16, 24, 12}}, ds.num_classes, 0, 0, rng);
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.batch_size = 64;
  cfg.step_period = 10;
  cfg.seed = seed;
  train(m, ds, Dataset{}, cfg);
  return m;
}

}  // namespace

TEST_CASE("profile_model end to end") {
  const Dataset biased = biased_dataset(4.0, 201);
  const ClassifierModel model = quick_model(biased, 202);

  const BiasProfile profile = profile_model(model, biased, true);
  CHECK(profile.ratios.size() == 5);  // centered rank cap: K - 1
  CHECK(norm(profile.direction) == doctest::Approx(1.0).epsilon(1e-12));

  SUBCASE("profile is deterministic") {
    const BiasProfile again = profile_model(model, biased, true);
    CHECK(profile.ratios == again.ratios);
    CHECK(profile.direction == again.direction);
  }

  SUBCASE("re-profiling after removal shrinks PC1") {
    const BiasProfile removed = profile_model_removed(model, biased, profile.direction, true);
    CHECK(removed.ratios[0] < profile.ratios[0]);
  }

  SUBCASE("unbiased data gives a lower-skewness profile") {
    const Dataset unbiased = biased_dataset(0.0, 203);
    const ClassifierModel unbiased_model = quick_model(unbiased, 204);
    const BiasProfile flat = profile_model(unbiased_model, unbiased, true);
    CHECK(flat.skewness < profile.skewness);
  }
}

TEST_CASE("shuffled-attribute null has a flatter spectrum than true labels") {
  // Property analog of the identification claim: over 10 seeds, the paired
  // comparison must favor the true-attribute profile.
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset ds = biased_dataset(4.0, 300 + seed);
    const ClassifierModel model = quick_model(ds, 400 + seed);

    std::vector<Vector> features;
    std::vector<int> labels, attrs;
    for (const Sample& s : ds.samples) {
      features.push_back(forward_features(model, s.features));
      labels.push_back(s.label);
      attrs.push_back(s.attribute);
    }
    const BiasProfile true_profile = profile_features(features, labels, attrs, ds.num_classes, true);

    std::vector<int> shuffled = attrs;
    Rng rng(derive_seed(seed, 99));
    rng.shuffle(shuffled);
    const BiasProfile null_profile =
        profile_features(features, labels, shuffled, ds.num_classes, true);

    if (true_profile.skewness > null_profile.skewness) ++wins;
  }
  CHECK(wins >= 8);
}

TEST_CASE("profile json payload") {
  const Dataset ds = biased_dataset(4.0, 205);
  const ClassifierModel model = quick_model(ds, 206);
  const BiasProfile profile = profile_model(model, ds, true);
  const std::string text = profile_to_json(profile, true);
  CHECK(text.find("\"ratios\"") != std::string::npos);
  CHECK(text.find("\"direction\"") != std::string::npos);
  CHECK(text.find("\"projection\"") != std::string::npos);
  CHECK(text.find("\"prototypes0\"") != std::string::npos);
}
