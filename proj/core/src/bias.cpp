#include "fairlens/bias.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace fairlens {

PrototypeTable compute_prototypes(const std::vector<Vector>& features,
                                  const std::vector<int>& labels, const std::vector<int>& attrs,
                                  int num_rows) {
  if (features.size() != labels.size() || features.size() != attrs.size())
    throw std::invalid_argument("compute_prototypes: input lengths differ");
  if (features.empty()) throw std::invalid_argument("compute_prototypes: no features");
  const std::size_t dim = features[0].size();

  PrototypeTable table;
  table.num_rows = num_rows;
  table.mu.assign(static_cast<std::size_t>(num_rows), {Vector(dim, 0.0), Vector(dim, 0.0)});
  std::vector<std::array<std::size_t, 2>> counts(static_cast<std::size_t>(num_rows), {0, 0});

  for (std::size_t i = 0; i < features.size(); ++i) {
    const int y = labels[i];
    const int v = attrs[i];
    if (y < 0 || y >= num_rows) throw std::invalid_argument("compute_prototypes: label out of range");
    if (v != 0 && v != 1) throw std::invalid_argument("compute_prototypes: attribute must be binary");
    if (features[i].size() != dim)
      throw std::invalid_argument("compute_prototypes: feature dimension mismatch");
    Vector& acc = table.mu[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)];
    for (std::size_t d = 0; d < dim; ++d) acc[d] += features[i][d];
    counts[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)]++;
  }

  for (int y = 0; y < num_rows; ++y) {
    for (int v = 0; v < 2; ++v) {
      const std::size_t n = counts[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)];
      if (n == 0)
        throw std::domain_error("compute_prototypes: empty cell (y=" + std::to_string(y) +
                                ", v=" + std::to_string(v) + ")");
      Vector& mu = table.mu[static_cast<std::size_t>(y)][static_cast<std::size_t>(v)];
      for (double& x : mu) x /= static_cast<double>(n);
    }
  }
  return table;
}

std::vector<Vector> compute_delta(const PrototypeTable& prototypes) {
  std::vector<Vector> delta;
  delta.reserve(prototypes.mu.size());
  for (const auto& pair : prototypes.mu) {
    if (pair[0].empty() || pair[1].empty() || pair[0].size() != pair[1].size())
      throw std::invalid_argument("compute_delta: missing prototype");
    Vector d(pair[0].size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = pair[1][i] - pair[0][i];
    delta.push_back(std::move(d));
  }
  return delta;
}

Spectrum spectrum(const std::vector<Vector>& delta, bool centered) {
  const std::size_t n = delta.size();
  if (centered && n < 2) throw std::invalid_argument("spectrum: centered PCA needs >= 2 rows");
  if (!centered && n < 1) throw std::invalid_argument("spectrum: needs >= 1 row");
  const std::size_t dim = delta[0].size();
  for (const Vector& d : delta)
    if (d.size() != dim) throw std::invalid_argument("spectrum: inconsistent row dimensions");

  std::vector<Vector> rows = delta;
  if (centered) {
    Vector mean(dim, 0.0);
    for (const Vector& d : rows)
      for (std::size_t i = 0; i < dim; ++i) mean[i] += d[i];
    for (double& x : mean) x /= static_cast<double>(n);
    for (Vector& d : rows)
      for (std::size_t i = 0; i < dim; ++i) d[i] -= mean[i];
  }

  Matrix gram(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double g = dot(rows[i], rows[j]);
      gram(i, j) = g;
      gram(j, i) = g;
    }

  const EigenResult eig = symmetric_eigen(gram);
  const std::size_t rank_cap = std::min(dim, centered ? n - 1 : n);

  double total = 0.0;
  std::vector<double> eigenvalues;
  eigenvalues.reserve(rank_cap);
  for (std::size_t i = 0; i < rank_cap; ++i) {
    eigenvalues.push_back(std::max(0.0, eig.eigenvalues[i]));
    total += eigenvalues.back();
  }
  if (total < 1e-18) throw std::domain_error("spectrum: degenerate (total variance below 1e-18)");

  Spectrum out;
  out.ratios.reserve(rank_cap);
  for (double ev : eigenvalues) out.ratios.push_back(ev / total);

  for (std::size_t i = 0; i < rank_cap; ++i) {
    if (eigenvalues[i] <= 1e-12 * total) break;  // zero modes have no direction
    Vector component(dim, 0.0);
    const Vector& u = eig.eigenvectors[i];
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t d = 0; d < dim; ++d) component[d] += u[r] * rows[r][d];
    const double cn = norm(component);
    for (double& x : component) x /= cn;
    out.components.push_back(std::move(component));
  }

  if (out.ratios.size() >= 3) {
    try {
      out.skewness = sample_skewness(out.ratios);
    } catch (const std::domain_error&) {
      out.skewness = 0.0;  // exactly flat spectrum
    }
  } else {
    out.skewness = std::nan("");
  }
  return out;
}

Vector bias_direction(const std::vector<Vector>& delta, bool centered) {
  const Spectrum spec = spectrum(delta, centered);
  if (spec.components.empty()) throw std::domain_error("bias_direction: degenerate spectrum");
  Vector b = spec.components[0];

  Vector mean(b.size(), 0.0);
  for (const Vector& d : delta)
    for (std::size_t i = 0; i < b.size(); ++i) mean[i] += d[i];
  for (double& x : mean) x /= static_cast<double>(delta.size());

  const double alignment = dot(b, mean);
  bool flip = false;
  if (std::abs(alignment) > 1e-12) {
    flip = alignment < 0.0;
  } else {
    for (double x : b) {
      if (std::abs(x) > 1e-12) {
        flip = x < 0.0;
        break;
      }
    }
  }
  if (flip)
    for (double& x : b) x = -x;
  return b;
}

Vector remove_bias(const Vector& h, const Vector& b) {
  if (h.size() != b.size()) throw std::invalid_argument("remove_bias: dimension mismatch");
  const double nb2 = dot(b, b);
  if (nb2 == 0.0) throw std::domain_error("remove_bias: zero bias direction");
  const double coeff = dot(h, b) / nb2;
  Vector out(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) out[i] = h[i] - coeff * b[i];
  return out;
}

Vector mitigated_embed(const ClassifierModel& model, const Vector& h, const Vector& b, int v) {
  return project(model, remove_bias(h, b), v);
}

namespace {

struct FeatureSet {
  std::vector<Vector> features;
  std::vector<int> attrs;
};

FeatureSet extract_features(const ClassifierModel& model, const Dataset& ds, const Vector* b) {
  FeatureSet out;
  out.features.reserve(ds.samples.size());
  out.attrs.reserve(ds.samples.size());
  for (const Sample& s : ds.samples) {
    Vector h = forward_features(model, s.features);
    if (b != nullptr) h = remove_bias(h, *b);
    out.features.push_back(std::move(h));
    out.attrs.push_back(s.attribute);
  }
  return out;
}

PrototypeTable prototypes_from_dataset(const FeatureSet& fs, const Dataset& ds) {
  if (ds.task == TaskMode::kMulticlass) {
    std::vector<int> labels;
    labels.reserve(ds.samples.size());
    for (const Sample& s : ds.samples) labels.push_back(s.label);
    return compute_prototypes(fs.features, labels, fs.attrs, ds.num_classes);
  }

  // Multi-label: each binary label defines a row over its positive set.
  const int rows = ds.num_labels;
  const std::size_t dim = fs.features.empty() ? 0 : fs.features[0].size();
  PrototypeTable table;
  table.num_rows = rows;
  table.mu.assign(static_cast<std::size_t>(rows), {Vector(dim, 0.0), Vector(dim, 0.0)});
  std::vector<std::array<std::size_t, 2>> counts(static_cast<std::size_t>(rows), {0, 0});
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const Sample& s = ds.samples[i];
    for (int c = 0; c < rows; ++c) {
      if (s.labels[static_cast<std::size_t>(c)] != 1) continue;
      Vector& acc = table.mu[static_cast<std::size_t>(c)][static_cast<std::size_t>(s.attribute)];
      for (std::size_t d = 0; d < dim; ++d) acc[d] += fs.features[i][d];
      counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(s.attribute)]++;
    }
  }
  for (int c = 0; c < rows; ++c) {
    for (int v = 0; v < 2; ++v) {
      const std::size_t cnt = counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(v)];
      if (cnt == 0)
        throw std::domain_error("profile: no positives for label " + std::to_string(c) +
                                " with attribute " + std::to_string(v));
      Vector& mu = table.mu[static_cast<std::size_t>(c)][static_cast<std::size_t>(v)];
      for (double& x : mu) x /= static_cast<double>(cnt);
    }
  }
  return table;
}

BiasProfile profile_impl(const ClassifierModel& model, const Dataset& ds, const Vector* b,
                         bool centered) {
  const FeatureSet fs = extract_features(model, ds, b);
  BiasProfile profile;
  profile.centered = centered;
  profile.prototypes = prototypes_from_dataset(fs, ds);
  profile.delta = compute_delta(profile.prototypes);
  // Binary has a single delta row, where centered PCA is undefined; fall
  // back to the uncentered spectrum for the direction.
  const bool effective_centered = centered && profile.delta.size() >= 2;
  const Spectrum spec = spectrum(profile.delta, effective_centered);
  profile.centered = effective_centered;
  profile.ratios = spec.ratios;
  profile.skewness = spec.skewness;
  profile.direction = bias_direction(profile.delta, effective_centered);
  return profile;
}

}  // namespace

BiasProfile profile_features(const std::vector<Vector>& features, const std::vector<int>& labels,
                             const std::vector<int>& attrs, int num_rows, bool centered) {
  BiasProfile profile;
  profile.prototypes = compute_prototypes(features, labels, attrs, num_rows);
  profile.delta = compute_delta(profile.prototypes);
  const bool effective_centered = centered && profile.delta.size() >= 2;
  const Spectrum spec = spectrum(profile.delta, effective_centered);
  profile.centered = effective_centered;
  profile.ratios = spec.ratios;
  profile.skewness = spec.skewness;
  profile.direction = bias_direction(profile.delta, effective_centered);
  return profile;
}

BiasProfile profile_model(const ClassifierModel& model, const Dataset& ds, bool centered) {
  return profile_impl(model, ds, nullptr, centered);
}

BiasProfile profile_model_removed(const ClassifierModel& model, const Dataset& ds, const Vector& b,
                                  bool centered) {
  return profile_impl(model, ds, &b, centered);
}

std::string profile_to_json(const BiasProfile& profile, bool with_projection, int indent) {
  nlohmann::json j;
  j["centered"] = profile.centered;
  j["num_rows"] = profile.prototypes.num_rows;
  j["ratios"] = profile.ratios;
  j["skewness"] = profile.skewness;
  j["direction"] = profile.direction;
  nlohmann::json mu0 = nlohmann::json::array();
  nlohmann::json mu1 = nlohmann::json::array();
  for (const auto& pair : profile.prototypes.mu) {
    mu0.push_back(pair[0]);
    mu1.push_back(pair[1]);
  }
  j["prototypes"] = {{"v0", std::move(mu0)}, {"v1", std::move(mu1)}};
  j["delta"] = profile.delta;

  if (with_projection) {
    const bool effective_centered = profile.centered && profile.delta.size() >= 2;
    const Spectrum spec = spectrum(profile.delta, effective_centered);
    if (spec.components.size() >= 2) {
      auto project2d = [&](const Vector& x) {
        return nlohmann::json::array({dot(x, spec.components[0]), dot(x, spec.components[1])});
      };
      nlohmann::json proj;
      proj["components"] = {spec.components[0], spec.components[1]};
      nlohmann::json p0 = nlohmann::json::array();
      nlohmann::json p1 = nlohmann::json::array();
      nlohmann::json dl = nlohmann::json::array();
      for (const auto& pair : profile.prototypes.mu) {
        p0.push_back(project2d(pair[0]));
        p1.push_back(project2d(pair[1]));
      }
      for (const Vector& d : profile.delta) dl.push_back(project2d(d));
      proj["prototypes0"] = std::move(p0);
      proj["prototypes1"] = std::move(p1);
      proj["delta"] = std::move(dl);
      j["projection"] = std::move(proj);
    }
  }
  return j.dump(indent);
}

}  // namespace fairlens
