#pragma once

#include <array>
#include <string>
#include <vector>

#include "fairlens/dataset.hpp"
#include "fairlens/model.hpp"
#include "fairlens/numeric.hpp"

namespace fairlens {

/// Protected class prototypes mu_y^v: per-cell mean feature vectors. In
/// multi-label mode rows are attribute labels and cells run over the
/// positives of each label.
struct PrototypeTable {
  int num_rows = 0;
  std::vector<std::array<Vector, 2>> mu;  // [y][v]
};

/// Throws std::domain_error naming the empty (y, v) cell.
PrototypeTable compute_prototypes(const std::vector<Vector>& features,
                                  const std::vector<int>& labels, const std::vector<int>& attrs,
                                  int num_rows);

/// delta_y = mu_y^1 - mu_y^0, ordered by class index.
std::vector<Vector> compute_delta(const PrototypeTable& prototypes);

/// PCA of the delta rows via the |delta| x |delta| Gram matrix (rank never
/// exceeds the class count, so this is exact and cheap).
struct Spectrum {
  std::vector<double> ratios;       // explained-variance ratios, descending
  double skewness = 0.0;            // g1 over ratios; NaN when fewer than 3
  std::vector<Vector> components;   // unit-norm feature-space directions
};

Spectrum spectrum(const std::vector<Vector>& delta, bool centered);

/// First principal component of the (optionally centered) delta rows. Sign
/// fixed so b . mean(delta) >= 0; ties fall back to a positive first
/// non-zero coordinate.
Vector bias_direction(const std::vector<Vector>& delta, bool centered);

/// h~ = h - (h.b/|b|)(b/|b|).
Vector remove_bias(const Vector& h, const Vector& b);

/// z~^v = g^v(remove_bias(h, b)).
Vector mitigated_embed(const ClassifierModel& model, const Vector& h, const Vector& b, int v);

struct BiasProfile {
  PrototypeTable prototypes;
  std::vector<Vector> delta;
  std::vector<double> ratios;
  double skewness = 0.0;
  Vector direction;
  bool centered = true;
};

/// Feature-space profile over precomputed features.
BiasProfile profile_features(const std::vector<Vector>& features, const std::vector<int>& labels,
                             const std::vector<int>& attrs, int num_rows, bool centered);

/// Run the encoder over the dataset, then prototypes -> delta -> spectrum
/// -> direction. Attribute labels are used by the analysis only, never by
/// the forward pass.
BiasProfile profile_model(const ClassifierModel& model, const Dataset& ds, bool centered);

/// Same profile with remove_bias(h, b) applied to every feature first.
BiasProfile profile_model_removed(const ClassifierModel& model, const Dataset& ds, const Vector& b,
                                  bool centered);

/// Profile JSON; with_projection adds the prototypes and deltas projected
/// onto the top-2 components (plot-ready payload).
std::string profile_to_json(const BiasProfile& profile, bool with_projection = true,
                            int indent = 2);

}  // namespace fairlens
