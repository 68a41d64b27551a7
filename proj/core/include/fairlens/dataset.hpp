#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fairlens/numeric.hpp"

namespace fairlens {

/// Binary classification is handled as multi-label with C = 1.
enum class TaskMode { kMulticlass, kMultilabel, kBinary };

std::string to_string(TaskMode mode);
TaskMode task_mode_from_string(const std::string& s);

struct Sample {
  Vector features;
  int label = -1;             // class index, multi-class only
  std::vector<int> labels;    // binary labels y^c, multi-label/binary only
  int attribute = 0;          // v in {0, 1}
};

/// Per-class training skew s(y, v) = N_y^v / (N_y^0 + N_y^1) together with
/// the raw cell counts. In multi-label mode rows are indexed by attribute
/// label c and counts run over positives of that label.
struct SkewTable {
  std::vector<std::array<std::int64_t, 2>> count;
  std::vector<std::array<double, 2>> ratio;

  std::size_t num_rows() const { return ratio.size(); }
};

struct Dataset {
  TaskMode task = TaskMode::kMulticlass;
  int num_classes = 0;  // K; 2 for binary-per-label tasks
  int num_labels = 0;   // C; 0 in multi-class mode
  int feature_dim = 0;  // D
  std::vector<Sample> samples;
  SkewTable skew;

  std::size_t size() const { return samples.size(); }
};

/// Recompute the skew table from realized sample counts.
SkewTable compute_skew(const Dataset& ds);

enum class ShiftMode { kSharedDirection, kPerClassDirection };

struct GenConfig {
  TaskMode task = TaskMode::kMulticlass;
  int num_classes = 10;      // K (multi-class)
  int num_labels = 0;        // C (multi-label; 1 for binary)
  int feature_dim = 32;      // D
  int per_class = 500;       // multi-class: samples per class;
                             // multi-label: samples per attribute group;
                             // extreme-bias: samples per (y, v) cell
  double skew = 0.95;        // rho, dominant-attribute fraction in [0.5, 1]
  double sigma = 1.0;        // cluster spread
  double attr_shift = 4.0;   // beta, magnitude of the attribute-conditioned shift
  double label_shift = 3.0;  // magnitude of label-conditioned offsets (multi-label modes)
  ShiftMode shift_mode = ShiftMode::kSharedDirection;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

/// Class centers and shift directions drawn from the config seed. Sampling
/// different splits from one geometry keeps train/test clusters aligned
/// while their noise streams stay independent.
struct Geometry {
  std::vector<Vector> class_centers;  // multi-class: K centers ~ N(0, I)
  std::vector<Vector> shift_dirs;     // unit norm; 1 entry (shared) or K (per class)
  std::vector<Vector> label_dirs;     // unit norm, one per attribute label c
};

Geometry make_geometry(const GenConfig& cfg);

/// Draw one dataset from a geometry. `rho` is the dominant-attribute
/// fraction for this split and `noise_seed` its independent noise stream.
/// Attribute assignment uses deterministic rounding (floor(rho * n)
/// dominant samples per class), so the realized skew table is exact.
Dataset sample_dataset(const Geometry& geom, const GenConfig& cfg, double rho,
                       int per_class, std::uint64_t noise_seed);

/// sample_dataset with the config's own skew, per-class count and seed.
Dataset generate_synthetic(const GenConfig& cfg);

/// Extreme-bias splits for the binary task: EB1 trains on fully confounded
/// cells (y = v), EB2 on the crossed cells (y = 1 - v), and Test covers all
/// four cells evenly.
struct ExtremeBiasSplits {
  Dataset eb1;
  Dataset eb2;
  Dataset test;
};

ExtremeBiasSplits generate_extreme_bias(const GenConfig& cfg);

/// Disjoint, exhaustive split, stratified per (y, v) cell with
/// largest-remainder rounding; deterministic per seed. Fractions must be
/// positive and sum to 1 within 1e-9.
std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions,
                           std::uint64_t seed);

/// CSV schema: header `f0..f{D-1},label,attr` (multi-class) or
/// `f0..f{D-1},l0..l{C-1},attr` (multi-label); comma separated, UTF-8, LF
/// line endings, features with 17 significant digits.
void save_csv(const Dataset& ds, const std::string& path);
Dataset load_csv(const std::string& path);

void save_skew_json(const SkewTable& skew, const std::string& path);
SkewTable load_skew_json(const std::string& path);

}  // namespace fairlens
