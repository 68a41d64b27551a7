#include "fairlens/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "fairlens/errors.hpp"
#include "fairlens/rng.hpp"

namespace fairlens {

std::string to_string(TaskMode mode) {
  switch (mode) {
    case TaskMode::kMulticlass: return "multiclass";
    case TaskMode::kMultilabel: return "multilabel";
    case TaskMode::kBinary: return "binary";
  }
  return "unknown";
}

TaskMode task_mode_from_string(const std::string& s) {
  if (s == "multiclass") return TaskMode::kMulticlass;
  if (s == "multilabel") return TaskMode::kMultilabel;
  if (s == "binary") return TaskMode::kBinary;
  throw ConfigError("unknown task mode: '" + s + "'");
}

void GenConfig::validate() const {
  if (feature_dim < 1) throw ConfigError("gen.feature_dim must be >= 1");
  if (per_class < 2) throw ConfigError("gen.per_class must be >= 2");
  if (skew < 0.5 || skew > 1.0) throw ConfigError("gen.skew must lie in [0.5, 1]");
  if (sigma <= 0.0) throw ConfigError("gen.sigma must be > 0");
  if (attr_shift < 0.0) throw ConfigError("gen.attr_shift must be >= 0");
  if (label_shift < 0.0) throw ConfigError("gen.label_shift must be >= 0");
  if (task == TaskMode::kMulticlass) {
    if (num_classes < 2) throw ConfigError("gen.num_classes must be >= 2 for multiclass");
  } else {
    if (num_labels < 1) throw ConfigError("gen.num_labels must be >= 1 for multilabel/binary");
    if (task == TaskMode::kBinary && num_labels != 1)
      throw ConfigError("gen.num_labels must be 1 for binary");
  }
}

SkewTable compute_skew(const Dataset& ds) {
  const std::size_t rows =
      ds.task == TaskMode::kMulticlass ? static_cast<std::size_t>(ds.num_classes)
                                       : static_cast<std::size_t>(ds.num_labels);
  SkewTable skew;
  skew.count.assign(rows, {0, 0});
  skew.ratio.assign(rows, {0.0, 0.0});
  for (const Sample& s : ds.samples) {
    if (ds.task == TaskMode::kMulticlass) {
      skew.count[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(s.attribute)]++;
    } else {
      for (std::size_t c = 0; c < rows; ++c) {
        if (s.labels[c] == 1) skew.count[c][static_cast<std::size_t>(s.attribute)]++;
      }
    }
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double total = static_cast<double>(skew.count[r][0] + skew.count[r][1]);
    if (total > 0) {
      skew.ratio[r][0] = static_cast<double>(skew.count[r][0]) / total;
      skew.ratio[r][1] = static_cast<double>(skew.count[r][1]) / total;
    }
  }
  return skew;
}

namespace {

Vector random_unit(Rng& rng, int dim) {
  Vector v(static_cast<std::size_t>(dim));
  double n = 0.0;
  do {
    for (double& x : v) x = rng.normal();
    n = norm(v);
  } while (n == 0.0);
  for (double& x : v) x /= n;
  return v;
}

Vector random_normal(Rng& rng, int dim) {
  Vector v(static_cast<std::size_t>(dim));
  for (double& x : v) x = rng.normal();
  return v;
}

}  // namespace

Geometry make_geometry(const GenConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Geometry geom;
  if (cfg.task == TaskMode::kMulticlass) {
    geom.class_centers.reserve(static_cast<std::size_t>(cfg.num_classes));
    for (int y = 0; y < cfg.num_classes; ++y)
      geom.class_centers.push_back(random_normal(rng, cfg.feature_dim));
    const int dirs = cfg.shift_mode == ShiftMode::kSharedDirection ? 1 : cfg.num_classes;
    for (int i = 0; i < dirs; ++i) geom.shift_dirs.push_back(random_unit(rng, cfg.feature_dim));
  } else {
    geom.shift_dirs.push_back(random_unit(rng, cfg.feature_dim));
    for (int c = 0; c < cfg.num_labels; ++c)
      geom.label_dirs.push_back(random_unit(rng, cfg.feature_dim));
  }
  return geom;
}

namespace {

Dataset sample_multiclass(const Geometry& geom, const GenConfig& cfg, double rho,
                          int per_class, std::uint64_t noise_seed) {
  Dataset ds;
  ds.task = TaskMode::kMulticlass;
  ds.num_classes = cfg.num_classes;
  ds.num_labels = 0;
  ds.feature_dim = cfg.feature_dim;

  Rng rng(noise_seed);
  const int half = (cfg.num_classes + 1) / 2;  // first ceil(K/2) classes skew toward v=1
  for (int y = 0; y < cfg.num_classes; ++y) {
    const int dominant = y < half ? 1 : 0;
    const int n_dominant = static_cast<int>(std::floor(rho * per_class));
    const Vector& dir = geom.shift_dirs[cfg.shift_mode == ShiftMode::kSharedDirection
                                            ? 0
                                            : static_cast<std::size_t>(y)];
    for (int i = 0; i < per_class; ++i) {
      Sample s;
      s.label = y;
      s.attribute = i < n_dominant ? dominant : 1 - dominant;
      s.features = geom.class_centers[static_cast<std::size_t>(y)];
      for (int d = 0; d < cfg.feature_dim; ++d) {
        s.features[static_cast<std::size_t>(d)] += cfg.sigma * rng.normal();
      }
      if (s.attribute == 1) {
        for (int d = 0; d < cfg.feature_dim; ++d)
          s.features[static_cast<std::size_t>(d)] += cfg.attr_shift * dir[static_cast<std::size_t>(d)];
      }
      ds.samples.push_back(std::move(s));
    }
  }
  ds.skew = compute_skew(ds);
  return ds;
}

Dataset sample_multilabel(const Geometry& geom, const GenConfig& cfg, double rho,
                          int per_group, std::uint64_t noise_seed) {
  Dataset ds;
  ds.task = cfg.task;
  ds.num_classes = 2;
  ds.num_labels = cfg.num_labels;
  ds.feature_dim = cfg.feature_dim;

  Rng rng(noise_seed);
  const int total = 2 * per_group;
  ds.samples.resize(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    Sample& s = ds.samples[static_cast<std::size_t>(i)];
    s.attribute = i < per_group ? 0 : 1;
    s.labels.assign(static_cast<std::size_t>(cfg.num_labels), 0);
  }

  // Per label: half the samples are positive; floor(rho * positives) of them
  // fall in the label's preferred attribute group. Membership is drawn by
  // shuffling each group so labels stay decorrelated.
  for (int c = 0; c < cfg.num_labels; ++c) {
    const int preferred = c % 2 == 0 ? 1 : 0;
    const int positives = per_group;  // half of the dataset
    int pos_preferred = static_cast<int>(std::floor(rho * positives));
    pos_preferred = std::min(pos_preferred, per_group);
    const int pos_other = positives - pos_preferred;

    for (int v = 0; v < 2; ++v) {
      std::vector<int> members(static_cast<std::size_t>(per_group));
      std::iota(members.begin(), members.end(), v == 0 ? 0 : per_group);
      rng.shuffle(members);
      const int want = v == preferred ? pos_preferred : pos_other;
      for (int k = 0; k < want; ++k) {
        ds.samples[static_cast<std::size_t>(members[static_cast<std::size_t>(k)])]
            .labels[static_cast<std::size_t>(c)] = 1;
      }
    }
  }

  for (Sample& s : ds.samples) {
    s.features.assign(static_cast<std::size_t>(cfg.feature_dim), 0.0);
    for (int d = 0; d < cfg.feature_dim; ++d) {
      double x = cfg.sigma * rng.normal();
      if (s.attribute == 1) x += cfg.attr_shift * geom.shift_dirs[0][static_cast<std::size_t>(d)];
      for (int c = 0; c < cfg.num_labels; ++c) {
        if (s.labels[static_cast<std::size_t>(c)] == 1)
          x += cfg.label_shift * geom.label_dirs[static_cast<std::size_t>(c)][static_cast<std::size_t>(d)];
      }
      s.features[static_cast<std::size_t>(d)] = x;
    }
  }
  ds.skew = compute_skew(ds);
  return ds;
}

}  // namespace

Dataset sample_dataset(const Geometry& geom, const GenConfig& cfg, double rho,
                       int per_class, std::uint64_t noise_seed) {
  if (cfg.task == TaskMode::kMulticlass)
    return sample_multiclass(geom, cfg, rho, per_class, noise_seed);
  return sample_multilabel(geom, cfg, rho, per_class, noise_seed);
}

Dataset generate_synthetic(const GenConfig& cfg) {
  const Geometry geom = make_geometry(cfg);
  return sample_dataset(geom, cfg, cfg.skew, cfg.per_class, derive_seed(cfg.seed, 1));
}

namespace {

Dataset sample_eb_cells(const Geometry& geom, const GenConfig& cfg,
                        const std::vector<std::array<int, 2>>& cells, int per_cell,
                        std::uint64_t noise_seed) {
  Dataset ds;
  ds.task = TaskMode::kBinary;
  ds.num_classes = 2;
  ds.num_labels = 1;
  ds.feature_dim = cfg.feature_dim;
  Rng rng(noise_seed);
  for (const auto& [y, v] : cells) {
    for (int i = 0; i < per_cell; ++i) {
      Sample s;
      s.attribute = v;
      s.labels = {y};
      s.features.assign(static_cast<std::size_t>(cfg.feature_dim), 0.0);
      for (int d = 0; d < cfg.feature_dim; ++d) {
        double x = cfg.sigma * rng.normal();
        if (y == 1) x += cfg.label_shift * geom.label_dirs[0][static_cast<std::size_t>(d)];
        if (v == 1) x += cfg.attr_shift * geom.shift_dirs[0][static_cast<std::size_t>(d)];
        s.features[static_cast<std::size_t>(d)] = x;
      }
      ds.samples.push_back(std::move(s));
    }
  }
  ds.skew = compute_skew(ds);
  return ds;
}

}  // namespace

ExtremeBiasSplits generate_extreme_bias(const GenConfig& cfg) {
  GenConfig eb_cfg = cfg;
  eb_cfg.task = TaskMode::kBinary;
  eb_cfg.num_labels = 1;
  eb_cfg.validate();
  const Geometry geom = make_geometry(eb_cfg);

  ExtremeBiasSplits out;
  out.eb1 = sample_eb_cells(geom, eb_cfg, {{0, 0}, {1, 1}}, cfg.per_class,
                            derive_seed(cfg.seed, 11));
  out.eb2 = sample_eb_cells(geom, eb_cfg, {{0, 1}, {1, 0}}, cfg.per_class,
                            derive_seed(cfg.seed, 12));
  out.test = sample_eb_cells(geom, eb_cfg, {{0, 0}, {0, 1}, {1, 0}, {1, 1}}, cfg.per_class,
                             derive_seed(cfg.seed, 13));
  return out;
}

namespace {

// Cell key for stratification: class and attribute in multi-class mode,
// attribute only in multi-label mode (full label combinations would make
// cells vanishingly small).
long cell_key(const Dataset& ds, const Sample& s) {
  if (ds.task == TaskMode::kMulticlass) return s.label * 2 + s.attribute;
  return s.attribute;
}

}  // namespace

std::vector<Dataset> split(const Dataset& ds, const std::vector<double>& fractions,
                           std::uint64_t seed) {
  if (fractions.empty()) throw ConfigError("split: fractions must be non-empty");
  double sum = 0.0;
  for (double f : fractions) {
    if (f <= 0.0) throw ConfigError("split: fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");

  std::map<long, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    cells[cell_key(ds, ds.samples[i])].push_back(i);

  const std::size_t k = fractions.size();
  std::vector<std::vector<std::size_t>> assigned(k);
  Rng rng(seed);
  for (auto& [key, indices] : cells) {
    if (indices.size() < k) {
      throw DataError("split: cell " + std::to_string(key) + " has " +
                      std::to_string(indices.size()) + " samples, fewer than " +
                      std::to_string(k) + " splits");
    }
    rng.shuffle(indices);

    // Largest-remainder rounding keeps splits exhaustive and exact.
    const double n = static_cast<double>(indices.size());
    std::vector<std::size_t> take(k);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t used = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double target = fractions[j] * n;
      take[j] = static_cast<std::size_t>(std::floor(target));
      used += take[j];
      remainders.emplace_back(target - std::floor(target), j);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; used < indices.size(); ++r, ++used) take[remainders[r % k].second]++;

    std::size_t cursor = 0;
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t t = 0; t < take[j]; ++t) assigned[j].push_back(indices[cursor++]);
    }
  }

  std::vector<Dataset> out(k);
  for (std::size_t j = 0; j < k; ++j) {
    std::sort(assigned[j].begin(), assigned[j].end());
    out[j].task = ds.task;
    out[j].num_classes = ds.num_classes;
    out[j].num_labels = ds.num_labels;
    out[j].feature_dim = ds.feature_dim;
    out[j].samples.reserve(assigned[j].size());
    for (std::size_t i : assigned[j]) out[j].samples.push_back(ds.samples[i]);
    out[j].skew = compute_skew(out[j]);
  }
  return out;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_csv: cannot open '" + path + "' for writing");

  for (int d = 0; d < ds.feature_dim; ++d) out << "f" << d << ",";
  if (ds.task == TaskMode::kMulticlass) {
    out << "label,attr\n";
  } else {
    for (int c = 0; c < ds.num_labels; ++c) out << "l" << c << ",";
    out << "attr\n";
  }

  char buf[64];
  for (const Sample& s : ds.samples) {
    for (double x : s.features) {
      std::snprintf(buf, sizeof(buf), "%.17g", x);
      out << buf << ",";
    }
    if (ds.task == TaskMode::kMulticlass) {
      out << s.label << "," << s.attribute << "\n";
    } else {
      for (int v : s.labels) out << v << ",";
      out << s.attribute << "\n";
    }
  }
  if (!out) throw DataError("save_csv: write failed for '" + path + "'");
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
    return v;
  } catch (const std::exception&) {
    throw DataError("load_csv: malformed number '" + s + "' at line " + std::to_string(line_no));
  }
}

int parse_int(const std::string& s, std::size_t line_no) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw DataError("load_csv: malformed integer '" + s + "' at line " + std::to_string(line_no));
  }
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_csv: cannot open '" + path + "'");

  std::string header;
  if (!std::getline(in, header)) throw DataError("load_csv: no samples in '" + path + "'");
  const std::vector<std::string> cols = split_fields(header);

  int feature_dim = 0;
  int num_labels = 0;
  bool has_class_label = false;
  for (const std::string& c : cols) {
    if (c.rfind('f', 0) == 0 && c.size() > 1) {
      ++feature_dim;
    } else if (c.rfind('l', 0) == 0 && c.size() > 1 && std::isdigit(static_cast<unsigned char>(c[1]))) {
      ++num_labels;
    } else if (c == "label") {
      has_class_label = true;
    } else if (c != "attr") {
      throw DataError("load_csv: unexpected header column '" + c + "'");
    }
  }
  if (feature_dim == 0) throw DataError("load_csv: header has no feature columns");
  if (has_class_label == (num_labels > 0))
    throw DataError("load_csv: header must have either a label column or l0..lC-1 columns");
  const std::size_t expected = static_cast<std::size_t>(feature_dim) +
                               (has_class_label ? 1 : static_cast<std::size_t>(num_labels)) + 1;
  if (cols.size() != expected) throw DataError("load_csv: inconsistent header layout");

  Dataset ds;
  ds.task = has_class_label ? TaskMode::kMulticlass
                            : (num_labels == 1 ? TaskMode::kBinary : TaskMode::kMultilabel);
  ds.feature_dim = feature_dim;
  ds.num_labels = num_labels;
  ds.num_classes = has_class_label ? 0 : 2;

  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_fields(line);
    if (fields.size() != expected) {
      throw DataError("load_csv: line " + std::to_string(line_no) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(expected));
    }
    Sample s;
    s.features.reserve(static_cast<std::size_t>(feature_dim));
    std::size_t f = 0;
    for (int d = 0; d < feature_dim; ++d) s.features.push_back(parse_double(fields[f++], line_no));
    if (has_class_label) {
      s.label = parse_int(fields[f++], line_no);
      if (s.label < 0)
        throw DataError("load_csv: negative class label at line " + std::to_string(line_no));
      ds.num_classes = std::max(ds.num_classes, s.label + 1);
    } else {
      for (int c = 0; c < num_labels; ++c) {
        const int v = parse_int(fields[f++], line_no);
        if (v != 0 && v != 1)
          throw DataError("load_csv: label value " + std::to_string(v) +
                          " is not binary at line " + std::to_string(line_no));
        s.labels.push_back(v);
      }
    }
    s.attribute = parse_int(fields[f++], line_no);
    if (s.attribute != 0 && s.attribute != 1)
      throw DataError("load_csv: attribute value " + std::to_string(s.attribute) +
                      " is not binary at line " + std::to_string(line_no));
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw DataError("load_csv: no samples in '" + path + "'");
  ds.skew = compute_skew(ds);
  return ds;
}

void save_skew_json(const SkewTable& skew, const std::string& path) {
  nlohmann::json j;
  j["count"] = skew.count;
  j["ratio"] = skew.ratio;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_skew_json: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
}

SkewTable load_skew_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_skew_json: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
    SkewTable skew;
    skew.count = j.at("count").get<std::vector<std::array<std::int64_t, 2>>>();
    skew.ratio = j.at("ratio").get<std::vector<std::array<double, 2>>>();
    if (skew.count.size() != skew.ratio.size())
      throw DataError("load_skew_json: count/ratio size mismatch");
    return skew;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_skew_json: " + std::string(e.what()));
  }
}

}  // namespace fairlens
