#include "fairlens/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fairlens/errors.hpp"
#include "fairlens/fairness.hpp"

namespace fairlens {

namespace {

constexpr double kNormGuard = 1e-12;  // keeps cosine gradients finite near zero norm

}  // namespace

void EncoderSpec::validate() const {
  if (widths.size() < 2) throw ConfigError("encoder needs at least one layer (two widths)");
  for (int w : widths)
    if (w < 1) throw ConfigError("encoder widths must be >= 1");
}

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw ConfigError("train.learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (temperature <= 0.0) throw ConfigError("train.temperature must be > 0");
  if (step_factor <= 0.0) throw ConfigError("train.step_factor must be > 0");
  if (step_period < 1) throw ConfigError("train.step_period must be >= 1");
  if (exp_decay <= 0.0 || exp_decay > 1.0) throw ConfigError("train.exp_decay must lie in (0, 1]");
}

namespace {

LinearLayer init_linear(int out, int in, Rng& rng) {
  LinearLayer layer;
  layer.weight = Matrix(static_cast<std::size_t>(out), static_cast<std::size_t>(in));
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (std::size_t i = 0; i < layer.weight.size(); ++i)
    layer.weight.data()[i] = rng.uniform(-limit, limit);
  layer.bias.assign(static_cast<std::size_t>(out), 0.0);
  return layer;
}

Matrix init_weight_rows(int rows, int cols, Rng& rng) {
  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

}  // namespace

ClassifierModel init_model(TaskMode task, HeadVariant variant, const EncoderSpec& spec,
                           int num_classes, int num_labels, int embed_dim, Rng& rng) {
  spec.validate();
  ClassifierModel m;
  m.task = task;
  m.variant = variant;
  m.spec = spec;
  m.num_labels = task == TaskMode::kMulticlass ? 0 : num_labels;
  m.num_classes = task == TaskMode::kMulticlass ? num_classes : 2;
  if (task == TaskMode::kMulticlass && num_classes < 2)
    throw ConfigError("init_model: multiclass needs num_classes >= 2");
  if (task != TaskMode::kMulticlass && num_labels < 1)
    throw ConfigError("init_model: multilabel needs num_labels >= 1");
  if (task == TaskMode::kBinary && num_labels != 1)
    throw ConfigError("init_model: binary task needs num_labels == 1");

  for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l)
    m.encoder.push_back(init_linear(spec.widths[l + 1], spec.widths[l], rng));

  const int h_dim = spec.feature_dim();
  if (variant == HeadVariant::kBaseline) {
    if (task == TaskMode::kMulticlass) {
      m.baseline = init_linear(m.num_classes, h_dim, rng);
    } else {
      for (int c = 0; c < m.num_labels; ++c) m.baseline_labels.push_back(init_linear(2, h_dim, rng));
    }
  } else {
    if (embed_dim < 1) throw ConfigError("init_model: protected variant needs embed_dim >= 1");
    m.embed_dim = embed_dim;
    for (int v = 0; v < 2; ++v)
      m.projections[static_cast<std::size_t>(v)] = init_linear(embed_dim, h_dim, rng);
    if (task == TaskMode::kMulticlass) {
      for (int v = 0; v < 2; ++v)
        m.class_weights[static_cast<std::size_t>(v)] =
            init_weight_rows(m.num_classes, embed_dim, rng);
    } else {
      for (int v = 0; v < 2; ++v)
        for (int c = 0; c < m.num_labels; ++c)
          m.label_weights[static_cast<std::size_t>(v)].push_back(init_weight_rows(2, embed_dim, rng));
    }
  }
  return m;
}

void tie_heads(ClassifierModel& model) {
  if (model.variant != HeadVariant::kProtected)
    throw std::logic_error("tie_heads: protected variant only");
  model.projections[1] = model.projections[0];
  model.class_weights[1] = model.class_weights[0];
  model.label_weights[1] = model.label_weights[0];
}

Gradients zero_gradients(const ClassifierModel& model) {
  Gradients g;
  auto zero_like = [](const LinearLayer& layer) {
    LinearLayer z;
    z.weight = Matrix(layer.weight.rows(), layer.weight.cols());
    z.bias.assign(layer.bias.size(), 0.0);
    return z;
  };
  for (const LinearLayer& layer : model.encoder) g.encoder.push_back(zero_like(layer));
  g.baseline = zero_like(model.baseline);
  for (const LinearLayer& layer : model.baseline_labels) g.baseline_labels.push_back(zero_like(layer));
  for (int v = 0; v < 2; ++v) {
    g.projections[static_cast<std::size_t>(v)] =
        zero_like(model.projections[static_cast<std::size_t>(v)]);
    const Matrix& cw = model.class_weights[static_cast<std::size_t>(v)];
    g.class_weights[static_cast<std::size_t>(v)] = Matrix(cw.rows(), cw.cols());
    for (const Matrix& lw : model.label_weights[static_cast<std::size_t>(v)])
      g.label_weights[static_cast<std::size_t>(v)].push_back(Matrix(lw.rows(), lw.cols()));
  }
  return g;
}

namespace {

template <typename T>
std::vector<std::span<double>> collect_views(T& t) {
  std::vector<std::span<double>> views;
  auto add_layer = [&](LinearLayer& layer) {
    if (layer.weight.size() > 0) views.emplace_back(layer.weight.data(), layer.weight.size());
    if (!layer.bias.empty()) views.emplace_back(layer.bias.data(), layer.bias.size());
  };
  for (LinearLayer& layer : t.encoder) add_layer(layer);
  add_layer(t.baseline);
  for (LinearLayer& layer : t.baseline_labels) add_layer(layer);
  for (int v = 0; v < 2; ++v) {
    add_layer(t.projections[static_cast<std::size_t>(v)]);
    Matrix& cw = t.class_weights[static_cast<std::size_t>(v)];
    if (cw.size() > 0) views.emplace_back(cw.data(), cw.size());
    for (Matrix& lw : t.label_weights[static_cast<std::size_t>(v)])
      if (lw.size() > 0) views.emplace_back(lw.data(), lw.size());
  }
  return views;
}

}  // namespace

std::vector<std::span<double>> parameter_views(ClassifierModel& model) {
  return collect_views(model);
}

std::vector<std::span<double>> gradient_views(Gradients& grads, const ClassifierModel&) {
  return collect_views(grads);
}

namespace {

struct EncoderTrace {
  std::vector<Vector> inputs;  // inputs[l] feeds layer l; inputs.back() = h
  std::vector<Vector> pre;     // pre-activation of each layer
};

EncoderTrace encoder_forward(const ClassifierModel& model, const Vector& x) {
  if (static_cast<int>(x.size()) != model.spec.input_dim())
    throw std::invalid_argument("forward_features: input dimension mismatch");
  EncoderTrace trace;
  trace.inputs.push_back(x);
  const std::size_t layers = model.encoder.size();
  for (std::size_t l = 0; l < layers; ++l) {
    const LinearLayer& layer = model.encoder[l];
    Vector pre = layer.weight.multiply(trace.inputs[l]);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += layer.bias[i];
    Vector out = pre;
    if (l + 1 < layers) {
      for (double& v : out) v = v > 0.0 ? v : 0.0;  // ReLU on hidden layers
    }
    trace.pre.push_back(std::move(pre));
    trace.inputs.push_back(std::move(out));
  }
  return trace;
}

void encoder_backward(const ClassifierModel& model, const EncoderTrace& trace, Vector delta,
                      Gradients& grads) {
  const std::size_t layers = model.encoder.size();
  for (std::size_t l = layers; l-- > 0;) {
    if (l + 1 < layers) {
      const Vector& pre = trace.pre[l];
      for (std::size_t i = 0; i < delta.size(); ++i)
        if (pre[i] <= 0.0) delta[i] = 0.0;
    }
    LinearLayer& g = grads.encoder[l];
    const Vector& in = trace.inputs[l];
    for (std::size_t r = 0; r < g.weight.rows(); ++r) {
      const double d = delta[r];
      g.bias[r] += d;
      double* row = g.weight.data() + r * g.weight.cols();
      for (std::size_t c = 0; c < g.weight.cols(); ++c) row[c] += d * in[c];
    }
    if (l > 0) delta = model.encoder[l].weight.multiply_transposed(delta);
  }
}

Vector softmax(Vector logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (double& v : logits) {
    v = std::exp(v - mx);
    denom += v;
  }
  for (double& v : logits) v /= denom;
  return logits;
}

double guarded_cosine(const double* w, const Vector& z, std::size_t dim, double& nw_out,
                      double& nz_out) {
  double d = 0.0;
  double ww = 0.0;
  double zz = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    d += w[i] * z[i];
    ww += w[i] * w[i];
    zz += z[i] * z[i];
  }
  nw_out = std::sqrt(ww) + kNormGuard;
  nz_out = std::sqrt(zz) + kNormGuard;
  return d / (nw_out * nz_out);
}

std::string first_nonfinite_tensor(const ClassifierModel& model) {
  auto views = collect_views(const_cast<ClassifierModel&>(model));
  for (std::size_t i = 0; i < views.size(); ++i)
    for (double v : views[i])
      if (!std::isfinite(v)) return "parameter tensor #" + std::to_string(i);
  return "inputs (parameters are finite)";
}

void check_finite_forward(const ClassifierModel& model, const Vector& h, const char* where) {
  double acc = 0.0;
  for (double v : h) acc += v;
  if (!std::isfinite(acc)) {
    throw std::runtime_error(std::string(where) + ": non-finite forward pass; first offender: " +
                             first_nonfinite_tensor(model));
  }
}

// Backward pass of p = softmax(cos(rows, z)/tau) against target row,
// shared by the multi-class and per-label two-way heads. Adds
// sample_weight-scaled contributions into the weight-row gradients and
// grad_z; returns the raw (unscaled) NLL.
double cosine_softmax_backward(const Matrix& rows, const Vector& z, int target, double tau,
                               double sample_weight, Matrix& grad_rows, Vector& grad_z) {
  const std::size_t n = rows.rows();
  const std::size_t dim = rows.cols();
  const double nz_raw = norm(z);
  Vector sims(n), nws(n);
  double nz = 0.0;
  for (std::size_t y = 0; y < n; ++y)
    sims[y] = guarded_cosine(rows.data() + y * dim, z, dim, nws[y], nz);

  Vector logits(n);
  for (std::size_t y = 0; y < n; ++y) logits[y] = sims[y] / tau;
  const Vector p = softmax(logits);
  const double loss = -std::log(std::max(p[static_cast<std::size_t>(target)], 1e-300));

  for (std::size_t y = 0; y < n; ++y) {
    const double g = sample_weight * (p[y] - (static_cast<int>(y) == target ? 1.0 : 0.0)) / tau;
    if (g == 0.0) continue;
    const double* w = rows.data() + y * dim;
    double* gw = grad_rows.data() + y * dim;
    const double nw = nws[y];
    const double s = sims[y];
    const double ww_norm = nw - kNormGuard;  // raw |w|
    for (std::size_t i = 0; i < dim; ++i) {
      const double z_hat = nz_raw > 0.0 ? z[i] / nz_raw : 0.0;
      const double w_hat = ww_norm > 0.0 ? w[i] / ww_norm : 0.0;
      grad_z[i] += g * (w[i] / (nw * nz) - s * z_hat / nz);
      gw[i] += g * (z[i] / (nw * nz) - s * w_hat / nw);
    }
  }
  return loss;
}

// Standard softmax head backward: logits = W h + b. Gradients are scaled
// by sample_weight; the return value is the raw NLL.
double linear_softmax_backward(const LinearLayer& layer, const Vector& h, int target,
                               double sample_weight, LinearLayer& grad_layer, Vector& grad_h) {
  Vector logits = layer.weight.multiply(h);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += layer.bias[i];
  const Vector p = softmax(logits);
  const double loss = -std::log(std::max(p[static_cast<std::size_t>(target)], 1e-300));
  const std::size_t n = p.size();
  const std::size_t dim = h.size();
  for (std::size_t y = 0; y < n; ++y) {
    const double g = sample_weight * (p[y] - (static_cast<int>(y) == target ? 1.0 : 0.0));
    grad_layer.bias[y] += g;
    double* gw = grad_layer.weight.data() + y * dim;
    const double* w = layer.weight.data() + y * dim;
    for (std::size_t i = 0; i < dim; ++i) {
      gw[i] += g * h[i];
      grad_h[i] += g * w[i];
    }
  }
  return loss;
}

void add_weight_decay(const ClassifierModel& model, double lambda, double& loss, Gradients& grads) {
  if (lambda == 0.0) return;
  auto params = collect_views(const_cast<ClassifierModel&>(model));
  auto gviews = collect_views(grads);
  double sq = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      const double w = params[t][i];
      sq += w * w;
      gviews[t][i] += lambda * w;
    }
  }
  loss += 0.5 * lambda * sq;
}

void check_batch(const ClassifierModel& model, const Batch& batch, const char* where) {
  if (batch.empty()) throw std::invalid_argument(std::string(where) + ": empty batch");
  for (const Sample* s : batch) {
    if (static_cast<int>(s->features.size()) != model.spec.input_dim())
      throw std::invalid_argument(std::string(where) + ": sample dimension mismatch");
  }
}

// Routed heads for one sample: (head, weight) pairs per the update policy.
std::array<std::pair<int, double>, 2> routed_heads(int attribute, HeadUpdate update, int& count) {
  if (update == HeadUpdate::kMatched) {
    count = 1;
    return {{{attribute, 1.0}, {0, 0.0}}};
  }
  count = 2;
  return {{{0, 0.5}, {1, 0.5}}};
}

}  // namespace

LossResult loss_multiclass(const ClassifierModel& model, const Batch& batch,
                           const TrainConfig& cfg) {
  if (model.variant != HeadVariant::kProtected || model.task != TaskMode::kMulticlass)
    throw std::logic_error("loss_multiclass: needs a protected multi-class model");
  check_batch(model, batch, "loss_multiclass");
  LossResult out;
  out.grads = zero_gradients(model);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const Sample* sample : batch) {
    const EncoderTrace trace = encoder_forward(model, sample->features);
    const Vector& h = trace.inputs.back();
    check_finite_forward(model, h, "loss_multiclass");

    int head_count = 0;
    const auto heads = routed_heads(sample->attribute, cfg.head_update, head_count);
    Vector grad_h(h.size(), 0.0);
    for (int k = 0; k < head_count; ++k) {
      const auto [v, w] = heads[static_cast<std::size_t>(k)];
      const std::size_t vi = static_cast<std::size_t>(v);
      const LinearLayer& proj = model.projections[vi];
      Vector z = proj.weight.multiply(h);
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += proj.bias[i];

      Vector grad_z(z.size(), 0.0);
      out.loss += inv_n * w *
                  cosine_softmax_backward(model.class_weights[vi], z, sample->label,
                                          cfg.temperature, inv_n * w,
                                          out.grads.class_weights[vi], grad_z);

      LinearLayer& gproj = out.grads.projections[vi];
      for (std::size_t r = 0; r < proj.weight.rows(); ++r) {
        const double d = grad_z[r];
        gproj.bias[r] += d;
        double* grow = gproj.weight.data() + r * proj.weight.cols();
        const double* row = proj.weight.data() + r * proj.weight.cols();
        for (std::size_t c = 0; c < proj.weight.cols(); ++c) {
          grow[c] += d * h[c];
          grad_h[c] += d * row[c];
        }
      }
    }
    encoder_backward(model, trace, std::move(grad_h), out.grads);
  }
  add_weight_decay(model, cfg.weight_decay, out.loss, out.grads);
  return out;
}

LossResult loss_multilabel(const ClassifierModel& model, const Batch& batch,
                           const TrainConfig& cfg) {
  if (model.variant != HeadVariant::kProtected || model.task == TaskMode::kMulticlass)
    throw std::logic_error("loss_multilabel: needs a protected multi-label model");
  check_batch(model, batch, "loss_multilabel");
  LossResult out;
  out.grads = zero_gradients(model);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double inv_c = 1.0 / static_cast<double>(model.num_labels);

  for (const Sample* sample : batch) {
    if (static_cast<int>(sample->labels.size()) != model.num_labels)
      throw std::invalid_argument("loss_multilabel: label vector shape mismatch");
    const EncoderTrace trace = encoder_forward(model, sample->features);
    const Vector& h = trace.inputs.back();
    check_finite_forward(model, h, "loss_multilabel");

    int head_count = 0;
    const auto heads = routed_heads(sample->attribute, cfg.head_update, head_count);
    Vector grad_h(h.size(), 0.0);
    for (int k = 0; k < head_count; ++k) {
      const auto [v, w] = heads[static_cast<std::size_t>(k)];
      const std::size_t vi = static_cast<std::size_t>(v);
      const LinearLayer& proj = model.projections[vi];
      Vector z = proj.weight.multiply(h);
      for (std::size_t i = 0; i < z.size(); ++i) z[i] += proj.bias[i];

      Vector grad_z(z.size(), 0.0);
      for (int c = 0; c < model.num_labels; ++c) {
        out.loss += inv_n * inv_c * w *
                    cosine_softmax_backward(model.label_weights[vi][static_cast<std::size_t>(c)], z,
                                            sample->labels[static_cast<std::size_t>(c)],
                                            cfg.temperature, inv_n * inv_c * w,
                                            out.grads.label_weights[vi][static_cast<std::size_t>(c)],
                                            grad_z);
      }

      LinearLayer& gproj = out.grads.projections[vi];
      for (std::size_t r = 0; r < proj.weight.rows(); ++r) {
        const double d = grad_z[r];
        gproj.bias[r] += d;
        double* grow = gproj.weight.data() + r * proj.weight.cols();
        const double* row = proj.weight.data() + r * proj.weight.cols();
        for (std::size_t c2 = 0; c2 < proj.weight.cols(); ++c2) {
          grow[c2] += d * h[c2];
          grad_h[c2] += d * row[c2];
        }
      }
    }
    encoder_backward(model, trace, std::move(grad_h), out.grads);
  }
  add_weight_decay(model, cfg.weight_decay, out.loss, out.grads);
  return out;
}

LossResult loss_baseline(const ClassifierModel& model, const Batch& batch,
                         const TrainConfig& cfg) {
  if (model.variant != HeadVariant::kBaseline)
    throw std::logic_error("loss_baseline: needs a baseline model");
  check_batch(model, batch, "loss_baseline");
  LossResult out;
  out.grads = zero_gradients(model);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const Sample* sample : batch) {
    const EncoderTrace trace = encoder_forward(model, sample->features);
    const Vector& h = trace.inputs.back();
    check_finite_forward(model, h, "loss_baseline");
    Vector grad_h(h.size(), 0.0);
    if (model.task == TaskMode::kMulticlass) {
      out.loss += inv_n * linear_softmax_backward(model.baseline, h, sample->label, inv_n,
                                                  out.grads.baseline, grad_h);
    } else {
      if (static_cast<int>(sample->labels.size()) != model.num_labels)
        throw std::invalid_argument("loss_baseline: label vector shape mismatch");
      const double inv_c = 1.0 / static_cast<double>(model.num_labels);
      for (int c = 0; c < model.num_labels; ++c) {
        out.loss += inv_n * inv_c *
                    linear_softmax_backward(model.baseline_labels[static_cast<std::size_t>(c)], h,
                                            sample->labels[static_cast<std::size_t>(c)], inv_n * inv_c,
                                            out.grads.baseline_labels[static_cast<std::size_t>(c)],
                                            grad_h);
      }
    }
    encoder_backward(model, trace, std::move(grad_h), out.grads);
  }
  add_weight_decay(model, cfg.weight_decay, out.loss, out.grads);
  return out;
}

LossResult compute_loss(const ClassifierModel& model, const Batch& batch, const TrainConfig& cfg) {
  if (model.variant == HeadVariant::kBaseline) return loss_baseline(model, batch, cfg);
  if (model.task == TaskMode::kMulticlass) return loss_multiclass(model, batch, cfg);
  return loss_multilabel(model, batch, cfg);
}

double schedule_lr(const TrainConfig& cfg, int epoch, long global_step) {
  if (cfg.schedule == LrSchedule::kStep)
    return cfg.learning_rate / std::pow(cfg.step_factor, epoch / cfg.step_period);
  return cfg.learning_rate * std::pow(cfg.exp_decay, static_cast<double>(global_step));
}

SgdOptimizer::SgdOptimizer(const TrainConfig& cfg, int steps_per_epoch)
    : cfg_(cfg), steps_per_epoch_(std::max(1, steps_per_epoch)) {}

double SgdOptimizer::current_lr() const {
  return schedule_lr(cfg_, static_cast<int>(step_ / steps_per_epoch_), step_);
}

void SgdOptimizer::step(ClassifierModel& model, Gradients& grads) {
  auto params = parameter_views(model);
  auto gviews = gradient_views(grads, model);
  if (buffers_.empty()) {
    for (const auto& p : params) buffers_.emplace_back(p.size(), 0.0);
  }
  const double lr = current_lr();
  for (std::size_t t = 0; t < params.size(); ++t) {
    Vector& buf = buffers_[t];
    for (std::size_t i = 0; i < params[t].size(); ++i) {
      buf[i] = cfg_.momentum * buf[i] + gviews[t][i];
      params[t][i] -= lr * buf[i];
    }
  }
  ++step_;
}

Vector forward_features(const ClassifierModel& model, const Vector& x) {
  return encoder_forward(model, x).inputs.back();
}

Vector project(const ClassifierModel& model, const Vector& h, int v) {
  if (model.variant != HeadVariant::kProtected)
    throw std::logic_error("project: baseline model has no projection heads");
  if (v != 0 && v != 1) throw std::invalid_argument("project: attribute must be 0 or 1");
  if (static_cast<int>(h.size()) != model.spec.feature_dim())
    throw std::invalid_argument("project: feature dimension mismatch");
  const LinearLayer& proj = model.projections[static_cast<std::size_t>(v)];
  Vector z = proj.weight.multiply(h);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] += proj.bias[i];
  return z;
}

namespace {

Vector cosine_softmax_probs(const Matrix& rows, const Vector& z, double tau, const char* where) {
  if (z.size() != rows.cols()) throw std::invalid_argument(std::string(where) + ": dimension mismatch");
  if (norm(z) == 0.0) throw std::domain_error(std::string(where) + ": embedding has zero norm");
  Vector logits(rows.rows());
  for (std::size_t y = 0; y < rows.rows(); ++y) {
    double nw = 0.0, nz = 0.0;
    const double sim = guarded_cosine(rows.data() + y * rows.cols(), z, rows.cols(), nw, nz);
    if (nw <= kNormGuard)
      throw std::domain_error(std::string(where) + ": weight row " + std::to_string(y) +
                              " has zero norm");
    logits[y] = sim / tau;
  }
  return softmax(std::move(logits));
}

}  // namespace

Vector probs_multiclass(const ClassifierModel& model, const Vector& z, int v, double temperature) {
  if (model.variant != HeadVariant::kProtected || model.task != TaskMode::kMulticlass)
    throw std::logic_error("probs_multiclass: needs a protected multi-class model");
  if (v != 0 && v != 1) throw std::invalid_argument("probs_multiclass: attribute must be 0 or 1");
  return cosine_softmax_probs(model.class_weights[static_cast<std::size_t>(v)], z, temperature,
                              "probs_multiclass");
}

std::array<double, 2> probs_multilabel(const ClassifierModel& model, const Vector& z, int v, int c,
                                       double temperature) {
  if (model.variant != HeadVariant::kProtected || model.task == TaskMode::kMulticlass)
    throw std::logic_error("probs_multilabel: needs a protected multi-label model");
  if (v != 0 && v != 1) throw std::invalid_argument("probs_multilabel: attribute must be 0 or 1");
  if (c < 0 || c >= model.num_labels)
    throw std::invalid_argument("probs_multilabel: attribute label index out of range");
  const Vector p =
      cosine_softmax_probs(model.label_weights[static_cast<std::size_t>(v)][static_cast<std::size_t>(c)],
                           z, temperature, "probs_multilabel");
  return {p[0], p[1]};
}

int argmax_lowest(const Vector& values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

Vector baseline_probs_from_features(const ClassifierModel& model, const Vector& h,
                                    double /*temperature*/) {
  if (model.variant != HeadVariant::kBaseline || model.task != TaskMode::kMulticlass)
    throw std::logic_error("baseline_probs_from_features: needs a multi-class baseline model");
  Vector logits = model.baseline.weight.multiply(h);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += model.baseline.bias[i];
  return softmax(std::move(logits));
}

std::vector<double> baseline_scores_multilabel_from_features(const ClassifierModel& model,
                                                             const Vector& h) {
  if (model.variant != HeadVariant::kBaseline || model.task == TaskMode::kMulticlass)
    throw std::logic_error("baseline_scores_multilabel_from_features: needs a multi-label baseline");
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(model.num_labels));
  for (const LinearLayer& layer : model.baseline_labels) {
    Vector logits = layer.weight.multiply(h);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += layer.bias[i];
    const Vector p = softmax(std::move(logits));
    scores.push_back(p[1]);
  }
  return scores;
}

Vector ensemble_probs_multiclass_from_features(const ClassifierModel& model, const Vector& h,
                                               double temperature) {
  Vector sum(static_cast<std::size_t>(model.num_classes), 0.0);
  for (int v = 0; v < 2; ++v) {
    const Vector p = probs_multiclass(model, project(model, h, v), v, temperature);
    for (std::size_t y = 0; y < p.size(); ++y) sum[y] += p[y];
  }
  return sum;
}

int ensemble_predict_multiclass(const ClassifierModel& model, const Vector& x,
                                double temperature) {
  return argmax_lowest(
      ensemble_probs_multiclass_from_features(model, forward_features(model, x), temperature));
}

std::vector<double> ensemble_scores_multilabel_from_features(const ClassifierModel& model,
                                                             const Vector& h, double temperature) {
  if (model.variant != HeadVariant::kProtected || model.task == TaskMode::kMulticlass)
    throw std::logic_error("ensemble_scores_multilabel: needs a protected multi-label model");
  std::vector<double> scores(static_cast<std::size_t>(model.num_labels), 0.0);
  for (int v = 0; v < 2; ++v) {
    const Vector z = project(model, h, v);
    for (int c = 0; c < model.num_labels; ++c)
      scores[static_cast<std::size_t>(c)] += probs_multilabel(model, z, v, c, temperature)[1];
  }
  return scores;
}

std::vector<double> ensemble_score_multilabel(const ClassifierModel& model, const Vector& x,
                                              double temperature) {
  return ensemble_scores_multilabel_from_features(model, forward_features(model, x), temperature);
}

namespace {

void check_model_dataset(const ClassifierModel& model, const Dataset& ds, const char* where) {
  if (ds.feature_dim != model.spec.input_dim())
    throw ConfigError(std::string(where) + ": dataset feature dim " +
                      std::to_string(ds.feature_dim) + " != encoder input " +
                      std::to_string(model.spec.input_dim()));
  const bool model_ml = model.task != TaskMode::kMulticlass;
  const bool ds_ml = ds.task != TaskMode::kMulticlass;
  if (model_ml != ds_ml) throw ConfigError(std::string(where) + ": task mode mismatch");
  if (model_ml && ds.num_labels != model.num_labels)
    throw ConfigError(std::string(where) + ": label count mismatch");
  if (!model_ml && ds.num_classes != model.num_classes)
    throw ConfigError(std::string(where) + ": class count mismatch");
}

double quick_accuracy(const ClassifierModel& model, const Dataset& ds, double tau) {
  if (ds.samples.empty()) return std::nan("");
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const Sample& s : ds.samples) {
    const Vector h = forward_features(model, s.features);
    if (model.task == TaskMode::kMulticlass) {
      const int pred = model.variant == HeadVariant::kBaseline
                           ? argmax_lowest(baseline_probs_from_features(model, h, 1.0))
                           : argmax_lowest(ensemble_probs_multiclass_from_features(model, h, tau));
      correct += pred == s.label;
      ++total;
    } else {
      const std::vector<double> scores =
          model.variant == HeadVariant::kBaseline
              ? baseline_scores_multilabel_from_features(model, h)
              : ensemble_scores_multilabel_from_features(model, h, tau);
      const double thr = model.variant == HeadVariant::kBaseline ? 0.5 : 1.0;
      for (int c = 0; c < model.num_labels; ++c) {
        correct += (scores[static_cast<std::size_t>(c)] >= thr) ==
                   (s.labels[static_cast<std::size_t>(c)] == 1);
        ++total;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(total);
}

double validation_map(const ClassifierModel& model, const Dataset& val, double tau) {
  if (val.samples.empty()) return std::nan("");
  PredictionLog log;
  log.task = val.task;
  log.num_labels = val.num_labels;
  log.num_classes = val.num_classes;
  for (const Sample& s : val.samples) {
    PredictionRecord rec;
    rec.attribute = s.attribute;
    rec.true_labels = s.labels;
    const Vector h = forward_features(model, s.features);
    rec.scores = model.variant == HeadVariant::kBaseline
                     ? baseline_scores_multilabel_from_features(model, h)
                     : ensemble_scores_multilabel_from_features(model, h, tau);
    const double thr = model.variant == HeadVariant::kBaseline ? 0.5 : 1.0;
    for (double sc : rec.scores) rec.predicted_labels.push_back(sc >= thr ? 1 : 0);
    log.records.push_back(std::move(rec));
  }
  try {
    return weighted_map(log).map_percent;
  } catch (const std::domain_error&) {
    return std::nan("");  // no evaluable label in this validation split
  }
}

}  // namespace

TrainHistory train(ClassifierModel& model, const Dataset& train_ds, const Dataset& val_ds,
                   const TrainConfig& cfg) {
  cfg.validate();
  check_model_dataset(model, train_ds, "train");
  if (!val_ds.samples.empty()) check_model_dataset(model, val_ds, "train(val)");
  if (train_ds.samples.empty()) throw ConfigError("train: training set is empty");

  TrainHistory history;
  if (cfg.epochs == 0) return history;

  const std::size_t n = train_ds.samples.size();
  const int steps_per_epoch =
      static_cast<int>((n + static_cast<std::size_t>(cfg.batch_size) - 1) /
                       static_cast<std::size_t>(cfg.batch_size));
  SgdOptimizer optimizer(cfg, steps_per_epoch);
  Rng shuffle_rng(derive_seed(cfg.seed, 0x7261696e));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  // Multi-label selection follows the validation weighted mAP; multi-class
  // and binary keep the final epoch.
  const bool select_best = model.task == TaskMode::kMultilabel && !val_ds.samples.empty();
  ClassifierModel best_model;
  double best_metric = -1.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    const double epoch_lr = optimizer.current_lr();
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      Batch batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_ds.samples[order[i]]);
      LossResult result = compute_loss(model, batch, cfg);
      if (!std::isfinite(result.loss)) {
        history.best_epoch = epoch;
        throw DivergenceError("train: loss diverged at epoch " + std::to_string(epoch), history);
      }
      loss_sum += result.loss * static_cast<double>(batch.size());
      loss_count += batch.size();
      optimizer.step(model, result.grads);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = epoch_lr;
    stats.train_loss = loss_sum / static_cast<double>(loss_count);
    stats.train_metric = quick_accuracy(model, train_ds, cfg.temperature);
    if (model.task == TaskMode::kMulticlass || model.task == TaskMode::kBinary) {
      stats.val_metric = 100.0 * quick_accuracy(model, val_ds, cfg.temperature);
    } else {
      stats.val_metric = validation_map(model, val_ds, cfg.temperature);
    }
    history.epochs.push_back(stats);

    if (select_best && std::isfinite(stats.val_metric) && stats.val_metric > best_metric) {
      best_metric = stats.val_metric;
      best_model = model;
      history.best_epoch = epoch;
    }
  }

  if (select_best && best_metric >= 0.0) {
    model = best_model;
  } else {
    history.best_epoch = cfg.epochs - 1;
  }
  return history;
}

// ---- Checkpoint serialization ----------------------------------------

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, std::size_t rows, std::size_t cols,
                        const std::string& field) {
  if (!j.is_array() || j.size() != rows)
    throw DataError("load_checkpoint: field '" + field + "' expects " + std::to_string(rows) +
                    " rows");
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != cols)
      throw DataError("load_checkpoint: field '" + field + "' row " + std::to_string(r) +
                      " expects " + std::to_string(cols) + " columns");
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c].get<double>();
  }
  return m;
}

nlohmann::json layer_to_json(const LinearLayer& layer) {
  return {{"weight", matrix_to_json(layer.weight)}, {"bias", layer.bias}};
}

LinearLayer layer_from_json(const nlohmann::json& j, std::size_t out, std::size_t in,
                            const std::string& field) {
  LinearLayer layer;
  layer.weight = matrix_from_json(j.at("weight"), out, in, field + ".weight");
  layer.bias = j.at("bias").get<Vector>();
  if (layer.bias.size() != out)
    throw DataError("load_checkpoint: field '" + field + ".bias' expects " + std::to_string(out) +
                    " entries");
  return layer;
}

}  // namespace

void save_checkpoint(const ClassifierModel& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = "fairlens-checkpoint";
  j["version"] = 1;
  j["task"] = to_string(model.task);
  j["variant"] = model.variant == HeadVariant::kBaseline ? "baseline" : "protected";
  j["encoder_widths"] = model.spec.widths;
  j["num_classes"] = model.num_classes;
  j["num_labels"] = model.num_labels;
  j["embed_dim"] = model.embed_dim;
  nlohmann::json enc = nlohmann::json::array();
  for (const LinearLayer& layer : model.encoder) enc.push_back(layer_to_json(layer));
  j["encoder"] = std::move(enc);
  if (model.variant == HeadVariant::kBaseline) {
    if (model.task == TaskMode::kMulticlass) {
      j["baseline"] = layer_to_json(model.baseline);
    } else {
      nlohmann::json arr = nlohmann::json::array();
      for (const LinearLayer& layer : model.baseline_labels) arr.push_back(layer_to_json(layer));
      j["baseline_labels"] = std::move(arr);
    }
  } else {
    j["projections"] = {layer_to_json(model.projections[0]), layer_to_json(model.projections[1])};
    if (model.task == TaskMode::kMulticlass) {
      j["class_weights"] = {matrix_to_json(model.class_weights[0]),
                            matrix_to_json(model.class_weights[1])};
    } else {
      nlohmann::json arr = nlohmann::json::array();
      for (int v = 0; v < 2; ++v) {
        nlohmann::json per_label = nlohmann::json::array();
        for (const Matrix& m : model.label_weights[static_cast<std::size_t>(v)])
          per_label.push_back(matrix_to_json(m));
        arr.push_back(std::move(per_label));
      }
      j["label_weights"] = std::move(arr);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot open '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw DataError("save_checkpoint: write failed for '" + path + "'");
}

ClassifierModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_checkpoint: parse error: " + std::string(e.what()));
  }
  try {
    if (j.at("format").get<std::string>() != "fairlens-checkpoint")
      throw DataError("load_checkpoint: field 'format' is not a fairlens checkpoint");
    ClassifierModel m;
    m.task = task_mode_from_string(j.at("task").get<std::string>());
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "baseline") m.variant = HeadVariant::kBaseline;
    else if (variant == "protected") m.variant = HeadVariant::kProtected;
    else throw DataError("load_checkpoint: field 'variant' has unknown value '" + variant + "'");
    m.spec.widths = j.at("encoder_widths").get<std::vector<int>>();
    m.spec.validate();
    m.num_classes = j.at("num_classes").get<int>();
    m.num_labels = j.at("num_labels").get<int>();
    m.embed_dim = j.at("embed_dim").get<int>();

    const auto& enc = j.at("encoder");
    if (!enc.is_array() || enc.size() != m.spec.widths.size() - 1)
      throw DataError("load_checkpoint: field 'encoder' layer count mismatch");
    for (std::size_t l = 0; l + 1 < m.spec.widths.size(); ++l) {
      m.encoder.push_back(layer_from_json(enc[l], static_cast<std::size_t>(m.spec.widths[l + 1]),
                                          static_cast<std::size_t>(m.spec.widths[l]),
                                          "encoder[" + std::to_string(l) + "]"));
    }
    const std::size_t h_dim = static_cast<std::size_t>(m.spec.feature_dim());
    if (m.variant == HeadVariant::kBaseline) {
      if (m.task == TaskMode::kMulticlass) {
        m.baseline = layer_from_json(j.at("baseline"), static_cast<std::size_t>(m.num_classes),
                                     h_dim, "baseline");
      } else {
        const auto& arr = j.at("baseline_labels");
        if (!arr.is_array() || arr.size() != static_cast<std::size_t>(m.num_labels))
          throw DataError("load_checkpoint: field 'baseline_labels' count mismatch");
        for (std::size_t c = 0; c < arr.size(); ++c)
          m.baseline_labels.push_back(
              layer_from_json(arr[c], 2, h_dim, "baseline_labels[" + std::to_string(c) + "]"));
      }
    } else {
      const std::size_t embed = static_cast<std::size_t>(m.embed_dim);
      const auto& projections = j.at("projections");
      if (!projections.is_array() || projections.size() != 2)
        throw DataError("load_checkpoint: field 'projections' must have two heads");
      for (int v = 0; v < 2; ++v)
        m.projections[static_cast<std::size_t>(v)] =
            layer_from_json(projections[static_cast<std::size_t>(v)], embed, h_dim,
                            "projections[" + std::to_string(v) + "]");
      if (m.task == TaskMode::kMulticlass) {
        const auto& cw = j.at("class_weights");
        if (!cw.is_array() || cw.size() != 2)
          throw DataError("load_checkpoint: field 'class_weights' must have two heads");
        for (int v = 0; v < 2; ++v)
          m.class_weights[static_cast<std::size_t>(v)] =
              matrix_from_json(cw[static_cast<std::size_t>(v)],
                               static_cast<std::size_t>(m.num_classes), embed,
                               "class_weights[" + std::to_string(v) + "]");
      } else {
        const auto& lw = j.at("label_weights");
        if (!lw.is_array() || lw.size() != 2)
          throw DataError("load_checkpoint: field 'label_weights' must have two heads");
        for (int v = 0; v < 2; ++v) {
          const auto& per_label = lw[static_cast<std::size_t>(v)];
          if (!per_label.is_array() || per_label.size() != static_cast<std::size_t>(m.num_labels))
            throw DataError("load_checkpoint: field 'label_weights[" + std::to_string(v) +
                            "]' count mismatch");
          for (std::size_t c = 0; c < per_label.size(); ++c)
            m.label_weights[static_cast<std::size_t>(v)].push_back(matrix_from_json(
                per_label[c], 2, embed,
                "label_weights[" + std::to_string(v) + "][" + std::to_string(c) + "]"));
        }
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("load_checkpoint: " + std::string(e.what()));
  }
}

}  // namespace fairlens
