#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fairlens/dataset.hpp"
#include "fairlens/numeric.hpp"
#include "fairlens/rng.hpp"

namespace fairlens {

/// MLP encoder layout: widths = {D, hidden..., H}. ReLU on hidden layers,
/// identity on the output layer.
struct EncoderSpec {
  std::vector<int> widths = {32, 64, 64, 32};

  int input_dim() const { return widths.front(); }
  int feature_dim() const { return widths.back(); }
  void validate() const;
};

enum class HeadVariant { kBaseline, kProtected };

enum class LrSchedule { kStep, kExponential };
enum class HeadUpdate { kMatched, kBoth };

struct TrainConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 128;
  int epochs = 60;
  LrSchedule schedule = LrSchedule::kStep;
  double step_factor = 10.0;     // lr divided by this every step_period epochs
  int step_period = 20;          // epochs
  double exp_decay = 0.999;      // per optimizer step
  double temperature = 0.1;      // tau
  HeadUpdate head_update = HeadUpdate::kMatched;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LinearLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Classifier with an MLP encoder and one of two head variants:
///  - baseline: attribute-blind linear softmax head(s), the identification
///    target;
///  - protected: per-attribute projection heads g^v into an M-dim embedding
///    where classes are weight rows compared by temperature-scaled cosine
///    similarity.
struct ClassifierModel {
  TaskMode task = TaskMode::kMulticlass;
  HeadVariant variant = HeadVariant::kBaseline;
  EncoderSpec spec;
  int num_classes = 0;  // K (multi-class); 2 per label otherwise
  int num_labels = 0;   // C; 0 in multi-class mode
  int embed_dim = 0;    // M; protected variant only

  std::vector<LinearLayer> encoder;

  // Baseline variant.
  LinearLayer baseline;                      // K x H (multi-class)
  std::vector<LinearLayer> baseline_labels;  // C layers of 2 x H (multi-label)

  // Protected variant.
  std::array<LinearLayer, 2> projections;             // M x H each
  std::array<Matrix, 2> class_weights;                // W^v: K x M (multi-class)
  std::array<std::vector<Matrix>, 2> label_weights;   // W^{v,c}: 2 x M (multi-label)

  bool is_multilabel() const { return task != TaskMode::kMulticlass; }
};

/// Glorot-uniform weights, zero biases; class weight rows from the same
/// scheme.
ClassifierModel init_model(TaskMode task, HeadVariant variant, const EncoderSpec& spec,
                           int num_classes, int num_labels, int embed_dim, Rng& rng);

/// Copy head 0's parameters into head 1 (single-embedding ablation: a tied
/// model routes both attribute values through identical parameters).
void tie_heads(ClassifierModel& model);

/// Gradient tensors, mirroring the model's parameter layout.
struct Gradients {
  std::vector<LinearLayer> encoder;
  LinearLayer baseline;
  std::vector<LinearLayer> baseline_labels;
  std::array<LinearLayer, 2> projections;
  std::array<Matrix, 2> class_weights;
  std::array<std::vector<Matrix>, 2> label_weights;
};

Gradients zero_gradients(const ClassifierModel& model);

/// Flat spans over every trainable tensor, in a fixed documented order
/// (encoder layers first, then head parameters). The two overloads yield
/// matching orders, which sgd_step and the finite-difference tests rely on.
std::vector<std::span<double>> parameter_views(ClassifierModel& model);
std::vector<std::span<double>> gradient_views(Gradients& grads, const ClassifierModel& model);

Vector forward_features(const ClassifierModel& model, const Vector& x);

/// z^v = g^v(h). Protected variant only.
Vector project(const ClassifierModel& model, const Vector& h, int v);

/// Softmax over cosine similarities to W^v rows, scaled by 1/tau.
Vector probs_multiclass(const ClassifierModel& model, const Vector& z, int v,
                        double temperature);

/// Two-way softmax over W^{v,c} rows (absence, presence).
std::array<double, 2> probs_multilabel(const ClassifierModel& model, const Vector& z, int v,
                                       int c, double temperature);

using Batch = std::vector<const Sample*>;

struct LossResult {
  double loss = 0.0;
  Gradients grads;
};

/// Mean NLL over the batch, each sample routed per cfg.head_update, plus
/// 0.5 * weight_decay * |theta|^2 over all trainable parameters. Gradients
/// cover every parameter.
LossResult loss_multiclass(const ClassifierModel& model, const Batch& batch,
                           const TrainConfig& cfg);
/// As loss_multiclass, averaged over samples and the C attribute labels.
LossResult loss_multilabel(const ClassifierModel& model, const Batch& batch,
                           const TrainConfig& cfg);
/// Attribute-blind softmax cross-entropy for the baseline variant.
LossResult loss_baseline(const ClassifierModel& model, const Batch& batch,
                         const TrainConfig& cfg);
/// Dispatch on the model's variant and task.
LossResult compute_loss(const ClassifierModel& model, const Batch& batch,
                        const TrainConfig& cfg);

/// lr at (epoch, global step) under the configured schedule.
double schedule_lr(const TrainConfig& cfg, int epoch, long global_step);

/// SGD with momentum: buffer = momentum * buffer + grad;
/// theta -= lr(step) * buffer.
class SgdOptimizer {
 public:
  SgdOptimizer(const TrainConfig& cfg, int steps_per_epoch);

  void step(ClassifierModel& model, Gradients& grads);

  long steps_taken() const { return step_; }
  double current_lr() const;  // lr the next step will use

 private:
  TrainConfig cfg_;
  int steps_per_epoch_;
  long step_ = 0;
  std::vector<Vector> buffers_;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_metric = 0.0;  // plain accuracy (multi-class) / mean label accuracy
  double val_metric = 0.0;    // accuracy or weighted mAP (percent)
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;  // epoch whose parameters the model holds
};

/// Training diverged (non-finite loss); carries the history so far.
/// CLI exit code 3.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, TrainHistory history)
      : std::runtime_error(what), history(std::move(history)) {}
  TrainHistory history;
};

/// Full training loop: deterministic per cfg.seed (fixed shuffle order per
/// epoch). Multi-label models keep the epoch with the best validation
/// weighted mAP; multi-class models keep the final epoch.
TrainHistory train(ClassifierModel& model, const Dataset& train_ds, const Dataset& val_ds,
                   const TrainConfig& cfg);

// ---- Inference. These accept features only; attribute labels never enter
// the prediction path.

Vector baseline_probs_from_features(const ClassifierModel& model, const Vector& h,
                                    double temperature = 1.0);
std::vector<double> baseline_scores_multilabel_from_features(const ClassifierModel& model,
                                                             const Vector& h);

/// Sum over both heads of p(y|z^v, v); entries in [0, 2].
Vector ensemble_probs_multiclass_from_features(const ClassifierModel& model, const Vector& h,
                                               double temperature);
/// argmax of the summed distribution; ties break to the lowest class index.
int ensemble_predict_multiclass(const ClassifierModel& model, const Vector& x,
                                double temperature);
/// Per attribute label c: sum over heads of p(y^c = 1 | z^v, v), in [0, 2].
std::vector<double> ensemble_scores_multilabel_from_features(const ClassifierModel& model,
                                                             const Vector& h,
                                                             double temperature);
std::vector<double> ensemble_score_multilabel(const ClassifierModel& model, const Vector& x,
                                              double temperature);

/// Lowest-index argmax (the documented tie rule).
int argmax_lowest(const Vector& values);

/// Checkpoint JSON: spec, task mode, every parameter tensor as nested
/// arrays. Round-trips give bitwise-equal forward passes.
void save_checkpoint(const ClassifierModel& model, const std::string& path);
ClassifierModel load_checkpoint(const std::string& path);

}  // namespace fairlens
