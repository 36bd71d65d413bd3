// Copyright 2026 The specemo Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Classifier heads on top of the backbone: a linear one-vs-rest SVC on
// standardized fc1 features, a fully-connected softmax head, and the
// attention head, plus the training loop shared by the two neural heads.

#ifndef SPECEMO_HEADS_H_
#define SPECEMO_HEADS_H_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specemo/attention.h"
#include "specemo/backbone.h"
#include "specemo/nn/optim.h"
#include "specemo/nn/tensor.h"
#include "specemo/nn/weights.h"

namespace specemo {

enum class HeadMode { kSvc, kFc, kAm };

std::string HeadModeName(HeadMode mode);
HeadMode ParseHeadMode(const std::string& name);

// ---------------------------------------------------------------- SVC

inline constexpr double kStdFloor = 1e-8;

/// Per-dimension z-scoring with population statistics.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> stddev;
  size_t floored = 0;  // dimensions whose stddev hit kStdFloor

  /// x: N x D, N >= 2. Constant columns are floored with a warning.
  static Standardizer Fit(const nn::Tensor64& x);
  nn::Tensor64 Apply(const nn::Tensor64& x) const;
};

struct SvcOptions {
  double c = 1.0;
  // Stop once P - D <= tol * (1 + |P|).
  double tol = 1e-4;
  size_t max_epochs = 1000;
  uint64_t seed = 0;
};

/// One binary problem, y in {-1, +1}. The bias is an extra constant
/// feature and is regularized with w. Per-sample convention:
///   P(w) = 1/2 |w|^2 + (C/N) sum_i max(0, 1 - y_i w.x_i)
/// so duplicating every sample leaves the optimum unchanged.
struct BinarySvc {
  std::vector<double> w;
  double b = 0.0;
  size_t epochs = 0;
  double primal = 0.0;
  double dual = 0.0;
  bool converged = false;
  // Dual objective in minimization form, 1/2 |w|^2 - sum alpha, after each
  // epoch; non-increasing.
  std::vector<double> objective_history;

  double gap() const { return primal - dual; }
  double relative_gap() const { return gap() / (1.0 + std::abs(primal)); }
};

BinarySvc TrainBinarySvc(const nn::Tensor64& x, std::span<const int> y, const SvcOptions& options);

struct SvcModel {
  Standardizer standardizer;
  nn::Tensor64 w;  // K x D
  nn::Tensor64 b;  // K
  std::vector<BinarySvc> problems;  // diagnostics, not serialized

  size_t num_classes() const { return b.size(); }
  /// N x K decision values.
  nn::Tensor64 Scores(const nn::Tensor64& features) const;
  std::vector<int> Predict(const nn::Tensor64& features) const;

  /// svc.w, svc.b, svc.mean, svc.std.
  nn::TensorMap ExportTensors() const;
  static SvcModel FromTensors(const nn::TensorMap& tensors);
};

/// One-vs-rest over labels in [0, num_classes). Throws SingleClass when fewer
/// than two classes occur. Parameters are rounded to float32 after solving so
/// that a saved and reloaded model predicts identically.
SvcModel TrainSvc(const nn::Tensor64& features, std::span<const int> labels, size_t num_classes,
                  const SvcOptions& options);

// ---------------------------------------------------------------- neural heads

/// fc1 -> hidden -> ReLU -> K. Tensor names fc.hidden.weight/bias,
/// fc.out.weight/bias.
template <typename T>
class FcHead {
 public:
  FcHead(size_t in_dim, size_t hidden, size_t num_classes, uint64_t seed);

  struct Cache {
    nn::BasicTensor<T> input;
    nn::BasicTensor<T> hidden;
  };
  nn::BasicTensor<T> Forward(const nn::BasicTensor<T>& fc1, Cache* cache = nullptr) const;
  /// Returns the gradient on fc1.
  nn::BasicTensor<T> Backward(const Cache& cache, const nn::BasicTensor<T>& grad_logits);

  std::vector<nn::Param<T>*> params();

 private:
  nn::Param<T> hidden_w_, hidden_b_, out_w_, out_b_;
};

/// Backbone plus an fc or am head.
template <typename T>
class DeepModel {
 public:
  DeepModel(HeadMode mode, const BackboneConfig& backbone, size_t num_classes, size_t fc_hidden, size_t am_dim,
            uint64_t seed);

  HeadMode mode() const { return mode_; }
  size_t num_classes() const { return num_classes_; }
  Backbone<T>& backbone() { return backbone_; }
  const Backbone<T>& backbone() const { return backbone_; }
  AttentionHead<T>* attention() { return am_ ? &*am_ : nullptr; }
  const AttentionHead<T>* attention() const { return am_ ? &*am_ : nullptr; }

  nn::BasicTensor<T> Logits(const nn::BasicTensor<T>& images) const;
  /// am mode only.
  AttentionOutput<T> Attend(const nn::BasicTensor<T>& images) const;

  struct StepResult {
    double loss = 0.0;
    nn::BasicTensor<T> logits;
    std::optional<AttentionOutput<T>> attention;
  };
  /// Forward, loss and backward on one batch; gradients accumulate. With
  /// train_trunk false the backbone backward pass is skipped entirely.
  StepResult ForwardBackward(const nn::BasicTensor<T>& images, std::span<const int> labels, bool train_trunk);

  std::vector<nn::Param<T>*> trunk_params();
  std::vector<nn::Param<T>*> head_params();
  void zero_grad();

  nn::TensorMap ExportTensors() const;
  void ImportTensors(const nn::TensorMap& tensors);

 private:
  HeadMode mode_;
  size_t num_classes_;
  Backbone<T> backbone_;
  std::optional<FcHead<T>> fc_;
  std::optional<AttentionHead<T>> am_;
};

// ---------------------------------------------------------------- training

struct TrainConfig {
  HeadMode mode = HeadMode::kFc;
  size_t epochs = 50;
  size_t batch_size = 8;
  nn::OptimConfig optim;
  double lr_trunk = 1e-3;
  double lr_head = 1e-3;
  uint64_t seed = 0;
  size_t early_stop_patience = 10;
  bool freeze_trunk = false;
  size_t fc_hidden = 64;
  size_t am_dim = 64;
  SvcOptions svc;

  /// Mini trunk trained from scratch.
  static TrainConfig Scratch();
  /// Pretrained trunk: low trunk lr, fresh head.
  static TrainConfig Finetune();
  void validate() const;
  double effective_lr_trunk() const { return freeze_trunk ? 0.0 : lr_trunk; }
};

/// Images as an N x 3 x H x W batch in [0,1] plus class indices.
struct LabeledImages {
  nn::Tensor images;
  std::vector<int> labels;
  size_t size() const { return labels.size(); }
  LabeledImages Subset(std::span<const size_t> indices) const;
};

struct EpochRecord {
  size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Epoch loop with seeded shuffling and early stopping on validation accuracy
/// (ties go to the lower validation loss). The model ends at the best
/// checkpoint. Without validation data early stopping is off and the last
/// epoch is kept. Throws EmptySplit on an empty training set.
TrainResult Train(DeepModel<float>& model, const LabeledImages& train, const LabeledImages& val,
                  const TrainConfig& config);

struct Prediction {
  std::vector<int> labels;
  nn::Tensor64 scores;  // N x K (softmax probabilities or SVC decision values)
};

/// Batched inference; argmax with ties to the lower class index.
Prediction Predict(const DeepModel<float>& model, const nn::Tensor& images, size_t batch_size = 16);

/// fc1 tap for every image, as doubles for the SVC.
nn::Tensor64 ExtractFeatures(const Backbone<float>& backbone, const nn::Tensor& images, size_t batch_size = 16);

/// Mean cross-entropy and accuracy of a model on a labeled set.
std::pair<double, double> EvaluateLoss(const DeepModel<float>& model, const LabeledImages& data,
                                       size_t batch_size = 16);

}  // namespace specemo

#endif  // SPECEMO_HEADS_H_
