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

// Evaluation protocols: classification metrics, fold plans, cross-validation,
// hold-out and cross-corpus runs, and report rendering.

#ifndef SPECEMO_EVAL_H_
#define SPECEMO_EVAL_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "specemo/audio_io.h"
#include "specemo/backbone.h"
#include "specemo/heads.h"
#include "specemo/nn/tensor.h"
#include "specemo/nn/weights.h"
#include "specemo/spectro.h"

namespace specemo {

// ---------------------------------------------------------------- metrics

struct ClassReport {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int64_t support = 0;    // true count
  int64_t predicted = 0;  // column sum
  // Set when the matching denominator was zero and the value reported as 0.
  bool precision_degenerate = false;
  bool recall_degenerate = false;
  bool f1_degenerate = false;
};

struct FoldStats {
  size_t folds = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample stddev, 0 for a single fold
  double max = 0.0;
};

struct EvalReport {
  std::vector<std::string> labels;
  std::vector<std::vector<int64_t>> confusion;  // rows = true, cols = predicted
  int64_t total = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassReport> per_class;
  std::optional<FoldStats> fold_stats;
};

/// 2pr/(p+r), 0 when p+r = 0.
double F1Score(double precision, double recall);

/// Throws LengthMismatch on unequal lengths and LabelOutOfRange on an index
/// outside labels.
EvalReport ComputeMetrics(std::span<const int> truth, std::span<const int> predicted,
                          const std::vector<std::string>& labels);
EvalReport MetricsFromConfusion(const std::vector<std::vector<int64_t>>& confusion,
                                const std::vector<std::string>& labels);

FoldStats ComputeFoldStats(std::span<const double> accuracies);

// ---------------------------------------------------------------- manifests

/// Every styled row is NEUTRAL; the style column is kept. Row count and
/// order are preserved and label_set is recomputed.
DatasetManifest CollapseNeutral(const DatasetManifest& manifest);

/// True when some NEUTRAL row carries a style (ELRA-style manifests).
bool HasNeutralStyles(const DatasetManifest& manifest);

/// Keeps non-neutral rows and NEUTRAL rows with style normal. Manifests
/// without neutral styles are returned unchanged.
DatasetManifest FilterNormalNeutral(const DatasetManifest& manifest);

std::vector<std::string> LabelNames(const std::vector<Emotion>& labels);

// ---------------------------------------------------------------- folds

enum class FoldKind { kStratified, kBySpeaker };

std::string FoldKindName(FoldKind kind);
FoldKind ParseFoldKind(const std::string& name);

inline constexpr double kTrainFraction = 0.7;

struct FoldPlan {
  FoldKind kind = FoldKind::kStratified;
  size_t k = 0;
  uint64_t seed = 0;
  std::vector<size_t> assignment;  // sample -> fold
  // Seeded stratified 70/30 split of each fold's complement, ascending.
  std::vector<std::vector<size_t>> train;
  std::vector<std::vector<size_t>> val;

  std::vector<size_t> test_indices(size_t fold) const;
};

/// labels are class indices, speakers one id per sample. Stratified plans
/// throw TooFewSamplesPerClass when a class has fewer than k samples;
/// speaker plans throw TooFewSpeakers with fewer than k distinct speakers.
FoldPlan MakeFolds(std::span<const int> labels, std::span<const std::string> speakers, FoldKind kind,
                   size_t k, uint64_t seed);

/// Stratified split of `indices` into {train, val}, each ascending. A class
/// with n >= 2 members puts round(0.7 n) clamped to [1, n-1] into train.
std::pair<std::vector<size_t>, std::vector<size_t>> SplitTrainVal(std::span<const size_t> indices,
                                                                  std::span<const int> labels,
                                                                  uint64_t seed);

// ---------------------------------------------------------------- runs

/// Sample metadata plus a loader that reads only the requested samples.
struct EvalData {
  std::vector<std::string> labels;  // class names; class id = position
  std::vector<int> targets;
  std::vector<std::string> speakers;
  std::function<nn::Tensor(std::span<const size_t>)> load;

  size_t size() const { return targets.size(); }
  LabeledImages Load(std::span<const size_t> indices) const;
};

/// Loader over per-sample PPM files. on_open sees every path before it is
/// read.
std::function<nn::Tensor(std::span<const size_t>)> MakeFileLoader(
    std::vector<std::filesystem::path> paths, size_t hw,
    std::function<void(const std::filesystem::path&)> on_open = {});

/// Builds EvalData for a manifest whose labels are a subset of label_space.
EvalData MakeEvalData(const DatasetManifest& manifest, const std::vector<Emotion>& label_space,
                      std::function<nn::Tensor(std::span<const size_t>)> load);

class Learner {
 public:
  virtual ~Learner() = default;
  virtual void Fit(const LabeledImages& train, const LabeledImages& val) = 0;
  virtual std::vector<int> Predict(const nn::Tensor& images) const = 0;
  virtual nn::TensorMap ExportTensors() const = 0;
};

using LearnerFactory = std::function<std::unique_ptr<Learner>(uint64_t seed)>;

struct ModelSpec {
  TrainConfig train;
  BackboneConfig backbone = BackboneConfig::Mini();
  size_t num_classes = 0;
  // Trunk tensors imported before fitting, if any.
  std::shared_ptr<const nn::TensorMap> pretrained;
};

/// svc: frozen trunk features into a one-vs-rest SVC. fc/am: DeepModel
/// trained with Train().
LearnerFactory MakeLearnerFactory(const ModelSpec& spec);

enum class Phase { kTrain, kTest };
/// Called on the thread running the fold, before its data is loaded.
using PhaseListener = std::function<void(size_t fold, Phase phase)>;

struct FoldOutcome {
  size_t fold = 0;
  EvalReport report;
  std::vector<size_t> test_indices;
  std::vector<int> predictions;
  nn::TensorMap tensors;
};

struct CvResult {
  EvalReport aggregate;  // summed confusion plus fold_stats
  std::vector<FoldOutcome> folds;
  std::vector<int> predictions;  // per sample, from the fold that tested it
};

struct CvOptions {
  size_t jobs = 1;
  PhaseListener listener;
  bool keep_tensors = false;
};

/// Per fold: fit on the complement's train split, early-stop on its val
/// split, test on the fold. Learner seeds derive from (plan.seed, fold), so
/// results do not depend on jobs.
CvResult RunCv(const EvalData& data, const FoldPlan& plan, const LearnerFactory& factory,
               const CvOptions& options = {});

struct HoldOutResult {
  EvalReport report;
  std::vector<int> predictions;
  nn::TensorMap tensors;
};

/// Fits on a seeded 70/30 split of `train` and tests on all of `test`.
/// Both must share the same label list.
HoldOutResult RunHoldOut(const EvalData& train, const EvalData& test, const LearnerFactory& factory,
                         uint64_t seed, const PhaseListener& listener = {});

struct CrossCorpusPlan {
  DatasetManifest train;
  DatasetManifest test;
  std::vector<Emotion> labels;  // train label set
};

/// Throws LabelSpaceMismatch unless every test label occurs in training. A
/// test manifest with neutral styles is reduced to its normal neutrals; the
/// training manifest keeps every style.
CrossCorpusPlan PrepareCrossCorpus(const DatasetManifest& train, const DatasetManifest& test);

// ---------------------------------------------------------------- reports

nlohmann::json ReportToJson(const EvalReport& report, const std::string& experiment,
                            const std::string& config_digest);
EvalReport ReportFromJson(const nlohmann::json& j);

/// Fixed-width precision/recall/F1 table.
std::string FormatReportTable(const EvalReport& report);
std::string ConfusionCsv(const EvalReport& report);
/// Row-normalized viridis heatmap, cell_px square cells in label order.
SpecImage ConfusionHeatmap(const EvalReport& report, int cell_px = 16);

}  // namespace specemo

#endif  // SPECEMO_EVAL_H_
