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

#include "specemo/eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "specemo/error.h"
#include "specemo/util.h"

namespace specemo {

using nn::Tensor;

// ---------------------------------------------------------------- metrics

double F1Score(double precision, double recall) {
  const double s = precision + recall;
  return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

EvalReport MetricsFromConfusion(const std::vector<std::vector<int64_t>>& confusion,
                                const std::vector<std::string>& labels) {
  const size_t k = labels.size();
  if (confusion.size() != k)
    throw Error(ErrorKind::kShapeMismatch, "confusion has " + std::to_string(confusion.size()) + " rows for " +
                                               std::to_string(k) + " labels");
  for (const auto& row : confusion)
    if (row.size() != k) throw Error(ErrorKind::kShapeMismatch, "confusion matrix is not square");

  EvalReport r;
  r.labels = labels;
  r.confusion = confusion;
  int64_t trace = 0;
  for (size_t i = 0; i < k; ++i) {
    trace += confusion[i][i];
    for (size_t j = 0; j < k; ++j) r.total += confusion[i][j];
  }
  r.accuracy = r.total > 0 ? static_cast<double>(trace) / static_cast<double>(r.total) : 0.0;

  double f1_sum = 0.0;
  for (size_t c = 0; c < k; ++c) {
    ClassReport cr;
    cr.label = labels[c];
    const int64_t tp = confusion[c][c];
    for (size_t j = 0; j < k; ++j) {
      cr.support += confusion[c][j];
      cr.predicted += confusion[j][c];
    }
    if (cr.predicted > 0) {
      cr.precision = static_cast<double>(tp) / static_cast<double>(cr.predicted);
    } else {
      cr.precision_degenerate = true;
    }
    if (cr.support > 0) {
      cr.recall = static_cast<double>(tp) / static_cast<double>(cr.support);
    } else {
      cr.recall_degenerate = true;
    }
    cr.f1_degenerate = cr.precision + cr.recall == 0.0;
    cr.f1 = F1Score(cr.precision, cr.recall);
    f1_sum += cr.f1;
    r.per_class.push_back(cr);
  }
  r.macro_f1 = k > 0 ? f1_sum / static_cast<double>(k) : 0.0;
  return r;
}

EvalReport ComputeMetrics(std::span<const int> truth, std::span<const int> predicted,
                          const std::vector<std::string>& labels) {
  if (truth.size() != predicted.size())
    throw Error(ErrorKind::kLengthMismatch, std::to_string(truth.size()) + " true labels vs " +
                                                std::to_string(predicted.size()) + " predictions");
  const int k = static_cast<int>(labels.size());
  std::vector<std::vector<int64_t>> confusion(labels.size(), std::vector<int64_t>(labels.size(), 0));
  for (size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= k || predicted[i] < 0 || predicted[i] >= k)
      throw Error(ErrorKind::kLabelOutOfRange, "label pair (" + std::to_string(truth[i]) + ", " +
                                                   std::to_string(predicted[i]) + ") at position " +
                                                   std::to_string(i) + " outside " + std::to_string(k) +
                                                   " classes");
    ++confusion[truth[i]][predicted[i]];
  }
  return MetricsFromConfusion(confusion, labels);
}

FoldStats ComputeFoldStats(std::span<const double> accuracies) {
  FoldStats s;
  s.folds = accuracies.size();
  if (accuracies.empty()) return s;
  double sum = 0.0;
  s.max = accuracies[0];
  for (double a : accuracies) {
    sum += a;
    s.max = std::max(s.max, a);
  }
  s.mean = sum / static_cast<double>(s.folds);
  if (s.folds > 1) {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - s.mean) * (a - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(s.folds - 1));
  }
  return s;
}

// ---------------------------------------------------------------- manifests

DatasetManifest CollapseNeutral(const DatasetManifest& manifest) {
  DatasetManifest out = manifest;
  for (auto& s : out.samples)
    if (s.style != Style::kNone) s.label = Emotion::kNeutral;
  out.refresh_label_set();
  return out;
}

bool HasNeutralStyles(const DatasetManifest& manifest) {
  return std::any_of(manifest.samples.begin(), manifest.samples.end(), [](const LabeledSample& s) {
    return s.label == Emotion::kNeutral && s.style != Style::kNone;
  });
}

DatasetManifest FilterNormalNeutral(const DatasetManifest& manifest) {
  if (!HasNeutralStyles(manifest)) return manifest;
  DatasetManifest out = manifest;
  out.samples.clear();
  for (const auto& s : manifest.samples)
    if (s.label != Emotion::kNeutral || s.style == Style::kNormal) out.samples.push_back(s);
  out.refresh_label_set();
  return out;
}

std::vector<std::string> LabelNames(const std::vector<Emotion>& labels) {
  std::vector<std::string> out;
  for (Emotion e : labels) out.emplace_back(EmotionName(e));
  return out;
}

// ---------------------------------------------------------------- folds

std::string FoldKindName(FoldKind kind) {
  return kind == FoldKind::kStratified ? "stratified" : "by_speaker";
}

FoldKind ParseFoldKind(const std::string& name) {
  const std::string n = ToLower(Trim(name));
  if (n == "stratified") return FoldKind::kStratified;
  if (n == "by_speaker" || n == "speaker") return FoldKind::kBySpeaker;
  throw Error(ErrorKind::kInvalidArgument, "unknown fold kind '" + name + "' (expected stratified or by_speaker)");
}

std::vector<size_t> FoldPlan::test_indices(size_t fold) const {
  std::vector<size_t> out;
  for (size_t i = 0; i < assignment.size(); ++i)
    if (assignment[i] == fold) out.push_back(i);
  return out;
}

namespace {

// Members of each class in ascending class order, each list ascending.
std::map<int, std::vector<size_t>> GroupByClass(std::span<const size_t> indices, std::span<const int> labels) {
  std::map<int, std::vector<size_t>> groups;
  for (size_t i : indices) groups[labels[i]].push_back(i);
  for (auto& [_, members] : groups) std::sort(members.begin(), members.end());
  return groups;
}

constexpr uint64_t kStratifyStream = 0x5354;
constexpr uint64_t kSpeakerStream = 0x5350;
constexpr uint64_t kSubSplitStream = 0x5356;
constexpr uint64_t kHoldOutStream = 0x484f;

}  // namespace

std::pair<std::vector<size_t>, std::vector<size_t>> SplitTrainVal(std::span<const size_t> indices,
                                                                  std::span<const int> labels,
                                                                  uint64_t seed) {
  std::vector<size_t> train, val;
  Rng rng(seed);
  for (auto& [_, members] : GroupByClass(indices, labels)) {
    rng.shuffle(members);
    const size_t n = members.size();
    size_t n_train = n;
    if (n >= 2) {
      n_train = static_cast<size_t>(std::lround(kTrainFraction * static_cast<double>(n)));
      n_train = std::clamp<size_t>(n_train, 1, n - 1);
    }
    train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    val.insert(val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {train, val};
}

FoldPlan MakeFolds(std::span<const int> labels, std::span<const std::string> speakers, FoldKind kind,
                   size_t k, uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::kInvalidArgument, "eval.k must be at least 2, got " + std::to_string(k));
  const size_t n = labels.size();
  for (size_t i = 0; i < n; ++i)
    if (labels[i] < 0) throw Error(ErrorKind::kLabelOutOfRange, "negative label at sample " + std::to_string(i));

  FoldPlan plan;
  plan.kind = kind;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.assign(n, 0);

  std::vector<size_t> all(n);
  for (size_t i = 0; i < n; ++i) all[i] = i;

  if (kind == FoldKind::kStratified) {
    auto groups = GroupByClass(all, labels);
    for (const auto& [label, members] : groups)
      if (members.size() < k)
        throw Error(ErrorKind::kTooFewSamplesPerClass, "class " + std::to_string(label) + " has " +
                                                           std::to_string(members.size()) + " samples, " +
                                                           std::to_string(k) + " folds need at least " +
                                                           std::to_string(k));
    // Round-robin per class, continuing where the previous class stopped so
    // fold sizes stay balanced as well.
    Rng rng(DeriveSeed(seed, kStratifyStream));
    size_t offset = 0;
    for (auto& [_, members] : groups) {
      rng.shuffle(members);
      for (size_t i = 0; i < members.size(); ++i) plan.assignment[members[i]] = (offset + i) % k;
      offset = (offset + members.size()) % k;
    }
  } else {
    if (speakers.size() != n)
      throw Error(ErrorKind::kLengthMismatch, std::to_string(speakers.size()) + " speaker ids for " +
                                                  std::to_string(n) + " samples");
    std::set<std::string> distinct(speakers.begin(), speakers.end());
    if (distinct.size() < k)
      throw Error(ErrorKind::kTooFewSpeakers, std::to_string(distinct.size()) + " distinct speakers for " +
                                                  std::to_string(k) + " folds");
    std::vector<std::string> order(distinct.begin(), distinct.end());
    Rng rng(DeriveSeed(seed, kSpeakerStream));
    rng.shuffle(order);
    std::map<std::string, size_t> fold_of;
    for (size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = i % k;
    for (size_t i = 0; i < n; ++i) plan.assignment[i] = fold_of[speakers[i]];
  }

  const uint64_t split_seed = DeriveSeed(seed, kSubSplitStream);
  for (size_t f = 0; f < k; ++f) {
    std::vector<size_t> complement;
    for (size_t i = 0; i < n; ++i)
      if (plan.assignment[i] != f) complement.push_back(i);
    auto [train, val] = SplitTrainVal(complement, labels, DeriveSeed(split_seed, f));
    plan.train.push_back(std::move(train));
    plan.val.push_back(std::move(val));
  }
  return plan;
}

// ---------------------------------------------------------------- data

LabeledImages EvalData::Load(std::span<const size_t> indices) const {
  LabeledImages out;
  out.images = load(indices);
  for (size_t i : indices) out.labels.push_back(targets.at(i));
  return out;
}

std::function<Tensor(std::span<const size_t>)> MakeFileLoader(
    std::vector<std::filesystem::path> paths, size_t hw,
    std::function<void(const std::filesystem::path&)> on_open) {
  return [paths = std::move(paths), hw, on_open = std::move(on_open)](std::span<const size_t> indices) {
    std::vector<SpecImage> images;
    images.reserve(indices.size());
    for (size_t i : indices) {
      const auto& p = paths.at(i);
      if (on_open) on_open(p);
      images.push_back(ReadPpm(p));
    }
    std::vector<const SpecImage*> ptrs;
    for (const auto& img : images) ptrs.push_back(&img);
    return ImageBatch(ptrs, hw);
  };
}

EvalData MakeEvalData(const DatasetManifest& manifest, const std::vector<Emotion>& label_space,
                      std::function<Tensor(std::span<const size_t>)> load) {
  EvalData d;
  d.labels = LabelNames(label_space);
  for (const auto& s : manifest.samples) {
    auto it = std::find(label_space.begin(), label_space.end(), s.label);
    if (it == label_space.end())
      throw Error(ErrorKind::kLabelSpaceMismatch,
                  "label " + std::string(EmotionName(s.label)) + " of '" + s.path + "' is not in the label space");
    d.targets.push_back(static_cast<int>(it - label_space.begin()));
    d.speakers.push_back(s.speaker_id);
  }
  d.load = std::move(load);
  return d;
}

// ---------------------------------------------------------------- learners

namespace {

class SvcLearner : public Learner {
 public:
  SvcLearner(const ModelSpec& spec, uint64_t seed) : spec_(spec), seed_(seed), backbone_(spec.backbone, DeriveSeed(seed, 1)) {
    if (spec.pretrained) backbone_.ImportTensors(*spec.pretrained);
  }

  void Fit(const LabeledImages& train, const LabeledImages&) override {
    SvcOptions opt = spec_.train.svc;
    opt.seed = DeriveSeed(seed_, 3);
    svc_ = TrainSvc(ExtractFeatures(backbone_, train.images), train.labels, spec_.num_classes, opt);
  }

  std::vector<int> Predict(const Tensor& images) const override {
    return svc_.Predict(ExtractFeatures(backbone_, images));
  }

  nn::TensorMap ExportTensors() const override {
    nn::TensorMap out = backbone_.ExportTensors();
    out.merge(svc_.ExportTensors());
    return out;
  }

 private:
  ModelSpec spec_;
  uint64_t seed_;
  Backbone<float> backbone_;
  SvcModel svc_;
};

class DeepLearner : public Learner {
 public:
  DeepLearner(const ModelSpec& spec, uint64_t seed)
      : spec_(spec),
        seed_(seed),
        model_(spec.train.mode, spec.backbone, spec.num_classes, spec.train.fc_hidden, spec.train.am_dim, seed) {
    if (spec.pretrained) model_.backbone().ImportTensors(*spec.pretrained);
  }

  void Fit(const LabeledImages& train, const LabeledImages& val) override {
    TrainConfig cfg = spec_.train;
    cfg.seed = seed_;
    Train(model_, train, val, cfg);
  }

  std::vector<int> Predict(const Tensor& images) const override {
    return specemo::Predict(model_, images).labels;
  }

  nn::TensorMap ExportTensors() const override { return model_.ExportTensors(); }

 private:
  ModelSpec spec_;
  uint64_t seed_;
  DeepModel<float> model_;
};

}  // namespace

LearnerFactory MakeLearnerFactory(const ModelSpec& spec) {
  spec.train.validate();
  spec.backbone.validate();
  if (spec.num_classes < 2)
    throw Error(ErrorKind::kSingleClass, "a classifier needs at least two classes, got " +
                                             std::to_string(spec.num_classes));
  return [spec](uint64_t seed) -> std::unique_ptr<Learner> {
    if (spec.train.mode == HeadMode::kSvc) return std::make_unique<SvcLearner>(spec, seed);
    return std::make_unique<DeepLearner>(spec, seed);
  };
}

// ---------------------------------------------------------------- runs

CvResult RunCv(const EvalData& data, const FoldPlan& plan, const LearnerFactory& factory,
               const CvOptions& options) {
  if (plan.assignment.size() != data.size())
    throw Error(ErrorKind::kLengthMismatch, "fold plan covers " + std::to_string(plan.assignment.size()) +
                                                " samples, data has " + std::to_string(data.size()));
  CvResult result;
  result.folds.resize(plan.k);
  ParallelFor(plan.k, options.jobs, [&](size_t f) {
    FoldOutcome& out = result.folds[f];
    out.fold = f;
    out.test_indices = plan.test_indices(f);

    if (options.listener) options.listener(f, Phase::kTrain);
    auto learner = factory(DeriveSeed(plan.seed, f + 1));
    learner->Fit(data.Load(plan.train[f]), data.Load(plan.val[f]));

    if (options.listener) options.listener(f, Phase::kTest);
    const LabeledImages test = data.Load(out.test_indices);
    out.predictions = learner->Predict(test.images);
    out.report = ComputeMetrics(test.labels, out.predictions, data.labels);
    if (options.keep_tensors) out.tensors = learner->ExportTensors();
  });

  // Ordered reduction by fold id.
  const size_t k = data.labels.size();
  std::vector<std::vector<int64_t>> confusion(k, std::vector<int64_t>(k, 0));
  std::vector<double> accuracies;
  result.predictions.assign(data.size(), -1);
  for (const auto& fold : result.folds) {
    for (size_t i = 0; i < k; ++i)
      for (size_t j = 0; j < k; ++j) confusion[i][j] += fold.report.confusion[i][j];
    accuracies.push_back(fold.report.accuracy);
    for (size_t i = 0; i < fold.test_indices.size(); ++i)
      result.predictions[fold.test_indices[i]] = fold.predictions[i];
  }
  result.aggregate = MetricsFromConfusion(confusion, data.labels);
  result.aggregate.fold_stats = ComputeFoldStats(accuracies);
  return result;
}

HoldOutResult RunHoldOut(const EvalData& train, const EvalData& test, const LearnerFactory& factory,
                         uint64_t seed, const PhaseListener& listener) {
  if (train.labels != test.labels)
    throw Error(ErrorKind::kLabelSpaceMismatch, "train and test data use different label lists");
  if (train.size() == 0) throw Error(ErrorKind::kEmptySplit, "hold-out training set is empty");
  if (test.size() == 0) throw Error(ErrorKind::kEmptySplit, "hold-out test set is empty");

  std::vector<size_t> all(train.size());
  for (size_t i = 0; i < all.size(); ++i) all[i] = i;
  auto [fit_idx, val_idx] = SplitTrainVal(all, train.targets, DeriveSeed(seed, kHoldOutStream));

  HoldOutResult result;
  if (listener) listener(0, Phase::kTrain);
  auto learner = factory(DeriveSeed(seed, 1));
  learner->Fit(train.Load(fit_idx), train.Load(val_idx));

  if (listener) listener(0, Phase::kTest);
  std::vector<size_t> test_idx(test.size());
  for (size_t i = 0; i < test_idx.size(); ++i) test_idx[i] = i;
  const LabeledImages test_set = test.Load(test_idx);
  result.predictions = learner->Predict(test_set.images);
  result.report = ComputeMetrics(test_set.labels, result.predictions, test.labels);
  result.tensors = learner->ExportTensors();
  return result;
}

CrossCorpusPlan PrepareCrossCorpus(const DatasetManifest& train, const DatasetManifest& test) {
  CrossCorpusPlan plan;
  plan.train = train;
  plan.train.refresh_label_set();
  plan.test = FilterNormalNeutral(test);
  plan.test.refresh_label_set();
  plan.labels = plan.train.label_set;
  std::string missing;
  for (Emotion e : plan.test.label_set)
    if (std::find(plan.labels.begin(), plan.labels.end(), e) == plan.labels.end())
      missing += (missing.empty() ? "" : ", ") + std::string(EmotionName(e));
  if (!missing.empty())
    throw Error(ErrorKind::kLabelSpaceMismatch,
                "test corpus '" + test.name + "' has labels absent from '" + train.name + "': " + missing);
  if (plan.test.samples.empty())
    throw Error(ErrorKind::kEmptySplit, "test corpus '" + test.name + "' is empty after filtering");
  return plan;
}

// ---------------------------------------------------------------- reports

nlohmann::json ReportToJson(const EvalReport& report, const std::string& experiment,
                            const std::string& config_digest) {
  nlohmann::json j;
  j["format"] = "specemo-report";
  j["version"] = 1;
  j["experiment"] = experiment;
  j["config_digest"] = config_digest;
  j["labels"] = report.labels;
  j["total"] = report.total;
  j["accuracy"] = report.accuracy;
  j["macro_f1"] = report.macro_f1;
  j["per_class"] = nlohmann::json::array();
  for (const auto& c : report.per_class) {
    j["per_class"].push_back({{"label", c.label},
                              {"precision", c.precision},
                              {"recall", c.recall},
                              {"f1", c.f1},
                              {"support", c.support},
                              {"predicted", c.predicted},
                              {"degenerate",
                               {{"precision", c.precision_degenerate},
                                {"recall", c.recall_degenerate},
                                {"f1", c.f1_degenerate}}}});
  }
  j["confusion"] = report.confusion;
  if (report.fold_stats) {
    const auto& s = *report.fold_stats;
    j["fold_stats"] = {{"folds", s.folds}, {"mean", s.mean}, {"stddev", s.stddev}, {"max", s.max}};
  } else {
    j["fold_stats"] = nullptr;
  }
  return j;
}

EvalReport ReportFromJson(const nlohmann::json& j) {
  try {
    if (j.value("format", "") != "specemo-report")
      throw Error(ErrorKind::kMalformedHeader, "not a specemo report");
    EvalReport r = MetricsFromConfusion(j.at("confusion").get<std::vector<std::vector<int64_t>>>(),
                                        j.at("labels").get<std::vector<std::string>>());
    const auto& fs = j.at("fold_stats");
    if (!fs.is_null()) {
      FoldStats s;
      s.folds = fs.at("folds").get<size_t>();
      s.mean = fs.at("mean").get<double>();
      s.stddev = fs.at("stddev").get<double>();
      s.max = fs.at("max").get<double>();
      r.fold_stats = s;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformedHeader, std::string("report JSON: ") + e.what());
  }
}

namespace {

std::string Cell(double v, bool degenerate) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%9.3f%s", v, degenerate ? "*" : " ");
  return buf;
}

}  // namespace

std::string FormatReportTable(const EvalReport& report) {
  size_t width = 9;
  for (const auto& l : report.labels) width = std::max(width, l.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size() + 1, ' '); };

  std::string out = pad("Label") + " Precision     Recall   F1-score    Support\n";
  bool any_degenerate = false;
  char buf[32];
  for (const auto& c : report.per_class) {
    any_degenerate |= c.precision_degenerate || c.recall_degenerate || c.f1_degenerate;
    std::snprintf(buf, sizeof(buf), "%10lld\n", static_cast<long long>(c.support));
    out += pad(c.label) + Cell(c.precision, c.precision_degenerate) + " " + Cell(c.recall, c.recall_degenerate) +
           " " + Cell(c.f1, c.f1_degenerate) + buf;
  }
  const std::string blank(22, ' ');
  std::snprintf(buf, sizeof(buf), "%10lld\n", static_cast<long long>(report.total));
  out += "\n" + pad("accuracy") + blank + Cell(report.accuracy, false) + buf;
  out += pad("macro f1") + blank + Cell(report.macro_f1, false) + buf;
  if (report.fold_stats) {
    const auto& s = *report.fold_stats;
    char line[128];
    std::snprintf(line, sizeof(line), "\nfold accuracy over %zu folds: mean %.3f, stddev %.3f, max %.3f\n", s.folds,
                  s.mean, s.stddev, s.max);
    out += line;
  }
  if (any_degenerate) out += "\n* zero denominator, reported as 0\n";
  return out;
}

std::string ConfusionCsv(const EvalReport& report) {
  std::string out = "true\\predicted";
  for (const auto& l : report.labels) out += "," + l;
  out += "\n";
  for (size_t i = 0; i < report.labels.size(); ++i) {
    out += report.labels[i];
    for (int64_t v : report.confusion[i]) out += "," + std::to_string(v);
    out += "\n";
  }
  return out;
}

SpecImage ConfusionHeatmap(const EvalReport& report, int cell_px) {
  if (cell_px < 1) throw Error(ErrorKind::kInvalidArgument, "heatmap cell size must be positive");
  const int k = static_cast<int>(report.labels.size());
  SpecImage img;
  img.height = k * cell_px;
  img.width = k * cell_px;
  img.pixels.assign(static_cast<size_t>(img.height) * img.width * 3, 0.0f);
  const auto& table = Colormap("viridis");
  for (int i = 0; i < k; ++i) {
    const double support = static_cast<double>(report.per_class.at(i).support);
    for (int j = 0; j < k; ++j) {
      const double v = support > 0 ? static_cast<double>(report.confusion[i][j]) / support : 0.0;
      const Rgb rgb = ColormapLookup(table, v);
      for (int y = i * cell_px; y < (i + 1) * cell_px; ++y)
        for (int x = j * cell_px; x < (j + 1) * cell_px; ++x)
          for (int c = 0; c < 3; ++c) img.pixels[(static_cast<size_t>(y) * img.width + x) * 3 + c] = rgb[c];
    }
  }
  return img;
}

}  // namespace specemo
