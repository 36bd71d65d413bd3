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

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any of them fails.

#include <stdlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "nn_oracle.h"
#include "spectro_oracle.h"
#include "specemo/attention.h"
#include "specemo/audio_io.h"
#include "specemo/backbone.h"
#include "specemo/cli.h"
#include "specemo/error.h"
#include "specemo/eval.h"
#include "specemo/heads.h"
#include "specemo/nn/gradcheck.h"
#include "specemo/nn/layers.h"
#include "specemo/nn/optim.h"
#include "specemo/spectro.h"
#include "specemo/util.h"
#include "synth_fixture.h"
#include "test_util.h"

namespace specemo {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::Tensor;
using nn::Tensor64;
using oracle::Dot;
using oracle::RandomTensor;

std::string Fmt(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

// Accumulates sub-check results for one criterion.
struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;
  std::vector<std::string> failures;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failures.push_back(what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

struct Criterion {
  int id;
  std::string name;
  double limit_s;  // 0 means no runtime bound
  std::function<void(Verdict&)> body;
};

bool RunCriterion(const Criterion& c) {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    c.body(v);
  } catch (const std::exception& e) {
    v.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (c.limit_s > 0) v.require(secs < c.limit_s, "runtime " + Fmt("%.1f", secs) + " s over " + Fmt("%.0f", c.limit_s) + " s");
  std::printf("%s criterion %d: %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", c.id, c.name.c_str(), secs);
  for (const auto& n : v.notes) std::printf("    %s\n", n.c_str());
  for (const auto& f : v.failures) std::printf("    failed: %s\n", f.c_str());
  std::fflush(stdout);
  return v.pass;
}

// ------------------------------------------------------------------ 1

void DspOracle(Verdict& v) {
  Rng rng(101);
  SpectroParams p;
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    AudioClip clip;
    clip.sample_rate_hz = 16000;
    const size_t n = 200 + rng.below(16000 - 200 + 1);
    const double f1 = rng.uniform(50, 7000), f2 = rng.uniform(50, 7000);
    const double a1 = rng.uniform(0, 0.6), a2 = rng.uniform(0, 0.3), noise = rng.uniform(0, 0.2);
    for (size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / 16000.0;
      double s = a1 * std::sin(2 * M_PI * f1 * t) + a2 * std::sin(2 * M_PI * f2 * t * (1 + t)) + noise * rng.uniform(-1, 1);
      if (trial % 5 == 0 && i > n / 3 && i < n / 2) s = 0;  // a silent stretch
      clip.samples.push_back(static_cast<float>(std::clamp(s, -1.0, 1.0)));
    }
    SpecImage img = Extract(clip, p);
    std::vector<double> ref = oracle::Pipeline(clip.samples, 16000, p);
    if (ref.size() != img.pixels.size()) {
      v.require(false, "clip " + std::to_string(trial) + ": size mismatch");
      continue;
    }
    for (size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(ref[i] - img.pixels[i]));
  }
  v.note("20 clips, max |pixel - oracle| = " + Fmt("%.3g", worst));
  v.require(worst < 1e-5, "max pixel error " + Fmt("%.3g", worst) + " >= 1e-5");
}

// ------------------------------------------------------------------ 2

void CheckGrad(Verdict& v, const std::string& what, std::span<const nn::GradTarget> targets,
               const std::function<double()>& loss, size_t max_coords, uint64_t seed) {
  nn::GradCheckOptions opt;
  opt.max_coords = max_coords;
  opt.seed = seed;
  nn::GradCheckResult r = nn::GradCheck(targets, loss, opt);
  v.note(what + ": " + std::to_string(r.checked) + " coords, " + std::to_string(r.skipped_kinks) +
         " kinks skipped, max rel " + Fmt("%.2e", r.max_rel_error));
  v.require(r.checked >= 200, what + ": only " + std::to_string(r.checked) + " coordinates checked");
  v.require(r.max_rel_error < 1e-4, what + ": " + r.worst);
}

void PositiveBiases(std::vector<nn::Param<double>*> params, Rng& rng) {
  for (nn::Param<double>* p : params)
    if (p->name.ends_with(".bias")) p->value = RandomTensor(p->value.shape(), rng, 0.05, 0.3);
}

void Gradients(Verdict& v) {
  Rng rng(202);
  {
    Tensor64 x = RandomTensor({2, 3, 8, 8}, rng), w = RandomTensor({4, 3, 3, 3}, rng), b = RandomTensor({4}, rng);
    Tensor64 r = RandomTensor({2, 4, 8, 8}, rng);
    auto g = nn::ConvBackward(r, x, w, nn::Padding::kSame);
    std::vector<nn::GradTarget> t = {{"x", &x, &g.input}, {"w", &w, &g.weight}, {"b", &b, &g.bias}};
    CheckGrad(v, "conv", t, [&] { return Dot(nn::ConvForward(x, w, b, nn::Padding::kSame), r); }, 300, 1);
  }
  {
    Tensor64 x = RandomTensor({1, 300}, rng), r = RandomTensor({1, 300}, rng);
    Tensor64 g = nn::ReluBackward(r, nn::ReluForward(x));
    std::vector<nn::GradTarget> t = {{"x", &x, &g}};
    CheckGrad(v, "relu", t, [&] { return Dot(nn::ReluForward(x), r); }, 300, 2);
  }
  {
    Tensor64 x = RandomTensor({2, 3, 8, 8}, rng), r = RandomTensor({2, 3, 4, 4}, rng);
    auto fwd = nn::MaxPoolForward(x);
    Tensor64 g = nn::MaxPoolBackward(r, fwd.argmax, x.shape());
    std::vector<nn::GradTarget> t = {{"x", &x, &g}};
    CheckGrad(v, "maxpool", t, [&] { return Dot(nn::MaxPoolForward(x).output, r); }, 300, 3);
  }
  {
    Tensor64 x = RandomTensor({4, 20}, rng), w = RandomTensor({8, 20}, rng), b = RandomTensor({8}, rng);
    Tensor64 r = RandomTensor({4, 8}, rng);
    auto g = nn::DenseBackward(r, x, w);
    std::vector<nn::GradTarget> t = {{"x", &x, &g.input}, {"w", &w, &g.weight}, {"b", &b, &g.bias}};
    CheckGrad(v, "dense", t, [&] { return Dot(nn::DenseForward(x, w, b), r); }, 300, 4);
  }
  {
    Tensor64 logits = RandomTensor({40, 7}, rng, -3, 3);
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(static_cast<int>(rng.below(7)));
    Tensor64 g = nn::SoftmaxCrossEntropy(logits, labels).grad;
    std::vector<nn::GradTarget> t = {{"logits", &logits, &g}};
    CheckGrad(v, "softmax cross-entropy", t, [&] { return nn::SoftmaxCrossEntropy(logits, labels).loss; }, 300, 5);
  }
  {
    GateParams<double> gp("gate", 6, 10, 5);
    for (nn::Param<double>* q : gp.all()) q->value = RandomTensor(q->value.shape(), rng);
    Tensor64 local = RandomTensor({2, 6, 4, 4}, rng), global = RandomTensor({2, 10}, rng);
    Tensor64 r = RandomTensor({2, 6}, rng);
    auto fwd = GateForward(local, global, gp);
    for (nn::Param<double>* q : gp.all()) q->zero_grad();
    auto g = GateBackward(r, local, global, gp, fwd);
    std::vector<nn::GradTarget> t = {{"local", &local, &g.local}, {"global", &global, &g.global}};
    for (nn::Param<double>* q : gp.all()) t.push_back({q->name, &q->value, &q->grad});
    CheckGrad(v, "attention gate", t, [&] { return Dot(GateForward(local, global, gp).attended, r); }, 300, 6);
  }
  {
    BackboneConfig mini = BackboneConfig::Mini();
    AttentionHead<double> head(mini, 4, 16, 7);
    FeatureTaps<double> taps{RandomTensor({2, 64, 8, 8}, rng, 0, 2), RandomTensor({2, 64, 4, 4}, rng, 0, 2),
                             RandomTensor({2, 128}, rng, 0, 2)};
    std::vector<int> labels = {3, 1};
    auto out = head.Forward(taps);
    head.zero_grad();
    FeatureTaps<double> tg = head.Backward(taps, out, nn::SoftmaxCrossEntropy(out.logits, labels).grad);
    std::vector<nn::GradTarget> t;
    for (nn::Param<double>* q : head.params()) t.push_back({q->name, &q->value, &q->grad});
    t.push_back({"block4", &taps.block4, &tg.block4});
    t.push_back({"block5", &taps.block5, &tg.block5});
    t.push_back({"fc1", &taps.fc1, &tg.fc1});
    CheckGrad(v, "attention head", t,
              [&] { return nn::SoftmaxCrossEntropy(head.Forward(taps).logits, labels).loss; }, 300, 7);
  }
  {
    FcHead<double> head(30, 16, 5, 8);
    Tensor64 x = RandomTensor({3, 30}, rng);
    std::vector<int> labels = {4, 0, 2};
    FcHead<double>::Cache cache;
    Tensor64 logits = head.Forward(x, &cache);
    for (nn::Param<double>* q : head.params()) q->zero_grad();
    Tensor64 gx = head.Backward(cache, nn::SoftmaxCrossEntropy(logits, labels).grad);
    std::vector<nn::GradTarget> t = {{"x", &x, &gx}};
    for (nn::Param<double>* q : head.params()) t.push_back({q->name, &q->value, &q->grad});
    CheckGrad(v, "fc head", t, [&] { return nn::SoftmaxCrossEntropy(head.Forward(x), labels).loss; }, 300, 8);
  }
  for (HeadMode mode : {HeadMode::kFc, HeadMode::kAm}) {
    DeepModel<double> model(mode, BackboneConfig::Mini(), 4, 64, 64, 9);
    PositiveBiases(model.trunk_params(), rng);
    Tensor64 images = RandomTensor({2, 3, 64, 64}, rng, 0, 1);
    std::vector<int> labels = {2, 0};
    model.zero_grad();
    model.ForwardBackward(images, labels, true);
    std::vector<nn::GradTarget> t;
    for (nn::Param<double>* q : model.trunk_params()) t.push_back({q->name, &q->value, &q->grad});
    for (nn::Param<double>* q : model.head_params()) t.push_back({q->name, &q->value, &q->grad});
    CheckGrad(v, "mini DS-" + std::string(mode == HeadMode::kFc ? "FC" : "AM"), t,
              [&] { return nn::SoftmaxCrossEntropy(model.Logits(images), labels).loss; }, 260, 10);
  }
}

// ------------------------------------------------------------------ 3

testing::SynthCorpus& Corpus() {
  static testing::SynthCorpus c;
  static bool built = false;
  if (!built) {
    testing::BuildSynthCorpus(c);
    built = true;
  }
  return c;
}

void CheckMaps(const GateResult<float>& g, double& worst_sum, float& min_value) {
  const size_t n = g.map.dim(0), sites = g.map.size() / n;
  for (size_t i = 0; i < n; ++i) {
    double s = 0;
    for (size_t j = 0; j < sites; ++j) {
      const float a = g.map[i * sites + j];
      s += a;
      min_value = std::min(min_value, a);
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
  }
}

void AttentionNormalization(Verdict& v) {
  const auto& corpus = Corpus();
  const LabeledImages& data = corpus.data;
  DeepModel<float> model(HeadMode::kAm, BackboneConfig::Mini(), 4, 64, 64, 31);
  TrainConfig cfg = TrainConfig::Scratch();
  nn::Optimizer<float> opt(cfg.optim, {{model.trunk_params(), cfg.lr_trunk}, {model.head_params(), cfg.lr_head}});
  Rng rng(32);
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  double worst_sum = 0;
  float min_value = 1;
  size_t maps = 0, pos = order.size();
  double first_loss = 0, last_loss = 0;
  for (size_t step = 0; step < 100; ++step) {
    if (pos + cfg.batch_size > order.size()) {
      rng.shuffle(order);
      pos = 0;
    }
    std::vector<size_t> idx(order.begin() + pos, order.begin() + pos + cfg.batch_size);
    pos += cfg.batch_size;
    LabeledImages batch = data.Subset(idx);
    model.zero_grad();
    auto res = model.ForwardBackward(batch.images, batch.labels, true);
    opt.step();
    CheckMaps(res.attention->gate4, worst_sum, min_value);
    CheckMaps(res.attention->gate5, worst_sum, min_value);
    maps += 2 * batch.size();
    if (step == 0) first_loss = res.loss;
    last_loss = res.loss;
  }
  v.note(std::to_string(maps) + " maps over 100 steps, max |sum - 1| = " + Fmt("%.2e", worst_sum) +
         ", min weight " + Fmt("%.2e", min_value) + ", loss " + Fmt("%.3f", first_loss) + " -> " +
         Fmt("%.3f", last_loss));
  v.require(worst_sum <= 1e-5, "attention map sum off by " + Fmt("%.3g", worst_sum));
  v.require(min_value >= 0.0f, "negative attention weight");

  // Uniform-gate ablation on the trained model against an explicit
  // mean-pool classifier. Site counts 64 and 16 are powers of two, so the
  // per-site division is exact.
  AttentionHead<float>& head = *model.attention();
  head.set_uniform(true);
  FeatureTaps<float> taps = model.backbone().Forward(data.images);
  auto out = head.Forward(taps);
  const size_t n = data.size(), c4 = taps.block4.dim(1), c5 = taps.block5.dim(1);
  const size_t s4 = taps.block4.size() / (n * c4), s5 = taps.block5.size() / (n * c5);
  Tensor pooled({n, c4 + c5});
  for (size_t i = 0; i < n; ++i) {
    for (size_t c = 0; c < c4; ++c) {
      float s = 0;
      for (size_t j = 0; j < s4; ++j) s += taps.block4[(i * c4 + c) * s4 + j] / static_cast<float>(s4);
      pooled[i * (c4 + c5) + c] = s;
    }
    for (size_t c = 0; c < c5; ++c) {
      float s = 0;
      for (size_t j = 0; j < s5; ++j) s += taps.block5[(i * c5 + c) * s5 + j] / static_cast<float>(s5);
      pooled[i * (c4 + c5) + c4 + c] = s;
    }
  }
  Tensor logits = nn::DenseForward(pooled, head.head_weight().value, head.head_bias().value);
  v.require(out.descriptor == pooled, "uniform descriptor differs from the spatial mean");
  v.require(out.logits == logits, "uniform logits differ from the mean-pool classifier");
  v.require(model.Logits(data.images) == logits, "model logits under ablation differ from the mean-pool classifier");
  v.note("uniform ablation on " + std::to_string(n) + " images: bit-identical to the mean-pool classifier");
}

// ------------------------------------------------------------------ 4

double OraclePrimal(const Tensor64& x, std::span<const int> y, const std::vector<double>& w, double b, double c) {
  const size_t n = x.dim(0), d = x.dim(1);
  double reg = b * b, hinge = 0;
  for (double wj : w) reg += wj * wj;
  for (size_t i = 0; i < n; ++i) {
    double m = b;
    for (size_t j = 0; j < d; ++j) m += w[j] * x[i * d + j];
    hinge += std::max(0.0, 1.0 - y[i] * m);
  }
  return 0.5 * reg + c / static_cast<double>(n) * hinge;
}

void SvmCorrectness(Verdict& v) {
  Rng rng(404);
  double worst_gap = 0;
  size_t nonmonotone = 0, not_local_min = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 10 + rng.below(60), d = 2 + rng.below(10);
    Tensor64 x = RandomTensor({n, d}, rng, -2, 2);
    std::vector<int> y(n);
    std::vector<double> dir(d);
    for (double& t : dir) t = rng.uniform(-1, 1);
    for (size_t i = 0; i < n; ++i) {
      double s = 0;
      for (size_t j = 0; j < d; ++j) s += dir[j] * x[i * d + j];
      // Mostly linear labels with flips, so the problems are not separable.
      y[i] = (s + rng.uniform(-1, 1) > 0) ? 1 : -1;
    }
    if (std::count(y.begin(), y.end(), 1) == 0) y[0] = 1;
    if (std::count(y.begin(), y.end(), -1) == 0) y[0] = -1;
    SvcOptions opt;
    opt.c = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    opt.seed = rng.next();
    BinarySvc r = TrainBinarySvc(x, y, opt);
    const double primal = OraclePrimal(x, y, r.w, r.b, opt.c);
    const double gap = (primal - r.dual) / (1.0 + std::abs(primal));
    worst_gap = std::max(worst_gap, gap);
    v.require(std::abs(primal - r.primal) <= 1e-9 * (1 + std::abs(primal)),
              "trial " + std::to_string(trial) + ": reported primal disagrees with the recomputed one");
    v.require(gap < 1e-3, "trial " + std::to_string(trial) + ": relative gap " + Fmt("%.3g", gap));
    for (size_t e = 1; e < r.objective_history.size(); ++e)
      if (r.objective_history[e] > r.objective_history[e - 1] + 1e-12 * (1 + std::abs(r.objective_history[e - 1])))
        ++nonmonotone;
    // No random nearby point should beat the solution by more than the gap.
    for (int k = 0; k < 20; ++k) {
      std::vector<double> w2 = r.w;
      for (double& t : w2) t += rng.uniform(-1e-2, 1e-2);
      const double b2 = r.b + rng.uniform(-1e-2, 1e-2);
      if (OraclePrimal(x, y, w2, b2, opt.c) < primal - 1e-3 * (1 + std::abs(primal))) ++not_local_min;
    }
  }
  v.note("50 problems, worst relative gap " + Fmt("%.2e", worst_gap));
  v.require(nonmonotone == 0, std::to_string(nonmonotone) + " objective increases between epochs");
  v.require(not_local_min == 0, std::to_string(not_local_min) + " perturbations beat the solver");

  // Three well-separated blobs, one-vs-rest.
  const double centers[3][2] = {{-6, 0}, {6, 0}, {0, 8}};
  auto blobs = [&](size_t per, Tensor64& x, std::vector<int>& y) {
    x = Tensor64({3 * per, 2});
    y.clear();
    for (int k = 0; k < 3; ++k)
      for (size_t i = 0; i < per; ++i) {
        const size_t row = y.size();
        x[row * 2] = centers[k][0] + rng.uniform(-1.5, 1.5);
        x[row * 2 + 1] = centers[k][1] + rng.uniform(-1.5, 1.5);
        y.push_back(k);
      }
  };
  Tensor64 xtr, xte;
  std::vector<int> ytr, yte;
  blobs(40, xtr, ytr);
  blobs(40, xte, yte);
  SvcOptions opt;
  opt.c = 10;
  SvcModel model = TrainSvc(xtr, ytr, 3, opt);
  const std::vector<int> ptr = model.Predict(xtr), pte = model.Predict(xte);
  const double acc_tr = std::inner_product(ptr.begin(), ptr.end(), ytr.begin(), 0.0, std::plus<>(),
                                           [](int a, int b) { return a == b ? 1.0 : 0.0; }) / ytr.size();
  const double acc_te = std::inner_product(pte.begin(), pte.end(), yte.begin(), 0.0, std::plus<>(),
                                           [](int a, int b) { return a == b ? 1.0 : 0.0; }) / yte.size();
  v.note("separable blobs: train " + Fmt("%.3f", acc_tr) + ", held-out " + Fmt("%.3f", acc_te));
  v.require(acc_tr == 1.0 && acc_te == 1.0, "separable blobs below 100% accuracy");
}

// ------------------------------------------------------------------ 5

EvalData InMemory(const testing::SynthCorpus& c) {
  EvalData d;
  d.labels = LabelNames(c.manifest.label_set);
  d.targets = c.data.labels;
  d.speakers = c.speakers;
  const LabeledImages* data = &c.data;
  d.load = [data](std::span<const size_t> idx) { return data->Subset(idx).images; };
  return d;
}

void LearningSmoke(Verdict& v) {
  const auto& corpus = Corpus();
  v.require(corpus.data.size() == 40, "synthetic corpus has " + std::to_string(corpus.data.size()) + " clips");
  const EvalData data = InMemory(corpus);
  const FoldPlan plan = MakeFolds(data.targets, data.speakers, FoldKind::kBySpeaker, 5, 51);
  std::map<HeadMode, double> cv_acc;
  for (HeadMode mode : {HeadMode::kFc, HeadMode::kAm}) {
    const std::string name = mode == HeadMode::kFc ? "DS-FC" : "DS-AM";
    TrainConfig cfg = TrainConfig::Scratch();
    cfg.mode = mode;
    cfg.seed = 52;
    DeepModel<float> model(mode, BackboneConfig::Mini(), 4, cfg.fc_hidden, cfg.am_dim, cfg.seed);
    TrainResult tr = Train(model, corpus.data, LabeledImages{}, cfg);
    const double train_acc = EvaluateLoss(model, corpus.data).second;
    size_t first = 0;
    for (const auto& e : tr.history)
      if (first == 0 && e.train_accuracy >= 0.95) first = e.epoch;
    v.note(name + ": training accuracy " + Fmt("%.3f", train_acc) + " after " + std::to_string(tr.history.size()) +
           " epochs (running accuracy first >= 0.95 at epoch " + std::to_string(first) + ")");
    v.require(tr.history.size() <= 50, name + " trained for more than 50 epochs");
    v.require(train_acc >= 0.95, name + " training accuracy " + Fmt("%.3f", train_acc));

    ModelSpec spec;
    spec.train = cfg;
    spec.num_classes = 4;
    CvResult cv = RunCv(data, plan, MakeLearnerFactory(spec));
    cv_acc[mode] = cv.aggregate.accuracy;
    v.note(name + ": speaker-grouped 5-fold accuracy " + Fmt("%.3f", cv.aggregate.accuracy));
    v.require(cv.aggregate.accuracy >= 0.80, name + " cross-validated accuracy " + Fmt("%.3f", cv.aggregate.accuracy));
  }
  v.require(cv_acc[HeadMode::kAm] >= cv_acc[HeadMode::kFc] - 0.05, "DS-AM more than 5 points below DS-FC");
}

// ------------------------------------------------------------------ 6

struct PrRow {
  const char* label;
  int p, r, f1;  // thousandths
};

// Classification reports as printed.
const std::vector<std::pair<std::string, std::vector<PrRow>>>& PrintedTables() {
  static const std::vector<std::pair<std::string, std::vector<PrRow>>> t = {
      {"table 4",
       {{"ANGER", 732, 809, 769}, {"DISGUST", 624, 443, 518}, {"FEAR", 711, 738, 724}, {"JOY", 530, 488, 508},
        {"NEUTRAL", 710, 841, 770}, {"SADNESS", 643, 580, 610}, {"SURPRISE", 727, 618, 668}}},
      {"table 6",
       {{"ANGER", 1000, 10, 10}, {"DISGUST", 350, 50, 80}, {"FEAR", 380, 510, 440}, {"JOY", 200, 220, 210},
        {"NEUTRAL", 350, 870, 500}, {"SADNESS", 110, 10, 10}, {"SURPRISE", 610, 350, 450}}},
      {"table 7",
       {{"ANGER", 480, 510, 490}, {"DISGUST", 350, 420, 380}, {"FEAR", 420, 540, 470}, {"JOY", 1000, 0, 10},
        {"NEUTRAL", 610, 150, 240}, {"SADNESS", 330, 680, 440}, {"SURPRISE", 550, 620, 580}}},
  };
  return t;
}

// round(2pr / (p + r)) in thousandths with exact integer arithmetic, ties up.
int64_t ImpliedF1(int64_t p, int64_t r) {
  if (p + r == 0) return 0;
  return (4 * p * r + (p + r)) / (2 * (p + r));
}

// Per-class F1 from label vectors whose class-0 precision and recall are
// exactly p/1000 and r/1000. Returns -1 when no such vectors exist.
double F1FromVectors(int p, int r) {
  if (p == 0 || r == 0) return -1;
  const int64_t gp = std::gcd(p, 1000), gr = std::gcd(r, 1000);
  const int64_t pn = p / gp, pd = 1000 / gp, rn = r / gr, rd = 1000 / gr;
  const int64_t tp = std::lcm(pn, rn);
  const int64_t pred_pos = tp / pn * pd, true_pos = tp / rn * rd;
  std::vector<int> truth, pred;
  auto add = [&](int64_t count, int t, int q) {
    truth.insert(truth.end(), count, t);
    pred.insert(pred.end(), count, q);
  };
  add(tp, 0, 0);
  add(pred_pos - tp, 1, 0);
  add(true_pos - tp, 0, 1);
  add(1, 1, 1);
  EvalReport rep = ComputeMetrics(truth, pred, {"A", "B"});
  if (std::abs(rep.per_class[0].precision - p / 1000.0) > 1e-15 || std::abs(rep.per_class[0].recall - r / 1000.0) > 1e-15)
    return -2;
  return rep.per_class[0].f1;
}

void MetricFidelity(Verdict& v) {
  size_t rows = 0, direct = 0;
  std::vector<std::string> printed_mismatch;
  for (const auto& [table, entries] : PrintedTables()) {
    for (const PrRow& row : entries) {
      ++rows;
      double f1 = F1FromVectors(row.p, row.r);
      if (f1 == -2) {
        v.require(false, table + " " + row.label + ": constructed vectors miss the target precision/recall");
        continue;
      }
      if (f1 < 0) {
        // Precision 1 with recall 0 cannot come from counts; score the pair.
        f1 = F1Score(row.p / 1000.0, row.r / 1000.0);
        ++direct;
      }
      const int64_t got = std::llround(f1 * 1000.0);
      const int64_t want = ImpliedF1(row.p, row.r);
      v.require(got == want, table + " " + row.label + ": f1 " + std::to_string(got) + " vs implied " +
                                 std::to_string(want) + " (thousandths)");
      if (table == "table 4")
        v.require(got == row.f1, table + " " + row.label + ": f1 differs from the printed value");
      else if (got != row.f1)
        printed_mismatch.push_back(table + " " + row.label + " printed " + Fmt("%.3f", row.f1 / 1000.0) + " implied " +
                                   Fmt("%.3f", got / 1000.0));
    }
  }
  v.note(std::to_string(rows) + " precision/recall pairs reproduced to 3 dp (" + std::to_string(direct) +
         " scored directly because no confusion matrix has precision 1 and recall 0)");
  if (!printed_mismatch.empty()) {
    std::string s = "informational: printed F1 disagrees with its own precision/recall in " +
                    std::to_string(printed_mismatch.size()) + " rows:";
    v.note(s);
    for (const auto& m : printed_mismatch) v.note("  " + m);
  }

  Rng rng(606);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const size_t k = 2 + rng.below(6), n = 1 + rng.below(300);
    std::vector<int> truth(n), pred(n);
    size_t hits = 0;
    for (size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng.below(k));
      pred[i] = rng.uniform(0, 1) < 0.4 ? truth[i] : static_cast<int>(rng.below(k));
      hits += truth[i] == pred[i];
    }
    std::vector<std::string> labels;
    for (size_t c = 0; c < k; ++c) labels.push_back("c" + std::to_string(c));
    EvalReport rep = ComputeMetrics(truth, pred, labels);
    double tp = 0, support = 0;
    for (const ClassReport& c : rep.per_class) {
      tp += c.recall * static_cast<double>(c.support);
      support += static_cast<double>(c.support);
    }
    const double micro_recall = tp / support;
    worst = std::max({worst, std::abs(micro_recall - rep.accuracy),
                      std::abs(rep.accuracy - static_cast<double>(hits) / static_cast<double>(n))});
  }
  v.note("100 random label vectors: max |micro recall - accuracy| = " + Fmt("%.2e", worst));
  v.require(worst < 1e-12, "micro recall differs from accuracy");
}

// ------------------------------------------------------------------ 7

bool PlanHolds(const FoldPlan& p, const std::vector<int>& labels, const std::vector<std::string>& speakers) {
  const size_t n = labels.size();
  if (p.assignment.size() != n || p.train.size() != p.k || p.val.size() != p.k) return false;
  std::vector<size_t> per_fold(p.k, 0);
  for (size_t a : p.assignment) {
    if (a >= p.k) return false;
    ++per_fold[a];
  }
  for (size_t f = 0; f < p.k; ++f) {
    if (per_fold[f] == 0) return false;
    std::vector<int> seen(n, 0);
    for (size_t i : p.train[f]) ++seen[i];
    for (size_t i : p.val[f]) ++seen[i];
    for (size_t i = 0; i < n; ++i)
      if (seen[i] != (p.assignment[i] == f ? 0 : 1)) return false;
  }
  if (p.kind == FoldKind::kStratified) {
    std::map<int, std::vector<int>> counts;
    for (size_t i = 0; i < n; ++i) {
      auto& c = counts[labels[i]];
      c.resize(p.k, 0);
      ++c[p.assignment[i]];
    }
    for (const auto& [_, c] : counts)
      if (*std::max_element(c.begin(), c.end()) - *std::min_element(c.begin(), c.end()) > 1) return false;
  } else {
    std::map<std::string, size_t> fold_of;
    for (size_t i = 0; i < n; ++i) {
      auto [it, inserted] = fold_of.emplace(speakers[i], p.assignment[i]);
      if (!inserted && it->second != p.assignment[i]) return false;
    }
  }
  return true;
}

void ProtocolInvariants(Verdict& v) {
  Rng rng(707);
  size_t plans = 0, broken = 0;
  while (plans < 10000) {
    const size_t k = 2 + rng.below(9);
    const size_t classes = 2 + rng.below(6);
    const size_t nspk = k + rng.below(12);
    std::vector<int> labels;
    std::vector<std::string> speakers;
    for (size_t c = 0; c < classes; ++c) {
      const size_t m = k + rng.below(20);
      for (size_t i = 0; i < m; ++i) {
        labels.push_back(static_cast<int>(c));
        speakers.push_back("s" + std::to_string(rng.below(nspk)));
      }
    }
    // Shuffle so class blocks are interleaved.
    std::vector<size_t> perm(labels.size());
    std::iota(perm.begin(), perm.end(), size_t{0});
    rng.shuffle(perm);
    std::vector<int> l2;
    std::vector<std::string> s2;
    for (size_t i : perm) {
      l2.push_back(labels[i]);
      s2.push_back(speakers[i]);
    }
    const FoldKind kind = plans % 2 ? FoldKind::kStratified : FoldKind::kBySpeaker;
    if (kind == FoldKind::kBySpeaker && std::set<std::string>(s2.begin(), s2.end()).size() < k) continue;
    if (!PlanHolds(MakeFolds(l2, s2, kind, k, rng.next()), l2, s2)) ++broken;
    ++plans;
  }
  v.note(std::to_string(plans) + " randomized plans, " + std::to_string(broken) + " broken");
  v.require(broken == 0, std::to_string(broken) + " fold plans violate an invariant");

  // File-access guard: every image read is tagged with the fold and phase of
  // the worker that performed it.
  testing::TempDir dir("acceptance_guard");
  const auto& corpus = Corpus();
  std::vector<fs::path> paths;
  for (size_t i = 0; i < corpus.images.size(); ++i) {
    paths.push_back(dir.path() / ("img" + std::to_string(i) + ".ppm"));
    WritePpm(paths.back(), corpus.images[i]);
  }
  struct Context {
    size_t fold = 0;
    Phase phase = Phase::kTrain;
  };
  static thread_local Context ctx;
  std::mutex mu;
  std::vector<std::tuple<size_t, Phase, fs::path>> reads;
  auto on_open = [&](const fs::path& p) {
    std::lock_guard<std::mutex> lock(mu);
    reads.emplace_back(ctx.fold, ctx.phase, p);
  };
  EvalData data = MakeEvalData(corpus.manifest, corpus.manifest.label_set, MakeFileLoader(paths, 64, on_open));
  FoldPlan plan = MakeFolds(data.targets, data.speakers, FoldKind::kBySpeaker, 5, 71);
  ModelSpec spec;
  spec.train.mode = HeadMode::kSvc;
  spec.num_classes = data.labels.size();
  CvOptions opt;
  opt.jobs = 2;
  opt.listener = [](size_t fold, Phase phase) { ctx = {fold, phase}; };
  RunCv(data, plan, MakeLearnerFactory(spec), opt);
  std::map<fs::path, size_t> index;
  for (size_t i = 0; i < paths.size(); ++i) index[paths[i]] = i;
  size_t leaks = 0, test_reads = 0, train_reads = 0;
  for (const auto& [fold, phase, p] : reads) {
    const bool in_test = plan.assignment[index.at(p)] == fold;
    if (phase == Phase::kTrain) {
      ++train_reads;
      leaks += in_test;
    } else {
      ++test_reads;
      leaks += !in_test;
    }
  }
  v.note("cv guard: " + std::to_string(train_reads) + " training-phase reads, " + std::to_string(test_reads) +
         " test-phase reads, " + std::to_string(leaks) + " outside their phase");
  v.require(leaks == 0, "a test file was read while training");
  v.require(test_reads == paths.size(), "not every file was tested exactly once");

  // Hold-out guard: train on the first half of the speakers, test on the rest.
  reads.clear();
  std::vector<size_t> a_idx, b_idx;
  std::vector<std::string> spk(data.speakers.begin(), data.speakers.end());
  std::sort(spk.begin(), spk.end());
  spk.erase(std::unique(spk.begin(), spk.end()), spk.end());
  const std::string cut = spk[spk.size() / 2];
  for (size_t i = 0; i < data.size(); ++i) (data.speakers[i] < cut ? a_idx : b_idx).push_back(i);
  auto subset = [&](const std::vector<size_t>& idx) {
    EvalData d;
    d.labels = data.labels;
    std::vector<fs::path> ps;
    for (size_t i : idx) {
      d.targets.push_back(data.targets[i]);
      d.speakers.push_back(data.speakers[i]);
      ps.push_back(paths[i]);
    }
    d.load = MakeFileLoader(ps, 64, on_open);
    return d;
  };
  const std::set<size_t> test_set(b_idx.begin(), b_idx.end());
  RunHoldOut(subset(a_idx), subset(b_idx), MakeLearnerFactory(spec), 72,
             [](size_t fold, Phase phase) { ctx = {fold, phase}; });
  size_t holdout_leaks = 0;
  for (const auto& [fold, phase, p] : reads) {
    const bool in_test = test_set.count(index.at(p)) > 0;
    holdout_leaks += (phase == Phase::kTrain) == in_test;
  }
  v.note("hold-out guard: " + std::to_string(reads.size()) + " reads, " + std::to_string(holdout_leaks) +
         " outside their phase");
  v.require(!reads.empty() && holdout_leaks == 0, "hold-out guard violated");

  // Styled test corpus: only neutral rows with style=normal survive.
  DatasetManifest train, test;
  train.name = "train";
  test.name = "styled";
  for (Emotion e : AllEmotions())
    for (int i = 0; i < 3; ++i) train.samples.push_back({"t.wav", e, "a" + std::to_string(i), Style::kNone});
  const Style styles[] = {Style::kFast, Style::kSlow, Style::kSoft, Style::kLoud, Style::kNormal};
  std::vector<std::string> expected;
  for (int i = 0; i < 400; ++i) {
    LabeledSample s;
    s.path = "e" + std::to_string(i) + ".wav";
    s.label = AllEmotions()[rng.below(kNumEmotions)];
    s.speaker_id = "x" + std::to_string(rng.below(6));
    s.style = s.label == Emotion::kNeutral ? styles[rng.below(5)] : Style::kNone;
    if (s.label != Emotion::kNeutral || s.style == Style::kNormal) expected.push_back(s.path);
    test.samples.push_back(s);
  }
  train.refresh_label_set();
  test.refresh_label_set();
  CrossCorpusPlan cp = PrepareCrossCorpus(train, test);
  std::vector<std::string> kept;
  size_t kept_neutral = 0;
  for (const auto& s : cp.test.samples) {
    kept.push_back(s.path);
    kept_neutral += s.label == Emotion::kNeutral;
  }
  v.note("styled corpus: kept " + std::to_string(kept.size()) + " of 400 rows (" + std::to_string(kept_neutral) +
         " normal neutrals)");
  v.require(kept == expected, "cross-corpus filter kept the wrong rows");
  v.require(cp.train.samples.size() == train.samples.size(), "training corpus was filtered");
}

// ------------------------------------------------------------------ 8

std::map<std::string, std::string> Snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    if (rel == "run.json" || rel.starts_with(".cache/")) continue;  // provenance and cache
    out[rel] = ReadFileText(e.path());
  }
  return out;
}

int Cli(std::vector<std::string> args) {
  args.insert(args.begin(), "specemo");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  // Command summaries would drown the criterion lines.
  std::ostringstream sink;
  std::streambuf* saved = std::cout.rdbuf(sink.rdbuf());
  const int code = RunCli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(saved);
  return code;
}

void Determinism(Verdict& v) {
  testing::TempDir dir("acceptance_det");
  SynthSpec spec;
  spec.classes = 3;
  SynthDataset(spec, dir.path() / "a");
  spec.seed = 11;
  SynthDataset(spec, dir.path() / "b");
  auto config = [&](const std::string& name, json extra) {
    json cfg = {{"schema_version", 1},
                {"experiment", name},
                {"seed", 81},
                {"dataset", {{"manifest", "a/manifest.csv"}, {"test_manifest", "b/manifest.csv"}}},
                {"eval", {{"folds", "by_speaker"}, {"k", 5}}},
                {"report", {{"attention_samples", 2}}}};
    cfg.merge_patch(extra);
    const fs::path p = dir.path() / (name + ".json");
    WriteFileText(p, cfg.dump(2));
    return p.string();
  };
  const std::string svc = config("svc", {{"head", "svc"}});
  const std::string fc = config("fc", {{"head", "fc"}, {"train", {{"epochs", 2}}}});
  const std::string am = config("am", {{"head", "am"}, {"train", {{"epochs", 2}}}});

  struct Job {
    std::string label;
    std::string command;
    std::string config;
    bool report;
  };
  const std::vector<Job> jobs_list = {{"extract", "extract", svc, false}, {"train am", "train", am, true},
                                      {"eval svc", "eval", svc, true},    {"eval fc", "eval", fc, true},
                                      {"cross svc", "cross", svc, true}};
  for (const Job& job : jobs_list) {
    std::vector<std::map<std::string, std::string>> snaps;
    for (const char* jobs : {"1", "3"}) {
      const std::string stem = fs::path(job.config).stem().string();
      const fs::path out = dir.path() / ("out_" + std::to_string(snaps.size())) / job.command / stem;
      const fs::path cache = out.parent_path() / (stem + "_cache");
      ::setenv("SPECEMO_CACHE", cache.c_str(), 1);
      std::vector<std::string> args = {job.command, "--config", job.config, "--out", out.string(), "--jobs", jobs};
      if (job.command != "extract") {
        args.push_back("--run-id");
        args.push_back("run");
      }
      int code = Cli(args);
      v.require(code == 0, job.label + " --jobs " + jobs + " exited " + std::to_string(code));
      fs::path root = job.command == "extract" ? out : out / "run";
      if (job.report) {
        code = Cli({"report", "--run", root.string()});
        v.require(code == 0, job.label + " report exited " + std::to_string(code));
      }
      snaps.push_back(Snapshot(root));
    }
    ::unsetenv("SPECEMO_CACHE");
    size_t weights = 0, differing = 0;
    for (const auto& [name, _] : snaps[0]) weights += name.ends_with(".weights");
    std::set<std::string> names;
    for (const auto& s : snaps)
      for (const auto& [name, _] : s) names.insert(name);
    for (const auto& name : names) {
      auto a = snaps[0].find(name), b = snaps[1].find(name);
      if (a == snaps[0].end() || b == snaps[1].end() || a->second != b->second) {
        ++differing;
        v.require(false, job.label + ": " + name + " differs between --jobs 1 and 3");
      }
    }
    const bool has_report = job.command == "extract" ? snaps[0].count("index.csv") : snaps[0].count("report.json");
    v.require(has_report, job.label + ": expected output missing");
    v.note(job.label + ": " + std::to_string(names.size()) + " files (" + std::to_string(weights) +
           " checkpoints) compared, " + std::to_string(differing) + " differ");
  }
}

}  // namespace
}  // namespace specemo

int main(int argc, char** argv) {
  using specemo::Criterion;
  const std::vector<Criterion> criteria = {
      {1, "spectrogram pipeline matches the reference within 1e-5 per pixel", 30, specemo::DspOracle},
      {2, "float64 gradient checks on every layer and the mini DS-FC/DS-AM graphs", 120, specemo::Gradients},
      {3, "attention maps stay normalized; uniform ablation equals mean pooling", 0,
       specemo::AttentionNormalization},
      {4, "SVM duality gap, separable accuracy and monotone objective", 0, specemo::SvmCorrectness},
      {5, "mini DS-FC/DS-AM learn the synthetic corpus", 600, specemo::LearningSmoke},
      {6, "per-class F1 and micro recall", 0, specemo::MetricFidelity},
      {7, "fold plans, file-access guard and cross-corpus filtering", 0, specemo::ProtocolInvariants},
      {8, "commands are byte-identical across --jobs", 0, specemo::Determinism},
  };
  specemo::SetLogLevel(specemo::LogLevel::kError);
  // Optional arguments select criteria by number.
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    ++ran;
    failed += !specemo::RunCriterion(c);
  }
  std::printf("%d of %d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
