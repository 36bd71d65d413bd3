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

#include "specemo/heads.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "specemo/nn/layers.h"
#include "specemo/util.h"

namespace specemo {

using nn::BasicTensor;
using nn::Tensor;
using nn::Tensor64;

std::string HeadModeName(HeadMode mode) {
  switch (mode) {
    case HeadMode::kSvc: return "svc";
    case HeadMode::kFc: return "fc";
    case HeadMode::kAm: return "am";
  }
  return "?";
}

HeadMode ParseHeadMode(const std::string& name) {
  if (name == "svc") return HeadMode::kSvc;
  if (name == "fc") return HeadMode::kFc;
  if (name == "am") return HeadMode::kAm;
  throw Error(ErrorKind::kInvalidArgument, "head mode must be svc, fc or am, got '" + name + "'");
}

// ---------------------------------------------------------------- SVC

Standardizer Standardizer::Fit(const Tensor64& x) {
  if (x.rank() != 2 || x.dim(0) < 2)
    throw Error(ErrorKind::kInvalidArgument, "standardizer needs at least 2 samples, got " + nn::ShapeString(x.shape()));
  const size_t n = x.dim(0), d = x.dim(1);
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) s.mean[j] += x[i * d + j];
  for (size_t j = 0; j < d; ++j) s.mean[j] /= static_cast<double>(n);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) {
      const double c = x[i * d + j] - s.mean[j];
      s.stddev[j] += c * c;
    }
  for (size_t j = 0; j < d; ++j) {
    s.stddev[j] = std::sqrt(s.stddev[j] / static_cast<double>(n));
    if (!(s.stddev[j] >= kStdFloor)) {
      s.stddev[j] = kStdFloor;
      ++s.floored;
    }
  }
  if (s.floored > 0)
    SPECEMO_LOG(kWarning) << "standardizer: " << s.floored << " of " << d
                          << " feature dimensions are constant; stddev floored";
  return s;
}

Tensor64 Standardizer::Apply(const Tensor64& x) const {
  const size_t d = mean.size();
  if (x.rank() != 2 || x.dim(1) != d)
    throw Error(ErrorKind::kShapeMismatch, "standardizer fitted on " + std::to_string(d) + " dims, got " +
                                               nn::ShapeString(x.shape()));
  Tensor64 out(x.shape());
  for (size_t i = 0; i < x.dim(0); ++i)
    for (size_t j = 0; j < d; ++j)
      out[i * d + j] = stddev[j] <= kStdFloor ? 0.0 : (x[i * d + j] - mean[j]) / stddev[j];
  return out;
}

BinarySvc TrainBinarySvc(const Tensor64& x, std::span<const int> y, const SvcOptions& options) {
  if (x.rank() != 2 || x.dim(0) != y.size() || y.empty())
    throw Error(ErrorKind::kLengthMismatch, "svc features and labels disagree in length");
  if (!(options.c > 0)) throw Error(ErrorKind::kInvalidArgument, "svc.c must be positive");
  const size_t n = x.dim(0), d = x.dim(1), da = d + 1;
  const double upper = options.c / static_cast<double>(n);

  auto row = [&](size_t i) { return x.data() + i * d; };
  auto margin = [&](const std::vector<double>& w, size_t i) {
    const double* xi = row(i);
    double s = w[d];
    for (size_t j = 0; j < d; ++j) s += w[j] * xi[j];
    return s;
  };

  std::vector<double> qii(n), alpha(n, 0.0), w(da, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (y[i] != 1 && y[i] != -1) throw Error(ErrorKind::kInvalidArgument, "binary svc labels must be +1 or -1");
    double q = 1.0;
    for (size_t j = 0; j < d; ++j) q += row(i)[j] * row(i)[j];
    qii[i] = q;
  }

  BinarySvc r;
  Rng rng(options.seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  for (size_t epoch = 1; epoch <= options.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t i : order) {
      const double g = y[i] * margin(w, i) - 1.0;
      const double next = std::clamp(alpha[i] - g / qii[i], 0.0, upper);
      const double delta = next - alpha[i];
      if (delta == 0.0) continue;
      alpha[i] = next;
      const double* xi = row(i);
      const double s = delta * y[i];
      for (size_t j = 0; j < d; ++j) w[j] += s * xi[j];
      w[d] += s;
    }
    // Rebuild w from alpha so rounding drift does not accumulate.
    std::fill(w.begin(), w.end(), 0.0);
    double alpha_sum = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (alpha[i] == 0.0) continue;
      const double s = alpha[i] * y[i];
      for (size_t j = 0; j < d; ++j) w[j] += s * row(i)[j];
      w[d] += s;
      alpha_sum += alpha[i];
    }
    double wsq = 0.0;
    for (double v : w) wsq += v * v;
    double hinge = 0.0;
    for (size_t i = 0; i < n; ++i) hinge += std::max(0.0, 1.0 - y[i] * margin(w, i));
    r.primal = 0.5 * wsq + upper * hinge;
    r.dual = alpha_sum - 0.5 * wsq;
    r.objective_history.push_back(-r.dual);
    r.epochs = epoch;
    if (r.primal - r.dual <= options.tol * (1.0 + std::abs(r.primal))) {
      r.converged = true;
      break;
    }
  }
  r.w.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d));
  r.b = w[d];
  return r;
}

Tensor64 SvcModel::Scores(const Tensor64& features) const {
  const Tensor64 xs = standardizer.Apply(features);
  const size_t n = xs.dim(0), d = xs.dim(1), k = num_classes();
  Tensor64 s({n, k});
  for (size_t i = 0; i < n; ++i)
    for (size_t c = 0; c < k; ++c) {
      double acc = b[c];
      for (size_t j = 0; j < d; ++j) acc += w[c * d + j] * xs[i * d + j];
      s[i * k + c] = acc;
    }
  return s;
}

std::vector<int> SvcModel::Predict(const Tensor64& features) const { return nn::ArgmaxRows(Scores(features)); }

nn::TensorMap SvcModel::ExportTensors() const {
  nn::TensorMap m;
  m.emplace("svc.w", w.cast<float>());
  m.emplace("svc.b", b.cast<float>());
  const size_t d = standardizer.mean.size();
  m.emplace("svc.mean", Tensor({d}, std::vector<float>(standardizer.mean.begin(), standardizer.mean.end())));
  m.emplace("svc.std", Tensor({d}, std::vector<float>(standardizer.stddev.begin(), standardizer.stddev.end())));
  return m;
}

SvcModel SvcModel::FromTensors(const nn::TensorMap& tensors) {
  auto it = tensors.find("svc.w");
  if (it == tensors.end()) throw Error(ErrorKind::kMissingTensor, "missing tensor 'svc.w'");
  if (it->second.rank() != 2) throw Error(ErrorKind::kShapeMismatch, "svc.w must be K x D");
  const size_t k = it->second.dim(0), d = it->second.dim(1);
  SvcModel m;
  m.w = it->second.cast<double>();
  m.b = nn::RequireTensor(tensors, "svc.b", {k}).cast<double>();
  const Tensor& mean = nn::RequireTensor(tensors, "svc.mean", {d});
  const Tensor& sd = nn::RequireTensor(tensors, "svc.std", {d});
  m.standardizer.mean.assign(mean.values().begin(), mean.values().end());
  m.standardizer.stddev.assign(sd.values().begin(), sd.values().end());
  for (double v : m.standardizer.stddev) m.standardizer.floored += v <= kStdFloor;
  return m;
}

SvcModel TrainSvc(const Tensor64& features, std::span<const int> labels, size_t num_classes,
                  const SvcOptions& options) {
  if (features.rank() != 2 || features.dim(0) != labels.size())
    throw Error(ErrorKind::kLengthMismatch, "svc features and labels disagree in length");
  std::set<int> present;
  for (int l : labels) {
    if (l < 0 || static_cast<size_t>(l) >= num_classes)
      throw Error(ErrorKind::kLabelOutOfRange, "label " + std::to_string(l) + " outside [0, " +
                                                   std::to_string(num_classes) + ")");
    present.insert(l);
  }
  if (present.size() < 2) throw Error(ErrorKind::kSingleClass, "svc training needs at least two classes");

  SvcModel m;
  m.standardizer = Standardizer::Fit(features);
  const Tensor64 xs = m.standardizer.Apply(features);
  const size_t d = features.dim(1);
  m.w = Tensor64({num_classes, d});
  m.b = Tensor64({num_classes});
  std::vector<int> y(labels.size());
  for (size_t k = 0; k < num_classes; ++k) {
    for (size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == static_cast<int>(k) ? 1 : -1;
    SvcOptions o = options;
    o.seed = DeriveSeed(options.seed, k);
    BinarySvc p = TrainBinarySvc(xs, y, o);
    if (!p.converged)
      SPECEMO_LOG(kWarning) << "svc class " << k << ": no convergence after " << p.epochs
                            << " epochs, relative gap " << p.relative_gap();
    for (size_t j = 0; j < d; ++j) m.w[k * d + j] = static_cast<float>(p.w[j]);
    m.b[k] = static_cast<float>(p.b);
    m.problems.push_back(std::move(p));
  }
  for (double& v : m.standardizer.mean) v = static_cast<float>(v);
  for (double& v : m.standardizer.stddev) v = static_cast<float>(v);
  return m;
}

// ---------------------------------------------------------------- neural heads

template <typename T>
FcHead<T>::FcHead(size_t in_dim, size_t hidden, size_t num_classes, uint64_t seed)
    : hidden_w_("fc.hidden.weight", {hidden, in_dim}),
      hidden_b_("fc.hidden.bias", {hidden}),
      out_w_("fc.out.weight", {num_classes, hidden}),
      out_b_("fc.out.bias", {num_classes}) {
  Rng rng(seed);
  HeUniformInit(hidden_w_.value, in_dim, rng);
  HeUniformInit(out_w_.value, hidden, rng);
}

template <typename T>
BasicTensor<T> FcHead<T>::Forward(const BasicTensor<T>& fc1, Cache* cache) const {
  BasicTensor<T> h = nn::ReluForward(nn::DenseForward(fc1, hidden_w_.value, hidden_b_.value));
  BasicTensor<T> logits = nn::DenseForward(h, out_w_.value, out_b_.value);
  if (cache) {
    cache->input = fc1;
    cache->hidden = std::move(h);
  }
  return logits;
}

template <typename T>
BasicTensor<T> FcHead<T>::Backward(const Cache& cache, const BasicTensor<T>& grad_logits) {
  auto acc = [](nn::Param<T>& p, const BasicTensor<T>& g) {
    for (size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
  };
  nn::DenseGrads<T> g2 = nn::DenseBackward(grad_logits, cache.hidden, out_w_.value);
  acc(out_w_, g2.weight);
  acc(out_b_, g2.bias);
  BasicTensor<T> gh = nn::ReluBackward(g2.input, cache.hidden);
  nn::DenseGrads<T> g1 = nn::DenseBackward(gh, cache.input, hidden_w_.value);
  acc(hidden_w_, g1.weight);
  acc(hidden_b_, g1.bias);
  return std::move(g1.input);
}

template <typename T>
std::vector<nn::Param<T>*> FcHead<T>::params() {
  return {&hidden_w_, &hidden_b_, &out_w_, &out_b_};
}

template <typename T>
DeepModel<T>::DeepModel(HeadMode mode, const BackboneConfig& backbone, size_t num_classes, size_t fc_hidden,
                        size_t am_dim, uint64_t seed)
    : mode_(mode), num_classes_(num_classes), backbone_(backbone, DeriveSeed(seed, 1)) {
  if (num_classes < 2) throw Error(ErrorKind::kInvalidArgument, "a classifier needs at least 2 classes");
  if (mode == HeadMode::kFc)
    fc_.emplace(backbone.fc_dim, fc_hidden, num_classes, DeriveSeed(seed, 2));
  else if (mode == HeadMode::kAm)
    am_.emplace(backbone, num_classes, am_dim, DeriveSeed(seed, 2));
  else
    throw Error(ErrorKind::kInvalidArgument, "DeepModel supports fc and am heads only");
}

template <typename T>
BasicTensor<T> DeepModel<T>::Logits(const BasicTensor<T>& images) const {
  FeatureTaps<T> taps = backbone_.Forward(images);
  if (fc_) return fc_->Forward(taps.fc1);
  return am_->Forward(taps).logits;
}

template <typename T>
AttentionOutput<T> DeepModel<T>::Attend(const BasicTensor<T>& images) const {
  if (!am_) throw Error(ErrorKind::kInvalidArgument, "attention maps need an am model");
  return am_->Forward(backbone_.Forward(images));
}

template <typename T>
typename DeepModel<T>::StepResult DeepModel<T>::ForwardBackward(const BasicTensor<T>& images,
                                                                std::span<const int> labels, bool train_trunk) {
  BackboneCache<T> cache;
  FeatureTaps<T> taps = backbone_.Forward(images, train_trunk ? &cache : nullptr);
  StepResult r;
  if (fc_) {
    typename FcHead<T>::Cache hc;
    r.logits = fc_->Forward(taps.fc1, &hc);
    nn::LossAndGrad<T> lg = nn::SoftmaxCrossEntropy(r.logits, labels);
    r.loss = lg.loss;
    BasicTensor<T> g = fc_->Backward(hc, lg.grad);
    if (train_trunk) backbone_.Backward(cache, FeatureTaps<T>{{}, {}, std::move(g)});
  } else {
    AttentionOutput<T> out = am_->Forward(taps);
    nn::LossAndGrad<T> lg = nn::SoftmaxCrossEntropy(out.logits, labels);
    r.loss = lg.loss;
    FeatureTaps<T> g = am_->Backward(taps, out, lg.grad);
    if (train_trunk) backbone_.Backward(cache, g);
    r.logits = out.logits;
    r.attention = std::move(out);
  }
  return r;
}

template <typename T>
std::vector<nn::Param<T>*> DeepModel<T>::trunk_params() {
  std::vector<nn::Param<T>*> out;
  for (auto& p : backbone_.params()) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<nn::Param<T>*> DeepModel<T>::head_params() {
  return fc_ ? fc_->params() : am_->params();
}

template <typename T>
void DeepModel<T>::zero_grad() {
  for (nn::Param<T>* p : trunk_params()) p->zero_grad();
  for (nn::Param<T>* p : head_params()) p->zero_grad();
}

template <typename T>
nn::TensorMap DeepModel<T>::ExportTensors() const {
  nn::TensorMap m = backbone_.ExportTensors();
  for (nn::Param<T>* p : const_cast<DeepModel*>(this)->head_params())
    m.emplace(p->name, p->value.template cast<float>());
  return m;
}

template <typename T>
void DeepModel<T>::ImportTensors(const nn::TensorMap& tensors) {
  std::vector<nn::Param<T>*> head = head_params();
  for (nn::Param<T>* p : head) nn::RequireTensor(tensors, p->name, p->value.shape());
  backbone_.ImportTensors(tensors);
  for (nn::Param<T>* p : head) p->value = tensors.at(p->name).template cast<T>();
}

template class FcHead<float>;
template class FcHead<double>;
template class DeepModel<float>;
template class DeepModel<double>;

// ---------------------------------------------------------------- training

TrainConfig TrainConfig::Scratch() { return TrainConfig{}; }

TrainConfig TrainConfig::Finetune() {
  TrainConfig c;
  c.lr_trunk = 1e-5;
  c.lr_head = 1e-4;
  return c;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& msg) {
    throw Error(ErrorKind::kInvalidArgument, "train." + key + " " + msg);
  };
  if (!(lr_head > 0.0)) fail("lr_head", "must be > 0");
  if (!(lr_trunk >= 0.0)) fail("lr_trunk", "must be >= 0");
  if (epochs == 0) fail("epochs", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (fc_hidden == 0) fail("fc_hidden", "must be positive");
  if (am_dim == 0) fail("am_dim", "must be positive");
  if (!(svc.c > 0.0)) fail("svc_c", "must be > 0");
}

LabeledImages LabeledImages::Subset(std::span<const size_t> indices) const {
  LabeledImages out;
  nn::Shape shape = images.shape();
  const size_t per = shape.empty() || shape[0] == 0 ? 0 : images.size() / shape[0];
  shape[0] = indices.size();
  out.images = Tensor(shape);
  for (size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(images.data() + indices[i] * per, per, out.images.data() + i * per);
    out.labels.push_back(labels.at(indices[i]));
  }
  return out;
}

namespace {

template <typename F>
void ForBatches(size_t n, size_t batch, F&& f) {
  for (size_t start = 0; start < n; start += batch) {
    std::vector<size_t> idx(std::min(batch, n - start));
    std::iota(idx.begin(), idx.end(), start);
    f(idx);
  }
}

LabeledImages AsSet(const Tensor& images) {
  LabeledImages s;
  s.images = images;
  s.labels.assign(images.empty() ? 0 : images.dim(0), 0);
  return s;
}

}  // namespace

std::pair<double, double> EvaluateLoss(const DeepModel<float>& model, const LabeledImages& data, size_t batch_size) {
  double loss = 0.0;
  size_t correct = 0;
  ForBatches(data.size(), batch_size, [&](const std::vector<size_t>& idx) {
    LabeledImages b = data.Subset(idx);
    Tensor logits = model.Logits(b.images);
    loss += nn::SoftmaxCrossEntropy(logits, b.labels).loss * static_cast<double>(idx.size());
    std::vector<int> pred = nn::ArgmaxRows(logits);
    for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  });
  const double n = static_cast<double>(std::max<size_t>(data.size(), 1));
  return {loss / n, static_cast<double>(correct) / n};
}

TrainResult Train(DeepModel<float>& model, const LabeledImages& train, const LabeledImages& val,
                  const TrainConfig& config) {
  config.validate();
  if (train.size() == 0) throw Error(ErrorKind::kEmptySplit, "training split is empty");
  const double lr_trunk = config.effective_lr_trunk();
  nn::Optimizer<float> opt(config.optim, {{model.trunk_params(), lr_trunk}, {model.head_params(), config.lr_head}});
  Rng rng(DeriveSeed(config.seed, 0x5452));

  TrainResult result;
  nn::TensorMap best;
  double best_acc = -1.0, best_loss = std::numeric_limits<double>::infinity();
  std::vector<size_t> order(train.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    size_t correct = 0;
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      LabeledImages batch = train.Subset(std::span<const size_t>(order.data() + start, end - start));
      model.zero_grad();
      auto step = model.ForwardBackward(batch.images, batch.labels, lr_trunk > 0.0);
      opt.step();
      loss_sum += step.loss * static_cast<double>(batch.size());
      std::vector<int> pred = nn::ArgmaxRows(step.logits);
      for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    if (val.size() > 0) {
      std::tie(rec.val_loss, rec.val_accuracy) = EvaluateLoss(model, val, config.batch_size);
      if (rec.val_accuracy > best_acc || (rec.val_accuracy == best_acc && rec.val_loss < best_loss)) {
        best_acc = rec.val_accuracy;
        best_loss = rec.val_loss;
        best = model.ExportTensors();
        result.best_epoch = epoch;
      }
    } else {
      result.best_epoch = epoch;
    }
    result.history.push_back(rec);
    SPECEMO_LOG(kDebug) << "epoch " << epoch << " loss " << rec.train_loss << " acc " << rec.train_accuracy
                        << " val_loss " << rec.val_loss << " val_acc " << rec.val_accuracy;
    if (val.size() > 0 && epoch - result.best_epoch >= config.early_stop_patience) {
      result.stopped_early = epoch < config.epochs;
      break;
    }
  }
  if (!best.empty()) model.ImportTensors(best);
  return result;
}

Prediction Predict(const DeepModel<float>& model, const Tensor& images, size_t batch_size) {
  Prediction p;
  const size_t n = images.empty() ? 0 : images.dim(0), k = model.num_classes();
  p.scores = Tensor64({n, k});
  const LabeledImages all = AsSet(images);
  ForBatches(n, batch_size, [&](const std::vector<size_t>& idx) {
    Tensor logits = model.Logits(all.Subset(idx).images);
    std::vector<int> pred = nn::ArgmaxRows(logits);
    Tensor64 prob = nn::Softmax(logits.cast<double>());
    for (size_t i = 0; i < idx.size(); ++i) {
      p.labels.push_back(pred[i]);
      std::copy_n(prob.data() + i * k, k, p.scores.data() + idx[i] * k);
    }
  });
  return p;
}

Tensor64 ExtractFeatures(const Backbone<float>& backbone, const Tensor& images, size_t batch_size) {
  const size_t n = images.empty() ? 0 : images.dim(0), f = backbone.config().fc_dim;
  Tensor64 out({n, f});
  const LabeledImages all = AsSet(images);
  ForBatches(n, batch_size, [&](const std::vector<size_t>& idx) {
    FeatureTaps<float> taps = backbone.Forward(all.Subset(idx).images);
    for (size_t i = 0; i < idx.size(); ++i)
      for (size_t j = 0; j < f; ++j) out[idx[i] * f + j] = taps.fc1[i * f + j];
  });
  return out;
}

}  // namespace specemo
