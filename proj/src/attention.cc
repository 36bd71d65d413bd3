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

#include "specemo/attention.h"

#include <algorithm>
#include <cmath>

#include "specemo/nn/layers.h"

namespace specemo {

using nn::BasicTensor;
using nn::CheckFinite;
using nn::ExpectShape;

template <typename T>
GateParams<T>::GateParams(const std::string& prefix, size_t channels, size_t fc_dim, size_t d)
    : local_weight(prefix + ".local.weight", {d, channels}),
      global_weight(prefix + ".global.weight", {d, fc_dim}),
      global_bias(prefix + ".global.bias", {d}),
      score_weight(prefix + ".score.weight", {1, d}) {}

template <typename T>
std::vector<nn::Param<T>*> GateParams<T>::all() {
  return {&local_weight, &global_weight, &global_bias, &score_weight};
}

namespace {

template <typename T>
void CheckGateShapes(const BasicTensor<T>& local, const BasicTensor<T>& global, const GateParams<T>& p) {
  if (local.rank() != 4) throw Error(ErrorKind::kShapeMismatch, "gate local features must be N x C x H x W");
  const size_t d = p.local_weight.value.dim(0);
  ExpectShape(p.local_weight.value.shape(), {d, local.dim(1)}, p.local_weight.name);
  if (global.rank() != 2 || global.dim(0) != local.dim(0))
    throw Error(ErrorKind::kShapeMismatch, "gate global features must be N x fc_dim, got " +
                                               nn::ShapeString(global.shape()));
  ExpectShape(p.global_weight.value.shape(), {d, global.dim(1)}, p.global_weight.name);
  ExpectShape(p.global_bias.value.shape(), {d}, p.global_bias.name);
  ExpectShape(p.score_weight.value.shape(), {1, d}, p.score_weight.name);
}

}  // namespace

template <typename T>
GateResult<T> GateForward(const BasicTensor<T>& local, const BasicTensor<T>& global, const GateParams<T>& params,
                          bool uniform) {
  CheckGateShapes(local, global, params);
  const size_t n = local.dim(0), c = local.dim(1), h = local.dim(2), w = local.dim(3), s = h * w;
  const size_t f = global.dim(1), d = params.local_weight.value.dim(0);
  const T* wl = params.local_weight.value.data();
  const T* wg = params.global_weight.value.data();
  const T* bg = params.global_bias.value.data();
  const T* sw = params.score_weight.value.data();

  GateResult<T> r;
  r.attended = BasicTensor<T>({n, c});
  r.map = BasicTensor<T>({n, h, w});
  if (!uniform) r.hidden = BasicTensor<T>({n, s, d});

  std::vector<T> gproj(d), li(c), scores(s);
  for (size_t b = 0; b < n; ++b) {
    const T* lb = local.data() + b * c * s;
    T* a = r.map.data() + b * s;
    if (uniform) {
      std::fill(a, a + s, T(1) / static_cast<T>(s));
    } else {
      const T* g = global.data() + b * f;
      for (size_t k = 0; k < d; ++k) {
        T acc = bg[k];
        for (size_t j = 0; j < f; ++j) acc += wg[k * f + j] * g[j];
        gproj[k] = acc;
      }
      for (size_t i = 0; i < s; ++i) {
        for (size_t ch = 0; ch < c; ++ch) li[ch] = lb[ch * s + i];
        T* hid = r.hidden.data() + (b * s + i) * d;
        T score = T(0);
        for (size_t k = 0; k < d; ++k) {
          T u = gproj[k];
          for (size_t ch = 0; ch < c; ++ch) u += wl[k * c + ch] * li[ch];
          hid[k] = std::tanh(u);
          score += sw[k] * hid[k];
        }
        scores[i] = score;
      }
      const T mx = *std::max_element(scores.begin(), scores.end());
      T z = T(0);
      for (size_t i = 0; i < s; ++i) {
        a[i] = std::exp(scores[i] - mx);
        z += a[i];
      }
      for (size_t i = 0; i < s; ++i) a[i] /= z;
    }
    T* att = r.attended.data() + b * c;
    for (size_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (size_t i = 0; i < s; ++i) acc += a[i] * lb[ch * s + i];
      att[ch] = acc;
    }
  }
  CheckFinite(r.attended, "attention gate");
  return r;
}

template <typename T>
GateInputGrads<T> GateBackward(const BasicTensor<T>& grad_attended, const BasicTensor<T>& local,
                               const BasicTensor<T>& global, GateParams<T>& params, const GateResult<T>& fwd,
                               bool uniform) {
  CheckGateShapes(local, global, params);
  const size_t n = local.dim(0), c = local.dim(1), s = local.dim(2) * local.dim(3);
  const size_t f = global.dim(1), d = params.local_weight.value.dim(0);
  ExpectShape(grad_attended.shape(), {n, c}, "gate grad_attended");

  GateInputGrads<T> g;
  g.local = BasicTensor<T>(local.shape());
  g.global = BasicTensor<T>(global.shape());
  const T* wl = params.local_weight.value.data();
  const T* wg = params.global_weight.value.data();
  const T* sw = params.score_weight.value.data();
  T* dwl = params.local_weight.grad.data();
  T* dwg = params.global_weight.grad.data();
  T* dbg = params.global_bias.grad.data();
  T* dsw = params.score_weight.grad.data();

  std::vector<T> e(s), dc(s), du(d), dusum(d), li(c);
  for (size_t b = 0; b < n; ++b) {
    const T* lb = local.data() + b * c * s;
    const T* a = fwd.map.data() + b * s;
    const T* datt = grad_attended.data() + b * c;
    T* dl = g.local.data() + b * c * s;
    for (size_t ch = 0; ch < c; ++ch)
      for (size_t i = 0; i < s; ++i) dl[ch * s + i] = a[i] * datt[ch];
    if (uniform) continue;

    T ebar = T(0);
    for (size_t i = 0; i < s; ++i) {
      T acc = T(0);
      for (size_t ch = 0; ch < c; ++ch) acc += datt[ch] * lb[ch * s + i];
      e[i] = acc;
      ebar += a[i] * acc;
    }
    for (size_t i = 0; i < s; ++i) dc[i] = a[i] * (e[i] - ebar);

    std::fill(dusum.begin(), dusum.end(), T(0));
    for (size_t i = 0; i < s; ++i) {
      const T* hid = fwd.hidden.data() + (b * s + i) * d;
      for (size_t ch = 0; ch < c; ++ch) li[ch] = lb[ch * s + i];
      for (size_t k = 0; k < d; ++k) {
        dsw[k] += dc[i] * hid[k];
        du[k] = dc[i] * sw[k] * (T(1) - hid[k] * hid[k]);
        dusum[k] += du[k];
        for (size_t ch = 0; ch < c; ++ch) dwl[k * c + ch] += du[k] * li[ch];
      }
      for (size_t ch = 0; ch < c; ++ch) {
        T acc = T(0);
        for (size_t k = 0; k < d; ++k) acc += wl[k * c + ch] * du[k];
        dl[ch * s + i] += acc;
      }
    }
    const T* gb = global.data() + b * f;
    T* dgb = g.global.data() + b * f;
    for (size_t k = 0; k < d; ++k) {
      dbg[k] += dusum[k];
      for (size_t j = 0; j < f; ++j) dwg[k * f + j] += dusum[k] * gb[j];
    }
    for (size_t j = 0; j < f; ++j) {
      T acc = T(0);
      for (size_t k = 0; k < d; ++k) acc += wg[k * f + j] * dusum[k];
      dgb[j] = acc;
    }
  }
  return g;
}

template <typename T>
AttentionHead<T>::AttentionHead(const BackboneConfig& backbone, size_t num_classes, size_t d, uint64_t seed)
    : num_classes_(num_classes), d_(d) {
  if (d == 0) throw Error(ErrorKind::kInvalidArgument, "attention.d must be positive");
  if (num_classes < 2) throw Error(ErrorKind::kInvalidArgument, "attention head needs at least 2 classes");
  const size_t c4 = backbone.block_channels[3], c5 = backbone.block_channels[4], fc = backbone.fc_dim;
  gate4_ = GateParams<T>("am.gate4", c4, fc, d);
  gate5_ = GateParams<T>("am.gate5", c5, fc, d);
  head_w_ = nn::Param<T>("am.head.weight", {num_classes, c4 + c5});
  head_b_ = nn::Param<T>("am.head.bias", {num_classes});
  Rng rng(seed);
  for (GateParams<T>* g : {&gate4_, &gate5_}) {
    HeUniformInit(g->local_weight.value, g->local_weight.value.dim(1), rng);
    HeUniformInit(g->global_weight.value, g->global_weight.value.dim(1), rng);
    HeUniformInit(g->score_weight.value, d, rng);
  }
  HeUniformInit(head_w_.value, c4 + c5, rng);
}

template <typename T>
AttentionOutput<T> AttentionHead<T>::Forward(const FeatureTaps<T>& taps) const {
  AttentionOutput<T> out;
  out.gate4 = GateForward(taps.block4, taps.fc1, gate4_, uniform_);
  out.gate5 = GateForward(taps.block5, taps.fc1, gate5_, uniform_);
  const size_t n = taps.fc1.dim(0), c4 = out.gate4.attended.dim(1), c5 = out.gate5.attended.dim(1);
  out.descriptor = BasicTensor<T>({n, c4 + c5});
  for (size_t b = 0; b < n; ++b) {
    std::copy_n(out.gate4.attended.data() + b * c4, c4, out.descriptor.data() + b * (c4 + c5));
    std::copy_n(out.gate5.attended.data() + b * c5, c5, out.descriptor.data() + b * (c4 + c5) + c4);
  }
  out.logits = nn::DenseForward(out.descriptor, head_w_.value, head_b_.value);
  return out;
}

template <typename T>
FeatureTaps<T> AttentionHead<T>::Backward(const FeatureTaps<T>& taps, const AttentionOutput<T>& out,
                                          const BasicTensor<T>& grad_logits) {
  nn::DenseGrads<T> dg = nn::DenseBackward(grad_logits, out.descriptor, head_w_.value);
  for (size_t i = 0; i < dg.weight.size(); ++i) head_w_.grad[i] += dg.weight[i];
  for (size_t i = 0; i < dg.bias.size(); ++i) head_b_.grad[i] += dg.bias[i];
  const size_t n = out.descriptor.dim(0), c4 = out.gate4.attended.dim(1), c5 = out.gate5.attended.dim(1);
  BasicTensor<T> d4({n, c4}), d5({n, c5});
  for (size_t b = 0; b < n; ++b) {
    std::copy_n(dg.input.data() + b * (c4 + c5), c4, d4.data() + b * c4);
    std::copy_n(dg.input.data() + b * (c4 + c5) + c4, c5, d5.data() + b * c5);
  }
  GateInputGrads<T> g4 = GateBackward(d4, taps.block4, taps.fc1, gate4_, out.gate4, uniform_);
  GateInputGrads<T> g5 = GateBackward(d5, taps.block5, taps.fc1, gate5_, out.gate5, uniform_);
  FeatureTaps<T> grads;
  grads.block4 = std::move(g4.local);
  grads.block5 = std::move(g5.local);
  grads.fc1 = std::move(g4.global);
  for (size_t i = 0; i < grads.fc1.size(); ++i) grads.fc1[i] += g5.global[i];
  return grads;
}

template <typename T>
std::vector<nn::Param<T>*> AttentionHead<T>::params() {
  std::vector<nn::Param<T>*> out = gate4_.all();
  for (nn::Param<T>* p : gate5_.all()) out.push_back(p);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
  return out;
}

template <typename T>
void AttentionHead<T>::zero_grad() {
  for (nn::Param<T>* p : params()) p->zero_grad();
}

template <typename T>
nn::TensorMap AttentionHead<T>::ExportTensors() const {
  nn::TensorMap out;
  for (nn::Param<T>* p : const_cast<AttentionHead*>(this)->params())
    out.emplace(p->name, p->value.template cast<float>());
  return out;
}

template <typename T>
void AttentionHead<T>::ImportTensors(const nn::TensorMap& tensors) {
  auto ps = params();
  for (nn::Param<T>* p : ps) nn::RequireTensor(tensors, p->name, p->value.shape());
  for (nn::Param<T>* p : ps) p->value = tensors.at(p->name).template cast<T>();
}

SpecImage AttentionMapImage(std::span<const float> map, size_t h, size_t w, size_t out_hw) {
  if (map.size() != h * w || h == 0 || w == 0)
    throw Error(ErrorKind::kShapeMismatch, "attention map size does not match " + std::to_string(h) + "x" +
                                               std::to_string(w));
  const int oh = static_cast<int>(out_hw);
  std::vector<float> up = ResizeBilinear(map, static_cast<int>(h), static_cast<int>(w), 1, oh, oh);
  const auto [lo_it, hi_it] = std::minmax_element(up.begin(), up.end());
  const float lo = *lo_it, hi = *hi_it;
  const bool constant = hi - lo <= 1e-6f * std::max(std::abs(hi), 1e-30f);
  SpecImage img;
  img.height = oh;
  img.width = oh;
  img.pixels.resize(up.size() * 3);
  for (size_t i = 0; i < up.size(); ++i) {
    const float level = constant ? 128.0f : std::round((up[i] - lo) / (hi - lo) * 255.0f);
    const float v = level / 255.0f;
    img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = v;
  }
  return img;
}

void ExportAttentionMap(const std::filesystem::path& path, std::span<const float> map, size_t h, size_t w,
                        size_t out_hw) {
  WritePpm(path, AttentionMapImage(map, h, w, out_hw));
}

template struct GateParams<float>;
template struct GateParams<double>;
template class AttentionHead<float>;
template class AttentionHead<double>;
template GateResult<float> GateForward(const BasicTensor<float>&, const BasicTensor<float>&,
                                       const GateParams<float>&, bool);
template GateResult<double> GateForward(const BasicTensor<double>&, const BasicTensor<double>&,
                                        const GateParams<double>&, bool);
template GateInputGrads<float> GateBackward(const BasicTensor<float>&, const BasicTensor<float>&,
                                            const BasicTensor<float>&, GateParams<float>&,
                                            const GateResult<float>&, bool);
template GateInputGrads<double> GateBackward(const BasicTensor<double>&, const BasicTensor<double>&,
                                             const BasicTensor<double>&, GateParams<double>&,
                                             const GateResult<double>&, bool);

}  // namespace specemo
