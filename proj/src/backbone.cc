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

#include "specemo/backbone.h"

#include <cmath>

namespace specemo {

using nn::BasicTensor;
using nn::CheckFinite;
using nn::ExpectShape;
using nn::Padding;

BackboneConfig BackboneConfig::Mini() { return BackboneConfig{}; }

BackboneConfig BackboneConfig::Full() {
  BackboneConfig c;
  c.variant = "full";
  c.block_channels = {64, 128, 256, 512, 512};
  c.convs_per_block = {2, 2, 3, 3, 3};
  c.input_hw = 224;
  c.fc_dim = 4096;
  return c;
}

BackboneConfig BackboneConfig::ForVariant(const std::string& variant) {
  if (variant == "mini") return Mini();
  if (variant == "full") return Full();
  throw Error(ErrorKind::kInvalidArgument, "backbone.variant must be 'mini' or 'full', got '" + variant + "'");
}

void BackboneConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& msg) {
    throw Error(ErrorKind::kInvalidArgument, "backbone." + field + " " + msg);
  };
  if (input_hw == 0 || input_hw % 32 != 0) fail("input_hw", "must be a positive multiple of 32");
  for (size_t i = 0; i < 5; ++i) {
    if (block_channels[i] == 0) fail("block_channels", "entries must be positive");
    if (convs_per_block[i] == 0) fail("convs_per_block", "entries must be positive");
  }
  if (fc_dim == 0) fail("fc_dim", "must be positive");
  for (size_t c = 0; c < 3; ++c) {
    if (!std::isfinite(mean[c])) fail("mean", "must be finite");
    if (!std::isfinite(scale[c]) || scale[c] == 0.0f) fail("scale", "must be finite and non-zero");
  }
}

size_t BackboneConfig::flat_dim() const {
  const size_t s = input_hw / 32;
  return block_channels[4] * s * s;
}

std::vector<nn::LayerSpec> LayerPlan(const BackboneConfig& config) {
  config.validate();
  std::vector<nn::LayerSpec> plan;
  size_t in = 3;
  for (size_t b = 0; b < 5; ++b) {
    for (size_t j = 0; j < config.convs_per_block[b]; ++j) {
      plan.push_back({nn::LayerKind::kConv3x3, in, config.block_channels[b], Padding::kSame});
      plan.push_back({nn::LayerKind::kRelu, 0, 0, Padding::kSame});
      in = config.block_channels[b];
    }
    plan.push_back({nn::LayerKind::kMaxPool2x2, 0, 0, Padding::kSame});
  }
  plan.push_back({nn::LayerKind::kFlatten, 0, 0, Padding::kSame});
  plan.push_back({nn::LayerKind::kDense, config.flat_dim(), config.fc_dim, Padding::kSame});
  plan.push_back({nn::LayerKind::kRelu, 0, 0, Padding::kSame});
  return plan;
}

size_t BackboneParamCount(const BackboneConfig& config) {
  size_t total = 0;
  for (const auto& l : LayerPlan(config)) total += nn::LayerParamCount(l);
  return total;
}

template <typename T>
void HeUniformInit(BasicTensor<T>& weight, size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (size_t i = 0; i < weight.size(); ++i) weight[i] = static_cast<T>(rng.uniform(-limit, limit));
}

namespace {

template <typename T>
void AddInto(BasicTensor<T>& dst, const BasicTensor<T>& src) {
  ExpectShape(src.shape(), dst.shape(), "gradient");
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  size_t in = 3;
  for (size_t b = 0; b < 5; ++b) {
    for (size_t j = 0; j < config_.convs_per_block[b]; ++j) {
      const size_t out = config_.block_channels[b];
      const std::string prefix = "block" + std::to_string(b + 1) + ".conv" + std::to_string(j + 1);
      nn::Param<T> w(prefix + ".weight", {out, in, 3, 3});
      HeUniformInit(w.value, in * 9, rng);
      params_.push_back(std::move(w));
      params_.emplace_back(prefix + ".bias", nn::Shape{out});
      in = out;
    }
  }
  nn::Param<T> fw("fc1.weight", {config_.fc_dim, config_.flat_dim()});
  HeUniformInit(fw.value, config_.flat_dim(), rng);
  params_.push_back(std::move(fw));
  params_.emplace_back("fc1.bias", nn::Shape{config_.fc_dim});
}

template <typename T>
FeatureTaps<T> Backbone<T>::Forward(const BasicTensor<T>& images, BackboneCache<T>* cache) const {
  const size_t hw = config_.input_hw;
  if (images.rank() != 4 || images.dim(1) != 3 || images.dim(2) != hw || images.dim(3) != hw)
    throw Error(ErrorKind::kShapeMismatch, "backbone expects N x 3 x " + std::to_string(hw) + " x " +
                                               std::to_string(hw) + " input, got " +
                                               nn::ShapeString(images.shape()));
  if (cache) *cache = BackboneCache<T>{};

  BasicTensor<T> x(images.shape());
  const size_t plane = hw * hw;
  for (size_t n = 0; n < images.dim(0); ++n)
    for (size_t c = 0; c < 3; ++c) {
      const T m = static_cast<T>(config_.mean[c]);
      const T s = static_cast<T>(config_.scale[c]);
      const size_t base = (n * 3 + c) * plane;
      for (size_t i = 0; i < plane; ++i) x[base + i] = (images[base + i] - m) * s;
    }

  FeatureTaps<T> taps;
  size_t k = 0;
  for (size_t b = 0; b < 5; ++b) {
    for (size_t j = 0; j < config_.convs_per_block[b]; ++j, ++k) {
      BasicTensor<T> a = nn::ConvForward(x, params_[2 * k].value, params_[2 * k + 1].value, Padding::kSame);
      if (cache) cache->conv_inputs.push_back(std::move(x));
      x = nn::ReluForward(a);
      if (cache) cache->relu_outputs.push_back(x);
    }
    if (b == 3) taps.block4 = x;
    if (b == 4) taps.block5 = x;
    nn::PoolResult<T> pr = nn::MaxPoolForward(x);
    if (cache) {
      cache->pool_argmax.push_back(std::move(pr.argmax));
      cache->pool_input_shapes.push_back(x.shape());
    }
    x = std::move(pr.output);
  }
  BasicTensor<T> flat = nn::Flatten(x);
  const size_t fc = 2 * k;
  taps.fc1 = nn::ReluForward(nn::DenseForward(flat, params_[fc].value, params_[fc + 1].value));
  if (cache) {
    cache->flat = std::move(flat);
    cache->fc1_out = taps.fc1;
  }
  return taps;
}

template <typename T>
void Backbone<T>::Backward(const BackboneCache<T>& cache, const FeatureTaps<T>& tap_grads) {
  if (cache.conv_inputs.empty()) throw Error(ErrorKind::kInvalidArgument, "backbone backward needs a forward cache");
  const size_t n_conv = cache.conv_inputs.size();
  const size_t fc = 2 * n_conv;

  nn::Shape pooled = cache.pool_input_shapes[4];
  pooled[2] /= 2;
  pooled[3] /= 2;
  BasicTensor<T> g(pooled);
  if (!tap_grads.fc1.empty()) {
    BasicTensor<T> gz = nn::ReluBackward(tap_grads.fc1, cache.fc1_out);
    nn::DenseGrads<T> dg = nn::DenseBackward(gz, cache.flat, params_[fc].value);
    AddInto(params_[fc].grad, dg.weight);
    AddInto(params_[fc + 1].grad, dg.bias);
    g = dg.input.reshaped(pooled);
  }

  size_t k = n_conv;
  for (size_t bi = 5; bi-- > 0;) {
    BasicTensor<T> gp = nn::MaxPoolBackward(g, cache.pool_argmax[bi], cache.pool_input_shapes[bi]);
    if (bi == 4 && !tap_grads.block5.empty()) AddInto(gp, tap_grads.block5);
    if (bi == 3 && !tap_grads.block4.empty()) AddInto(gp, tap_grads.block4);
    for (size_t j = 0; j < config_.convs_per_block[bi]; ++j) {
      --k;
      BasicTensor<T> ga = nn::ReluBackward(gp, cache.relu_outputs[k]);
      nn::ConvGrads<T> cg = nn::ConvBackward(ga, cache.conv_inputs[k], params_[2 * k].value, Padding::kSame,
                                             /*need_input_grad=*/k > 0);
      AddInto(params_[2 * k].grad, cg.weight);
      AddInto(params_[2 * k + 1].grad, cg.bias);
      gp = std::move(cg.input);
    }
    g = std::move(gp);
  }
}

template <typename T>
size_t Backbone<T>::param_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void Backbone<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
nn::TensorMap Backbone<T>::ExportTensors() const {
  nn::TensorMap out;
  for (const auto& p : params_) out.emplace(p.name, p.value.template cast<float>());
  return out;
}

template <typename T>
void Backbone<T>::ImportTensors(const nn::TensorMap& tensors) {
  // Validate everything before touching any parameter.
  for (const auto& p : params_) nn::RequireTensor(tensors, p.name, p.value.shape());
  for (auto& p : params_) p.value = tensors.at(p.name).template cast<T>();
}

template <typename T>
void Backbone<T>::SaveWeights(const std::filesystem::path& path) const {
  nn::WeightFile f;
  f.tensors = ExportTensors();
  f.metadata = {{"variant", config_.variant},
                {"block_channels", config_.block_channels},
                {"convs_per_block", config_.convs_per_block},
                {"input_hw", config_.input_hw},
                {"fc_dim", config_.fc_dim}};
  nn::SaveWeights(path, f);
}

template <typename T>
void Backbone<T>::LoadWeights(const std::filesystem::path& path) {
  ImportTensors(nn::LoadWeights(path).tensors);
}

nn::Tensor ImageBatch(const std::vector<const SpecImage*>& images, size_t expected_hw) {
  const size_t hw = expected_hw;
  nn::Tensor out({images.size(), 3, hw, hw});
  for (size_t n = 0; n < images.size(); ++n) {
    const SpecImage& img = *images[n];
    if (static_cast<size_t>(img.height) != hw || static_cast<size_t>(img.width) != hw)
      throw Error(ErrorKind::kShapeMismatch, "image " + img.source_path + " is " + std::to_string(img.height) +
                                                 "x" + std::to_string(img.width) + ", backbone expects " +
                                                 std::to_string(hw) + "x" + std::to_string(hw));
    for (size_t c = 0; c < 3; ++c)
      for (size_t y = 0; y < hw; ++y)
        for (size_t x = 0; x < hw; ++x)
          out[((n * 3 + c) * hw + y) * hw + x] = img.pixels[(y * hw + x) * 3 + c];
  }
  return out;
}

template class Backbone<float>;
template class Backbone<double>;
template void HeUniformInit(BasicTensor<float>&, size_t, Rng&);
template void HeUniformInit(BasicTensor<double>&, size_t, Rng&);

}  // namespace specemo
