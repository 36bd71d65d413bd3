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

// VGG-style feature extractor with taps at the pre-pool activations of
// blocks 4 and 5 and at the first dense layer.
//
// Tensor names: block{i}.conv{j}.weight (O x C x 3 x 3), block{i}.conv{j}.bias,
// fc1.weight (fc_dim x flat), fc1.bias; i and j are 1-based.

#ifndef SPECEMO_BACKBONE_H_
#define SPECEMO_BACKBONE_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "specemo/nn/layers.h"
#include "specemo/nn/tensor.h"
#include "specemo/nn/weights.h"
#include "specemo/spectro.h"
#include "specemo/util.h"

namespace specemo {

struct BackboneConfig {
  std::string variant = "mini";
  std::array<size_t, 5> block_channels = {8, 16, 32, 64, 64};
  std::array<size_t, 5> convs_per_block = {1, 1, 2, 2, 2};
  size_t input_hw = 64;
  size_t fc_dim = 128;
  // Pixels in [0,1] are mapped to (p - mean[c]) * scale[c].
  std::array<float, 3> mean = {0.5f, 0.5f, 0.5f};
  std::array<float, 3> scale = {1.0f, 1.0f, 1.0f};

  static BackboneConfig Mini();
  static BackboneConfig Full();
  static BackboneConfig ForVariant(const std::string& variant);

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
  size_t flat_dim() const;
  bool operator==(const BackboneConfig&) const = default;
};

/// Full layer sequence from input to the fc1 ReLU.
std::vector<nn::LayerSpec> LayerPlan(const BackboneConfig& config);
size_t BackboneParamCount(const BackboneConfig& config);

template <typename T>
struct FeatureTaps {
  nn::BasicTensor<T> block4;  // N x C4 x H/8 x W/8
  nn::BasicTensor<T> block5;  // N x C5 x H/16 x W/16
  nn::BasicTensor<T> fc1;     // N x fc_dim, after ReLU
};

/// Everything backward needs from one forward call.
template <typename T>
struct BackboneCache {
  // conv_inputs[k] and relu_outputs[k] for the k-th conv in trunk order.
  std::vector<nn::BasicTensor<T>> conv_inputs;
  std::vector<nn::BasicTensor<T>> relu_outputs;
  std::vector<std::vector<uint32_t>> pool_argmax;
  std::vector<nn::Shape> pool_input_shapes;
  nn::BasicTensor<T> flat;
  nn::BasicTensor<T> fc1_out;
};

template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, uint64_t seed);

  const BackboneConfig& config() const { return config_; }

  /// images: N x 3 x H x W with values in [0,1].
  FeatureTaps<T> Forward(const nn::BasicTensor<T>& images, BackboneCache<T>* cache = nullptr) const;

  /// Accumulates parameter gradients from gradients on the taps. Empty tap
  /// gradients are treated as zero.
  void Backward(const BackboneCache<T>& cache, const FeatureTaps<T>& tap_grads);

  std::vector<nn::Param<T>>& params() { return params_; }
  const std::vector<nn::Param<T>>& params() const { return params_; }
  size_t param_count() const;
  void zero_grad();

  nn::TensorMap ExportTensors() const;
  /// Throws MissingTensor / ShapeMismatch; extra tensors are ignored.
  void ImportTensors(const nn::TensorMap& tensors);
  void SaveWeights(const std::filesystem::path& path) const;
  void LoadWeights(const std::filesystem::path& path);

 private:
  BackboneConfig config_;
  std::vector<nn::Param<T>> params_;  // (weight, bias) per conv, then fc1
};

/// Stacks images into an N x 3 x H x W float batch.
nn::Tensor ImageBatch(const std::vector<const SpecImage*>& images, size_t expected_hw);

/// He-uniform fill drawn in double so float and double models agree.
template <typename T>
void HeUniformInit(nn::BasicTensor<T>& weight, size_t fan_in, Rng& rng);

}  // namespace specemo

#endif  // SPECEMO_BACKBONE_H_
