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

// Attention head over the block-4 and block-5 taps.
//
// For each spatial site i of a local map L (C x S) and global vector g:
//   u_i = Wl l_i + Wg g + bg,  c_i = s . tanh(u_i),  a = softmax(c),
//   attended = sum_i a_i l_i.
// Logits = head([attended4, attended5]).
//
// Tensor names: am.gate{4,5}.local.weight (d x C), am.gate{4,5}.global.weight
// (d x fc_dim), am.gate{4,5}.global.bias (d), am.gate{4,5}.score.weight
// (1 x d), am.head.weight (K x (C4 + C5)), am.head.bias (K).

#ifndef SPECEMO_ATTENTION_H_
#define SPECEMO_ATTENTION_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "specemo/backbone.h"
#include "specemo/nn/tensor.h"
#include "specemo/nn/weights.h"
#include "specemo/spectro.h"

namespace specemo {

template <typename T>
struct GateParams {
  nn::Param<T> local_weight;
  nn::Param<T> global_weight;
  nn::Param<T> global_bias;
  nn::Param<T> score_weight;

  GateParams() = default;
  GateParams(const std::string& prefix, size_t channels, size_t fc_dim, size_t d);
  std::vector<nn::Param<T>*> all();
};

template <typename T>
struct GateResult {
  nn::BasicTensor<T> attended;  // N x C
  nn::BasicTensor<T> map;       // N x H x W, each sample sums to 1
  nn::BasicTensor<T> hidden;    // N x S x d, tanh(u); empty when uniform
};

/// local: N x C x H x W, global: N x fc_dim. With `uniform` the scores are
/// skipped and every site gets weight 1/(H*W).
template <typename T>
GateResult<T> GateForward(const nn::BasicTensor<T>& local, const nn::BasicTensor<T>& global,
                          const GateParams<T>& params, bool uniform = false);

template <typename T>
struct GateInputGrads {
  nn::BasicTensor<T> local;
  nn::BasicTensor<T> global;
};

/// Accumulates parameter gradients into `params` and returns input grads.
template <typename T>
GateInputGrads<T> GateBackward(const nn::BasicTensor<T>& grad_attended, const nn::BasicTensor<T>& local,
                               const nn::BasicTensor<T>& global, GateParams<T>& params,
                               const GateResult<T>& forward, bool uniform = false);

template <typename T>
struct AttentionOutput {
  GateResult<T> gate4;
  GateResult<T> gate5;
  nn::BasicTensor<T> descriptor;  // N x (C4 + C5)
  nn::BasicTensor<T> logits;      // N x K
};

template <typename T>
class AttentionHead {
 public:
  AttentionHead(const BackboneConfig& backbone, size_t num_classes, size_t d, uint64_t seed);

  AttentionOutput<T> Forward(const FeatureTaps<T>& taps) const;
  /// Returns gradients on the taps (block4, block5, fc1) and accumulates
  /// parameter gradients.
  FeatureTaps<T> Backward(const FeatureTaps<T>& taps, const AttentionOutput<T>& out,
                          const nn::BasicTensor<T>& grad_logits);

  /// Replace both maps with uniform weights (ablation).
  void set_uniform(bool uniform) { uniform_ = uniform; }
  bool uniform() const { return uniform_; }
  size_t num_classes() const { return num_classes_; }
  size_t d() const { return d_; }

  GateParams<T>& gate4() { return gate4_; }
  GateParams<T>& gate5() { return gate5_; }
  nn::Param<T>& head_weight() { return head_w_; }
  nn::Param<T>& head_bias() { return head_b_; }
  std::vector<nn::Param<T>*> params();
  void zero_grad();

  nn::TensorMap ExportTensors() const;
  void ImportTensors(const nn::TensorMap& tensors);

 private:
  size_t num_classes_;
  size_t d_;
  bool uniform_ = false;
  GateParams<T> gate4_;
  GateParams<T> gate5_;
  nn::Param<T> head_w_;
  nn::Param<T> head_b_;
};

/// Bilinear upsample of one H x W map to out_hw x out_hw and min-max stretch
/// to [0, 255]. A constant map becomes uniform gray 128.
SpecImage AttentionMapImage(std::span<const float> map, size_t h, size_t w, size_t out_hw);
void ExportAttentionMap(const std::filesystem::path& path, std::span<const float> map, size_t h, size_t w,
                        size_t out_hw);

}  // namespace specemo

#endif  // SPECEMO_ATTENTION_H_
