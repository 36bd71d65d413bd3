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

// Forward/backward kernels for the VGG layer set. All images are NCHW.
// Every forward result is checked for NaN/Inf. Reductions run in a fixed
// order, so results do not depend on how callers batch or schedule work.

#ifndef SPECEMO_NN_LAYERS_H_
#define SPECEMO_NN_LAYERS_H_

#include <cstdint>
#include <span>
#include <vector>

#include "specemo/nn/tensor.h"

namespace specemo::nn {

enum class Padding { kSame, kValid };

enum class LayerKind { kConv3x3, kMaxPool2x2, kRelu, kDense, kFlatten, kSoftmax };

struct LayerSpec {
  LayerKind kind;
  size_t in = 0;   // channels for conv, features for dense
  size_t out = 0;
  Padding padding = Padding::kSame;
  bool operator==(const LayerSpec&) const = default;
};

/// Learnable parameter count of one layer (weights plus biases).
size_t LayerParamCount(const LayerSpec& spec);

/// weight: O x C x 3 x 3, bias: O.
template <typename T>
BasicTensor<T> ConvForward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                           const BasicTensor<T>& bias, Padding padding);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;  // empty when not requested
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

template <typename T>
ConvGrads<T> ConvBackward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                          const BasicTensor<T>& weight, Padding padding, bool need_input_grad = true);

template <typename T>
struct PoolResult {
  BasicTensor<T> output;
  std::vector<uint32_t> argmax;  // flat input index per output element
};

/// 2x2 stride-2 max pooling. Ties go to the first element in row-major
/// order. Throws OddSpatialDim on odd H or W.
template <typename T>
PoolResult<T> MaxPoolForward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> MaxPoolBackward(const BasicTensor<T>& grad_out, std::span<const uint32_t> argmax,
                               const Shape& input_shape);

template <typename T>
BasicTensor<T> ReluForward(const BasicTensor<T>& x);

/// `output` is the forward result; the subgradient at 0 is 0.
template <typename T>
BasicTensor<T> ReluBackward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);

/// x: N x D, weight: O x D, bias: O.
template <typename T>
BasicTensor<T> DenseForward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                            const BasicTensor<T>& bias);

template <typename T>
struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

template <typename T>
DenseGrads<T> DenseBackward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                            const BasicTensor<T>& weight);

/// N x ... -> N x prod(...).
template <typename T>
BasicTensor<T> Flatten(const BasicTensor<T>& x);

/// Row-wise softmax of an N x K tensor.
template <typename T>
BasicTensor<T> Softmax(const BasicTensor<T>& logits);

template <typename T>
struct LossAndGrad {
  double loss = 0.0;
  BasicTensor<T> grad;
};

/// Mean cross-entropy over the batch; grad = (softmax - onehot) / N.
template <typename T>
LossAndGrad<T> SoftmaxCrossEntropy(const BasicTensor<T>& logits, std::span<const int> labels);

/// Argmax per row, ties to the lower index.
template <typename T>
std::vector<int> ArgmaxRows(const BasicTensor<T>& scores);

/// While alive, every ReLU mask and pool argmax computed on this thread is
/// folded into a hash. Gradient checks compare signatures at x +/- eps to
/// drop probes whose perturbation crosses a kink.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  void reset() { hash_ = 1469598103934665603ULL; }
  uint64_t signature() const { return hash_; }

  static void Record(uint64_t value);

 private:
  KinkProbe* previous_;
  uint64_t hash_ = 1469598103934665603ULL;
};

}  // namespace specemo::nn

#endif  // SPECEMO_NN_LAYERS_H_
