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

#ifndef SPECEMO_NN_OPTIM_H_
#define SPECEMO_NN_OPTIM_H_

#include <string>
#include <vector>

#include "specemo/nn/tensor.h"

namespace specemo::nn {

enum class OptimKind { kSgdMomentum, kAdam };

std::string OptimKindName(OptimKind kind);
OptimKind ParseOptimKind(const std::string& name);

struct OptimConfig {
  OptimKind kind = OptimKind::kAdam;
  double momentum = 0.9;  // SGD only; 0 gives plain SGD
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Parameters sharing one learning rate. A group with lr == 0 is frozen and
/// its values are never written.
template <typename T>
struct ParamGroup {
  std::vector<Param<T>*> params;
  double lr = 0.0;
};

template <typename T>
class Optimizer {
 public:
  Optimizer(OptimConfig config, std::vector<ParamGroup<T>> groups);

  /// Applies one update from the accumulated gradients.
  void step();
  void zero_grad();
  size_t steps_taken() const { return t_; }
  const std::vector<ParamGroup<T>>& groups() const { return groups_; }

 private:
  OptimConfig config_;
  std::vector<ParamGroup<T>> groups_;
  // First/second moment (Adam) or velocity (SGD, first only), per parameter.
  std::vector<std::vector<std::vector<double>>> m_;
  std::vector<std::vector<std::vector<double>>> v_;
  size_t t_ = 0;
};

}  // namespace specemo::nn

#endif  // SPECEMO_NN_OPTIM_H_
