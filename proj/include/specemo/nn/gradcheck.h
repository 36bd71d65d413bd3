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

#ifndef SPECEMO_NN_GRADCHECK_H_
#define SPECEMO_NN_GRADCHECK_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "specemo/nn/tensor.h"

namespace specemo::nn {

/// One tensor to probe: `value` is perturbed in place and restored,
/// `analytic` holds the gradient under test.
struct GradTarget {
  std::string name;
  Tensor64* value = nullptr;
  const Tensor64* analytic = nullptr;
};

struct GradCheckOptions {
  double eps = 1e-5;
  size_t max_coords = 200;
  uint64_t seed = 0;
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is ~0 are judged on absolute error instead.
  double magnitude_floor = 1e-6;
  // Drop probes whose +/-eps evaluations change a ReLU mask or pool argmax.
  bool exclude_kinks = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t checked = 0;
  size_t skipped_kinks = 0;
  std::string worst;  // "name[index]: analytic vs numeric"
};

/// Central differences on up to max_coords coordinates, drawn round-robin
/// over the targets so every tensor is covered. `loss` must re-run the
/// forward pass from the current target values.
GradCheckResult GradCheck(std::span<const GradTarget> targets, const std::function<double()>& loss,
                          const GradCheckOptions& options = {});

}  // namespace specemo::nn

#endif  // SPECEMO_NN_GRADCHECK_H_
