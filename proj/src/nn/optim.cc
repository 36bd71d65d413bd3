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

#include "specemo/nn/optim.h"

#include <cmath>

namespace specemo::nn {

std::string OptimKindName(OptimKind kind) {
  return kind == OptimKind::kAdam ? "adam" : "sgd_momentum";
}

OptimKind ParseOptimKind(const std::string& name) {
  if (name == "adam") return OptimKind::kAdam;
  if (name == "sgd_momentum" || name == "sgd") return OptimKind::kSgdMomentum;
  throw Error(ErrorKind::kInvalidArgument, "unknown optimizer '" + name + "'");
}

template <typename T>
Optimizer<T>::Optimizer(OptimConfig config, std::vector<ParamGroup<T>> groups)
    : config_(config), groups_(std::move(groups)) {
  for (const auto& g : groups_) {
    if (!(g.lr >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "learning rate must be >= 0");
    auto& gm = m_.emplace_back();
    auto& gv = v_.emplace_back();
    for (const Param<T>* p : g.params) {
      gm.emplace_back(p->value.size(), 0.0);
      gv.emplace_back(config_.kind == OptimKind::kAdam ? p->value.size() : 0, 0.0);
    }
  }
}

template <typename T>
void Optimizer<T>::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    const double lr = groups_[gi].lr;
    if (lr == 0.0) continue;
    for (size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Param<T>& p = *groups_[gi].params[pi];
      std::vector<double>& m = m_[gi][pi];
      std::vector<double>& v = v_[gi][pi];
      for (size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        double update;
        if (config_.kind == OptimKind::kAdam) {
          m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
          v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
          update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
        } else {
          m[i] = config_.momentum * m[i] + g;
          update = lr * m[i];
        }
        p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - update);
      }
    }
  }
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& g : groups_)
    for (Param<T>* p : g.params) p->zero_grad();
}

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace specemo::nn
