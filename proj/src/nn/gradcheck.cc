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

#include "specemo/nn/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "specemo/nn/layers.h"
#include "specemo/util.h"

namespace specemo::nn {

GradCheckResult GradCheck(std::span<const GradTarget> targets, const std::function<double()>& loss,
                          const GradCheckOptions& options) {
  GradCheckResult result;
  size_t total = 0;
  for (const auto& t : targets) {
    if (t.value == nullptr || t.analytic == nullptr || t.value->shape() != t.analytic->shape())
      throw Error(ErrorKind::kShapeMismatch, "grad check target '" + t.name + "' is inconsistent");
    total += t.value->size();
  }
  if (total == 0) return result;

  Rng rng(options.seed);
  KinkProbe probe;
  probe.reset();
  loss();
  const uint64_t base_signature = probe.signature();

  std::vector<std::unordered_set<size_t>> visited(targets.size());
  size_t exhausted = 0;
  std::vector<bool> done(targets.size(), false);
  size_t ti = 0;
  while (result.checked < options.max_coords && exhausted < targets.size()) {
    const GradTarget& t = targets[ti];
    const size_t this_target = ti;
    ti = (ti + 1) % targets.size();
    if (done[this_target]) continue;
    if (visited[this_target].size() == t.value->size()) {
      done[this_target] = true;
      ++exhausted;
      continue;
    }
    size_t idx;
    do {
      idx = static_cast<size_t>(rng.below(t.value->size()));
    } while (visited[this_target].count(idx));
    visited[this_target].insert(idx);

    double& x = (*t.value)[idx];
    const double saved = x;
    x = saved + options.eps;
    probe.reset();
    const double up = loss();
    const uint64_t sig_up = probe.signature();
    x = saved - options.eps;
    probe.reset();
    const double down = loss();
    const uint64_t sig_down = probe.signature();
    x = saved;

    if (options.exclude_kinks && (sig_up != base_signature || sig_down != base_signature)) {
      ++result.skipped_kinks;
      continue;
    }
    const double numeric = (up - down) / (2.0 * options.eps);
    const double analytic = (*t.analytic)[idx];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), options.magnitude_floor});
    const double rel = std::abs(numeric - analytic) / denom;
    ++result.checked;
    if (rel > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = rel;
      std::ostringstream os;
      os.precision(10);
      os << t.name << "[" << idx << "]: analytic " << analytic << " vs numeric " << numeric;
      result.worst = os.str();
    }
  }
  return result;
}

}  // namespace specemo::nn
