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

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <vector>

#include "specemo/audio_io.h"
#include "specemo/error.h"

namespace specemo {

namespace {

constexpr int kTaps = 64;
constexpr double kKaiserBeta = 8.0;

double Sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = M_PI * x;
  return std::sin(px) / px;
}

}  // namespace

AudioClip Resample(const AudioClip& clip, int target_hz) {
  if (target_hz <= 0) throw Error(ErrorKind::kInvalidArgument, "target rate must be positive");
  if (clip.sample_rate_hz <= 0) throw Error(ErrorKind::kInvalidArgument, "clip has no sample rate");
  if (target_hz == clip.sample_rate_hz) return clip;

  const int64_t n_in = static_cast<int64_t>(clip.samples.size());
  const int64_t src = clip.sample_rate_hz;
  const int64_t dst = target_hz;
  const int64_t n_out = std::max<int64_t>(1, (n_in * dst + src / 2) / src);

  // Cutoff relative to the source Nyquist; the kernel widens when
  // downsampling so it always spans kTaps zero crossings of its own sinc.
  const double cutoff = std::min(1.0, static_cast<double>(dst) / static_cast<double>(src));
  const double half_width = 0.5 * kTaps / cutoff;
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);

  AudioClip out;
  out.sample_rate_hz = target_hz;
  out.source_path = clip.source_path;
  out.samples.resize(static_cast<size_t>(n_out));

  // The kernel depends only on the fractional read position, which cycles
  // through at most dst / gcd(src, dst) values; build each phase once.
  struct Kernel {
    int64_t first = 0;  // offset of the first tap from floor(t)
    std::vector<double> weights;
    double norm = 0.0;
  };
  std::unordered_map<int64_t, Kernel> kernels;
  const auto kernel_for = [&](int64_t rem) -> const Kernel& {
    auto it = kernels.find(rem);
    if (it != kernels.end()) return it->second;
    const double frac = static_cast<double>(rem) / static_cast<double>(dst);
    Kernel k;
    k.first = static_cast<int64_t>(std::ceil(frac - half_width));
    const int64_t last = static_cast<int64_t>(std::floor(frac + half_width));
    for (int64_t j = k.first; j <= last; ++j) {
      const double x = frac - static_cast<double>(j);
      const double r = x / half_width;
      const double window =
          std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      const double w = cutoff * Sinc(cutoff * x) * window;
      k.weights.push_back(w);
      k.norm += w;
    }
    return kernels.emplace(rem, std::move(k)).first->second;
  };

  for (int64_t n = 0; n < n_out; ++n) {
    const int64_t base = (n * src) / dst;
    const Kernel& k = kernel_for((n * src) % dst);
    // Unit DC gain; samples outside the clip count as zeros.
    double acc = 0.0;
    for (size_t j = 0; j < k.weights.size(); ++j) {
      const int64_t idx = base + k.first + static_cast<int64_t>(j);
      if (idx >= 0 && idx < n_in) acc += k.weights[j] * clip.samples[static_cast<size_t>(idx)];
    }
    out.samples[static_cast<size_t>(n)] = static_cast<float>(std::clamp(acc / k.norm, -1.0, 1.0));
  }
  return out;
}

}  // namespace specemo
