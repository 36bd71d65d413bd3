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

// Desk-scale test corpus. Every class owns a frequency band and a recipe
// (harmonic tone, chirp, tremolo, narrowband noise), so spectrogram images
// of different classes differ in which rows light up.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "specemo/audio_io.h"
#include "specemo/error.h"
#include "specemo/util.h"

namespace specemo {

namespace {

double ClassCenterHz(int k) { return 350.0 * std::pow(1.55, k); }

std::string ClipFileName(int k, int s, int n) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "c%d_s%02d_n%02d.wav", k, s + 1, n + 1);
  return buf;
}

std::string SpeakerId(int s) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "S%02d", s + 1);
  return buf;
}

}  // namespace

std::vector<float> SynthClip(const SynthSpec& spec, int k, int s, int n) {
  Rng rng(SplitMix64(SplitMix64(SplitMix64(spec.seed) ^ static_cast<uint64_t>(k)) ^ static_cast<uint64_t>(s) << 8) ^
          static_cast<uint64_t>(n) << 16);
  const double rate = spec.sample_rate_hz;
  const double speaker_pos = spec.speakers > 1 ? static_cast<double>(s) / (spec.speakers - 1) : 0.5;
  const double pitch = (1.0 + 0.06 * (speaker_pos - 0.5)) * rng.uniform(0.99, 1.01);
  const double tempo = 0.85 + 0.3 * speaker_pos;
  const double amplitude = 0.35 + 0.25 * speaker_pos * rng.uniform(0.8, 1.0);
  const double duration = rng.uniform(spec.min_duration_s, spec.max_duration_s);
  const size_t len = static_cast<size_t>(duration * rate);
  const double f0 = ClassCenterHz(k) * pitch;

  // Narrowband-noise partials for recipe 3.
  std::array<double, 8> nb_freq{}, nb_phase{};
  for (size_t i = 0; i < nb_freq.size(); ++i) {
    nb_freq[i] = f0 * rng.uniform(0.92, 1.08);
    nb_phase[i] = rng.uniform(0.0, 2.0 * M_PI);
  }

  std::vector<float> out(len);
  const double ramp = 0.02 * rate;
  double chirp_phase = 0.0;
  for (size_t i = 0; i < len; ++i) {
    const double t = i / rate;
    double v = 0.0;
    switch (k % 4) {
      case 0:
        v = std::sin(2 * M_PI * f0 * t) + 0.4 * std::sin(2 * M_PI * 2 * f0 * t) +
            0.15 * std::sin(2 * M_PI * 3 * f0 * t);
        v /= 1.55;
        break;
      case 1: {
        const double f = f0 * (0.85 + 0.3 * t / duration);
        chirp_phase += 2 * M_PI * f / rate;
        v = std::sin(chirp_phase);
        break;
      }
      case 2:
        v = std::sin(2 * M_PI * f0 * t) * (0.6 + 0.4 * std::sin(2 * M_PI * 6.0 * tempo * t));
        break;
      default:
        for (size_t p = 0; p < nb_freq.size(); ++p) v += std::sin(2 * M_PI * nb_freq[p] * t + nb_phase[p]);
        v /= 4.0;
        break;
    }
    double env = 1.0;
    if (i < ramp) env = 0.5 - 0.5 * std::cos(M_PI * i / ramp);
    if (len - 1 - i < ramp) env = std::min(env, 0.5 - 0.5 * std::cos(M_PI * (len - 1 - i) / ramp));
    const double noise = 0.005 * (2.0 * rng.uniform() - 1.0);
    out[i] = static_cast<float>(std::clamp(amplitude * env * v + noise, -1.0, 1.0));
  }
  return out;
}

DatasetManifest SynthDataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  if (spec.classes < 2 || spec.classes > kNumEmotions)
    throw Error(ErrorKind::kInvalidArgument, "synth needs 2..7 classes");
  if (spec.speakers < 2) throw Error(ErrorKind::kInvalidArgument, "synth needs >= 2 speakers");
  if (spec.clips < 2) throw Error(ErrorKind::kInvalidArgument, "synth needs >= 2 clips per cell");
  if (spec.sample_rate_hz <= 0 || spec.min_duration_s <= 0 || spec.max_duration_s < spec.min_duration_s)
    throw Error(ErrorKind::kInvalidArgument, "bad synth rate or durations");

  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.name = "synth";
  m.base_dir = out_dir;
  for (int k = 0; k < spec.classes; ++k) {
    for (int s = 0; s < spec.speakers; ++s) {
      for (int n = 0; n < spec.clips; ++n) {
        LabeledSample sample;
        sample.path = ClipFileName(k, s, n);
        sample.label = AllEmotions()[static_cast<size_t>(k)];
        sample.speaker_id = SpeakerId(s);
        WriteWav16(out_dir / sample.path, SynthClip(spec, k, s, n), spec.sample_rate_hz);
        m.samples.push_back(std::move(sample));
      }
    }
  }
  m.refresh_label_set();
  SaveManifest(out_dir / "manifest.csv", m);
  return m;
}

}  // namespace specemo
