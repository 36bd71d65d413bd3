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

#ifndef SPECEMO_AUDIO_IO_H_
#define SPECEMO_AUDIO_IO_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace specemo {

inline constexpr int kCanonicalRateHz = 16000;

/// Decoded mono PCM, samples in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate_hz = 0;
  std::string source_path;

  double duration_seconds() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
  }
};

enum class Emotion { kAnger = 0, kDisgust, kFear, kJoy, kNeutral, kSadness, kSurprise };
inline constexpr int kNumEmotions = 7;

enum class Style { kNone = 0, kFast, kSlow, kSoft, kLoud, kNormal };

std::string_view EmotionName(Emotion e);   // "ANGER", ...
std::string_view StyleName(Style s);       // "" for kNone, else lower-case
/// Case-insensitive; accepts "happiness" as JOY. Throws UnknownLabel.
Emotion ParseEmotion(std::string_view text);
/// Empty text means kNone. Throws InvalidStyle.
Style ParseStyle(std::string_view text);
const std::array<Emotion, kNumEmotions>& AllEmotions();

struct LabeledSample {
  std::string path;  // as written in the manifest
  Emotion label = Emotion::kNeutral;
  std::string speaker_id;
  Style style = Style::kNone;

  bool operator==(const LabeledSample&) const = default;
};

struct DatasetManifest {
  std::string name;
  std::vector<LabeledSample> samples;
  // Labels present in `samples`, in canonical order. Class index k of every
  // model trained on this manifest refers to label_set[k].
  std::vector<Emotion> label_set;
  // Relative sample paths are resolved against this directory.
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const LabeledSample& s) const;
  int label_index(Emotion e) const;  // -1 when absent
  void refresh_label_set();

  bool operator==(const DatasetManifest& o) const {
    return name == o.name && samples == o.samples && label_set == o.label_set;
  }
};

// WAV (RIFF) codec. Reads 8/16/24-bit PCM and 32-bit float, mono or stereo.
AudioClip LoadWav(const std::filesystem::path& path);
AudioClip DecodeWav(std::span<const uint8_t> bytes, std::string source_path = "");
void WriteWav16(const std::filesystem::path& path, std::span<const float> samples,
                int sample_rate_hz, int channels = 1);
std::vector<uint8_t> EncodeWav16(std::span<const float> samples, int sample_rate_hz,
                                 int channels = 1);
std::vector<uint8_t> EncodeWavFloat32(std::span<const float> samples, int sample_rate_hz,
                                      int channels = 1);

/// Band-limited resampling with a Kaiser-windowed sinc kernel (64 taps at
/// the kernel's own cutoff). Output length is round(n * target / source);
/// target == source returns the clip unchanged.
AudioClip Resample(const AudioClip& clip, int target_hz);

/// LoadWav followed by resampling to the canonical rate.
AudioClip LoadCanonical(const std::filesystem::path& path, int rate_hz = kCanonicalRateHz);

DatasetManifest LoadManifest(const std::filesystem::path& path);
DatasetManifest ParseManifest(std::string_view csv_text, std::string name,
                              std::filesystem::path base_dir);
std::string SerializeManifest(const DatasetManifest& manifest);
void SaveManifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct SynthSpec {
  int classes = 4;
  int speakers = 5;
  int clips = 2;  // per (class, speaker)
  uint64_t seed = 7;
  int sample_rate_hz = kCanonicalRateHz;
  double min_duration_s = 0.5;
  double max_duration_s = 0.9;
};

/// Writes `manifest.csv` plus one 16-bit WAV per clip under `out_dir`.
/// Class k is a distinct acoustic recipe centred on its own frequency band;
/// speakers vary pitch, amplitude and tempo slightly.
DatasetManifest SynthDataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// The in-memory waveform SynthDataset would write for one clip.
std::vector<float> SynthClip(const SynthSpec& spec, int class_index, int speaker_index,
                             int clip_index);

}  // namespace specemo

#endif  // SPECEMO_AUDIO_IO_H_
