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

#include <cmath>
#include <functional>
#include <complex>

#include "doctest.h"
#include "specemo/audio_io.h"
#include "specemo/error.h"
#include "specemo/util.h"
#include "test_util.h"

using namespace specemo;

namespace {

// Hand-built canonical 44-byte header, independent of the encoder.
std::vector<uint8_t> RawWav(uint16_t format, uint16_t channels, uint32_t rate, uint16_t bits,
                            const std::vector<uint8_t>& payload) {
  std::vector<uint8_t> b;
  auto u16 = [&](uint16_t v) { b.push_back(v & 0xff); b.push_back(v >> 8); };
  auto u32 = [&](uint32_t v) { for (int i = 0; i < 4; ++i) b.push_back((v >> (8 * i)) & 0xff); };
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  tag("RIFF"); u32(36 + static_cast<uint32_t>(payload.size())); tag("WAVE");
  tag("fmt "); u32(16); u16(format); u16(channels); u32(rate);
  u32(rate * channels * bits / 8); u16(static_cast<uint16_t>(channels * bits / 8)); u16(bits);
  tag("data"); u32(static_cast<uint32_t>(payload.size()));
  b.insert(b.end(), payload.begin(), payload.end());
  return b;
}

std::vector<uint8_t> Pcm16(const std::vector<int16_t>& v) {
  std::vector<uint8_t> out;
  for (int16_t s : v) {
    out.push_back(static_cast<uint16_t>(s) & 0xff);
    out.push_back(static_cast<uint16_t>(s) >> 8);
  }
  return out;
}

ErrorKind KindOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::kIo;
}

// Independent oracle: magnitude of the DFT at bin k, computed directly.
double DftMagnitude(const std::vector<float>& x, size_t k) {
  std::complex<double> acc(0, 0);
  const double n = static_cast<double>(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    acc += static_cast<double>(x[i]) * std::polar(1.0, -2.0 * M_PI * k * i / n);
  return std::abs(acc);
}

}  // namespace

TEST_CASE("16-bit mono constant decodes by 1/32768 scaling") {
  auto bytes = RawWav(1, 1, 16000, 16, Pcm16(std::vector<int16_t>(100, 16384)));
  AudioClip clip = DecodeWav(bytes);
  CHECK(clip.sample_rate_hz == 16000);
  REQUIRE(clip.samples.size() == 100);
  for (float s : clip.samples) CHECK(s == 0.5f);
}

TEST_CASE("stereo is averaged to mono") {
  std::vector<int16_t> lr;
  for (int i = 0; i < 50; ++i) { lr.push_back(16384); lr.push_back(-16384); }
  AudioClip clip = DecodeWav(RawWav(1, 2, 22050, 16, Pcm16(lr)));
  CHECK(clip.samples.size() == 50);
  CHECK(clip.sample_rate_hz == 22050);
  for (float s : clip.samples) CHECK(s == 0.0f);
}

TEST_CASE("8-bit, 24-bit and float payloads") {
  SUBCASE("8-bit unsigned") {
    AudioClip c = DecodeWav(RawWav(1, 1, 8000, 8, {128, 192, 0}));
    CHECK(c.samples[0] == 0.0f);
    CHECK(c.samples[1] == 0.5f);
    CHECK(c.samples[2] == -1.0f);
  }
  SUBCASE("24-bit signed") {
    // 0x400000 = 2^22 -> 0.5, 0xC00000 -> -0.5
    AudioClip c = DecodeWav(RawWav(1, 1, 8000, 24, {0x00, 0x00, 0x40, 0x00, 0x00, 0xC0}));
    CHECK(c.samples[0] == 0.5f);
    CHECK(c.samples[1] == -0.5f);
  }
  SUBCASE("32-bit float") {
    const float vals[2] = {0.25f, -0.75f};
    std::vector<uint8_t> payload(reinterpret_cast<const uint8_t*>(vals),
                                 reinterpret_cast<const uint8_t*>(vals) + sizeof vals);
    AudioClip c = DecodeWav(RawWav(3, 1, 8000, 32, payload));
    CHECK(c.samples[0] == 0.25f);
    CHECK(c.samples[1] == -0.75f);
  }
}

TEST_CASE("header validation") {
  auto good = RawWav(1, 1, 16000, 16, Pcm16({1, 2, 3}));
  SUBCASE("corrupted RIFF magic") {
    auto b = good;
    b[0] = 'X';
    CHECK(KindOf([&] { DecodeWav(b); }) == ErrorKind::kMalformedHeader);
  }
  SUBCASE("compressed encoding") {
    auto b = RawWav(2, 1, 16000, 4, {1, 2, 3, 4});
    CHECK(KindOf([&] { DecodeWav(b); }) == ErrorKind::kUnsupportedEncoding);
  }
  SUBCASE("no frames") {
    auto b = RawWav(1, 1, 16000, 16, {});
    CHECK(KindOf([&] { DecodeWav(b); }) == ErrorKind::kEmptyAudio);
  }
  SUBCASE("truncated") {
    std::vector<uint8_t> b(good.begin(), good.begin() + 20);
    CHECK(KindOf([&] { DecodeWav(b); }) == ErrorKind::kMalformedHeader);
  }
}

TEST_CASE("write then load is identity up to one LSB") {
  testing::TempDir dir("wav");
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> x(1 + rng.below(2000));
    for (float& v : x) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    const auto path = dir.path() / "x.wav";
    WriteWav16(path, x, 16000);
    AudioClip c = LoadWav(path);
    REQUIRE(c.samples.size() == x.size());
    for (size_t i = 0; i < x.size(); ++i) CHECK(std::abs(c.samples[i] - x[i]) <= 1.0f / 32768.0f);
  }
}

TEST_CASE("resample identity is bit-identical") {
  AudioClip clip;
  clip.sample_rate_hz = 16000;
  Rng rng(3);
  for (int i = 0; i < 321; ++i) clip.samples.push_back(static_cast<float>(rng.uniform(-1, 1)));
  AudioClip out = Resample(clip, 16000);
  CHECK(out.samples == clip.samples);
  CHECK(out.sample_rate_hz == 16000);
}

TEST_CASE("resampled 1 kHz sine keeps its dominant DFT bin") {
  AudioClip clip;
  clip.sample_rate_hz = 48000;
  for (int i = 0; i < 48000; ++i)
    clip.samples.push_back(static_cast<float>(0.5 * std::sin(2 * M_PI * 1000.0 * i / 48000.0)));
  AudioClip out = Resample(clip, 16000);
  REQUIRE(out.samples.size() == 16000);
  // Analyse a 1600-sample stretch away from the edges.
  std::vector<float> seg(out.samples.begin() + 4000, out.samples.begin() + 5600);
  const size_t n = seg.size();
  const size_t expected = static_cast<size_t>(std::lround(1000.0 * n / 16000.0));
  size_t best = 0;
  double best_mag = -1;
  for (size_t k = 0; k <= n / 2; ++k) {
    const double m = DftMagnitude(seg, k);
    if (m > best_mag) { best_mag = m; best = k; }
  }
  CHECK(best == expected);
}

TEST_CASE("DC upsampled 8k -> 16k stays flat away from the edges") {
  AudioClip clip;
  clip.sample_rate_hz = 8000;
  clip.samples.assign(4000, 0.25f);
  AudioClip out = Resample(clip, 16000);
  REQUIRE(out.samples.size() == 8000);
  for (size_t i = 128; i + 128 < out.samples.size(); ++i)
    CHECK(std::abs(out.samples[i] - 0.25f) < 1e-3);
}

TEST_CASE("resample preserves duration within one output period") {
  Rng rng(5);
  const int rates[] = {8000, 11025, 16000, 22050, 44100, 48000};
  for (int trial = 0; trial < 40; ++trial) {
    AudioClip clip;
    clip.sample_rate_hz = rates[rng.below(6)];
    clip.samples.assign(1 + rng.below(3000), 0.1f);
    const int target = rates[rng.below(6)];
    AudioClip out = Resample(clip, target);
    CHECK(std::abs(out.duration_seconds() - clip.duration_seconds()) <= 1.0 / target + 1e-12);
    for (float s : out.samples) CHECK((std::isfinite(s) && s >= -1.0f && s <= 1.0f));
  }
}

TEST_CASE("manifest parsing") {
  SUBCASE("happiness maps to JOY, missing style is none") {
    auto m = ParseManifest("path,label,speaker,style\na.wav,happiness,S01,\n", "x", "");
    REQUIRE(m.samples.size() == 1);
    CHECK(m.samples[0].label == Emotion::kJoy);
    CHECK(m.samples[0].speaker_id == "S01");
    CHECK(m.samples[0].style == Style::kNone);
  }
  SUBCASE("styled neutral") {
    auto m = ParseManifest("path,label,speaker,style\nb.wav,neutral,S02,loud\n", "x", "");
    CHECK(m.samples[0].label == Emotion::kNeutral);
    CHECK(m.samples[0].style == Style::kLoud);
  }
  SUBCASE("labels are case-folded") {
    auto m = ParseManifest("path,label,speaker,style\nb.wav,SaDnEsS,S02,\n", "x", "");
    CHECK(m.samples[0].label == Emotion::kSadness);
  }
  SUBCASE("unknown label") {
    CHECK(KindOf([] { ParseManifest("path,label,speaker,style\nc.wav,boredom,S03,\n", "x", ""); }) ==
          ErrorKind::kUnknownLabel);
  }
  SUBCASE("missing column") {
    CHECK(KindOf([] { ParseManifest("path,label,style\nc.wav,anger,\n", "x", ""); }) ==
          ErrorKind::kMissingColumn);
  }
  SUBCASE("duplicate path") {
    CHECK(KindOf([] {
            ParseManifest("path,label,speaker,style\nc.wav,anger,S1,\nc.wav,fear,S2,\n", "x", "");
          }) == ErrorKind::kDuplicatePath);
  }
  SUBCASE("style only on neutral") {
    CHECK(KindOf([] { ParseManifest("path,label,speaker,style\nc.wav,anger,S1,fast\n", "x", ""); }) ==
          ErrorKind::kInvalidStyle);
  }
}

TEST_CASE("manifest round trip is idempotent") {
  Rng rng(9);
  const char* styles[] = {"fast", "slow", "soft", "loud", "normal", ""};
  for (int trial = 0; trial < 20; ++trial) {
    std::string csv = "path,label,speaker,style\n";
    const int rows = 1 + static_cast<int>(rng.below(30));
    for (int r = 0; r < rows; ++r) {
      const Emotion e = AllEmotions()[rng.below(7)];
      csv += "f" + std::to_string(r) + ".wav," + ToLower(EmotionName(e)) + ",S" +
             std::to_string(rng.below(5)) + "," +
             (e == Emotion::kNeutral ? styles[rng.below(6)] : "") + "\n";
    }
    auto a = ParseManifest(csv, "m", "");
    auto b = ParseManifest(SerializeManifest(a), "m", "");
    CHECK(a == b);
    CHECK(SerializeManifest(a) == SerializeManifest(b));
  }
}

TEST_CASE("synthetic corpus") {
  testing::TempDir d1("syn1"), d2("syn2");
  SynthSpec spec;
  spec.classes = 4;
  spec.speakers = 5;
  spec.clips = 2;
  spec.seed = 7;
  auto m1 = SynthDataset(spec, d1.path());
  auto m2 = SynthDataset(spec, d2.path());
  CHECK(m1.samples.size() == 40);
  CHECK(ReadFileBytes(d1.path() / "manifest.csv") == ReadFileBytes(d2.path() / "manifest.csv"));
  for (const auto& s : m1.samples) {
    CHECK(ReadFileBytes(m1.resolve(s)) == ReadFileBytes(m2.resolve(s)));
    AudioClip c = LoadWav(m1.resolve(s));
    CHECK(c.sample_rate_hz == kCanonicalRateHz);
    CHECK(!c.samples.empty());
  }
  auto reloaded = LoadManifest(d1.path() / "manifest.csv");
  CHECK(reloaded.samples == m1.samples);

  SynthSpec small;
  small.classes = 2;
  small.speakers = 2;
  small.clips = 2;
  testing::TempDir d3("syn3");
  CHECK(SynthDataset(small, d3.path()).samples.size() == 8);

  small.speakers = 1;
  CHECK(KindOf([&] { SynthDataset(small, d3.path()); }) == ErrorKind::kInvalidArgument);
}
