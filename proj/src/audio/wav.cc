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
#include <cstring>

#include "specemo/audio_io.h"
#include "specemo/error.h"
#include "specemo/util.h"

namespace specemo {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;
constexpr uint16_t kFormatExtensible = 0xFFFE;

uint16_t ReadU16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }
uint32_t ReadU32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void PutU16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xff));
  out.push_back(static_cast<uint8_t>(v >> 8));
}
void PutU32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}
void PutTag(std::vector<uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

struct FmtChunk {
  uint16_t format = 0;
  uint16_t channels = 0;
  uint32_t rate = 0;
  uint16_t block_align = 0;
  uint16_t bits = 0;
};

double DecodeSample(const uint8_t* p, const FmtChunk& fmt) {
  if (fmt.format == kFormatFloat) {
    float v;
    std::memcpy(&v, p, sizeof v);
    if (!std::isfinite(v)) throw Error(ErrorKind::kNonFinite, "non-finite float sample");
    return v;
  }
  switch (fmt.bits) {
    case 8:
      return (static_cast<int>(p[0]) - 128) / 128.0;
    case 16:
      return static_cast<int16_t>(ReadU16(p)) / 32768.0;
    case 24: {
      int32_t v = static_cast<int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
      if (v & 0x800000) v -= 0x1000000;
      return v / 8388608.0;
    }
  }
  return 0.0;
}

std::vector<uint8_t> EncodeWav(std::span<const float> samples, int rate, int channels,
                               bool as_float) {
  if (rate <= 0 || channels < 1 || channels > 2)
    throw Error(ErrorKind::kInvalidArgument, "bad WAV rate or channel count");
  const uint16_t bits = as_float ? 32 : 16;
  const uint16_t block_align = static_cast<uint16_t>(channels * bits / 8);
  const uint32_t data_bytes = static_cast<uint32_t>(samples.size() * (bits / 8));
  std::vector<uint8_t> out;
  out.reserve(44 + data_bytes);
  PutTag(out, "RIFF");
  PutU32(out, 36 + data_bytes);
  PutTag(out, "WAVE");
  PutTag(out, "fmt ");
  PutU32(out, 16);
  PutU16(out, as_float ? kFormatFloat : kFormatPcm);
  PutU16(out, static_cast<uint16_t>(channels));
  PutU32(out, static_cast<uint32_t>(rate));
  PutU32(out, static_cast<uint32_t>(rate) * block_align);
  PutU16(out, block_align);
  PutU16(out, bits);
  PutTag(out, "data");
  PutU32(out, data_bytes);
  for (float x : samples) {
    const float c = std::clamp(x, -1.0f, 1.0f);
    if (as_float) {
      uint32_t u;
      std::memcpy(&u, &c, sizeof u);
      PutU32(out, u);
    } else {
      long q = std::lround(static_cast<double>(c) * 32768.0);
      q = std::clamp(q, -32768L, 32767L);
      PutU16(out, static_cast<uint16_t>(static_cast<int16_t>(q)));
    }
  }
  return out;
}

}  // namespace

AudioClip DecodeWav(std::span<const uint8_t> bytes, std::string source_path) {
  const auto fail = [&](const std::string& what) -> Error {
    return Error(ErrorKind::kMalformedHeader, what + " in '" + source_path + "'");
  };
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw fail("missing RIFF/WAVE magic");

  std::optional<FmtChunk> fmt;
  const uint8_t* data = nullptr;
  size_t data_size = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* chunk = bytes.data() + pos;
    const uint32_t size = ReadU32(chunk + 4);
    const size_t body = pos + 8;
    const size_t available = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || size > available) throw fail("truncated fmt chunk");
      FmtChunk f;
      f.format = ReadU16(chunk + 8);
      f.channels = ReadU16(chunk + 10);
      f.rate = ReadU32(chunk + 12);
      f.block_align = ReadU16(chunk + 20);
      f.bits = ReadU16(chunk + 22);
      if (f.format == kFormatExtensible) {
        if (size < 40) throw fail("truncated WAVE_FORMAT_EXTENSIBLE chunk");
        f.format = ReadU16(chunk + 8 + 24);
      }
      fmt = f;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      // Streaming writers leave the size at 0xFFFFFFFF; take what is there.
      data_size = std::min<size_t>(size, available);
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!fmt) throw fail("no fmt chunk");
  if (data == nullptr) throw fail("no data chunk");
  if (fmt->rate == 0) throw fail("zero sample rate");
  if (fmt->channels == 0) throw fail("zero channel count");

  const bool pcm_ok = fmt->format == kFormatPcm &&
                      (fmt->bits == 8 || fmt->bits == 16 || fmt->bits == 24);
  const bool float_ok = fmt->format == kFormatFloat && fmt->bits == 32;
  if (!pcm_ok && !float_ok)
    throw Error(ErrorKind::kUnsupportedEncoding,
                "format tag " + std::to_string(fmt->format) + " with " +
                    std::to_string(fmt->bits) + " bits in '" + source_path + "'");
  if (fmt->channels > 2)
    throw Error(ErrorKind::kUnsupportedEncoding,
                std::to_string(fmt->channels) + " channels in '" + source_path + "'");
  const size_t bytes_per_sample = fmt->bits / 8;
  if (fmt->block_align != fmt->channels * bytes_per_sample) throw fail("inconsistent block align");

  const size_t frames = data_size / fmt->block_align;
  if (frames == 0) throw Error(ErrorKind::kEmptyAudio, "no audio frames in '" + source_path + "'");

  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(fmt->rate);
  clip.source_path = std::move(source_path);
  clip.samples.resize(frames);
  for (size_t i = 0; i < frames; ++i) {
    const uint8_t* frame = data + i * fmt->block_align;
    double acc = 0.0;
    for (size_t c = 0; c < fmt->channels; ++c) acc += DecodeSample(frame + c * bytes_per_sample, *fmt);
    clip.samples[i] = static_cast<float>(std::clamp(acc / fmt->channels, -1.0, 1.0));
  }
  return clip;
}

AudioClip LoadWav(const std::filesystem::path& path) {
  return DecodeWav(ReadFileBytes(path), path.string());
}

std::vector<uint8_t> EncodeWav16(std::span<const float> samples, int sample_rate_hz,
                                 int channels) {
  return EncodeWav(samples, sample_rate_hz, channels, false);
}

std::vector<uint8_t> EncodeWavFloat32(std::span<const float> samples, int sample_rate_hz,
                                      int channels) {
  return EncodeWav(samples, sample_rate_hz, channels, true);
}

void WriteWav16(const std::filesystem::path& path, std::span<const float> samples,
                int sample_rate_hz, int channels) {
  WriteFileBytes(path, EncodeWav16(samples, sample_rate_hz, channels));
}

AudioClip LoadCanonical(const std::filesystem::path& path, int rate_hz) {
  return Resample(LoadWav(path), rate_hz);
}

}  // namespace specemo
