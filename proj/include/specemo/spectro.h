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

// Audio -> rendered Mel-spectrogram raster.
//
// The chain is: Hann-windowed STFT, power, triangular Mel filterbank,
// log power relative to the clip maximum, linear mapping of
// [db_floor, 0] to the colormap, bilinear resize to the image size.
// Everything up to the final float image is computed in double.

#ifndef SPECEMO_SPECTRO_H_
#define SPECEMO_SPECTRO_H_

#include <array>
#include <complex>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "specemo/audio_io.h"

namespace specemo {

struct SpectroParams {
  double window_ms = 32.0;
  double hop_ms = 10.0;
  int fft_len = 1024;
  int n_mels = 128;
  double fmin_hz = 0.0;
  double fmax_hz = 8000.0;
  double db_floor = -80.0;
  int image_height = 64;
  int image_width = 64;
  std::string colormap = "viridis";

  int window_samples(int rate_hz) const;
  int hop_samples(int rate_hz) const;
  /// Throws InvalidArgument naming the offending field.
  void validate(int rate_hz) const;
  /// Stable textual form, used for cache keys and config digests.
  std::string canonical() const;
};

/// Row-major dense matrix of doubles.
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  double& operator()(size_t r, size_t c) { return data[r * cols + c]; }
  double operator()(size_t r, size_t c) const { return data[r * cols + c]; }
};

/// frames x bins complex STFT.
struct ComplexMatrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<std::complex<double>> data;
  std::complex<double>& operator()(size_t r, size_t c) { return data[r * cols + c]; }
  const std::complex<double>& operator()(size_t r, size_t c) const { return data[r * cols + c]; }
};

/// H x W x 3 image, channel values in [0, 1], row 0 at the top.
struct SpecImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;  // HWC
  std::string source_path;

  float at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

using Rgb = std::array<float, 3>;

/// 256-entry colormap table. Only "viridis" is shipped.
const std::array<Rgb, 256>& Colormap(const std::string& name);
/// Linear interpolation between table entries; v is clamped to [0, 1].
Rgb ColormapLookup(const std::array<Rgb, 256>& table, double v);

double HzToMel(double hz);
double MelToHz(double mel);

/// Periodic Hann window of length n.
std::vector<double> HannWindow(int n);

/// In-place iterative radix-2 FFT; size must be a power of two.
void Fft(std::vector<std::complex<double>>& a);

ComplexMatrix Stft(const AudioClip& clip, const SpectroParams& params);
Matrix PowerSpectrogram(const ComplexMatrix& stft);
/// n_mels x (fft_len/2 + 1). Throws DegenerateFilter when a filter gets no
/// support on the bin grid.
Matrix MelFilterbank(const SpectroParams& params, int rate_hz);
/// frames x n_mels Mel power.
Matrix ApplyFilterbank(const Matrix& power, const Matrix& filterbank);
Matrix PowerToDb(const Matrix& power, double db_floor);
/// db is frames x n_mels. The raster has one row per Mel band, lowest band at
/// the bottom, and one column per frame before resizing.
SpecImage Render(const Matrix& db, const SpectroParams& params);
/// Bilinear resize with corner-aligned sampling of an HWC float image.
std::vector<float> ResizeBilinear(std::span<const float> src, int src_h, int src_w, int channels,
                                  int dst_h, int dst_w);

SpecImage Extract(const AudioClip& clip, const SpectroParams& params);

/// comment, when non-empty, becomes a '#' header line.
void WritePpm(const std::filesystem::path& path, const SpecImage& image, const std::string& comment = "");
std::vector<uint8_t> EncodePpm(const SpecImage& image, const std::string& comment = "");
SpecImage ReadPpm(const std::filesystem::path& path);

}  // namespace specemo

#endif  // SPECEMO_SPECTRO_H_
