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

// Brute-force reference for the spectrogram chain: naive O(n^2) DFT, filters
// evaluated straight from the triangle definition, scalar dB, and bilinear
// interpolation written out per corner. Shares only the colormap table with
// the library.

#ifndef SPECEMO_TESTS_SPECTRO_ORACLE_H_
#define SPECEMO_TESTS_SPECTRO_ORACLE_H_

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "specemo/spectro.h"

namespace specemo::oracle {

inline std::vector<std::complex<double>> NaiveDft(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n / 2 + 1);
  for (size_t k = 0; k < out.size(); ++k) {
    double re = 0, im = 0;
    for (size_t i = 0; i < n; ++i) {
      const double ang = 2.0 * M_PI * static_cast<double>((k * i) % n) / static_cast<double>(n);
      re += x[i] * std::cos(ang);
      im -= x[i] * std::sin(ang);
    }
    out[k] = {re, im};
  }
  return out;
}

// frames x bins power.
inline std::vector<std::vector<double>> PowerFrames(const std::vector<float>& samples, int rate,
                                                    const SpectroParams& p) {
  const int w = static_cast<int>(std::lround(p.window_ms * rate / 1000.0));
  const int hop = static_cast<int>(std::lround(p.hop_ms * rate / 1000.0));
  std::vector<double> x(samples.begin(), samples.end());
  if (static_cast<int>(x.size()) < w) x.resize(w, 0.0);
  const int frames = 1 + (static_cast<int>(x.size()) - w) / hop;
  std::vector<std::vector<double>> out;
  for (int f = 0; f < frames; ++f) {
    std::vector<double> buf(p.fft_len, 0.0);
    for (int i = 0; i < w; ++i)
      buf[i] = x[f * hop + i] * (0.5 * (1.0 - std::cos(2.0 * M_PI * i / w)));
    auto spec = NaiveDft(buf);
    std::vector<double> pw;
    for (auto& c : spec) pw.push_back(c.real() * c.real() + c.imag() * c.imag());
    out.push_back(pw);
  }
  return out;
}

inline double Mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double InvMel(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

inline std::vector<std::vector<double>> Triangles(const SpectroParams& p, int rate) {
  const int bins = p.fft_len / 2 + 1;
  std::vector<std::vector<double>> fb;
  const double lo = Mel(p.fmin_hz), hi = Mel(p.fmax_hz);
  for (int m = 0; m < p.n_mels; ++m) {
    const double a = InvMel(lo + (hi - lo) * m / (p.n_mels + 1));
    const double b = InvMel(lo + (hi - lo) * (m + 1) / (p.n_mels + 1));
    const double c = InvMel(lo + (hi - lo) * (m + 2) / (p.n_mels + 1));
    std::vector<double> row(bins, 0.0);
    double total = 0;
    for (int k = 0; k < bins; ++k) {
      const double f = k * static_cast<double>(rate) / p.fft_len;
      double v = 0;
      if (a < f && f <= b) v = (f - a) / (b - a);
      if (b < f && f < c) v = (c - f) / (c - b);
      row[k] = v;
      total += v;
    }
    for (double& v : row) v /= total;
    fb.push_back(row);
  }
  return fb;
}

// Returns H x W x 3 doubles.
inline std::vector<double> Pipeline(const std::vector<float>& samples, int rate,
                                    const SpectroParams& p) {
  auto power = PowerFrames(samples, rate, p);
  auto fb = Triangles(p, rate);
  const size_t frames = power.size();
  std::vector<std::vector<double>> mel(frames, std::vector<double>(p.n_mels, 0.0));
  double mx = 0;
  for (size_t f = 0; f < frames; ++f)
    for (int m = 0; m < p.n_mels; ++m) {
      double s = 0;
      for (size_t k = 0; k < power[f].size(); ++k) s += fb[m][k] * power[f][k];
      mel[f][m] = s;
      mx = std::max(mx, s);
    }
  const auto& table = Colormap(p.colormap);
  // raster: rows = mel bands (top = highest), cols = frames
  const int rh = p.n_mels, rw = static_cast<int>(frames);
  std::vector<double> raster(static_cast<size_t>(rh) * rw * 3);
  for (int r = 0; r < rh; ++r)
    for (int c = 0; c < rw; ++c) {
      double db = p.db_floor;
      if (mx > 0) {
        double ratio = mel[c][rh - 1 - r] / mx;
        if (ratio < 1e-10) ratio = 1e-10;
        db = 10.0 * std::log10(ratio);
        if (db < p.db_floor) db = p.db_floor;
      }
      double v = (db - p.db_floor) / (0.0 - p.db_floor);
      double pos = v * 255.0;
      int i = static_cast<int>(std::floor(pos));
      if (i > 254) i = 254;
      double t = pos - i;
      for (int ch = 0; ch < 3; ++ch)
        raster[(static_cast<size_t>(r) * rw + c) * 3 + ch] = table[i][ch] * (1 - t) + table[i + 1][ch] * t;
    }
  std::vector<double> img(static_cast<size_t>(p.image_height) * p.image_width * 3);
  for (int y = 0; y < p.image_height; ++y)
    for (int x = 0; x < p.image_width; ++x) {
      double sy = p.image_height > 1 ? y * (rh - 1.0) / (p.image_height - 1.0) : 0.0;
      double sx = p.image_width > 1 ? x * (rw - 1.0) / (p.image_width - 1.0) : 0.0;
      int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      if (y0 > rh - 1) y0 = rh - 1;
      if (x0 > rw - 1) x0 = rw - 1;
      int y1 = std::min(y0 + 1, rh - 1), x1 = std::min(x0 + 1, rw - 1);
      double dy = sy - y0, dx = sx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        auto at = [&](int yy, int xx) { return raster[(static_cast<size_t>(yy) * rw + xx) * 3 + ch]; };
        img[(static_cast<size_t>(y) * p.image_width + x) * 3 + ch] =
            at(y0, x0) * (1 - dy) * (1 - dx) + at(y0, x1) * (1 - dy) * dx +
            at(y1, x0) * dy * (1 - dx) + at(y1, x1) * dy * dx;
      }
    }
  return img;
}

}  // namespace specemo::oracle

#endif  // SPECEMO_TESTS_SPECTRO_ORACLE_H_
