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

#include "specemo/spectro.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "specemo/error.h"
#include "specemo/util.h"

namespace specemo {

namespace {

const std::array<Rgb, 256> kViridis = {{
#include "viridis_table.inc"
}};

bool IsPowerOfTwo(int n) { return n > 0 && (n & (n - 1)) == 0; }

template <typename T>
std::vector<T> ResizeImpl(std::span<const T> src, int src_h, int src_w, int channels, int dst_h,
                          int dst_w) {
  std::vector<T> dst(static_cast<size_t>(dst_h) * dst_w * channels);
  const auto coord = [](int i, int src_n, int dst_n) {
    return dst_n > 1 ? static_cast<double>(i) * (src_n - 1) / (dst_n - 1) : 0.0;
  };
  for (int y = 0; y < dst_h; ++y) {
    const double sy = coord(y, src_h, dst_h);
    const int y0 = std::min(static_cast<int>(sy), src_h - 1);
    const int y1 = std::min(y0 + 1, src_h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < dst_w; ++x) {
      const double sx = coord(x, src_w, dst_w);
      const int x0 = std::min(static_cast<int>(sx), src_w - 1);
      const int x1 = std::min(x0 + 1, src_w - 1);
      const double fx = sx - x0;
      for (int c = 0; c < channels; ++c) {
        const auto px = [&](int yy, int xx) -> double {
          return src[(static_cast<size_t>(yy) * src_w + xx) * channels + c];
        };
        const double top = (1.0 - fx) * px(y0, x0) + fx * px(y0, x1);
        const double bottom = (1.0 - fx) * px(y1, x0) + fx * px(y1, x1);
        dst[(static_cast<size_t>(y) * dst_w + x) * channels + c] =
            static_cast<T>((1.0 - fy) * top + fy * bottom);
      }
    }
  }
  return dst;
}

}  // namespace

int SpectroParams::window_samples(int rate_hz) const {
  return static_cast<int>(std::lround(window_ms * rate_hz / 1000.0));
}

int SpectroParams::hop_samples(int rate_hz) const {
  return static_cast<int>(std::lround(hop_ms * rate_hz / 1000.0));
}

void SpectroParams::validate(int rate_hz) const {
  const auto bad = [](const std::string& field, const std::string& why) {
    return Error(ErrorKind::kInvalidArgument, "spectro." + field + ": " + why);
  };
  if (!IsPowerOfTwo(fft_len)) throw bad("fft_len", "must be a power of two");
  const int w = window_samples(rate_hz);
  if (w < 1) throw bad("window_ms", "window shorter than one sample");
  if (w > fft_len) throw bad("window_ms", "window longer than fft_len");
  if (hop_samples(rate_hz) < 1) throw bad("hop_ms", "hop shorter than one sample");
  if (n_mels < 1) throw bad("n_mels", "must be positive");
  if (!(fmin_hz >= 0.0 && fmin_hz < fmax_hz)) throw bad("fmin_hz", "need 0 <= fmin < fmax");
  if (fmax_hz > rate_hz / 2.0) throw bad("fmax_hz", "above Nyquist");
  if (!(db_floor < 0.0)) throw bad("db_floor", "must be negative");
  if (image_height < 1 || image_width < 1) throw bad("image_hw", "must be positive");
  if (colormap != "viridis") throw bad("colormap", "unknown colormap '" + colormap + "'");
}

std::string SpectroParams::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "window_ms=" << window_ms << ";hop_ms=" << hop_ms << ";fft_len=" << fft_len
     << ";n_mels=" << n_mels << ";fmin_hz=" << fmin_hz << ";fmax_hz=" << fmax_hz
     << ";db_floor=" << db_floor << ";image_hw=" << image_height << "x" << image_width
     << ";colormap=" << colormap;
  return os.str();
}

const std::array<Rgb, 256>& Colormap(const std::string& name) {
  if (name != "viridis") throw Error(ErrorKind::kInvalidArgument, "unknown colormap '" + name + "'");
  return kViridis;
}

Rgb ColormapLookup(const std::array<Rgb, 256>& table, double v) {
  const double pos = std::clamp(v, 0.0, 1.0) * 255.0;
  const int i = std::min(static_cast<int>(pos), 254);
  const double f = pos - i;
  Rgb out;
  for (int c = 0; c < 3; ++c)
    out[c] = static_cast<float>((1.0 - f) * table[i][c] + f * table[i + 1][c]);
  return out;
}

double HzToMel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double MelToHz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> HannWindow(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

void Fft(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  if (!IsPowerOfTwo(static_cast<int>(n))) throw Error(ErrorKind::kInvalidArgument, "FFT size not a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const size_t half = len / 2;
    for (size_t k = 0; k < half; ++k) {
      // Twiddles from cos/sin directly, not by recurrence, to keep the
      // error at machine precision for long transforms.
      const double ang = -2.0 * M_PI * static_cast<double>(k) / static_cast<double>(len);
      const std::complex<double> w(std::cos(ang), std::sin(ang));
      for (size_t i = k; i < n; i += len) {
        const std::complex<double> u = a[i];
        const std::complex<double> v = a[i + half] * w;
        a[i] = u + v;
        a[i + half] = u - v;
      }
    }
  }
}

ComplexMatrix Stft(const AudioClip& clip, const SpectroParams& params) {
  params.validate(clip.sample_rate_hz);
  const int w = params.window_samples(clip.sample_rate_hz);
  const int hop = params.hop_samples(clip.sample_rate_hz);
  const size_t n_fft = static_cast<size_t>(params.fft_len);

  std::vector<double> x(clip.samples.begin(), clip.samples.end());
  if (x.size() < static_cast<size_t>(w)) {
    SPECEMO_LOG(kDebug) << "zero-padding " << x.size() << "-sample clip '" << clip.source_path
                        << "' to one window (" << w << ")";
    x.resize(static_cast<size_t>(w), 0.0);
  }
  const size_t frames = 1 + (x.size() - static_cast<size_t>(w)) / static_cast<size_t>(hop);
  const size_t bins = n_fft / 2 + 1;
  const std::vector<double> window = HannWindow(w);

  ComplexMatrix out;
  out.rows = frames;
  out.cols = bins;
  out.data.resize(frames * bins);
  std::vector<std::complex<double>> buf(n_fft);
  for (size_t f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const size_t start = f * static_cast<size_t>(hop);
    for (int i = 0; i < w; ++i) buf[i] = x[start + i] * window[i];
    Fft(buf);
    std::copy(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(bins), out.data.begin() + static_cast<std::ptrdiff_t>(f * bins));
  }
  return out;
}

Matrix PowerSpectrogram(const ComplexMatrix& stft) {
  Matrix p(stft.rows, stft.cols);
  for (size_t i = 0; i < stft.data.size(); ++i) p.data[i] = std::norm(stft.data[i]);
  return p;
}

Matrix MelFilterbank(const SpectroParams& params, int rate_hz) {
  params.validate(rate_hz);
  const size_t bins = static_cast<size_t>(params.fft_len) / 2 + 1;
  const int n = params.n_mels;
  const double mel_lo = HzToMel(params.fmin_hz);
  const double mel_hi = HzToMel(params.fmax_hz);
  std::vector<double> edges(static_cast<size_t>(n) + 2);
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = MelToHz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (n + 1));

  Matrix fb(static_cast<size_t>(n), bins);
  for (int m = 0; m < n; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    double sum = 0.0;
    for (size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * rate_hz / params.fft_len;
      double v = 0.0;
      if (f > left && f <= center) v = (f - left) / (center - left);
      else if (f > center && f < right) v = (right - f) / (right - center);
      fb(static_cast<size_t>(m), b) = v;
      sum += v;
    }
    if (sum <= 0.0) {
      throw Error(ErrorKind::kDegenerateFilter,
                  "Mel filter " + std::to_string(m) + " covers no FFT bin; reduce n_mels (" +
                      std::to_string(n) + ") or increase fft_len (" + std::to_string(params.fft_len) + ")");
    }
    for (size_t b = 0; b < bins; ++b) fb(static_cast<size_t>(m), b) /= sum;
  }
  return fb;
}

Matrix ApplyFilterbank(const Matrix& power, const Matrix& filterbank) {
  if (power.cols != filterbank.cols)
    throw Error(ErrorKind::kShapeMismatch, "filterbank width does not match spectrum bins");
  Matrix out(power.rows, filterbank.rows);
  for (size_t f = 0; f < power.rows; ++f) {
    for (size_t m = 0; m < filterbank.rows; ++m) {
      double acc = 0.0;
      for (size_t b = 0; b < power.cols; ++b) acc += filterbank(m, b) * power(f, b);
      out(f, m) = acc;
    }
  }
  return out;
}

Matrix PowerToDb(const Matrix& power, double db_floor) {
  constexpr double kEps = 1e-10;
  Matrix db(power.rows, power.cols, db_floor);
  double max_p = 0.0;
  for (double p : power.data) max_p = std::max(max_p, p);
  if (max_p <= 0.0) return db;
  for (size_t i = 0; i < power.data.size(); ++i) {
    const double ratio = std::max(power.data[i] / max_p, kEps);
    db.data[i] = std::max(10.0 * std::log10(ratio), db_floor);
  }
  return db;
}

std::vector<float> ResizeBilinear(std::span<const float> src, int src_h, int src_w, int channels,
                                  int dst_h, int dst_w) {
  return ResizeImpl<float>(src, src_h, src_w, channels, dst_h, dst_w);
}

SpecImage Render(const Matrix& db, const SpectroParams& params) {
  if (db.rows == 0 || db.cols == 0) throw Error(ErrorKind::kShapeMismatch, "empty dB matrix");
  const auto& table = Colormap(params.colormap);
  const int raster_h = static_cast<int>(db.cols);
  const int raster_w = static_cast<int>(db.rows);
  std::vector<double> raster(static_cast<size_t>(raster_h) * raster_w * 3);
  for (int r = 0; r < raster_h; ++r) {
    const size_t band = static_cast<size_t>(raster_h - 1 - r);
    for (int c = 0; c < raster_w; ++c) {
      const double v = (db(static_cast<size_t>(c), band) - params.db_floor) / -params.db_floor;
      const double pos = std::clamp(v, 0.0, 1.0) * 255.0;
      const int i = std::min(static_cast<int>(pos), 254);
      const double f = pos - i;
      double* px = &raster[(static_cast<size_t>(r) * raster_w + c) * 3];
      for (int ch = 0; ch < 3; ++ch) px[ch] = (1.0 - f) * table[i][ch] + f * table[i + 1][ch];
    }
  }
  SpecImage img;
  img.height = params.image_height;
  img.width = params.image_width;
  std::vector<double> resized =
      ResizeImpl<double>(raster, raster_h, raster_w, 3, params.image_height, params.image_width);
  img.pixels.resize(resized.size());
  for (size_t i = 0; i < resized.size(); ++i)
    img.pixels[i] = static_cast<float>(std::clamp(resized[i], 0.0, 1.0));
  return img;
}

SpecImage Extract(const AudioClip& clip, const SpectroParams& params) {
  const Matrix power = PowerSpectrogram(Stft(clip, params));
  const Matrix mel = ApplyFilterbank(power, MelFilterbank(params, clip.sample_rate_hz));
  SpecImage img = Render(PowerToDb(mel, params.db_floor), params);
  img.source_path = clip.source_path;
  return img;
}

std::vector<uint8_t> EncodePpm(const SpecImage& image, const std::string& comment) {
  if (comment.find('\n') != std::string::npos)
    throw Error(ErrorKind::kInvalidArgument, "PPM comment must be a single line");
  const std::string header =
      "P6\n" + (comment.empty() ? "" : "# " + comment + "\n") + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels.size());
  for (float v : image.pixels)
    out.push_back(static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  return out;
}

void WritePpm(const std::filesystem::path& path, const SpecImage& image, const std::string& comment) {
  WriteFileBytes(path, EncodePpm(image, comment));
}

SpecImage ReadPpm(const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = ReadFileBytes(path);
  size_t pos = 0;
  const auto token = [&]() {
    std::string t;
    while (pos < bytes.size()) {
      const char c = static_cast<char>(bytes[pos]);
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
        if (!t.empty()) break;
        ++pos;
      } else {
        t.push_back(c);
        ++pos;
      }
    }
    return t;
  };
  if (token() != "P6") throw Error(ErrorKind::kMalformedHeader, "not a P6 PPM: " + path.string());
  SpecImage img;
  img.width = std::stoi(token());
  img.height = std::stoi(token());
  if (token() != "255") throw Error(ErrorKind::kUnsupportedEncoding, "PPM maxval must be 255");
  ++pos;
  const size_t n = static_cast<size_t>(img.width) * img.height * 3;
  if (bytes.size() < pos + n) throw Error(ErrorKind::kMalformedHeader, "truncated PPM: " + path.string());
  img.pixels.resize(n);
  for (size_t i = 0; i < n; ++i) img.pixels[i] = bytes[pos + i] / 255.0f;
  img.source_path = path.string();
  return img;
}

}  // namespace specemo
