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

#include "specemo/nn/layers.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace specemo::nn {

std::string ShapeString(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

size_t ShapeSize(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

void ExpectShape(const Shape& actual, const Shape& expected, std::string_view what) {
  if (actual != expected)
    throw Error(ErrorKind::kShapeMismatch, std::string(what) + ": expected " + ShapeString(expected) +
                                               ", got " + ShapeString(actual));
}

size_t LayerParamCount(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::kConv3x3: return spec.out * spec.in * 9 + spec.out;
    case LayerKind::kDense: return spec.out * spec.in + spec.out;
    default: return 0;
  }
}

namespace {

thread_local KinkProbe* g_probe = nullptr;

void Require(bool ok, std::string_view msg) {
  if (!ok) throw Error(ErrorKind::kShapeMismatch, std::string(msg));
}

}  // namespace

KinkProbe::KinkProbe() : previous_(g_probe) { g_probe = this; }
KinkProbe::~KinkProbe() { g_probe = previous_; }

void KinkProbe::Record(uint64_t value) {
  if (g_probe == nullptr) return;
  g_probe->hash_ = (g_probe->hash_ ^ value) * 1099511628211ULL;
}

template <typename T>
BasicTensor<T> ConvForward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                           const BasicTensor<T>& bias, Padding padding) {
  Require(input.rank() == 4, "conv input must be NCHW");
  Require(weight.rank() == 4 && weight.dim(2) == 3 && weight.dim(3) == 3, "conv kernel must be O x C x 3 x 3");
  Require(weight.dim(1) == input.dim(1), "conv input channels do not match kernel");
  ExpectShape(bias.shape(), {weight.dim(0)}, "conv bias");
  const size_t n = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  const size_t c_out = weight.dim(0);
  const int pad = padding == Padding::kSame ? 1 : 0;
  Require(padding == Padding::kSame || (h >= 3 && w >= 3), "valid conv needs at least 3x3 input");
  const size_t oh = padding == Padding::kSame ? h : h - 2;
  const size_t ow = padding == Padding::kSame ? w : w - 2;

  BasicTensor<T> out({n, c_out, oh, ow});
  for (size_t b = 0; b < n; ++b) {
    for (size_t o = 0; o < c_out; ++o) {
      T* plane = out.data() + ((b * c_out + o) * oh) * ow;
      std::fill(plane, plane + oh * ow, bias[o]);
      for (size_t c = 0; c < c_in; ++c) {
        const T* in_plane = input.data() + ((b * c_in + c) * h) * w;
        const T* k = weight.data() + (o * c_in + c) * 9;
        for (int dy = 0; dy < 3; ++dy) {
          for (int dx = 0; dx < 3; ++dx) {
            const T kv = k[dy * 3 + dx];
            const long x_lo = std::max<long>(0, pad - dx);
            const long x_hi = std::min<long>(static_cast<long>(ow), static_cast<long>(w) + pad - dx);
            for (size_t y = 0; y < oh; ++y) {
              const long iy = static_cast<long>(y) + dy - pad;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              T* orow = plane + y * ow;
              const T* irow = in_plane + static_cast<size_t>(iy) * w + dx - pad;
              for (long x = x_lo; x < x_hi; ++x) orow[x] += kv * irow[x];
            }
          }
        }
      }
    }
  }
  CheckFinite(out, "conv3x3");
  return out;
}

template <typename T>
ConvGrads<T> ConvBackward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                          const BasicTensor<T>& weight, Padding padding, bool need_input_grad) {
  Require(input.rank() == 4 && weight.rank() == 4, "conv backward expects NCHW input and OCHW kernel");
  const size_t n = input.dim(0), c_in = input.dim(1), h = input.dim(2), w = input.dim(3);
  const size_t c_out = weight.dim(0);
  Require(weight.dim(1) == c_in, "conv backward channel mismatch");
  const int pad = padding == Padding::kSame ? 1 : 0;
  const size_t oh = padding == Padding::kSame ? h : h - 2;
  const size_t ow = padding == Padding::kSame ? w : w - 2;
  ExpectShape(grad_out.shape(), {n, c_out, oh, ow}, "conv grad_out");

  ConvGrads<T> g;
  g.weight = BasicTensor<T>(weight.shape());
  g.bias = BasicTensor<T>({c_out});
  if (need_input_grad) g.input = BasicTensor<T>(input.shape());

  for (size_t o = 0; o < c_out; ++o) {
    T acc = T(0);
    for (size_t b = 0; b < n; ++b) {
      const T* gplane = grad_out.data() + ((b * c_out + o) * oh) * ow;
      for (size_t i = 0; i < oh * ow; ++i) acc += gplane[i];
    }
    g.bias[o] = acc;
  }

  for (size_t o = 0; o < c_out; ++o) {
    for (size_t c = 0; c < c_in; ++c) {
      const T* k = weight.data() + (o * c_in + c) * 9;
      T* gk = g.weight.data() + (o * c_in + c) * 9;
      for (int dy = 0; dy < 3; ++dy) {
        for (int dx = 0; dx < 3; ++dx) {
          const T kv = k[dy * 3 + dx];
          const long x_lo = std::max<long>(0, pad - dx);
          const long x_hi = std::min<long>(static_cast<long>(ow), static_cast<long>(w) + pad - dx);
          T gacc = T(0);
          for (size_t b = 0; b < n; ++b) {
            const T* gplane = grad_out.data() + ((b * c_out + o) * oh) * ow;
            const T* in_plane = input.data() + ((b * c_in + c) * h) * w;
            T* gin_plane = need_input_grad ? g.input.data() + ((b * c_in + c) * h) * w : nullptr;
            for (size_t y = 0; y < oh; ++y) {
              const long iy = static_cast<long>(y) + dy - pad;
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              const T* grow = gplane + y * ow;
              const T* irow = in_plane + static_cast<size_t>(iy) * w + dx - pad;
              for (long x = x_lo; x < x_hi; ++x) gacc += grow[x] * irow[x];
              if (gin_plane) {
                T* girow = gin_plane + static_cast<size_t>(iy) * w + dx - pad;
                for (long x = x_lo; x < x_hi; ++x) girow[x] += kv * grow[x];
              }
            }
          }
          gk[dy * 3 + dx] = gacc;
        }
      }
    }
  }
  return g;
}

template <typename T>
PoolResult<T> MaxPoolForward(const BasicTensor<T>& input) {
  Require(input.rank() == 4, "maxpool input must be NCHW");
  const size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw Error(ErrorKind::kOddSpatialDim, "maxpool needs even H and W, got " + ShapeString(input.shape()));
  const size_t oh = h / 2, ow = w / 2;
  PoolResult<T> r;
  r.output = BasicTensor<T>({n, c, oh, ow});
  r.argmax.resize(r.output.size());
  size_t oi = 0;
  for (size_t p = 0; p < n * c; ++p) {
    const size_t base = p * h * w;
    for (size_t y = 0; y < oh; ++y) {
      for (size_t x = 0; x < ow; ++x, ++oi) {
        const size_t cand[4] = {base + (2 * y) * w + 2 * x, base + (2 * y) * w + 2 * x + 1,
                                base + (2 * y + 1) * w + 2 * x, base + (2 * y + 1) * w + 2 * x + 1};
        size_t best = cand[0];
        int best_k = 0;
        for (int k = 1; k < 4; ++k)
          if (input[cand[k]] > input[best]) {
            best = cand[k];
            best_k = k;
          }
        r.output[oi] = input[best];
        r.argmax[oi] = static_cast<uint32_t>(best);
        KinkProbe::Record(static_cast<uint64_t>(best_k) + 1);
      }
    }
  }
  CheckFinite(r.output, "maxpool2x2");
  return r;
}

template <typename T>
BasicTensor<T> MaxPoolBackward(const BasicTensor<T>& grad_out, std::span<const uint32_t> argmax,
                               const Shape& input_shape) {
  Require(grad_out.size() == argmax.size(), "maxpool backward: argmax size mismatch");
  BasicTensor<T> g(input_shape);
  for (size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

template <typename T>
BasicTensor<T> ReluForward(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  CheckFinite(y, "relu");
  // Fold the activation mask 64 entries at a time.
  uint64_t word = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    word = (word << 1) | (x[i] > T(0) ? 1u : 0u);
    if ((i & 63) == 63) {
      KinkProbe::Record(word);
      word = 0;
    }
  }
  KinkProbe::Record(word);
  return y;
}

template <typename T>
BasicTensor<T> ReluBackward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
  ExpectShape(grad_out.shape(), output.shape(), "relu grad_out");
  BasicTensor<T> g(output.shape());
  for (size_t i = 0; i < g.size(); ++i) g[i] = output[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
BasicTensor<T> DenseForward(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                            const BasicTensor<T>& bias) {
  Require(x.rank() == 2 && weight.rank() == 2, "dense expects N x D input and O x D weight");
  const size_t n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  if (weight.dim(1) != d)
    throw Error(ErrorKind::kShapeMismatch, "dense weight " + ShapeString(weight.shape()) +
                                               " does not accept input " + ShapeString(x.shape()));
  ExpectShape(bias.shape(), {o}, "dense bias");
  BasicTensor<T> y({n, o});
  for (size_t b = 0; b < n; ++b) {
    const T* xr = x.data() + b * d;
    for (size_t j = 0; j < o; ++j) {
      const T* wr = weight.data() + j * d;
      T acc = T(0);
      for (size_t k = 0; k < d; ++k) acc += wr[k] * xr[k];
      y[b * o + j] = acc + bias[j];
    }
  }
  CheckFinite(y, "dense");
  return y;
}

template <typename T>
DenseGrads<T> DenseBackward(const BasicTensor<T>& grad_out, const BasicTensor<T>& x,
                            const BasicTensor<T>& weight) {
  const size_t n = x.dim(0), d = x.dim(1), o = weight.dim(0);
  ExpectShape(grad_out.shape(), {n, o}, "dense grad_out");
  DenseGrads<T> g;
  g.input = BasicTensor<T>({n, d});
  g.weight = BasicTensor<T>(weight.shape());
  g.bias = BasicTensor<T>({o});
  for (size_t b = 0; b < n; ++b) {
    const T* gr = grad_out.data() + b * o;
    const T* xr = x.data() + b * d;
    T* gxr = g.input.data() + b * d;
    for (size_t j = 0; j < o; ++j) {
      const T gv = gr[j];
      g.bias[j] += gv;
      const T* wr = weight.data() + j * d;
      T* gwr = g.weight.data() + j * d;
      for (size_t k = 0; k < d; ++k) {
        gxr[k] += gv * wr[k];
        gwr[k] += gv * xr[k];
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> Flatten(const BasicTensor<T>& x) {
  Require(x.rank() >= 1, "flatten needs a batch dimension");
  const size_t n = x.dim(0);
  return x.reshaped({n, n ? x.size() / n : 0});
}

template <typename T>
BasicTensor<T> Softmax(const BasicTensor<T>& logits) {
  Require(logits.rank() == 2, "softmax expects N x K");
  const size_t n = logits.dim(0), k = logits.dim(1);
  BasicTensor<T> p(logits.shape());
  for (size_t b = 0; b < n; ++b) {
    const T* row = logits.data() + b * k;
    const T mx = *std::max_element(row, row + k);
    T sum = T(0);
    for (size_t j = 0; j < k; ++j) {
      p[b * k + j] = std::exp(row[j] - mx);
      sum += p[b * k + j];
    }
    for (size_t j = 0; j < k; ++j) p[b * k + j] /= sum;
  }
  return p;
}

template <typename T>
LossAndGrad<T> SoftmaxCrossEntropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  Require(logits.rank() == 2, "cross-entropy expects N x K logits");
  const size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw Error(ErrorKind::kLengthMismatch, "label count does not match batch");
  CheckFinite(logits, "logits");
  LossAndGrad<T> r;
  r.grad = BasicTensor<T>(logits.shape());
  double total = 0.0;
  for (size_t b = 0; b < n; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<size_t>(y) >= k)
      throw Error(ErrorKind::kLabelOutOfRange, "label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
    const T* row = logits.data() + b * k;
    const double mx = static_cast<double>(*std::max_element(row, row + k));
    double sum = 0.0;
    for (size_t j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - static_cast<double>(row[y]);
    for (size_t j = 0; j < k; ++j) {
      const double pj = std::exp(static_cast<double>(row[j]) - log_z);
      r.grad[b * k + j] = static_cast<T>((pj - (static_cast<size_t>(y) == j ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

template <typename T>
std::vector<int> ArgmaxRows(const BasicTensor<T>& scores) {
  Require(scores.rank() == 2, "argmax expects N x K");
  const size_t n = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(n, 0);
  for (size_t b = 0; b < n; ++b) {
    size_t best = 0;
    for (size_t j = 1; j < k; ++j)
      if (scores[b * k + j] > scores[b * k + best]) best = j;
    out[b] = static_cast<int>(best);
  }
  return out;
}

#define SPECEMO_INSTANTIATE_LAYERS(T)                                                             \
  template BasicTensor<T> ConvForward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                      const BasicTensor<T>&, Padding);                           \
  template ConvGrads<T> ConvBackward(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, Padding, bool);                      \
  template PoolResult<T> MaxPoolForward(const BasicTensor<T>&);                                   \
  template BasicTensor<T> MaxPoolBackward(const BasicTensor<T>&, std::span<const uint32_t>,      \
                                          const Shape&);                                         \
  template BasicTensor<T> ReluForward(const BasicTensor<T>&);                                     \
  template BasicTensor<T> ReluBackward(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> DenseForward(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                       const BasicTensor<T>&);                                   \
  template DenseGrads<T> DenseBackward(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                       const BasicTensor<T>&);                                   \
  template BasicTensor<T> Flatten(const BasicTensor<T>&);                                         \
  template BasicTensor<T> Softmax(const BasicTensor<T>&);                                         \
  template LossAndGrad<T> SoftmaxCrossEntropy(const BasicTensor<T>&, std::span<const int>);      \
  template std::vector<int> ArgmaxRows(const BasicTensor<T>&);

SPECEMO_INSTANTIATE_LAYERS(float)
SPECEMO_INSTANTIATE_LAYERS(double)

}  // namespace specemo::nn
