#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "flashdet/rng.hpp"

namespace flashdet {

// Rank-3 array, row-major (y, then x, then channel). Channels vary fastest,
// which keeps per-pixel channel vectors contiguous for the conv inner loops.
// Templated on the scalar so the gradient checks can run the same kernels in
// 64-bit; production code uses the float alias.
template <class T>
struct Tensor3T {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Tensor3T() = default;

  Tensor3T(int h, int w, int c) {
    if (h <= 0 || w <= 0 || c <= 0)
      throw std::invalid_argument("Tensor3: dimensions must be positive");
    height = h;
    width = w;
    channels = c;
    data.assign(static_cast<std::size_t>(h) * w * c, T(0));
  }

  std::size_t size() const { return data.size(); }

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }

  T& at(int y, int x, int c) { return data[index(y, x, c)]; }
  const T& at(int y, int x, int c) const { return data[index(y, x, c)]; }

  // Pointer to the channel vector at (y, x).
  T* pixel(int y, int x) { return data.data() + index(y, x, 0); }
  const T* pixel(int y, int x) const { return data.data() + index(y, x, 0); }

  bool same_shape(const Tensor3T& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

using Tensor3 = Tensor3T<float>;

// 3x3 convolution kernel. Weight layout: [dy][dx][in_channel][out_channel],
// so the out-channel run is contiguous for the innermost loop.
template <class T>
struct ConvKernelT {
  int k = 3;
  int in_channels = 0;
  int out_channels = 0;
  std::vector<T> weights;
  std::vector<T> bias;

  ConvKernelT() = default;

  ConvKernelT(int k_, int in_c, int out_c) : k(k_), in_channels(in_c), out_channels(out_c) {
    if (k_ <= 0 || in_c <= 0 || out_c <= 0)
      throw std::invalid_argument("ConvKernel: dimensions must be positive");
    weights.assign(static_cast<std::size_t>(k_) * k_ * in_c * out_c, T(0));
    bias.assign(static_cast<std::size_t>(out_c), T(0));
  }

  std::size_t weight_count() const { return weights.size(); }
};

using ConvKernel = ConvKernelT<float>;

// Dense layer weights. Layout: [in_feature][out_feature].
template <class T>
struct DenseWeightsT {
  int in_features = 0;
  int out_features = 0;
  std::vector<T> weights;
  std::vector<T> bias;

  DenseWeightsT() = default;

  DenseWeightsT(int in_f, int out_f) : in_features(in_f), out_features(out_f) {
    if (in_f <= 0 || out_f <= 0)
      throw std::invalid_argument("DenseWeights: dimensions must be positive");
    weights.assign(static_cast<std::size_t>(in_f) * out_f, T(0));
    bias.assign(static_cast<std::size_t>(out_f), T(0));
  }

  std::size_t weight_count() const { return weights.size(); }
};

using DenseWeights = DenseWeightsT<float>;

// Reflect-101 index: the edge element is not repeated. Valid for
// i in [-(n-1), 2n-2], which margin < n guarantees.
inline int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

template <class T>
Tensor3T<T> mirror_pad(const Tensor3T<T>& t, int margin) {
  if (margin < 1) throw std::invalid_argument("mirror_pad: margin must be >= 1");
  if (margin >= t.height || margin >= t.width)
    throw std::invalid_argument("mirror_pad: margin " + std::to_string(margin) +
                                " too large for " + std::to_string(t.height) + "x" +
                                std::to_string(t.width) + " input");
  Tensor3T<T> out(t.height + 2 * margin, t.width + 2 * margin, t.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(t.channels) * sizeof(T);
  for (int y = 0; y < out.height; ++y) {
    const int sy = reflect_index(y - margin, t.height);
    for (int x = 0; x < out.width; ++x) {
      const int sx = reflect_index(x - margin, t.width);
      std::memcpy(out.pixel(y, x), t.pixel(sy, sx), row_bytes);
    }
  }
  return out;
}

// Routes a gradient w.r.t. the padded tensor back to the source positions;
// reflected positions accumulate.
template <class T>
Tensor3T<T> mirror_pad_backward(const Tensor3T<T>& padded_grad, int margin) {
  const int h = padded_grad.height - 2 * margin;
  const int w = padded_grad.width - 2 * margin;
  if (margin < 1 || h <= 0 || w <= 0)
    throw std::invalid_argument("mirror_pad_backward: bad margin for padded shape");
  Tensor3T<T> out(h, w, padded_grad.channels);
  for (int y = 0; y < padded_grad.height; ++y) {
    const int sy = reflect_index(y - margin, h);
    for (int x = 0; x < padded_grad.width; ++x) {
      const int sx = reflect_index(x - margin, w);
      T* dst = out.pixel(sy, sx);
      const T* src = padded_grad.pixel(y, x);
      for (int c = 0; c < out.channels; ++c) dst[c] += src[c];
    }
  }
  return out;
}

template <class T>
Tensor3T<T> crop(const Tensor3T<T>& t, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > t.height || x0 + w > t.width)
    throw std::invalid_argument("crop: window out of bounds");
  Tensor3T<T> out(h, w, t.channels);
  const std::size_t row_bytes = static_cast<std::size_t>(w) * t.channels * sizeof(T);
  for (int y = 0; y < h; ++y)
    std::memcpy(out.pixel(y, 0), t.pixel(y0 + y, x0), row_bytes);
  return out;
}

// Same-size 3x3 convolution over a mirror-padded input, stride 1.
template <class T>
Tensor3T<T> conv2d_forward(const Tensor3T<T>& input, const ConvKernelT<T>& kernel) {
  if (input.channels != kernel.in_channels)
    throw std::invalid_argument("conv2d_forward: input has " + std::to_string(input.channels) +
                                " channels, kernel expects " +
                                std::to_string(kernel.in_channels));
  if (kernel.k != 3) throw std::invalid_argument("conv2d_forward: kernel side must be 3");
  const Tensor3T<T> pad = mirror_pad(input, 1);
  const int H = input.height, W = input.width;
  const int C = kernel.in_channels, D = kernel.out_channels;
  Tensor3T<T> out(H, W, D);
  // The accumulator lives on the stack so the out-channel vector stays in
  // registers across the 3x3xC reduction instead of bouncing through memory.
  constexpr int kStackChannels = 128;
  T stack_acc[kStackChannels];
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      T* acc = D <= kStackChannels ? stack_acc : out.pixel(y, x);
      for (int d = 0; d < D; ++d) acc[d] = kernel.bias[d];
      for (int dy = 0; dy < 3; ++dy) {
        const T* prow = pad.pixel(y + dy, x);
        for (int dx = 0; dx < 3; ++dx) {
          const T* pv = prow + static_cast<std::size_t>(dx) * C;
          const T* wrow =
              kernel.weights.data() + (static_cast<std::size_t>(dy) * 3 + dx) * C * D;
          for (int ic = 0; ic < C; ++ic) {
            const T a = pv[ic];
            const T* wv = wrow + static_cast<std::size_t>(ic) * D;
            for (int d = 0; d < D; ++d) acc[d] += a * wv[d];
          }
        }
      }
      if (D <= kStackChannels) {
        T* dst = out.pixel(y, x);
        for (int d = 0; d < D; ++d) dst[d] = acc[d];
      }
    }
  }
  return out;
}

template <class T>
struct ConvGradsT {
  Tensor3T<T> input_grad;
  std::vector<T> weight_grad;
  std::vector<T> bias_grad;
};

template <class T>
ConvGradsT<T> conv2d_backward(const Tensor3T<T>& input, const ConvKernelT<T>& kernel,
                              const Tensor3T<T>& upstream) {
  if (input.channels != kernel.in_channels)
    throw std::invalid_argument("conv2d_backward: channel mismatch");
  if (upstream.height != input.height || upstream.width != input.width ||
      upstream.channels != kernel.out_channels)
    throw std::invalid_argument("conv2d_backward: upstream shape mismatch");
  const Tensor3T<T> pad = mirror_pad(input, 1);
  const int H = input.height, W = input.width;
  const int C = kernel.in_channels, D = kernel.out_channels;

  ConvGradsT<T> g;
  g.weight_grad.assign(kernel.weights.size(), T(0));
  g.bias_grad.assign(kernel.bias.size(), T(0));
  Tensor3T<T> pad_grad(pad.height, pad.width, C);

  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const T* up = upstream.pixel(y, x);
      for (int d = 0; d < D; ++d) g.bias_grad[d] += up[d];
      for (int dy = 0; dy < 3; ++dy) {
        const T* prow = pad.pixel(y + dy, x);
        T* grow = pad_grad.pixel(y + dy, x);
        for (int dx = 0; dx < 3; ++dx) {
          const T* pv = prow + static_cast<std::size_t>(dx) * C;
          T* gv = grow + static_cast<std::size_t>(dx) * C;
          const std::size_t wbase = (static_cast<std::size_t>(dy) * 3 + dx) * C * D;
          const T* wrow = kernel.weights.data() + wbase;
          T* wgrow = g.weight_grad.data() + wbase;
          for (int ic = 0; ic < C; ++ic) {
            const T a = pv[ic];
            const T* wv = wrow + static_cast<std::size_t>(ic) * D;
            T* wg = wgrow + static_cast<std::size_t>(ic) * D;
            T din = T(0);
            for (int d = 0; d < D; ++d) {
              const T u = up[d];
              wg[d] += a * u;
              din += u * wv[d];
            }
            gv[ic] += din;
          }
        }
      }
    }
  }
  g.input_grad = mirror_pad_backward(pad_grad, 1);
  return g;
}

template <class T>
struct PoolResultT {
  Tensor3T<T> output;
  // Flat index into the input's data array of the winning element per output
  // cell; ties go to the first position in row-major scan order.
  std::vector<std::int32_t> argmax;
  int input_height = 0;
  int input_width = 0;
};

template <class T>
PoolResultT<T> maxpool2x2_forward(const Tensor3T<T>& input) {
  if (input.height % 2 != 0 || input.width % 2 != 0)
    throw std::invalid_argument("maxpool2x2_forward: spatial dimensions must be even");
  PoolResultT<T> r;
  r.input_height = input.height;
  r.input_width = input.width;
  r.output = Tensor3T<T>(input.height / 2, input.width / 2, input.channels);
  r.argmax.assign(r.output.size(), 0);
  const int C = input.channels;
  for (int y = 0; y < r.output.height; ++y) {
    for (int x = 0; x < r.output.width; ++x) {
      T* out = r.output.pixel(y, x);
      std::int32_t* am = r.argmax.data() + r.output.index(y, x, 0);
      for (int c = 0; c < C; ++c) {
        T best = input.at(2 * y, 2 * x, c);
        std::size_t best_idx = input.index(2 * y, 2 * x, c);
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t idx = input.index(2 * y + dy, 2 * x + dx, c);
            const T v = input.data[idx];
            if (v > best) {
              best = v;
              best_idx = idx;
            }
          }
        }
        out[c] = best;
        am[c] = static_cast<std::int32_t>(best_idx);
      }
    }
  }
  return r;
}

template <class T>
Tensor3T<T> maxpool2x2_backward(const PoolResultT<T>& record, const Tensor3T<T>& upstream) {
  if (!record.output.same_shape(upstream))
    throw std::invalid_argument("maxpool2x2_backward: upstream shape mismatch");
  Tensor3T<T> grad(record.input_height, record.input_width, upstream.channels);
  for (std::size_t i = 0; i < upstream.size(); ++i)
    grad.data[static_cast<std::size_t>(record.argmax[i])] += upstream.data[i];
  return grad;
}

template <class T>
Tensor3T<T> relu_forward(const Tensor3T<T>& t) {
  Tensor3T<T> out = t;
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return out;
}

// Gradient at exactly 0 is defined as 0.
template <class T>
Tensor3T<T> relu_backward(const Tensor3T<T>& input, const Tensor3T<T>& upstream) {
  if (!input.same_shape(upstream))
    throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor3T<T> out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(input.data[i] > T(0))) out.data[i] = T(0);
  return out;
}

template <class T>
std::vector<T> relu_forward_vec(const std::vector<T>& v) {
  std::vector<T> out = v;
  for (auto& x : out) x = x > T(0) ? x : T(0);
  return out;
}

template <class T>
std::vector<T> relu_backward_vec(const std::vector<T>& input, const std::vector<T>& upstream) {
  if (input.size() != upstream.size())
    throw std::invalid_argument("relu_backward_vec: size mismatch");
  std::vector<T> out = upstream;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(input[i] > T(0))) out[i] = T(0);
  return out;
}

// Row-major (y, x, c) flattening; this order is also the checkpoint layout.
template <class T>
std::vector<T> flatten(const Tensor3T<T>& t) {
  return t.data;
}

// out = W^T x + b
template <class T>
std::vector<T> fc_forward(const std::vector<T>& x, const DenseWeightsT<T>& w) {
  if (static_cast<int>(x.size()) != w.in_features)
    throw std::invalid_argument("fc_forward: input length " + std::to_string(x.size()) +
                                " != in_features " + std::to_string(w.in_features));
  std::vector<T> out(w.bias.begin(), w.bias.end());
  const int O = w.out_features;
  for (int i = 0; i < w.in_features; ++i) {
    const T a = x[i];
    const T* wv = w.weights.data() + static_cast<std::size_t>(i) * O;
    for (int o = 0; o < O; ++o) out[o] += a * wv[o];
  }
  return out;
}

template <class T>
struct FcGradsT {
  std::vector<T> input_grad;
  std::vector<T> weight_grad;
  std::vector<T> bias_grad;
};

template <class T>
FcGradsT<T> fc_backward(const std::vector<T>& x, const DenseWeightsT<T>& w,
                        const std::vector<T>& upstream) {
  if (static_cast<int>(x.size()) != w.in_features)
    throw std::invalid_argument("fc_backward: input length mismatch");
  if (static_cast<int>(upstream.size()) != w.out_features)
    throw std::invalid_argument("fc_backward: upstream length mismatch");
  FcGradsT<T> g;
  g.input_grad.assign(x.size(), T(0));
  g.weight_grad.assign(w.weights.size(), T(0));
  g.bias_grad = upstream;
  const int O = w.out_features;
  for (int i = 0; i < w.in_features; ++i) {
    const T a = x[i];
    const T* wv = w.weights.data() + static_cast<std::size_t>(i) * O;
    T* wg = g.weight_grad.data() + static_cast<std::size_t>(i) * O;
    T din = T(0);
    for (int o = 0; o < O; ++o) {
      const T u = upstream[o];
      wg[o] += a * u;
      din += u * wv[o];
    }
    g.input_grad[i] = din;
  }
  return g;
}

// Max-subtracted softmax.
template <class T>
std::vector<T> softmax(const std::vector<T>& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const T m = *std::max_element(logits.begin(), logits.end());
  std::vector<T> out(logits.size());
  T sum = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

enum class RunMode { kTrain, kEval };

// Inverted dropout on a flat vector. In train mode each element is dropped
// with probability `rate` and survivors are scaled by 1/(1-rate); eval mode
// is the identity and consumes no RNG. A keep mask is recorded when
// `keep_mask` is non-null (1 = kept).
template <class T>
std::vector<T> dropout_vec(const std::vector<T>& v, double rate, Rng& rng, RunMode mode,
                           std::vector<std::uint8_t>* keep_mask = nullptr) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == RunMode::kEval || rate == 0.0) {
    if (keep_mask) keep_mask->assign(v.size(), 1);
    return v;
  }
  std::vector<T> out(v.size());
  if (keep_mask) keep_mask->assign(v.size(), 0);
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (rng.uniform() >= rate) {
      out[i] = v[i] * scale;
      if (keep_mask) (*keep_mask)[i] = 1;
    }
  }
  return out;
}

template <class T>
std::vector<T> dropout_backward_vec(const std::vector<T>& upstream, double rate,
                                    const std::vector<std::uint8_t>& keep_mask) {
  if (upstream.size() != keep_mask.size())
    throw std::invalid_argument("dropout_backward_vec: mask size mismatch");
  std::vector<T> out(upstream.size(), T(0));
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < upstream.size(); ++i)
    if (keep_mask[i]) out[i] = upstream[i] * scale;
  return out;
}

template <class T>
Tensor3T<T> dropout(const Tensor3T<T>& t, double rate, Rng& rng, RunMode mode) {
  Tensor3T<T> out = t;
  out.data = dropout_vec(t.data, rate, rng, mode);
  return out;
}

}  // namespace flashdet
