#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flashdet/rng.hpp"
#include "flashdet/tensor.hpp"

namespace flashdet {

// Layer widths of the patch network. The production model is fixed
// (32x32x3 input, conv 16/32/64, FC 256, 2 classes); the struct exists so
// tests can run the identical code path on a reduced variant in 64-bit.
struct NetConfig {
  int input_side = 32;
  int input_channels = 3;
  int conv1_channels = 16;
  int conv2_channels = 32;
  int conv3_channels = 64;
  int fc_features = 256;
  int num_classes = 2;

  void validate() const {
    if (input_side < 8 || input_side % 8 != 0)
      throw std::invalid_argument("NetConfig: input_side must be a positive multiple of 8");
    if (input_channels <= 0 || conv1_channels <= 0 || conv2_channels <= 0 ||
        conv3_channels <= 0 || fc_features <= 0)
      throw std::invalid_argument("NetConfig: layer widths must be positive");
    if (num_classes != 2)
      throw std::invalid_argument("NetConfig: the classifier head is binary");
  }

  // Side of the conv3 feature map (two 2x2 pools before it).
  int feature_side() const { return input_side / 4; }
  // Flattened length after the third pool.
  int flatten_length() const { return (input_side / 8) * (input_side / 8) * conv3_channels; }
};

template <class T>
struct PatchOutputT {
  std::array<T, 2> logits{};
  std::array<T, 2> probs{};
  int label = 0;  // argmax of probs, ties to the lower class index
};

using PatchOutput = PatchOutputT<float>;

// Activations and dropout masks recorded by a caching forward pass.
template <class T>
struct TrainCacheT {
  bool valid = false;
  Tensor3T<T> input;
  Tensor3T<T> conv1_out;
  PoolResultT<T> pool1;
  Tensor3T<T> conv2_out;
  PoolResultT<T> pool2;
  Tensor3T<T> conv3_out;
  Tensor3T<T> relu3_out;
  PoolResultT<T> pool3;
  std::vector<T> flat;
  std::vector<T> fc_out;
  std::vector<T> fc_relu;
  std::vector<T> drop1;
  std::vector<T> drop2;
  std::vector<std::uint8_t> drop1_mask;
  std::vector<std::uint8_t> drop2_mask;
  double dropout_rate = 0.0;
  bool dropout_active = false;
  PatchOutputT<T> output;
};

using TrainCache = TrainCacheT<float>;

template <class T>
struct NetworkT {
  NetConfig cfg;
  ConvKernelT<T> conv1, conv2, conv3;
  DenseWeightsT<T> fc, out;
  RunMode mode = RunMode::kEval;
  std::uint64_t rng_seed = 0;
  double dropout_rate = 0.5;
  Rng dropout_rng{0};

  void set_mode(RunMode m) { mode = m; }

  void reseed_dropout(std::uint64_t seed) {
    rng_seed = seed;
    dropout_rng = Rng(seed);
  }

  std::size_t parameter_count(bool include_bias = true) const {
    std::size_t n = conv1.weights.size() + conv2.weights.size() + conv3.weights.size() +
                    fc.weights.size() + out.weights.size();
    if (include_bias)
      n += conv1.bias.size() + conv2.bias.size() + conv3.bias.size() + fc.bias.size() +
           out.bias.size();
    return n;
  }

  // Fixed parameter-array order shared by the optimizer velocity layout and
  // the checkpoint format.
  template <class F>
  void for_each_param_array(F&& f) {
    f(conv1.weights);
    f(conv1.bias);
    f(conv2.weights);
    f(conv2.bias);
    f(conv3.weights);
    f(conv3.bias);
    f(fc.weights);
    f(fc.bias);
    f(out.weights);
    f(out.bias);
  }

  template <class F>
  void for_each_param_array(F&& f) const {
    f(conv1.weights);
    f(conv1.bias);
    f(conv2.weights);
    f(conv2.bias);
    f(conv3.weights);
    f(conv3.bias);
    f(fc.weights);
    f(fc.bias);
    f(out.weights);
    f(out.bias);
  }
};

using Model = NetworkT<float>;

template <class T>
struct GradientsT {
  std::vector<T> conv1_w, conv1_b;
  std::vector<T> conv2_w, conv2_b;
  std::vector<T> conv3_w, conv3_b;
  std::vector<T> fc_w, fc_b;
  std::vector<T> out_w, out_b;

  static GradientsT zeros_like(const NetworkT<T>& m) {
    GradientsT g;
    g.conv1_w.assign(m.conv1.weights.size(), T(0));
    g.conv1_b.assign(m.conv1.bias.size(), T(0));
    g.conv2_w.assign(m.conv2.weights.size(), T(0));
    g.conv2_b.assign(m.conv2.bias.size(), T(0));
    g.conv3_w.assign(m.conv3.weights.size(), T(0));
    g.conv3_b.assign(m.conv3.bias.size(), T(0));
    g.fc_w.assign(m.fc.weights.size(), T(0));
    g.fc_b.assign(m.fc.bias.size(), T(0));
    g.out_w.assign(m.out.weights.size(), T(0));
    g.out_b.assign(m.out.bias.size(), T(0));
    return g;
  }

  // Same order as NetworkT::for_each_param_array.
  template <class F>
  void for_each_array(F&& f) {
    f(conv1_w);
    f(conv1_b);
    f(conv2_w);
    f(conv2_b);
    f(conv3_w);
    f(conv3_b);
    f(fc_w);
    f(fc_b);
    f(out_w);
    f(out_b);
  }

  template <class F>
  void for_each_array(F&& f) const {
    f(conv1_w);
    f(conv1_b);
    f(conv2_w);
    f(conv2_b);
    f(conv3_w);
    f(conv3_b);
    f(fc_w);
    f(fc_b);
    f(out_w);
    f(out_b);
  }

  void accumulate(const GradientsT& o) {
    auto add = [](std::vector<T>& dst, const std::vector<T>& src) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    };
    add(conv1_w, o.conv1_w);
    add(conv1_b, o.conv1_b);
    add(conv2_w, o.conv2_w);
    add(conv2_b, o.conv2_b);
    add(conv3_w, o.conv3_w);
    add(conv3_b, o.conv3_b);
    add(fc_w, o.fc_w);
    add(fc_b, o.fc_b);
    add(out_w, o.out_w);
    add(out_b, o.out_b);
  }

  void scale(T s) {
    for_each_array([s](std::vector<T>& a) {
      for (auto& v : a) v *= s;
    });
  }
};

using Gradients = GradientsT<float>;

// Glorot uniform bound: sqrt(6 / (fan_in + fan_out)). Conv fans are
// receptive-field scaled (k*k*channels); dense fans are the feature counts.
inline double glorot_bound(double fan_in, double fan_out) {
  return std::sqrt(6.0 / (fan_in + fan_out));
}

template <class T>
void glorot_fill_conv(ConvKernelT<T>& k, Rng& rng) {
  const double b =
      glorot_bound(static_cast<double>(k.k) * k.k * k.in_channels,
                   static_cast<double>(k.k) * k.k * k.out_channels);
  for (auto& w : k.weights) w = static_cast<T>(rng.uniform(-b, b));
}

template <class T>
void glorot_fill_dense(DenseWeightsT<T>& d, Rng& rng) {
  const double b = glorot_bound(d.in_features, d.out_features);
  for (auto& w : d.weights) w = static_cast<T>(rng.uniform(-b, b));
}

// Builds and initializes a network. Weights are drawn layer by layer in
// declaration order (conv1, conv2, conv3, fc, out); biases start at zero.
template <class T>
NetworkT<T> build_network(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkT<T> m;
  m.cfg = cfg;
  m.conv1 = ConvKernelT<T>(3, cfg.input_channels, cfg.conv1_channels);
  m.conv2 = ConvKernelT<T>(3, cfg.conv1_channels, cfg.conv2_channels);
  m.conv3 = ConvKernelT<T>(3, cfg.conv2_channels, cfg.conv3_channels);
  m.fc = DenseWeightsT<T>(cfg.flatten_length(), cfg.fc_features);
  m.out = DenseWeightsT<T>(cfg.fc_features, cfg.num_classes);
  Rng rng(seed);
  glorot_fill_conv(m.conv1, rng);
  glorot_fill_conv(m.conv2, rng);
  glorot_fill_conv(m.conv3, rng);
  glorot_fill_dense(m.fc, rng);
  glorot_fill_dense(m.out, rng);
  m.reseed_dropout(seed ^ 0x9e3779b97f4a7c15ULL);
  return m;
}

inline Model build_model(std::uint64_t seed) { return build_network<float>(NetConfig{}, seed); }

namespace detail {

template <class T>
void check_patch_shape(const NetworkT<T>& m, const Tensor3T<T>& patch) {
  if (patch.height != m.cfg.input_side || patch.width != m.cfg.input_side ||
      patch.channels != m.cfg.input_channels)
    throw std::invalid_argument(
        "forward: patch must be " + std::to_string(m.cfg.input_side) + "x" +
        std::to_string(m.cfg.input_side) + "x" + std::to_string(m.cfg.input_channels) +
        ", got " + std::to_string(patch.height) + "x" + std::to_string(patch.width) + "x" +
        std::to_string(patch.channels));
}

template <class T>
PatchOutputT<T> make_patch_output(const std::vector<T>& logits) {
  PatchOutputT<T> po;
  po.logits = {logits[0], logits[1]};
  const std::vector<T> p = softmax(logits);
  po.probs = {p[0], p[1]};
  po.label = p[1] > p[0] ? 1 : 0;
  return po;
}

}  // namespace detail

// Conv backbone only: conv->ReLU->pool, conv->ReLU->pool, conv->ReLU.
// Returns the last conv layer's activation map (8x8x64 for the 32x32 model).
template <class T>
Tensor3T<T> forward_features(const NetworkT<T>& m, const Tensor3T<T>& patch) {
  detail::check_patch_shape(m, patch);
  const Tensor3T<T> r1 = relu_forward(conv2d_forward(patch, m.conv1));
  const Tensor3T<T> p1 = maxpool2x2_forward(r1).output;
  const Tensor3T<T> r2 = relu_forward(conv2d_forward(p1, m.conv2));
  const Tensor3T<T> p2 = maxpool2x2_forward(r2).output;
  return relu_forward(conv2d_forward(p2, m.conv3));
}

// Classifier head: pool -> flatten -> FC -> ReLU -> output -> softmax.
// Always runs eval semantics (no dropout, no RNG).
template <class T>
PatchOutputT<T> head_classify(const NetworkT<T>& m, const Tensor3T<T>& features) {
  const int fs = m.cfg.feature_side();
  if (features.height != fs || features.width != fs ||
      features.channels != m.cfg.conv3_channels)
    throw std::invalid_argument("head_classify: features must be " + std::to_string(fs) + "x" +
                                std::to_string(fs) + "x" +
                                std::to_string(m.cfg.conv3_channels));
  const Tensor3T<T> p3 = maxpool2x2_forward(features).output;
  const std::vector<T> flat = flatten(p3);
  const std::vector<T> h = relu_forward_vec(fc_forward(flat, m.fc));
  return detail::make_patch_output(fc_forward(h, m.out));
}

// Eval-mode forward pass; safe to call concurrently on a shared model.
// Composed exactly of forward_features + head_classify so the feature-space
// engine's tile-aligned outputs are bit-identical to this path.
template <class T>
PatchOutputT<T> forward_patch(const NetworkT<T>& m, const Tensor3T<T>& patch) {
  if (m.mode == RunMode::kTrain)
    throw std::logic_error("forward_patch: train mode requires the caching overload");
  return head_classify(m, forward_features(m, patch));
}

// Caching forward pass. Dropout (two draws on the FC activation vector, which
// is also the output layer's input) is applied only in train mode.
template <class T>
PatchOutputT<T> forward_patch(NetworkT<T>& m, const Tensor3T<T>& patch,
                              TrainCacheT<T>& cache) {
  detail::check_patch_shape(m, patch);
  cache = TrainCacheT<T>{};
  cache.input = patch;
  cache.conv1_out = conv2d_forward(patch, m.conv1);
  cache.pool1 = maxpool2x2_forward(relu_forward(cache.conv1_out));
  cache.conv2_out = conv2d_forward(cache.pool1.output, m.conv2);
  cache.pool2 = maxpool2x2_forward(relu_forward(cache.conv2_out));
  cache.conv3_out = conv2d_forward(cache.pool2.output, m.conv3);
  cache.relu3_out = relu_forward(cache.conv3_out);
  cache.pool3 = maxpool2x2_forward(cache.relu3_out);
  cache.flat = flatten(cache.pool3.output);
  cache.fc_out = fc_forward(cache.flat, m.fc);
  cache.fc_relu = relu_forward_vec(cache.fc_out);
  cache.dropout_rate = m.dropout_rate;
  cache.dropout_active = m.mode == RunMode::kTrain && m.dropout_rate > 0.0;
  cache.drop1 = dropout_vec(cache.fc_relu, m.dropout_rate, m.dropout_rng, m.mode,
                            &cache.drop1_mask);
  cache.drop2 =
      dropout_vec(cache.drop1, m.dropout_rate, m.dropout_rng, m.mode, &cache.drop2_mask);
  cache.output = detail::make_patch_output(fc_forward(cache.drop2, m.out));
  cache.valid = true;
  return cache.output;
}

// Cross-entropy gradients for one cached patch, including routing through the
// recorded dropout masks and pooling argmaxes.
template <class T>
GradientsT<T> backward_patch(const NetworkT<T>& m, const TrainCacheT<T>& cache,
                             int target_label) {
  if (!cache.valid)
    throw std::logic_error("backward_patch: no cached forward pass");
  if (target_label != 0 && target_label != 1)
    throw std::invalid_argument("backward_patch: label must be 0 or 1");

  GradientsT<T> g;

  // d(cross-entropy)/d(logits) for softmax outputs.
  std::vector<T> dlogits = {cache.output.probs[0], cache.output.probs[1]};
  dlogits[static_cast<std::size_t>(target_label)] -= T(1);

  FcGradsT<T> out_g = fc_backward(cache.drop2, m.out, dlogits);
  g.out_w = std::move(out_g.weight_grad);
  g.out_b = std::move(out_g.bias_grad);

  std::vector<T> d = std::move(out_g.input_grad);
  if (cache.dropout_active) {
    d = dropout_backward_vec(d, cache.dropout_rate, cache.drop2_mask);
    d = dropout_backward_vec(d, cache.dropout_rate, cache.drop1_mask);
  }
  d = relu_backward_vec(cache.fc_out, d);

  FcGradsT<T> fc_g = fc_backward(cache.flat, m.fc, d);
  g.fc_w = std::move(fc_g.weight_grad);
  g.fc_b = std::move(fc_g.bias_grad);

  Tensor3T<T> dt = cache.pool3.output;  // reuse the shape
  dt.data = std::move(fc_g.input_grad);
  dt = maxpool2x2_backward(cache.pool3, dt);
  dt = relu_backward(cache.conv3_out, dt);

  ConvGradsT<T> c3 = conv2d_backward(cache.pool2.output, m.conv3, dt);
  g.conv3_w = std::move(c3.weight_grad);
  g.conv3_b = std::move(c3.bias_grad);

  dt = maxpool2x2_backward(cache.pool2, c3.input_grad);
  dt = relu_backward(cache.conv2_out, dt);
  ConvGradsT<T> c2 = conv2d_backward(cache.pool1.output, m.conv2, dt);
  g.conv2_w = std::move(c2.weight_grad);
  g.conv2_b = std::move(c2.bias_grad);

  dt = maxpool2x2_backward(cache.pool1, c2.input_grad);
  dt = relu_backward(cache.conv1_out, dt);
  ConvGradsT<T> c1 = conv2d_backward(cache.input, m.conv1, dt);
  g.conv1_w = std::move(c1.weight_grad);
  g.conv1_b = std::move(c1.bias_grad);

  return g;
}

}  // namespace flashdet
