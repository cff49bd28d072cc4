#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "flashdet/network.hpp"
#include "flashdet/rng.hpp"
#include "gradcheck.hpp"

using namespace flashdet;

namespace {

Tensor3 random_patch(Rng& rng, int side = 32, int channels = 3) {
  Tensor3 p(side, side, channels);
  for (auto& v : p.data) v = static_cast<float>(rng.uniform());
  return p;
}

void zero_weights(Model& m) {
  m.for_each_param_array([](std::vector<float>& a) { std::fill(a.begin(), a.end(), 0.0f); });
}

NetConfig reduced_config() {
  NetConfig cfg;
  cfg.input_side = 8;
  cfg.input_channels = 3;
  cfg.conv1_channels = 2;
  cfg.conv2_channels = 3;
  cfg.conv3_channels = 4;
  cfg.fc_features = 8;
  return cfg;
}

}  // namespace

TEST_CASE("build_model layer sizes match the architecture table") {
  const Model m = build_model(1);
  CHECK_EQ(m.conv1.weight_count(), 432);
  CHECK_EQ(m.conv2.weight_count(), 4608);
  CHECK_EQ(m.conv3.weight_count(), 18432);
  CHECK_EQ(m.fc.weight_count(), 262144);
  CHECK_EQ(m.out.weight_count(), 512);
  CHECK_EQ(m.parameter_count(false), 286128);
  CHECK_EQ(m.parameter_count(true), 286128 + 16 + 32 + 64 + 256 + 2);
}

TEST_CASE("build_model draws Glorot-bounded weights and zero biases") {
  const Model m = build_model(42);
  // conv1: fan_in 27, fan_out 144 -> bound sqrt(6/171).
  const double bound = glorot_bound(27, 144);
  CHECK_EQ(bound, doctest::Approx(0.18731716).epsilon(1e-6));
  float lo = 0.0f, hi = 0.0f;
  for (const float w : m.conv1.weights) {
    lo = std::min(lo, w);
    hi = std::max(hi, w);
    CHECK_GE(w, -bound);
    CHECK_LE(w, bound);
  }
  // The draw actually exercises most of the interval.
  CHECK_LT(lo, -0.9 * bound);
  CHECK_GT(hi, 0.9 * bound);
  for (const float b : m.conv1.bias) CHECK_EQ(b, 0.0f);
  for (const float b : m.fc.bias) CHECK_EQ(b, 0.0f);
}

TEST_CASE("build_model is deterministic per seed") {
  const Model a = build_model(7);
  const Model b = build_model(7);
  const Model c = build_model(8);
  CHECK(a.conv1.weights == b.conv1.weights);
  CHECK(a.fc.weights == b.fc.weights);
  CHECK(a.out.weights == b.out.weights);
  CHECK(a.conv1.weights != c.conv1.weights);
}

TEST_CASE("forward_patch pipeline shapes follow the architecture table") {
  const Model m = build_model(3);
  Rng rng(5);
  const Tensor3 patch = random_patch(rng);

  const Tensor3 c1 = conv2d_forward(patch, m.conv1);
  CHECK((c1.height == 32 && c1.width == 32 && c1.channels == 16));
  const Tensor3 p1 = maxpool2x2_forward(relu_forward(c1)).output;
  CHECK((p1.height == 16 && p1.width == 16 && p1.channels == 16));
  const Tensor3 c2 = conv2d_forward(p1, m.conv2);
  CHECK((c2.height == 16 && c2.width == 16 && c2.channels == 32));
  const Tensor3 p2 = maxpool2x2_forward(relu_forward(c2)).output;
  CHECK((p2.height == 8 && p2.width == 8 && p2.channels == 32));
  const Tensor3 c3 = conv2d_forward(p2, m.conv3);
  CHECK((c3.height == 8 && c3.width == 8 && c3.channels == 64));
  const Tensor3 p3 = maxpool2x2_forward(relu_forward(c3)).output;
  CHECK((p3.height == 4 && p3.width == 4 && p3.channels == 64));
  CHECK_EQ(flatten(p3).size(), 1024);
}

TEST_CASE("forward_patch on a zero model yields even probabilities") {
  Model m = build_model(1);
  zero_weights(m);
  Rng rng(2);
  const PatchOutput po = forward_patch(std::as_const(m), random_patch(rng));
  CHECK_EQ(po.logits[0], 0.0f);
  CHECK_EQ(po.logits[1], 0.0f);
  CHECK_EQ(po.probs[0], doctest::Approx(0.5f));
  CHECK_EQ(po.probs[1], doctest::Approx(0.5f));
}

TEST_CASE("eval-mode forward is deterministic and rejects bad shapes") {
  const Model m = build_model(9);
  Rng rng(10);
  const Tensor3 patch = random_patch(rng);
  const PatchOutput a = forward_patch(m, patch);
  const PatchOutput b = forward_patch(m, patch);
  CHECK_EQ(a.probs[0], b.probs[0]);
  CHECK_EQ(a.probs[1], b.probs[1]);
  CHECK_EQ(a.label, b.label);

  CHECK_THROWS_AS(forward_patch(m, Tensor3(16, 32, 3)), std::invalid_argument);
  CHECK_THROWS_AS(forward_patch(m, Tensor3(32, 32, 1)), std::invalid_argument);
}

TEST_CASE("forward_features output and decomposition invariant") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const Model m = build_model(1000 + static_cast<std::uint64_t>(trial));
    const Tensor3 patch = random_patch(rng);
    const Tensor3 feat = forward_features(m, patch);
    CHECK((feat.height == 8 && feat.width == 8 && feat.channels == 64));
    const PatchOutput via_head = head_classify(m, feat);
    const PatchOutput direct = forward_patch(m, patch);
    // Bit-exact: the eval forward is literally this composition.
    CHECK_EQ(via_head.logits[0], direct.logits[0]);
    CHECK_EQ(via_head.logits[1], direct.logits[1]);
    CHECK_EQ(via_head.probs[1], direct.probs[1]);
    CHECK_EQ(via_head.label, direct.label);
  }
}

TEST_CASE("forward_features on a zero model is zero") {
  Model m = build_model(4);
  zero_weights(m);
  Rng rng(6);
  const Tensor3 feat = forward_features(std::as_const(m), random_patch(rng));
  for (const float v : feat.data) CHECK_EQ(v, 0.0f);
}

TEST_CASE("head_classify validates shape and is deterministic") {
  Model m = build_model(12);
  CHECK_THROWS_AS(head_classify(m, Tensor3(4, 4, 64)), std::invalid_argument);
  CHECK_THROWS_AS(head_classify(m, Tensor3(8, 8, 32)), std::invalid_argument);

  Rng rng(13);
  Tensor3 feat(8, 8, 64);
  for (auto& v : feat.data) v = static_cast<float>(rng.uniform());
  const PatchOutput a = head_classify(m, feat);
  const PatchOutput b = head_classify(m, feat);
  CHECK_EQ(a.logits[0], b.logits[0]);
  CHECK_EQ(a.logits[1], b.logits[1]);

  zero_weights(m);
  const PatchOutput z = head_classify(m, Tensor3(8, 8, 64));
  CHECK_EQ(z.probs[0], doctest::Approx(0.5f));
  CHECK_EQ(z.probs[1], doctest::Approx(0.5f));
}

TEST_CASE("backward_patch needs a cached forward pass") {
  const Model m = build_model(3);
  TrainCache cache;
  CHECK_THROWS_AS(backward_patch(m, cache, 1), std::logic_error);
}

TEST_CASE("full-network gradients match finite differences (reduced variant)") {
  // 64-bit variant of the whole pipeline, checked with and without dropout.
  for (const double rate : {0.0, 0.5}) {
    NetworkT<double> net = build_network<double>(reduced_config(), 99);
    net.dropout_rate = rate;
    net.set_mode(RunMode::kTrain);
    Rng rng(55);
    Tensor3T<double> patch(8, 8, 3);
    for (auto& v : patch.data) v = rng.uniform();
    const int target = 1;
    const std::uint64_t mask_seed = 1234;

    auto loss = [&]() {
      net.reseed_dropout(mask_seed);
      TrainCacheT<double> c;
      forward_patch(net, patch, c);
      return -std::log(std::max(c.output.probs[target], 1e-300));
    };

    net.reseed_dropout(mask_seed);
    TrainCacheT<double> cache;
    forward_patch(net, patch, cache);
    const GradientsT<double> analytic = backward_patch(net, cache, target);

    std::vector<const std::vector<double>*> grad_arrays;
    analytic.for_each_array(
        [&](const std::vector<double>& a) { grad_arrays.push_back(&a); });
    std::vector<std::vector<double>*> param_arrays;
    net.for_each_param_array([&](std::vector<double>& a) { param_arrays.push_back(&a); });
    REQUIRE_EQ(grad_arrays.size(), param_arrays.size());

    double worst = 0.0;
    for (std::size_t a = 0; a < param_arrays.size(); ++a) {
      for (std::size_t i = 0; i < param_arrays[a]->size(); ++i) {
        const double fd = central_difference((*param_arrays[a])[i], loss);
        worst = std::max(worst, relative_error((*grad_arrays[a])[i], fd));
      }
    }
    CHECK_LT(worst, 1e-4);
  }
}

TEST_CASE("confident correct prediction has a vanishing gradient") {
  Model m = build_model(21);
  m.out.bias[1] = 40.0f;  // drives prob[1] to ~1
  m.set_mode(RunMode::kTrain);
  m.dropout_rate = 0.0;
  Rng rng(22);
  TrainCache cache;
  forward_patch(m, random_patch(rng), cache);
  CHECK_GT(cache.output.probs[1], 0.999f);
  const Gradients g = backward_patch(m, cache, 1);
  double max_abs = 0.0;
  g.for_each_array([&](const std::vector<float>& a) {
    for (const float v : a) max_abs = std::max(max_abs, std::abs(static_cast<double>(v)));
  });
  CHECK_LT(max_abs, 1e-6);
}

TEST_CASE("train-mode gradients are deterministic given the dropout seed") {
  Rng rng(31);
  const Tensor3 patch = random_patch(rng);
  auto run = [&]() {
    Model m = build_model(17);
    m.set_mode(RunMode::kTrain);
    m.reseed_dropout(555);
    TrainCache cache;
    forward_patch(m, patch, cache);
    return backward_patch(m, cache, 0);
  };
  const Gradients a = run();
  const Gradients b = run();
  CHECK(a.conv1_w == b.conv1_w);
  CHECK(a.fc_w == b.fc_w);
  CHECK(a.out_w == b.out_w);
  CHECK(a.out_b == b.out_b);
}

TEST_CASE("train mode requires the caching overload") {
  Model m = build_model(2);
  m.set_mode(RunMode::kTrain);
  Rng rng(3);
  const Tensor3 patch = random_patch(rng);
  CHECK_THROWS_AS(forward_patch(std::as_const(m), patch), std::logic_error);
}
