#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <vector>

#include "flashdet/synth_data.hpp"
#include "flashdet/trainer.hpp"

using namespace flashdet;

namespace {

std::uint64_t fnv1a(const std::vector<float>& data) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(data.data());
  for (std::size_t i = 0; i < data.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

double mean_red_minus_blue(const Tensor3& t) {
  double s = 0.0;
  for (int y = 0; y < t.height; ++y)
    for (int x = 0; x < t.width; ++x) s += t.at(y, x, 0) - t.at(y, x, 2);
  return s / (static_cast<double>(t.height) * t.width);
}

}  // namespace

TEST_CASE("generate_core determinism and degenerate fractions") {
  SynthSpec spec;
  spec.seed = 7;
  spec.side = 128;

  SUBCASE("tumor_fraction 0 leaves the mask empty") {
    spec.tumor_fraction = 0.0;
    const auto [img, mask] = generate_core(spec);
    for (const std::uint8_t v : mask.data) CHECK_EQ(v, 0);
  }

  SUBCASE("tumor_fraction 1 fills the whole core") {
    spec.tumor_fraction = 1.0;
    const auto [img, mask] = generate_core(spec);
    for (int y = 0; y < spec.side; ++y)
      for (int x = 0; x < spec.side; ++x)
        CHECK_EQ(mask.at(y, x), in_core(y, x, spec.side) ? 1 : 0);
  }

  SUBCASE("the same seed reproduces image and mask bit-exactly") {
    spec.tumor_fraction = 0.4;
    const auto [img1, mask1] = generate_core(spec);
    const auto [img2, mask2] = generate_core(spec);
    CHECK(img1.data == img2.data);
    CHECK(mask1.data == mask2.data);
    spec.seed = 8;
    const auto [img3, mask3] = generate_core(spec);
    CHECK(img1.data != img3.data);
  }

  SUBCASE("invalid specs are rejected") {
    spec.side = 32;
    CHECK_THROWS_AS(generate_core(spec), std::invalid_argument);
    spec.side = 128;
    spec.tumor_fraction = 1.5;
    CHECK_THROWS_AS(generate_core(spec), std::invalid_argument);
  }
}

TEST_CASE("generated tumor share of the core tracks the requested fraction") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthSpec spec;
    spec.seed = seed;
    spec.side = 512;
    spec.tumor_fraction = 0.5;
    const auto [img, mask] = generate_core(spec);
    std::int64_t core_pixels = 0, tumor_pixels = 0;
    for (int y = 0; y < spec.side; ++y)
      for (int x = 0; x < spec.side; ++x)
        if (in_core(y, x, spec.side)) {
          ++core_pixels;
          tumor_pixels += mask.at(y, x);
        }
    const double ratio = static_cast<double>(tumor_pixels) / static_cast<double>(core_pixels);
    CHECK_GT(ratio, 0.40);
    CHECK_LT(ratio, 0.60);
  }
}

TEST_CASE("mask and texture are pixel-aligned; background stays white") {
  SynthSpec spec;
  spec.seed = 3;
  spec.side = 256;
  spec.tumor_fraction = 0.45;
  const auto [img, mask] = generate_core(spec);
  for (int y = 0; y < spec.side; ++y)
    for (int x = 0; x < spec.side; ++x) {
      const float rb = img.at(y, x, 0) - img.at(y, x, 2);
      if (!in_core(y, x, spec.side)) {
        CHECK_EQ(img.at(y, x, 0), 1.0f);
        CHECK_EQ(mask.at(y, x), 0);
      } else if (mask.at(y, x)) {
        CHECK_GT(rb, 0.10f);  // warm tumor texture
      } else {
        CHECK_LT(rb, 0.02f);  // cool non-tumor texture
      }
    }
}

TEST_CASE("generate_training_regions emits labeled pure-class regions") {
  const std::vector<LabeledRegion> regions = generate_training_regions(11, 8, 6);
  REQUIRE_EQ(regions.size(), 14);
  int tumor = 0, normal = 0;
  for (const LabeledRegion& r : regions) {
    CHECK_EQ(r.image.height, 300);
    CHECK_EQ(r.image.width, 300);
    CHECK_EQ(r.image.channels, 3);
    (r.label ? tumor : normal)++;
  }
  CHECK_EQ(tumor, 8);
  CHECK_EQ(normal, 6);
  // The corpus balance in the source data these stand in for.
  CHECK_EQ(243 + 334, 577);
}

TEST_CASE("regions from disjoint seeds are hash-distinct") {
  const std::vector<LabeledRegion> regions = generate_training_regions(21, 50, 50);
  std::set<std::uint64_t> hashes;
  for (const LabeledRegion& r : regions) hashes.insert(fnv1a(r.image.data));
  CHECK_EQ(hashes.size(), regions.size());
}

TEST_CASE("a mean-color threshold separates augmented patches") {
  // Bounds the task difficulty: the classes must be separable by a linear
  // rule on the mean color before the network ever sees them.
  const std::vector<LabeledRegion> regions = generate_training_regions(31, 3, 3);
  Rng rng(32);
  int correct = 0, total = 0;
  for (const LabeledRegion& r : regions) {
    for (const Tensor3& patch : augment_region(r, kAugmentAngles, 2, rng)) {
      const int predicted = mean_red_minus_blue(patch) > 0.05 ? 1 : 0;
      correct += predicted == r.label;
      ++total;
    }
  }
  CHECK_GT(static_cast<double>(correct) / total, 0.9);
}
