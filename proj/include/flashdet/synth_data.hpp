#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "flashdet/inference.hpp"
#include "flashdet/tensor.hpp"
#include "flashdet/trainer.hpp"

namespace flashdet {

// Two-class colored-nuclei texture over a tinted background. The class color
// gap is deliberate: the red-minus-blue channel separates the classes at
// every pixel, which bounds the difficulty of the classification task.
struct TextureParams {
  std::array<float, 3> base_color{};
  float base_jitter = 0.0f;  // per-channel uniform +/- amplitude
  std::array<float, 3> nucleus_color{};
  float nucleus_jitter = 0.0f;
  double nucleus_density = 0.0;  // acceptance probability per 4x4 cell
  double radius_min = 2.0;
  double radius_max = 4.0;
};

// DAB-brown-like tumor texture: dense, dark, clustered nuclei on a warm tint.
// Every pixel satisfies r - b >= 0.14.
TextureParams default_tumor_texture();
// Hematoxylin-blue-like non-tumor texture: sparse pale nuclei on a cool tint.
// Every pixel satisfies r - b <= -0.02.
TextureParams default_normal_texture();

struct SynthSpec {
  std::uint64_t seed = 0;
  int side = 512;
  double tumor_fraction = 0.3;
  int blob_count = 8;
  double blob_scale = 96.0;  // pixels
  TextureParams tumor_texture = default_tumor_texture();
  TextureParams normal_texture = default_normal_texture();

  void validate() const;
};

// Circular core geometry shared with the tests.
double core_radius(int side);
bool in_core(int row, int col, int side);

// Circular core on a white background. Tumor regions are smooth random blobs
// (a thresholded sum of Gaussian bumps, cut at the tumor_fraction quantile so
// the tumor share of the core is exact up to ties). The mask marks tumor
// pixels; image and mask are deterministic given the spec.
std::pair<Tensor3, Mask> generate_core(const SynthSpec& spec);

// Pure-class 300x300 regions feeding the augmentation pipeline; non-tumor
// regions come first. Each region draws from its own seeded stream.
std::vector<LabeledRegion> generate_training_regions(std::uint64_t seed, int tumor_count,
                                                     int normal_count);

// Fills the image with class textures according to the mask (1 = tumor).
// When core_only is set, pixels outside the circular core stay white.
// Exposed so tests can build fixtures (e.g. a thin tumor band) from the same
// textures the generators use.
void paint_class_textures(Tensor3& image, const Mask& class_mask, bool core_only,
                          const TextureParams& tumor, const TextureParams& normal,
                          Rng& rng);

}  // namespace flashdet
