#include "flashdet/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flashdet {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice_hash(std::int64_t x, std::int64_t y, std::uint64_t salt) {
  const std::uint64_t h = splitmix64(static_cast<std::uint64_t>(x) * 0x100000001b3ULL ^
                                     static_cast<std::uint64_t>(y) + salt);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Bilinear value noise on an integer lattice, in [0, 1).
double value_noise(double x, double y, std::uint64_t salt) {
  const std::int64_t x0 = static_cast<std::int64_t>(std::floor(x));
  const std::int64_t y0 = static_cast<std::int64_t>(std::floor(y));
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  const double v00 = lattice_hash(x0, y0, salt);
  const double v01 = lattice_hash(x0 + 1, y0, salt);
  const double v10 = lattice_hash(x0, y0 + 1, salt);
  const double v11 = lattice_hash(x0 + 1, y0 + 1, salt);
  const double top = v00 + fx * (v01 - v00);
  const double bot = v10 + fx * (v11 - v10);
  return top + fy * (bot - top);
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

TextureParams default_tumor_texture() {
  TextureParams t;
  t.base_color = {0.82f, 0.70f, 0.60f};
  t.base_jitter = 0.02f;
  t.nucleus_color = {0.46f, 0.30f, 0.16f};
  t.nucleus_jitter = 0.05f;
  t.nucleus_density = 0.45;
  t.radius_min = 2.0;
  t.radius_max = 4.0;
  return t;
}

TextureParams default_normal_texture() {
  TextureParams t;
  t.base_color = {0.86f, 0.86f, 0.92f};
  t.base_jitter = 0.02f;
  t.nucleus_color = {0.36f, 0.33f, 0.62f};
  t.nucleus_jitter = 0.05f;
  t.nucleus_density = 0.15;
  t.radius_min = 2.0;
  t.radius_max = 4.0;
  return t;
}

void SynthSpec::validate() const {
  if (side < 64) throw std::invalid_argument("SynthSpec: side must be >= 64");
  if (tumor_fraction < 0.0 || tumor_fraction > 1.0)
    throw std::invalid_argument("SynthSpec: tumor_fraction must be in [0, 1]");
  if (blob_count < 1) throw std::invalid_argument("SynthSpec: blob_count must be >= 1");
  if (blob_scale <= 0.0) throw std::invalid_argument("SynthSpec: blob_scale must be > 0");
}

double core_radius(int side) { return 0.46 * side; }

bool in_core(int row, int col, int side) {
  const double c = (side - 1) / 2.0;
  const double dy = row - c;
  const double dx = col - c;
  const double r = core_radius(side);
  return dy * dy + dx * dx <= r * r;
}

void paint_class_textures(Tensor3& image, const Mask& class_mask, bool core_only,
                          const TextureParams& tumor, const TextureParams& normal,
                          Rng& rng) {
  if (image.channels != 3)
    throw std::invalid_argument("paint_class_textures: image must have 3 channels");
  if (image.height != class_mask.height || image.width != class_mask.width)
    throw std::invalid_argument("paint_class_textures: mask dimensions differ");

  const int side = image.height;
  const std::uint64_t cluster_salt = rng.next_u64();

  // Background pass. One jitter triple per pixel keeps the draw sequence
  // independent of the mask content.
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const float j0 = static_cast<float>(rng.uniform(-1.0, 1.0));
      const float j1 = static_cast<float>(rng.uniform(-1.0, 1.0));
      const float j2 = static_cast<float>(rng.uniform(-1.0, 1.0));
      float* px = image.pixel(y, x);
      if (core_only && !in_core(y, x, side)) {
        px[0] = px[1] = px[2] = 1.0f;
        continue;
      }
      const TextureParams& t = class_mask.at(y, x) ? tumor : normal;
      px[0] = clamp01(t.base_color[0] + t.base_jitter * j0);
      px[1] = clamp01(t.base_color[1] + t.base_jitter * j1);
      px[2] = clamp01(t.base_color[2] + t.base_jitter * j2);
    }
  }

  // Nucleus pass: one candidate per 4x4 cell with a jittered center. Tumor
  // nuclei are denser and additionally clumped by a low-frequency field.
  // A nucleus only paints pixels of its own class, so texture and mask stay
  // pixel-aligned.
  for (int cy = 0; cy < image.height; cy += 4) {
    for (int cx = 0; cx < image.width; cx += 4) {
      const double jy = rng.uniform() * 4.0;
      const double jx = rng.uniform() * 4.0;
      const double accept = rng.uniform();
      const double radius_u = rng.uniform();
      const float n0 = static_cast<float>(rng.uniform(-1.0, 1.0));
      const float n1 = static_cast<float>(rng.uniform(-1.0, 1.0));
      const float n2 = static_cast<float>(rng.uniform(-1.0, 1.0));

      const int py = cy + static_cast<int>(jy);
      const int px = cx + static_cast<int>(jx);
      if (py >= image.height || px >= image.width) continue;
      if (core_only && !in_core(py, px, side)) continue;

      const int cls = class_mask.at(py, px);
      const TextureParams& t = cls ? tumor : normal;
      double density = t.nucleus_density;
      if (cls) density *= 0.6 + 0.8 * value_noise(px / 24.0, py / 24.0, cluster_salt);
      if (accept >= density) continue;

      const double radius = t.radius_min + radius_u * (t.radius_max - t.radius_min);
      const float c0 = clamp01(t.nucleus_color[0] + t.nucleus_jitter * n0);
      const float c1 = clamp01(t.nucleus_color[1] + t.nucleus_jitter * n1);
      const float c2 = clamp01(t.nucleus_color[2] + t.nucleus_jitter * n2);
      const int r = static_cast<int>(std::ceil(radius));
      for (int yy = std::max(0, py - r); yy <= std::min(image.height - 1, py + r); ++yy) {
        for (int xx = std::max(0, px - r); xx <= std::min(image.width - 1, px + r); ++xx) {
          const double d2 = static_cast<double>(yy - py) * (yy - py) +
                            static_cast<double>(xx - px) * (xx - px);
          if (d2 > radius * radius) continue;
          if (class_mask.at(yy, xx) != cls) continue;
          if (core_only && !in_core(yy, xx, side)) continue;
          float* q = image.pixel(yy, xx);
          q[0] = c0;
          q[1] = c1;
          q[2] = c2;
        }
      }
    }
  }
}

std::pair<Tensor3, Mask> generate_core(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int side = spec.side;

  // Smooth blob field: a sum of Gaussian bumps at random in-core centers.
  struct Bump {
    double y, x, inv2s2;
  };
  std::vector<Bump> bumps;
  bumps.reserve(static_cast<std::size_t>(spec.blob_count));
  const double r = core_radius(side);
  const double c = (side - 1) / 2.0;
  for (int i = 0; i < spec.blob_count; ++i) {
    const double ang = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double rad = r * std::sqrt(rng.uniform());
    const double sigma = spec.blob_scale * rng.uniform(0.7, 1.3);
    bumps.push_back({c + rad * std::sin(ang), c + rad * std::cos(ang),
                     1.0 / (2.0 * sigma * sigma)});
  }

  std::vector<float> field(static_cast<std::size_t>(side) * side, 0.0f);
  std::vector<float> core_values;
  core_values.reserve(field.size());
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double v = 0.0;
      for (const Bump& b : bumps) {
        const double dy = y - b.y;
        const double dx = x - b.x;
        v += std::exp(-(dy * dy + dx * dx) * b.inv2s2);
      }
      field[static_cast<std::size_t>(y) * side + x] = static_cast<float>(v);
      if (in_core(y, x, side)) core_values.push_back(static_cast<float>(v));
    }
  }

  // Threshold at the requested quantile so the in-core tumor share is exact.
  Mask mask(side, side);
  if (spec.tumor_fraction > 0.0 && !core_values.empty()) {
    float tau = -1.0f;  // tumor_fraction == 1: every core pixel qualifies
    if (spec.tumor_fraction < 1.0) {
      const std::size_t k = static_cast<std::size_t>(
          std::lround((1.0 - spec.tumor_fraction) * (core_values.size() - 1)));
      std::nth_element(core_values.begin(), core_values.begin() + k, core_values.end());
      tau = core_values[k];
    }
    for (int y = 0; y < side; ++y)
      for (int x = 0; x < side; ++x)
        if (in_core(y, x, side) && field[static_cast<std::size_t>(y) * side + x] >= tau)
          mask.at(y, x) = 1;
  }

  Tensor3 image(side, side, 3);
  paint_class_textures(image, mask, /*core_only=*/true, spec.tumor_texture,
                       spec.normal_texture, rng);
  return {std::move(image), std::move(mask)};
}

std::vector<LabeledRegion> generate_training_regions(std::uint64_t seed, int tumor_count,
                                                     int normal_count) {
  if (tumor_count < 0 || normal_count < 0 || tumor_count + normal_count < 1)
    throw std::invalid_argument("generate_training_regions: need at least one region");
  std::vector<LabeledRegion> regions;
  regions.reserve(static_cast<std::size_t>(tumor_count + normal_count));
  const TextureParams tumor = default_tumor_texture();
  const TextureParams normal = default_normal_texture();
  for (int i = 0; i < normal_count + tumor_count; ++i) {
    const int label = i < normal_count ? 0 : 1;
    LabeledRegion r;
    r.label = label;
    r.image = Tensor3(kRegionSide, kRegionSide, 3);
    Mask cls(kRegionSide, kRegionSide);
    if (label) std::fill(cls.data.begin(), cls.data.end(), std::uint8_t{1});
    Rng rng(splitmix64(seed ^ (static_cast<std::uint64_t>(i) << 20)));
    paint_class_textures(r.image, cls, /*core_only=*/false, tumor, normal, rng);
    regions.push_back(std::move(r));
  }
  return regions;
}

}  // namespace flashdet
