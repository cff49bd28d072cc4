#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "flashdet/network.hpp"
#include "flashdet/tensor.hpp"

namespace flashdet {

enum class Engine { kDense, kStrided, kFlash };

struct InferenceConfig {
  int window = 32;  // patch side; fixed by the network input
  int stride = 1;   // dense/strided engines
  Engine engine = Engine::kDense;
  int threads = 1;

  void validate(int image_height, int image_width) const;
};

// Sparse classification result: per-site labels and tumor probabilities on a
// regular grid of image positions (site (i, j) sits at
// origin + i*stride rows, origin + j*stride cols).
struct LabelGrid {
  int origin_row = 0;
  int origin_col = 0;
  int stride = 1;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> labels;  // row-major, 0 = non_tumor, 1 = tumor
  std::vector<float> probs;          // tumor-class probability per site

  std::int64_t site_count() const { return static_cast<std::int64_t>(rows) * cols; }
};

// Aggregated per-tile conv features: tile (a, b)'s 8x8x64 block occupies
// feature rows [8a, 8a+8) and cols [8b, 8b+8).
struct FeatureGrid {
  int tiles_h = 0;
  int tiles_w = 0;
  Tensor3 data;
};

// Binary mask, 0 = non_tumor, 1 = tumor.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

// Full conv-stack and classifier-head executions performed by an engine run.
struct EngineStats {
  std::int64_t conv_stack_invocations = 0;
  std::int64_t head_invocations = 0;
};

// (l - w + 1)^2: every patch position of a stride-1 sliding window.
std::int64_t count_patches_dense(std::int64_t l, std::int64_t w);
// floor(l / w)^2: non-overlapping tiling.
std::int64_t count_patches_flash(std::int64_t l, std::int64_t w);

// Classifies the 32x32 patch at every offset (i*stride, j*stride); grid
// origin is the patch center (16, 16).
LabelGrid dense_infer(const Model& m, const Tensor3& image, int stride, int threads = 1,
                      EngineStats* stats = nullptr);

// Runs the conv backbone on every non-overlapping 32x32 tile (leftover
// right/bottom pixels beyond the tiling are ignored) and aggregates the
// per-tile 8x8x64 feature blocks into one map.
FeatureGrid extract_aggregate_features(const Model& m, const Tensor3& image,
                                       int threads = 1, EngineStats* stats = nullptr);

// Aggregated-feature engine: slides an 8x8x64 window at stride 1 over the
// FeatureGrid and classifies each window with the network head. One feature
// cell spans 4 image pixels, so the resulting grid has origin (16, 16) and
// stride 4 in image space.
LabelGrid flash_infer(const Model& m, const Tensor3& image, int threads = 1,
                      EngineStats* stats = nullptr);

// Nearest-site assignment of grid labels/probs to every pixel; ties go to
// the smaller site index and border pixels take the nearest edge site.
std::pair<Mask, Tensor3> grid_to_mask(const LabelGrid& grid, int height, int width);

// dense_infer at the given stride followed by grid_to_mask.
std::pair<Mask, Tensor3> strided_infer(const Model& m, const Tensor3& image, int stride,
                                       int threads = 1, EngineStats* stats = nullptr);

}  // namespace flashdet
