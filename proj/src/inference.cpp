#include "flashdet/inference.hpp"

#include <atomic>
#include <cstring>
#include <stdexcept>
#include <string>

#include "flashdet/parallel.hpp"

namespace flashdet {

namespace {

constexpr int kWindow = 32;
constexpr int kFeatureWindow = 8;   // second sliding window side, feature cells
constexpr int kFeaturePixels = 4;   // image pixels per feature cell (two 2x2 pools)
constexpr int kCenterOffset = 16;   // patch center relative to its top-left corner

void check_image(const Tensor3& image) {
  if (image.channels != 3)
    throw std::invalid_argument("infer: image must have 3 channels, got " +
                                std::to_string(image.channels));
  if (image.height < kWindow || image.width < kWindow)
    throw std::invalid_argument("infer: image " + std::to_string(image.height) + "x" +
                                std::to_string(image.width) + " is smaller than the " +
                                std::to_string(kWindow) + "-pixel window");
}

// Nearest grid index for a pixel coordinate, ties toward the smaller index.
int nearest_site(int pixel, int origin, int stride, int count) {
  const int d = pixel - origin;
  if (d <= 0) return 0;
  int i = d / stride;
  if (2 * (d - i * stride) > stride) ++i;
  return i < count ? i : count - 1;
}

}  // namespace

void InferenceConfig::validate(int image_height, int image_width) const {
  if (window != kWindow)
    throw std::invalid_argument("InferenceConfig: window must be 32");
  if (stride < 1 || stride > window)
    throw std::invalid_argument("InferenceConfig: stride must be in [1, 32]");
  if (image_height < window || image_width < window)
    throw std::invalid_argument("InferenceConfig: image smaller than the window");
}

std::int64_t count_patches_dense(std::int64_t l, std::int64_t w) {
  if (w < 1 || l < w)
    throw std::invalid_argument("count_patches_dense: need l >= w >= 1");
  const std::int64_t n = l - w + 1;
  return n * n;
}

std::int64_t count_patches_flash(std::int64_t l, std::int64_t w) {
  if (w < 1 || l < w)
    throw std::invalid_argument("count_patches_flash: need l >= w >= 1");
  const std::int64_t n = l / w;
  return n * n;
}

LabelGrid dense_infer(const Model& m, const Tensor3& image, int stride, int threads,
                      EngineStats* stats) {
  check_image(image);
  if (stride < 1 || stride > kWindow)
    throw std::invalid_argument("dense_infer: stride must be in [1, 32]");

  LabelGrid grid;
  grid.origin_row = kCenterOffset;
  grid.origin_col = kCenterOffset;
  grid.stride = stride;
  grid.rows = (image.height - kWindow) / stride + 1;
  grid.cols = (image.width - kWindow) / stride + 1;
  grid.labels.assign(static_cast<std::size_t>(grid.site_count()), 0);
  grid.probs.assign(static_cast<std::size_t>(grid.site_count()), 0.0f);

  std::atomic<std::int64_t> invocations{0};
  parallel_for(grid.rows, threads, [&](std::int64_t r0, std::int64_t r1) {
    std::int64_t local = 0;
    for (std::int64_t r = r0; r < r1; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        const Tensor3 patch =
            crop(image, static_cast<int>(r) * stride, c * stride, kWindow, kWindow);
        // Eval composition, independent of the model's mode flag.
        const PatchOutput po = head_classify(m, forward_features(m, patch));
        const std::size_t idx = static_cast<std::size_t>(r) * grid.cols + c;
        grid.labels[idx] = static_cast<std::uint8_t>(po.label);
        grid.probs[idx] = po.probs[1];
        ++local;
      }
    }
    invocations += local;
  });

  if (stats) {
    stats->conv_stack_invocations += invocations.load();
    stats->head_invocations += invocations.load();
  }
  return grid;
}

FeatureGrid extract_aggregate_features(const Model& m, const Tensor3& image, int threads,
                                       EngineStats* stats) {
  check_image(image);
  FeatureGrid fg;
  fg.tiles_h = image.height / kWindow;
  fg.tiles_w = image.width / kWindow;
  const int fh = fg.tiles_h * kFeatureWindow;
  const int fw = fg.tiles_w * kFeatureWindow;
  const int fc = m.cfg.conv3_channels;
  fg.data = Tensor3(fh, fw, fc);

  std::atomic<std::int64_t> invocations{0};
  const std::int64_t tiles = static_cast<std::int64_t>(fg.tiles_h) * fg.tiles_w;
  parallel_for(tiles, threads, [&](std::int64_t t0, std::int64_t t1) {
    std::int64_t local = 0;
    for (std::int64_t t = t0; t < t1; ++t) {
      const int a = static_cast<int>(t) / fg.tiles_w;
      const int b = static_cast<int>(t) % fg.tiles_w;
      const Tensor3 tile = crop(image, a * kWindow, b * kWindow, kWindow, kWindow);
      const Tensor3 feat = forward_features(m, tile);
      for (int u = 0; u < kFeatureWindow; ++u)
        std::memcpy(fg.data.pixel(a * kFeatureWindow + u, b * kFeatureWindow),
                    feat.pixel(u, 0),
                    static_cast<std::size_t>(kFeatureWindow) * fc * sizeof(float));
      ++local;
    }
    invocations += local;
  });

  if (stats) stats->conv_stack_invocations += invocations.load();
  return fg;
}

LabelGrid flash_infer(const Model& m, const Tensor3& image, int threads,
                      EngineStats* stats) {
  const FeatureGrid fg = extract_aggregate_features(m, image, threads, stats);
  const int fc = m.cfg.conv3_channels;

  LabelGrid grid;
  grid.origin_row = kCenterOffset;
  grid.origin_col = kCenterOffset;
  grid.stride = kFeaturePixels;
  grid.rows = fg.tiles_h * kFeatureWindow - (kFeatureWindow - 1);
  grid.cols = fg.tiles_w * kFeatureWindow - (kFeatureWindow - 1);
  grid.labels.assign(static_cast<std::size_t>(grid.site_count()), 0);
  grid.probs.assign(static_cast<std::size_t>(grid.site_count()), 0.0f);

  std::atomic<std::int64_t> invocations{0};
  parallel_for(grid.rows, threads, [&](std::int64_t r0, std::int64_t r1) {
    std::int64_t local = 0;
    Tensor3 window(kFeatureWindow, kFeatureWindow, fc);
    for (std::int64_t r = r0; r < r1; ++r) {
      for (int c = 0; c < grid.cols; ++c) {
        for (int u = 0; u < kFeatureWindow; ++u)
          std::memcpy(window.pixel(u, 0), fg.data.pixel(static_cast<int>(r) + u, c),
                      static_cast<std::size_t>(kFeatureWindow) * fc * sizeof(float));
        const PatchOutput po = head_classify(m, window);
        const std::size_t idx = static_cast<std::size_t>(r) * grid.cols + c;
        grid.labels[idx] = static_cast<std::uint8_t>(po.label);
        grid.probs[idx] = po.probs[1];
        ++local;
      }
    }
    invocations += local;
  });

  if (stats) stats->head_invocations += invocations.load();
  return grid;
}

std::pair<Mask, Tensor3> grid_to_mask(const LabelGrid& grid, int height, int width) {
  if (grid.rows < 1 || grid.cols < 1)
    throw std::invalid_argument("grid_to_mask: empty grid");
  if (height < 1 || width < 1)
    throw std::invalid_argument("grid_to_mask: target size must be positive");

  std::vector<int> row_site(static_cast<std::size_t>(height));
  std::vector<int> col_site(static_cast<std::size_t>(width));
  for (int y = 0; y < height; ++y)
    row_site[static_cast<std::size_t>(y)] =
        nearest_site(y, grid.origin_row, grid.stride, grid.rows);
  for (int x = 0; x < width; ++x)
    col_site[static_cast<std::size_t>(x)] =
        nearest_site(x, grid.origin_col, grid.stride, grid.cols);

  Mask mask(height, width);
  Tensor3 prob(height, width, 1);
  for (int y = 0; y < height; ++y) {
    const std::size_t base = static_cast<std::size_t>(row_site[y]) * grid.cols;
    for (int x = 0; x < width; ++x) {
      const std::size_t s = base + static_cast<std::size_t>(col_site[x]);
      mask.at(y, x) = grid.labels[s];
      prob.at(y, x, 0) = grid.probs[s];
    }
  }
  return {std::move(mask), std::move(prob)};
}

std::pair<Mask, Tensor3> strided_infer(const Model& m, const Tensor3& image, int stride,
                                       int threads, EngineStats* stats) {
  const LabelGrid grid = dense_infer(m, image, stride, threads, stats);
  return grid_to_mask(grid, image.height, image.width);
}

}  // namespace flashdet
