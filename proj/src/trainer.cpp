#include "flashdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace flashdet {

namespace {

constexpr double kPi = 3.14159265358979323846;

// cos/sin with values snapped to exact 0/±1 so axis-aligned rotations are
// lossless pixel permutations.
void rotation_cos_sin(double angle_deg, double& c, double& s) {
  const double rad = angle_deg * kPi / 180.0;
  c = std::cos(rad);
  s = std::sin(rad);
  auto snap = [](double v) {
    for (double t : {-1.0, 0.0, 1.0})
      if (std::abs(v - t) < 1e-9) return t;
    return v;
  };
  c = snap(c);
  s = snap(s);
}

float bilinear_at(const Tensor3& t, double sy, double sx, int ch) {
  const int y0 = static_cast<int>(std::floor(sy));
  const int x0 = static_cast<int>(std::floor(sx));
  const double fy = sy - y0;
  const double fx = sx - x0;
  auto cy = [&](int y) { return std::clamp(y, 0, t.height - 1); };
  auto cx = [&](int x) { return std::clamp(x, 0, t.width - 1); };
  const double v00 = t.at(cy(y0), cx(x0), ch);
  const double v01 = t.at(cy(y0), cx(x0 + 1), ch);
  const double v10 = t.at(cy(y0 + 1), cx(x0), ch);
  const double v11 = t.at(cy(y0 + 1), cx(x0 + 1), ch);
  const double top = v00 + fx * (v01 - v00);
  const double bot = v10 + fx * (v11 - v10);
  return static_cast<float>(top + fy * (bot - top));
}

}  // namespace

int inscribed_square_side(int side, double angle_deg) {
  double c, s;
  rotation_cos_sin(angle_deg, c, s);
  const double denom = std::abs(c) + std::abs(s);
  return static_cast<int>(std::floor(static_cast<double>(side) / denom));
}

Tensor3 rotate_bilinear(const Tensor3& src, double angle_deg) {
  double c, s;
  rotation_cos_sin(angle_deg, c, s);
  Tensor3 out(src.height, src.width, src.channels);
  const double cy = (src.height - 1) / 2.0;
  const double cx = (src.width - 1) / 2.0;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      // Inverse rotation of the output pixel center.
      const double dx = x - cx;
      const double dy = y - cy;
      const double sx = cx + c * dx + s * dy;
      const double sy = cy - s * dx + c * dy;
      // Pixel-area convention: positions within half a pixel of the border
      // still belong to the source; beyond that is rotation fill.
      if (sx < -0.5 || sx > src.width - 0.5 || sy < -0.5 || sy > src.height - 0.5)
        continue;  // leave fill value 0
      const double qy = std::clamp(sy, 0.0, static_cast<double>(src.height - 1));
      const double qx = std::clamp(sx, 0.0, static_cast<double>(src.width - 1));
      float* px = out.pixel(y, x);
      for (int ch = 0; ch < src.channels; ++ch) px[ch] = bilinear_at(src, qy, qx, ch);
    }
  }
  return out;
}

Tensor3 resize_bilinear(const Tensor3& src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0)
    throw std::invalid_argument("resize_bilinear: output dimensions must be positive");
  Tensor3 out(out_h, out_w, src.channels);
  const double scale_y = static_cast<double>(src.height) / out_h;
  const double scale_x = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double sy =
        std::clamp((y + 0.5) * scale_y - 0.5, 0.0, static_cast<double>(src.height - 1));
    for (int x = 0; x < out_w; ++x) {
      const double sx =
          std::clamp((x + 0.5) * scale_x - 0.5, 0.0, static_cast<double>(src.width - 1));
      float* px = out.pixel(y, x);
      for (int ch = 0; ch < src.channels; ++ch) px[ch] = bilinear_at(src, sy, sx, ch);
    }
  }
  return out;
}

std::vector<Tensor3> augment_region(const LabeledRegion& region,
                                    std::span<const double> angles, int crops_per_angle,
                                    Rng& rng) {
  if (angles.empty()) throw std::invalid_argument("augment_region: empty angle list");
  if (crops_per_angle < 1)
    throw std::invalid_argument("augment_region: crops_per_angle must be >= 1");
  if (region.image.height != kRegionSide || region.image.width != kRegionSide ||
      region.image.channels != 3)
    throw std::invalid_argument("augment_region: region must be 300x300x3");

  std::vector<Tensor3> patches;
  patches.reserve(angles.size() * static_cast<std::size_t>(crops_per_angle));
  const int side = region.image.height;
  for (const double angle : angles) {
    const Tensor3 rotated = rotate_bilinear(region.image, angle);
    const int m = inscribed_square_side(side, angle);
    double c, s;
    rotation_cos_sin(angle, c, s);
    // Offsets keeping every crop corner inside the rotated source footprint
    // (area convention, matching rotate_bilinear's half-pixel border).
    const double center = (side - m) / 2.0;
    const double slack = (side / 2.0) / (std::abs(c) + std::abs(s)) - (m - 1) / 2.0;
    const int lo = static_cast<int>(std::ceil(center - slack));
    const int hi = static_cast<int>(std::floor(center + slack));
    for (int k = 0; k < crops_per_angle; ++k) {
      const int y0 = lo + static_cast<int>(rng.uniform_int(hi - lo + 1));
      const int x0 = lo + static_cast<int>(rng.uniform_int(hi - lo + 1));
      patches.push_back(resize_bilinear(crop(rotated, y0, x0, m, m), kPatchSide, kPatchSide));
    }
  }
  return patches;
}

PatchDataset build_patch_dataset(const std::vector<LabeledRegion>& regions,
                                 std::span<const double> angles, int crops_per_angle,
                                 double val_fraction, std::uint64_t seed) {
  if (regions.empty())
    throw std::invalid_argument("build_patch_dataset: no regions");
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw std::invalid_argument("build_patch_dataset: val_fraction must be in (0, 1)");

  PatchDataset ds;
  ds.seed = seed;
  Rng rng(seed);
  for (const LabeledRegion& r : regions) {
    std::vector<Tensor3> ps = augment_region(r, angles, crops_per_angle, rng);
    for (Tensor3& p : ps) {
      ds.patches.push_back(std::move(p));
      ds.labels.push_back(static_cast<std::uint8_t>(r.label));
    }
  }

  std::array<std::vector<std::int64_t>, 2> by_class;
  for (std::size_t i = 0; i < ds.labels.size(); ++i)
    by_class[ds.labels[i]].push_back(static_cast<std::int64_t>(i));
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < 2)
      throw std::invalid_argument(
          "build_patch_dataset: need at least two patches of each class");

  for (int c = 0; c < 2; ++c) {
    std::vector<std::int64_t>& idx = by_class[c];
    for (std::size_t i = idx.size() - 1; i > 0; --i)
      std::swap(idx[i], idx[static_cast<std::size_t>(rng.uniform_int(
                        static_cast<std::int64_t>(i) + 1))]);
    std::size_t n_val = static_cast<std::size_t>(
        std::lround(val_fraction * static_cast<double>(idx.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    ds.val_indices.insert(ds.val_indices.end(), idx.begin(), idx.begin() + n_val);
    ds.train_indices.insert(ds.train_indices.end(), idx.begin() + n_val, idx.end());
  }
  std::sort(ds.train_indices.begin(), ds.train_indices.end());
  std::sort(ds.val_indices.begin(), ds.val_indices.end());
  return ds;
}

double cross_entropy(const std::array<float, 2>& probs, int label) {
  if (label != 0 && label != 1)
    throw std::invalid_argument("cross_entropy: label must be 0 or 1");
  const double p = std::max(static_cast<double>(probs[static_cast<std::size_t>(label)]), 1e-12);
  return -std::log(p);
}

void nesterov_step(float lr, float momentum, std::span<float> params,
                   std::span<float> velocity, std::span<const float> grads) {
  if (params.size() != velocity.size() || params.size() != grads.size())
    throw std::invalid_argument("nesterov_step: array length mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float v = momentum * velocity[i] - lr * grads[i];
    velocity[i] = v;
    params[i] += momentum * v - lr * grads[i];
  }
}

OptimizerState make_optimizer_state(const Model& m, float lr, float momentum) {
  OptimizerState s;
  s.learning_rate = lr;
  s.momentum = momentum;
  s.velocity.assign(m.parameter_count(true), 0.0f);
  return s;
}

void apply_nesterov(Model& m, OptimizerState& state, const Gradients& grads) {
  std::vector<std::vector<float>*> params;
  m.for_each_param_array([&](std::vector<float>& a) { params.push_back(&a); });
  std::vector<const std::vector<float>*> gs;
  grads.for_each_array([&](const std::vector<float>& a) { gs.push_back(&a); });
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::size_t n = params[i]->size();
    if (gs[i]->size() != n || off + n > state.velocity.size())
      throw std::invalid_argument("apply_nesterov: gradient/velocity layout mismatch");
    nesterov_step(state.learning_rate, state.momentum, std::span<float>(*params[i]),
                  std::span<float>(state.velocity.data() + off, n),
                  std::span<const float>(*gs[i]));
    off += n;
  }
  if (off != state.velocity.size())
    throw std::invalid_argument("apply_nesterov: velocity length mismatch");
}

std::vector<EpochStats> train(Model& m, const PatchDataset& data, int epochs,
                              int batch_size, OptimizerState& state,
                              std::uint64_t shuffle_seed) {
  if (data.train_indices.empty() || data.val_indices.empty())
    throw std::invalid_argument("train: dataset split is empty");
  if (epochs < 1 || batch_size < 1)
    throw std::invalid_argument("train: epochs and batch_size must be >= 1");

  Rng rng(shuffle_seed);
  std::vector<std::int64_t> order = data.train_indices;
  std::vector<EpochStats> history;
  history.reserve(static_cast<std::size_t>(epochs));
  TrainCache cache;

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    m.set_mode(RunMode::kTrain);
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i],
                order[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(i) + 1))]);

    double loss_sum = 0.0;
    std::int64_t train_correct = 0;
    std::size_t pos = 0;
    while (pos < order.size()) {
      const std::size_t end = std::min(order.size(), pos + static_cast<std::size_t>(batch_size));
      Gradients batch = Gradients::zeros_like(m);
      for (std::size_t i = pos; i < end; ++i) {
        const std::size_t idx = static_cast<std::size_t>(order[i]);
        const int label = data.labels[idx];
        forward_patch(m, data.patches[idx], cache);
        loss_sum += cross_entropy(cache.output.probs, label);
        if (cache.output.label == label) ++train_correct;
        batch.accumulate(backward_patch(m, cache, label));
      }
      batch.scale(1.0f / static_cast<float>(end - pos));
      apply_nesterov(m, state, batch);
      pos = end;
    }

    m.set_mode(RunMode::kEval);
    std::int64_t val_correct = 0;
    for (const std::int64_t vi : data.val_indices) {
      const std::size_t idx = static_cast<std::size_t>(vi);
      const PatchOutput po = forward_patch(std::as_const(m), data.patches[idx]);
      if (po.label == data.labels[idx]) ++val_correct;
    }

    EpochStats row;
    row.epoch = epoch;
    row.mean_loss = loss_sum / static_cast<double>(order.size());
    row.train_accuracy =
        static_cast<double>(train_correct) / static_cast<double>(order.size());
    row.val_accuracy =
        static_cast<double>(val_correct) / static_cast<double>(data.val_indices.size());
    history.push_back(row);
  }
  m.set_mode(RunMode::kEval);
  return history;
}

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_history_csv: cannot open " + path);
  f << "epoch,mean_loss,train_acc,val_acc\n";
  for (const EpochStats& r : history)
    f << r.epoch << ',' << r.mean_loss << ',' << r.train_accuracy << ',' << r.val_accuracy
      << '\n';
}

}  // namespace flashdet
