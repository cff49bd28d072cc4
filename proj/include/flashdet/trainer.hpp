#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "flashdet/network.hpp"
#include "flashdet/rng.hpp"
#include "flashdet/tensor.hpp"

namespace flashdet {

// One annotated source region; the augmentation pipeline turns these into
// 32x32 training patches.
struct LabeledRegion {
  Tensor3 image;  // exactly 300x300x3
  int label = 0;  // 0 = non_tumor, 1 = tumor
};

inline constexpr int kRegionSide = 300;
inline constexpr int kPatchSide = 32;

// Rotation angles applied during augmentation. -180 and +180 produce the
// same image; both are applied as listed.
inline constexpr std::array<double, 12> kAugmentAngles = {
    -180.0, -150.0, -120.0, -90.0, -60.0, -30.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0};

struct PatchDataset {
  std::vector<Tensor3> patches;  // each 32x32x3
  std::vector<std::uint8_t> labels;
  std::vector<std::int64_t> train_indices;
  std::vector<std::int64_t> val_indices;
  std::uint64_t seed = 0;
};

struct OptimizerState {
  float learning_rate = 0.002f;
  float momentum = 0.9f;
  std::vector<float> velocity;  // one entry per model parameter, zeros
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

// Largest axis-aligned square fully inside a side x side square rotated by
// angle_deg: floor(side / (|cos| + |sin|)).
int inscribed_square_side(int side, double angle_deg);

// Rotates about the image center with bilinear resampling on a same-size
// canvas; samples falling outside the source are filled with 0. The valid
// (fill-free) region is the centered inscribed square above.
Tensor3 rotate_bilinear(const Tensor3& src, double angle_deg);

// Bilinear resize with half-pixel sample centers.
Tensor3 resize_bilinear(const Tensor3& src, int out_h, int out_w);

// For each angle: rotate, take crops_per_angle square crops of the inscribed
// side fully inside the valid region, and resize each to 32x32. Emits
// angles.size() * crops_per_angle patches carrying the region's label.
std::vector<Tensor3> augment_region(const LabeledRegion& region,
                                    std::span<const double> angles, int crops_per_angle,
                                    Rng& rng);

// Augments every region and splits patches 90/10 (val_fraction) stratified by
// class. Both splits end up with both classes or the call fails.
PatchDataset build_patch_dataset(const std::vector<LabeledRegion>& regions,
                                 std::span<const double> angles, int crops_per_angle,
                                 double val_fraction, std::uint64_t seed);

// -ln(probs[label]) with the probability clamped to >= 1e-12.
double cross_entropy(const std::array<float, 2>& probs, int label);

// v <- mu*v - lr*g;  theta <- theta + mu*v - lr*g
void nesterov_step(float lr, float momentum, std::span<float> params,
                   std::span<float> velocity, std::span<const float> grads);

OptimizerState make_optimizer_state(const Model& m, float lr = 0.002f,
                                    float momentum = 0.9f);

// One Nesterov update across every model parameter, walking the fixed
// parameter-array order against state.velocity.
void apply_nesterov(Model& m, OptimizerState& state, const Gradients& grads);

// Minibatch SGD: shuffles the train split each epoch (seeded), averages
// gradients over each batch, applies one Nesterov step per batch, and
// records eval-mode validation accuracy per epoch. Deterministic given the
// model state and shuffle_seed.
std::vector<EpochStats> train(Model& m, const PatchDataset& data, int epochs,
                              int batch_size, OptimizerState& state,
                              std::uint64_t shuffle_seed);

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);

}  // namespace flashdet
