#pragma once

#include <array>
#include <string>
#include <vector>

#include "aspvm/rng.hpp"
#include "aspvm/tensor.hpp"

namespace aspvm::pipeline {

// One image/mask pair in canonical layout: image 3 x H x W with values in
// [0,1], mask 1 x H x W strictly binary.
struct Sample {
    Tensor<float> image;
    Tensor<float> mask;
    std::string id;
};

// Per-channel normalization constants computed over a dataset.
struct NormStats {
    std::array<float, 3> mean = {0.5f, 0.5f, 0.5f};
    std::array<float, 3> stddev = {0.25f, 0.25f, 0.25f};
};

// Reads <dir>/images and <dir>/masks with matching basenames (PNG or JPEG
// images, PNG masks). Images are bilinearly resized to target x target,
// masks nearest-resized and binarized at 127/255. Deterministic
// lexicographic order; orphan files are listed and rejected.
std::vector<Sample> load_dataset(const std::string& dir, int64_t target_size);

// Textured background with 1-2 randomly deformed filled ellipses; the mask
// is the exact raster of the analytic region. Foreground fraction is kept
// inside [0.05, 0.6] by redrawing. Fully determined by the seed. The
// separable variant uses uniform background/foreground intensities.
std::vector<Sample> synth_dataset(int64_t n, int64_t h, int64_t w, uint64_t seed,
                                  bool separable = false);

// Writes images/ and masks/ PNG pairs in the load_dataset layout.
void write_dataset(const std::vector<Sample>& samples, const std::string& out_dir);

NormStats compute_norm_stats(const std::vector<Sample>& samples);

// Geometric augmentation only: horizontal/vertical flips (p = 0.5 each) and
// a rotation drawn from {0, 90, 180, 270} degrees, identical on image and
// mask. Square samples only for the rotating draws.
Sample augment_geometric(const Sample& s, Rng& rng);

Tensor<float> normalize_image(const Tensor<float>& image, const NormStats& stats);

// Flips/rotation followed by normalization (normalization last).
Sample augment(const Sample& s, Rng& rng, const NormStats& stats);

}  // namespace aspvm::pipeline
