#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cumamba/config.hpp"
#include "cumamba/tensor.hpp"

namespace cumamba {

/// Images are Tensor<float>[H, W, C] with values in [0, 1].
using Image = Tensor<float>;

struct ImageSample {
    Image degraded;
    Image clean;
    Degradation degradation;
    std::uint64_t seed = 0;
};

/// One of the 8 flip/rotation symmetries of the square. Applied as the
/// optional horizontal flip first, then `rotation` quarter turns
/// counter-clockwise.
struct Dihedral {
    bool flip = false;
    unsigned rotation = 0;  // 0..3

    /// Index 0..7 as flip * 4 + rotation.
    unsigned code() const { return (flip ? 4u : 0u) + rotation; }
    static Dihedral from_code(unsigned code) { return {code >= 4, code % 4}; }
};

/// The transform equal to applying `first` and then `second`.
Dihedral compose(Dihedral first, Dihedral second);

/// Throws ShapeError when a rotation is requested for a non-square image.
Image apply_dihedral(const Image& image, Dihedral t);

/// Flip with probability 0.5 and a uniform rotation, applied identically to
/// both images. With `rotate` false only the flip is drawn.
ImageSample augment(const ImageSample& sample, std::mt19937_64& rng, bool rotate = true);

/// Motion-blur taps as (dy, dx) offsets, each weighted 1 / length.
std::vector<std::pair<int, int>> blur_offsets(const Degradation& spec);

/// Degraded copy of `clean`: additive gaussian noise or a linear motion blur
/// with replicated borders, clamped to [0, 1]. Deterministic in `seed`.
ImageSample synthesize_pair(const Image& clean, const Degradation& spec, std::uint64_t seed);

/// Deterministic clean image of smooth gradients, rectangles, discs and
/// stripes, values in [0, 1].
Image synthetic_clean(std::size_t height, std::size_t width, std::uint64_t seed);

/// Counter-based 64-bit mixing of a seed with stream indices.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Fixed clean training and test images. Training samples draw fresh noise
/// per (step, slot) so the sampler state is just (seed, step).
class SyntheticDataset {
public:
    SyntheticDataset(const TrainConfig& config, std::size_t patch_h, std::size_t patch_w, std::uint64_t seed);

    /// Batch of `batch` samples for optimizer step `step` as [B, H, W, 3]
    /// degraded and clean tensors.
    std::pair<Tensor<float>, Tensor<float>> train_batch(std::size_t step, std::size_t batch) const;
    const std::vector<ImageSample>& test_set() const { return test_; }

private:
    TrainConfig config_;
    std::uint64_t seed_;
    std::vector<Image> train_clean_;
    std::vector<ImageSample> test_;
};

/// Stacks [H, W, C] images into [B, H, W, C].
Tensor<float> stack_images(const std::vector<Image>& images);

/// Image b of a [B, H, W, C] batch.
Image batch_item(const Tensor<float>& batch, std::size_t b);

}  // namespace cumamba
