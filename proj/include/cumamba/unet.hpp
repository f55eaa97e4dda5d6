#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "cumamba/blocks.hpp"
#include "cumamba/module.hpp"
#include "cumamba/ops.hpp"
#include "cumamba/tensor.hpp"

namespace cumamba {

struct CuMambaConfig {
    std::size_t levels = 4;
    /// One entry per level; the last entry is the bottleneck depth.
    std::vector<std::size_t> blocks_per_level{1, 1, 1, 1};
    std::size_t base_width = 8;
    std::size_t state_size = ssm::kDefaultStateSize;
    std::size_t expansion = ssm::kDefaultExpansion;
    std::size_t conv_width = ssm::kDefaultConvWidth;
    std::size_t patch_h = 64;
    std::size_t patch_w = 64;
    BlockKind kind = BlockKind::kCombined;
    std::size_t scan_chunk = ssm::kDefaultChunk;
    bool parallel_scan = true;

    /// Throws std::invalid_argument naming the first violated constraint.
    void validate() const;
    std::size_t width_at(std::size_t level) const { return base_width << level; }
    std::size_t height_at(std::size_t level) const { return patch_h >> level; }
    std::size_t cols_at(std::size_t level) const { return patch_w >> level; }
    BlockConfig block_config(std::size_t level) const;
};

/// Per-level feature maps of one forward pass.
template <typename T>
struct NetTrace {
    std::vector<Tensor<T>> encoder;  // level l: [B, H/2^l, W/2^l, 2^l C] after the level blocks
    std::vector<Tensor<T>> decoder;  // level l input to the decoder blocks, same shapes
    Tensor<T> residual;              // R
    Tensor<T> output;                // I + R
};

/// Encoder-decoder restoration network returning I + R.
template <typename T>
class CuMambaNet : public Module<T> {
public:
    CuMambaNet(const CuMambaConfig& config, std::uint64_t seed);

    /// I[B, H, W, 3] at the configured patch size.
    Tensor<T> forward(const Tensor<T>& image) const { return trace(image).output; }
    NetTrace<T> trace(const Tensor<T>& image) const;

    const CuMambaConfig& config() const { return config_; }

private:
    CuMambaConfig config_;
    Tensor<T> in_w_, in_b_, out_w_, out_b_;
    std::vector<std::unique_ptr<Module<T>>> owned_;
    std::vector<std::vector<CuMambaBlock<T>*>> enc_blocks_;   // levels 0..levels-1
    std::vector<Tensor<T>> down_w_, down_b_;                   // levels 0..levels-2
    std::vector<Tensor<T>> up_w_, up_b_, fuse_w_, fuse_b_;     // levels 0..levels-2
    std::vector<std::vector<CuMambaBlock<T>*>> dec_blocks_;   // levels 0..levels-2
};

struct ModelCost {
    std::size_t params = 0;
    std::size_t flops = 0;  // 2 x multiply-accumulates, one image at the patch size
};

/// Parameters of one convolution layer of the given kind.
std::size_t conv_param_count(ops::ConvKind kind, std::size_t cin, std::size_t cout, bool bias);

/// Analytic count over every layer, from the configuration alone.
ModelCost count_params_flops(const CuMambaConfig& config);

/// Linear feathering weight of position i in a tile of `size` pixels along
/// one axis. Ramps (i + 1) / (overlap + 1) over the first `overlap` pixels
/// when a tile precedes it, and symmetrically at the end when a tile follows.
double feather_weight(std::size_t i, std::size_t size, std::size_t overlap, bool has_prev,
                      bool has_next);

/// Tile origins along one axis: step patch - overlap, last tile flush with
/// the end.
std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t patch, std::size_t overlap);

/// Restores an image [H, W, 3] of any size >= the patch by running the network
/// on overlapping patches and blending their predictions.
template <typename T>
Tensor<T> tiled_infer(const CuMambaNet<T>& net, const Tensor<T>& image, std::size_t overlap,
                      std::size_t batch = 4);

extern template class CuMambaNet<float>;
extern template class CuMambaNet<double>;

}  // namespace cumamba
