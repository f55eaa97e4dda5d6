#pragma once

#include <memory>
#include <stdexcept>
#include <string>

#include "cumamba/module.hpp"
#include "cumamba/ssm.hpp"
#include "cumamba/tensor.hpp"

namespace cumamba {

/// Raised when a feature map does not have the resolution a block was built
/// for.
class ResolutionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Which residual unit fills each U-Net level.
enum class BlockKind { kResBlock, kSpatial, kChannel, kCombined };

std::string block_kind_name(BlockKind kind);
/// Accepts "resblock", "spatial", "channel", "combined".
BlockKind parse_block_kind(const std::string& name);

struct BlockConfig {
    std::size_t width = 8;   // C
    std::size_t height = 8;  // H of the feature map this block runs at
    std::size_t cols = 8;    // W
    std::size_t state_size = ssm::kDefaultStateSize;
    std::size_t expansion = ssm::kDefaultExpansion;
    std::size_t conv_width = ssm::kDefaultConvWidth;
};

/// Intermediate values of one image block, for probing scan direction.
template <typename T>
struct BlockTrace {
    Tensor<T> tokens;   // sequence fed to the selective SSM
    Tensor<T> scanned;  // selective SSM output, same layout as tokens
    Tensor<T> branch;   // residual branch in [B, H, W, C]
    Tensor<T> output;   // input + branch
};

/// LayerNorm -> 1x1 conv -> depthwise 3x3 conv, shared by both SSM blocks.
template <typename T>
class ConvPreamble : public Module<T> {
public:
    ConvPreamble(std::size_t width, InitRng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;

    Tensor<T> norm_gamma, norm_beta, pw_w, pw_b, dw_w, dw_b;
};

/// Scans the row-major flattened map (L = H*W tokens of width C).
template <typename T>
class SpatialSsmBlock : public Module<T> {
public:
    SpatialSsmBlock(const BlockConfig& config, InitRng& rng);
    Tensor<T> forward(const Tensor<T>& x) const { return trace(x).output; }
    BlockTrace<T> trace(const Tensor<T>& x) const;
    ssm::SelectiveSsm<T>& ssm() { return *ssm_; }

private:
    BlockConfig config_;
    std::unique_ptr<ConvPreamble<T>> pre_;
    std::unique_ptr<ssm::SelectiveSsm<T>> ssm_;
};

/// Scans channels as tokens: the map is transposed to C tokens of width
/// L = H*W, so the block only accepts the H x W it was built for.
template <typename T>
class ChannelSsmBlock : public Module<T> {
public:
    ChannelSsmBlock(const BlockConfig& config, InitRng& rng);
    Tensor<T> forward(const Tensor<T>& x) const { return trace(x).output; }
    BlockTrace<T> trace(const Tensor<T>& x) const;
    ssm::SelectiveSsm<T>& ssm() { return *ssm_; }

    Tensor<T> smooth1_w, smooth1_b, smooth2_w, smooth2_b;

private:
    BlockConfig config_;
    std::unique_ptr<ConvPreamble<T>> pre_;
    std::unique_ptr<ssm::SelectiveSsm<T>> ssm_;
};

/// conv3x3 -> LeakyReLU -> conv3x3 plus the input.
template <typename T>
class ResBlock : public Module<T> {
public:
    ResBlock(const BlockConfig& config, InitRng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;

    Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b;
};

/// One residual unit of the chosen kind. The combined kind runs the spatial
/// block followed by the channel block.
template <typename T>
class CuMambaBlock : public Module<T> {
public:
    CuMambaBlock(const BlockConfig& config, BlockKind kind, InitRng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;

    BlockKind kind() const { return kind_; }
    SpatialSsmBlock<T>* spatial() { return spatial_.get(); }
    ChannelSsmBlock<T>* channel() { return channel_.get(); }

private:
    BlockKind kind_;
    std::unique_ptr<SpatialSsmBlock<T>> spatial_;
    std::unique_ptr<ChannelSsmBlock<T>> channel_;
    std::unique_ptr<ResBlock<T>> res_;
};

/// Parameter counts of the units above, from configuration alone.
std::size_t block_param_count(const BlockConfig& config, BlockKind kind);
/// Multiply-accumulate estimate of one forward pass over one image.
std::size_t block_flops(const BlockConfig& config, BlockKind kind);

/// Sets every parameter that is not a norm gain to zero.
template <typename T>
void zero_non_gain_parameters(Module<T>& module);

}  // namespace cumamba
