#include "cumamba/unet.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "cumamba/ops.hpp"

namespace cumamba {

using ops::ConvKind;

void CuMambaConfig::validate() const {
    const auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
    if (levels == 0) fail("levels must be at least 1");
    if (blocks_per_level.size() != levels) {
        fail("blocks_per_level lists " + std::to_string(blocks_per_level.size()) +
             " entries but levels = " + std::to_string(levels));
    }
    for (std::size_t n : blocks_per_level)
        if (n == 0) fail("every level needs at least one block");
    if (base_width == 0 || state_size == 0 || expansion == 0 || conv_width == 0 || scan_chunk == 0) {
        fail("base_width, state_size, expansion, conv_width and scan_chunk must be positive");
    }
    const std::size_t div = std::size_t{1} << levels;
    if (patch_h == 0 || patch_w == 0 || patch_h % div != 0 || patch_w % div != 0) {
        fail("patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
             " must be a positive multiple of 2^levels = " + std::to_string(div));
    }
}

BlockConfig CuMambaConfig::block_config(std::size_t level) const {
    return {width_at(level), height_at(level), cols_at(level), state_size, expansion, conv_width};
}

template <typename T>
CuMambaNet<T>::CuMambaNet(const CuMambaConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    InitRng rng(seed);
    const std::size_t C = config.base_width;
    const std::size_t top = config.levels - 1;
    in_w_ = this->add_param("in_conv.weight", fan_in_uniform<T>({3, 3, 3, C}, 27, rng), true);
    in_b_ = this->add_param("in_conv.bias", Tensor<T>({C}), false);

    auto make_blocks = [&](const std::string& prefix, std::size_t level) {
        std::vector<CuMambaBlock<T>*> blocks;
        for (std::size_t i = 0; i < config.blocks_per_level[level]; ++i) {
            auto blk = std::make_unique<CuMambaBlock<T>>(config.block_config(level), config.kind, rng);
            if (blk->spatial()) {
                blk->spatial()->ssm().scan_options() = {config.parallel_scan, config.scan_chunk};
            }
            if (blk->channel()) {
                blk->channel()->ssm().scan_options() = {config.parallel_scan, config.scan_chunk};
            }
            this->add_child(prefix + ".block" + std::to_string(i), blk.get());
            blocks.push_back(blk.get());
            owned_.push_back(std::move(blk));
        }
        return blocks;
    };

    for (std::size_t l = 0; l <= top; ++l) {
        enc_blocks_.push_back(make_blocks(l == top ? "bottleneck" : "enc" + std::to_string(l), l));
        if (l == top) break;
        const std::size_t ci = config.width_at(l);
        const std::size_t co = config.width_at(l + 1);
        const std::string name = "down" + std::to_string(l);
        down_w_.push_back(this->add_param(name + ".weight", fan_in_uniform<T>({2, 2, ci, co}, 4 * ci, rng), true));
        down_b_.push_back(this->add_param(name + ".bias", Tensor<T>({co}), false));
    }
    up_w_.resize(top);
    up_b_.resize(top);
    fuse_w_.resize(top);
    fuse_b_.resize(top);
    dec_blocks_.resize(top);
    for (std::size_t l = top; l-- > 0;) {
        const std::size_t ci = config.width_at(l + 1);
        const std::size_t co = config.width_at(l);
        const std::string up = "up" + std::to_string(l);
        const std::string fuse = "fuse" + std::to_string(l);
        up_w_[l] = this->add_param(up + ".weight", fan_in_uniform<T>({ci, 2, 2, co}, ci, rng), true);
        up_b_[l] = this->add_param(up + ".bias", Tensor<T>({co}), false);
        fuse_w_[l] = this->add_param(fuse + ".weight", fan_in_uniform<T>({2 * co, co}, 2 * co, rng), true);
        fuse_b_[l] = this->add_param(fuse + ".bias", Tensor<T>({co}), false);
        dec_blocks_[l] = make_blocks("dec" + std::to_string(l), l);
    }
    // Zero output projection: the untrained network restores I' = I.
    out_w_ = this->add_param("out_conv.weight", Tensor<T>({3, 3, C, 3}), true);
    out_b_ = this->add_param("out_conv.bias", Tensor<T>({3}), false);
}

template <typename T>
NetTrace<T> CuMambaNet<T>::trace(const Tensor<T>& image) const {
    if (image.dim() != 4 || image.size(3) != 3) {
        throw ShapeError("network expects images [B, H, W, 3], got " + shape_str(image.shape()));
    }
    if (image.size(1) != config_.patch_h || image.size(2) != config_.patch_w) {
        throw ResolutionError("network was built for " + std::to_string(config_.patch_h) + "x" +
                              std::to_string(config_.patch_w) + " patches but got " +
                              std::to_string(image.size(1)) + "x" + std::to_string(image.size(2)) +
                              "; use tiled inference for other sizes");
    }
    const std::size_t top = config_.levels - 1;
    NetTrace<T> t;
    t.encoder.resize(config_.levels);
    t.decoder.resize(top);
    Tensor<T> x = ops::conv2d(image, in_w_, in_b_, ConvKind::kPlain3x3);
    for (std::size_t l = 0; l <= top; ++l) {
        for (const auto* blk : enc_blocks_[l]) x = blk->forward(x);
        t.encoder[l] = x;
        if (l < top) x = ops::conv2d(x, down_w_[l], down_b_[l], ConvKind::kStrided2x2);
    }
    for (std::size_t l = top; l-- > 0;) {
        x = ops::conv2d(x, up_w_[l], up_b_[l], ConvKind::kTransposed2x2);
        x = ops::conv2d(ops::concat_last(x, t.encoder[l]), fuse_w_[l], fuse_b_[l], ConvKind::kPointwise1x1);
        t.decoder[l] = x;
        for (const auto* blk : dec_blocks_[l]) x = blk->forward(x);
    }
    t.residual = ops::conv2d(x, out_w_, out_b_, ConvKind::kPlain3x3);
    t.output = ops::add(image, t.residual);
    return t;
}

std::size_t conv_param_count(ConvKind kind, std::size_t cin, std::size_t cout, bool bias) {
    const std::size_t b = bias ? cout : 0;
    switch (kind) {
        case ConvKind::kPointwise1x1: return cin * cout + b;
        case ConvKind::kDepthwise3x3: return 9 * cin + (bias ? cin : 0);
        case ConvKind::kPlain3x3: return 9 * cin * cout + b;
        case ConvKind::kStrided2x2:
        case ConvKind::kTransposed2x2: return 4 * cin * cout + b;
    }
    return 0;
}

ModelCost count_params_flops(const CuMambaConfig& c) {
    c.validate();
    ModelCost cost;
    const std::size_t C = c.base_width;
    const std::size_t HW = c.patch_h * c.patch_w;
    const std::size_t top = c.levels - 1;
    cost.params += conv_param_count(ConvKind::kPlain3x3, 3, C, true) +
                   conv_param_count(ConvKind::kPlain3x3, C, 3, true);
    cost.flops += 2 * HW * 27 * C + 2 * HW * 9 * C * 3 + HW * 3;
    for (std::size_t l = 0; l <= top; ++l) {
        const std::size_t uses = c.blocks_per_level[l] * (l == top ? 1 : 2);
        cost.params += uses * block_param_count(c.block_config(l), c.kind);
        cost.flops += uses * block_flops(c.block_config(l), c.kind);
        if (l == top) break;
        const std::size_t cl = c.width_at(l);
        const std::size_t cn = c.width_at(l + 1);
        const std::size_t hw_l = c.height_at(l) * c.cols_at(l);
        const std::size_t hw_n = c.height_at(l + 1) * c.cols_at(l + 1);
        cost.params += conv_param_count(ConvKind::kStrided2x2, cl, cn, true) +
                       conv_param_count(ConvKind::kTransposed2x2, cn, cl, true) +
                       conv_param_count(ConvKind::kPointwise1x1, 2 * cl, cl, true);
        cost.flops += 2 * hw_n * 4 * cl * cn + 2 * hw_n * cn * 4 * cl + 2 * hw_l * 2 * cl * cl;
    }
    return cost;
}

double feather_weight(std::size_t i, std::size_t size, std::size_t overlap, bool has_prev,
                      bool has_next) {
    double w = 1.0;
    const double denom = static_cast<double>(overlap + 1);
    if (has_prev && i < overlap) w = std::min(w, static_cast<double>(i + 1) / denom);
    if (has_next && i + overlap >= size) w = std::min(w, static_cast<double>(size - i) / denom);
    return w;
}

std::vector<std::size_t> tile_starts(std::size_t extent, std::size_t patch, std::size_t overlap) {
    if (extent < patch) {
        throw std::invalid_argument("image extent " + std::to_string(extent) +
                                    " is smaller than the patch size " + std::to_string(patch) +
                                    "; pad the image to at least one patch");
    }
    if (2 * overlap >= patch) {
        throw std::invalid_argument("overlap " + std::to_string(overlap) +
                                    " must be less than half the patch size " + std::to_string(patch));
    }
    std::vector<std::size_t> starts{0};
    const std::size_t step = patch - overlap;
    while (starts.back() + patch < extent) starts.push_back(std::min(starts.back() + step, extent - patch));
    return starts;
}

template <typename T>
Tensor<T> tiled_infer(const CuMambaNet<T>& net, const Tensor<T>& image, std::size_t overlap,
                      std::size_t batch) {
    if (image.dim() != 3 || image.size(2) != 3) {
        throw ShapeError("tiled inference expects an image [H, W, 3], got " + shape_str(image.shape()));
    }
    const std::size_t H = image.size(0);
    const std::size_t W = image.size(1);
    const std::size_t ph = net.config().patch_h;
    const std::size_t pw = net.config().patch_w;
    const auto ys = tile_starts(H, ph, overlap);
    const auto xs = tile_starts(W, pw, overlap);
    batch = std::max<std::size_t>(batch, 1);

    struct Tile {
        std::size_t yi, xi;
    };
    std::vector<Tile> tiles;
    for (std::size_t yi = 0; yi < ys.size(); ++yi)
        for (std::size_t xi = 0; xi < xs.size(); ++xi) tiles.push_back({yi, xi});

    std::vector<double> acc(H * W * 3, 0.0);
    std::vector<double> wsum(H * W, 0.0);
    const auto src = image.data();
    NoGradGuard no_grad;
    for (std::size_t first = 0; first < tiles.size(); first += batch) {
        const std::size_t nb = std::min(batch, tiles.size() - first);
        Tensor<T> in({nb, ph, pw, 3});
        auto dst = in.mutable_data();
        for (std::size_t k = 0; k < nb; ++k) {
            const Tile& tl = tiles[first + k];
            for (std::size_t y = 0; y < ph; ++y)
                std::copy_n(src.begin() + ((ys[tl.yi] + y) * W + xs[tl.xi]) * 3, pw * 3,
                            dst.begin() + (k * ph + y) * pw * 3);
        }
        const Tensor<T> out = net.forward(in);
        const auto ov = out.data();
        for (std::size_t k = 0; k < nb; ++k) {
            const Tile& tl = tiles[first + k];
            const bool up = tl.yi > 0, down = tl.yi + 1 < ys.size();
            const bool left = tl.xi > 0, right = tl.xi + 1 < xs.size();
            for (std::size_t y = 0; y < ph; ++y) {
                const double wy = feather_weight(y, ph, overlap, up, down);
                for (std::size_t x = 0; x < pw; ++x) {
                    const double w = wy * feather_weight(x, pw, overlap, left, right);
                    const std::size_t p = (ys[tl.yi] + y) * W + xs[tl.xi] + x;
                    wsum[p] += w;
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        acc[p * 3 + ch] += w * static_cast<double>(ov[((k * ph + y) * pw + x) * 3 + ch]);
                }
            }
        }
    }
    Tensor<T> result({H, W, 3});
    auto rv = result.mutable_data();
    for (std::size_t p = 0; p < H * W; ++p)
        for (std::size_t ch = 0; ch < 3; ++ch) rv[p * 3 + ch] = static_cast<T>(acc[p * 3 + ch] / wsum[p]);
    return result;
}

template class CuMambaNet<float>;
template class CuMambaNet<double>;
template Tensor<float> tiled_infer<float>(const CuMambaNet<float>&, const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> tiled_infer<double>(const CuMambaNet<double>&, const Tensor<double>&, std::size_t, std::size_t);

}  // namespace cumamba
