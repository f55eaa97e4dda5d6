#include "cumamba/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace cumamba {

namespace {

struct Dims {
    std::size_t h, w, c;
};

Dims image_dims(const Image& img) {
    if (img.dim() != 3) throw ShapeError("expected an image [H, W, C], got " + shape_str(img.shape()));
    return {img.size(0), img.size(1), img.size(2)};
}

// Quarter turn counter-clockwise of a square image: out(i, j) = in(j, n-1-i).
Image rotate90(const Image& in) {
    const Dims d = image_dims(in);
    Image out({d.h, d.w, d.c});
    const auto src = in.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j)
            for (std::size_t c = 0; c < d.c; ++c) dst[(i * d.w + j) * d.c + c] = src[(j * d.w + (d.w - 1 - i)) * d.c + c];
    return out;
}

Image flip_horizontal(const Image& in) {
    const Dims d = image_dims(in);
    Image out({d.h, d.w, d.c});
    const auto src = in.data();
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j)
            for (std::size_t c = 0; c < d.c; ++c) dst[(i * d.w + j) * d.c + c] = src[(i * d.w + (d.w - 1 - j)) * d.c + c];
    return out;
}

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

Dihedral compose(Dihedral first, Dihedral second) {
    // Elements are R^r F^f acting as x -> R^r(F^f x), with F R = R^-1 F.
    const unsigned r1 = first.rotation, r2 = second.rotation;
    const unsigned rot = second.flip ? (r2 + 4 - r1) % 4 : (r2 + r1) % 4;
    return {first.flip != second.flip, rot};
}

Image apply_dihedral(const Image& image, Dihedral t) {
    const Dims d = image_dims(image);
    if (t.rotation % 4 != 0 && d.h != d.w) {
        throw ShapeError("rotation needs a square image, got " + std::to_string(d.h) + "x" + std::to_string(d.w));
    }
    Image out = t.flip ? flip_horizontal(image) : image.clone();
    for (unsigned r = 0; r < t.rotation % 4; ++r) out = rotate90(out);
    return out;
}

ImageSample augment(const ImageSample& sample, std::mt19937_64& rng, bool rotate) {
    Dihedral t;
    t.flip = std::uniform_int_distribution<int>(0, 1)(rng) == 1;
    if (rotate) t.rotation = static_cast<unsigned>(std::uniform_int_distribution<int>(0, 3)(rng));
    ImageSample out = sample;
    out.degraded = apply_dihedral(sample.degraded, t);
    out.clean = apply_dihedral(sample.clean, t);
    return out;
}

std::vector<std::pair<int, int>> blur_offsets(const Degradation& spec) {
    static constexpr int kDir[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    const int len = static_cast<int>(spec.blur_length);
    std::vector<std::pair<int, int>> taps;
    for (int t = 0; t < len; ++t) {
        const int o = t - (len - 1) / 2;
        taps.emplace_back(o * kDir[spec.blur_kernel][0], o * kDir[spec.blur_kernel][1]);
    }
    return taps;
}

ImageSample synthesize_pair(const Image& clean, const Degradation& spec, std::uint64_t seed) {
    spec.validate();
    const Dims d = image_dims(clean);
    ImageSample s{Image({d.h, d.w, d.c}), clean.clone(), spec, seed};
    const auto src = clean.data();
    auto dst = s.degraded.mutable_data();
    if (spec.kind == DegradationKind::kGaussianNoise) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> noise(0.0, 1.0);
        for (std::size_t i = 0; i < src.size(); ++i) {
            const double n = spec.sigma == 0.0 ? 0.0 : spec.sigma * noise(rng);
            dst[i] = clamp01(static_cast<double>(src[i]) + n);
        }
        return s;
    }
    const auto taps = blur_offsets(spec);
    const double w = 1.0 / static_cast<double>(taps.size());
    const auto clampi = [](long v, std::size_t n) { return static_cast<std::size_t>(std::clamp<long>(v, 0, long(n) - 1)); };
    for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j)
            for (std::size_t c = 0; c < d.c; ++c) {
                double acc = 0.0;
                for (const auto& [dy, dx] : taps) {
                    const std::size_t y = clampi(long(i) + dy, d.h);
                    const std::size_t x = clampi(long(j) + dx, d.w);
                    acc += w * static_cast<double>(src[(y * d.w + x) * d.c + c]);
                }
                dst[(i * d.w + j) * d.c + c] = clamp01(acc);
            }
    return s;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    auto splitmix = [](std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    return splitmix(splitmix(splitmix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

Image synthetic_clean(std::size_t height, std::size_t width, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double H = static_cast<double>(height), W = static_cast<double>(width);
    std::vector<double> buf(height * width * 3);
    // Background: a linear gradient per channel.
    double base[3], gy[3], gx[3];
    for (int c = 0; c < 3; ++c) {
        base[c] = 0.2 + 0.6 * u(rng);
        gy[c] = 0.4 * (u(rng) - 0.5);
        gx[c] = 0.4 * (u(rng) - 0.5);
    }
    for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j)
            for (int c = 0; c < 3; ++c)
                buf[(i * width + j) * 3 + c] = base[c] + gy[c] * (double(i) / H - 0.5) + gx[c] * (double(j) / W - 0.5);
    const int shapes = 3 + static_cast<int>(u(rng) * 4);
    for (int s = 0; s < shapes; ++s) {
        const int type = static_cast<int>(u(rng) * 3);
        double col[3];
        for (double& v : col) v = u(rng);
        const double cy = u(rng) * H, cx = u(rng) * W;
        const double ry = (0.1 + 0.3 * u(rng)) * H, rx = (0.1 + 0.3 * u(rng)) * W;
        const double freq = 2.0 * std::numbers::pi / (3.0 + 6.0 * u(rng));
        const double angle = u(rng) * std::numbers::pi;
        for (std::size_t i = 0; i < height; ++i)
            for (std::size_t j = 0; j < width; ++j) {
                const double dy = double(i) - cy, dx = double(j) - cx;
                double alpha = 0.0;
                if (type == 0) {
                    alpha = (std::abs(dy) < ry && std::abs(dx) < rx) ? 1.0 : 0.0;
                } else if (type == 1) {
                    alpha = (dy * dy / (ry * ry) + dx * dx / (rx * rx) < 1.0) ? 1.0 : 0.0;
                } else if (std::abs(dy) < ry && std::abs(dx) < rx) {
                    const double t = dy * std::cos(angle) + dx * std::sin(angle);
                    alpha = 0.5 + 0.5 * std::sin(freq * t);
                }
                if (alpha == 0.0) continue;
                for (int c = 0; c < 3; ++c) {
                    double& v = buf[(i * width + j) * 3 + c];
                    v = (1.0 - alpha) * v + alpha * col[c];
                }
            }
    }
    Image out({height, width, 3});
    auto dst = out.mutable_data();
    for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = clamp01(buf[i]);
    return out;
}

Tensor<float> stack_images(const std::vector<Image>& images) {
    if (images.empty()) throw ShapeError("cannot stack zero images");
    const Shape& s = images.front().shape();
    Shape out_shape{images.size()};
    out_shape.insert(out_shape.end(), s.begin(), s.end());
    Tensor<float> out(out_shape);
    auto dst = out.mutable_data();
    const std::size_t n = images.front().numel();
    for (std::size_t b = 0; b < images.size(); ++b) {
        if (images[b].shape() != s) throw ShapeError("stack_images needs equal shapes");
        std::copy(images[b].data().begin(), images[b].data().end(), dst.begin() + static_cast<std::ptrdiff_t>(b * n));
    }
    return out;
}

Image batch_item(const Tensor<float>& batch, std::size_t b) {
    if (batch.dim() != 4 || b >= batch.size(0)) throw ShapeError("batch_item index out of range");
    Image out({batch.size(1), batch.size(2), batch.size(3)});
    const std::size_t n = out.numel();
    const auto src = batch.data().subspan(b * n, n);
    std::copy(src.begin(), src.end(), out.mutable_data().begin());
    return out;
}

SyntheticDataset::SyntheticDataset(const TrainConfig& config, std::size_t patch_h, std::size_t patch_w,
                                   std::uint64_t seed)
    : config_(config), seed_(seed) {
    config.degradation.validate();
    for (std::size_t i = 0; i < config.train_images; ++i)
        train_clean_.push_back(synthetic_clean(patch_h, patch_w, mix_seed(seed, 1, i)));
    for (std::size_t i = 0; i < config.test_images; ++i) {
        const Image clean = synthetic_clean(patch_h, patch_w, mix_seed(seed, 2, i));
        test_.push_back(synthesize_pair(clean, config.degradation, mix_seed(seed, 3, i)));
    }
}

std::pair<Tensor<float>, Tensor<float>> SyntheticDataset::train_batch(std::size_t step, std::size_t batch) const {
    std::vector<Image> degraded, clean;
    const bool square = train_clean_.front().size(0) == train_clean_.front().size(1);
    for (std::size_t k = 0; k < batch; ++k) {
        std::mt19937_64 rng(mix_seed(seed_, 4 + step, k));
        const std::size_t index = std::uniform_int_distribution<std::size_t>(0, train_clean_.size() - 1)(rng);
        ImageSample s = synthesize_pair(train_clean_[index], config_.degradation, rng());
        if (config_.augment) s = augment(s, rng, square);
        degraded.push_back(s.degraded);
        clean.push_back(s.clean);
    }
    return {stack_images(degraded), stack_images(clean)};
}

}  // namespace cumamba
