#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "cumamba/objective.hpp"
#include "cumamba/unet.hpp"

namespace cumamba {

enum class DegradationKind { kGaussianNoise, kMotionBlur };

std::string degradation_kind_name(DegradationKind kind);
DegradationKind parse_degradation_kind(const std::string& name);

/// Synthetic degradation applied to clean images.
struct Degradation {
    DegradationKind kind = DegradationKind::kGaussianNoise;
    double sigma = 25.0 / 255.0;  // gaussian noise standard deviation
    std::size_t blur_length = 9;  // motion blur taps
    std::size_t blur_kernel = 0;  // 0 horizontal, 1 vertical, 2 diagonal, 3 anti-diagonal

    /// Accepts sigma 0 or in [5/255, 50/255]; blur length 1 or in [3, 15];
    /// kernel id 0..3. Throws std::invalid_argument otherwise.
    void validate() const;
};

struct TrainConfig {
    std::size_t steps = 5000;
    std::size_t batch = 4;
    double lr_start = 5e-5;
    double lr_end = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 1e-4;
    double clip_norm = 0.0;  // global gradient norm bound, 0 disables
    bool augment = true;
    std::size_t train_images = 64;
    std::size_t test_images = 16;
    std::size_t log_every = 100;
    std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
    Degradation degradation;

    void validate() const;
};

/// Everything a run needs, serializable as flat key=value text.
struct RunConfig {
    CuMambaConfig model;
    LossConfig loss;
    TrainConfig train;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Raised for malformed configuration text.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses "key = value" lines; '#' starts a comment. Keys absent from the text
/// keep the values in `base`. Unknown keys and malformed values throw
/// ConfigError with the line number.
RunConfig parse_config(const std::string& text, const RunConfig& base = {});
RunConfig load_config(const std::string& path, const RunConfig& base = {});

/// Canonical text listing every key; parse_config(to_text(c)) == c.
std::string to_text(const RunConfig& config);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace cumamba
