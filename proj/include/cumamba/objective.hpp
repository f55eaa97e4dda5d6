#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include "cumamba/tensor.hpp"

namespace cumamba {

inline constexpr double kCharbonnierEps = 1e-3;
inline constexpr double kFourierWeight = 0.1;

struct LossConfig {
    double epsilon = kCharbonnierEps;
    double lambda = kFourierWeight;
    /// Throws std::invalid_argument unless epsilon > 0 and lambda >= 0.
    void validate() const;
};

/// Spectrum of one real plane.
struct ComplexGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> real;
    std::vector<double> imag;

    std::complex<double> at(std::size_t u, std::size_t v) const {
        return {real[u * width + v], imag[u * width + v]};
    }
};

/// In-place forward (sign -1) or inverse-without-scaling (sign +1) 1-D DFT.
/// Radix-2 when the length is a power of two, direct summation otherwise.
void dft1(std::vector<std::complex<double>>& x, int sign);

/// Unnormalized forward 2-D DFT of x[H, W].
template <typename T>
ComplexGrid dft2(const Tensor<T>& x);

/// Inverse of dft2, including the 1 / (H W) factor; returns [H, W].
Tensor<double> idft2(const ComplexGrid& grid);

/// mean over elements of sqrt(d^2 + epsilon), d = pred - target.
template <typename T>
Tensor<T> charbonnier(const Tensor<T>& pred, const Tensor<T>& target, double epsilon = kCharbonnierEps);

/// Images [B, H, W, C]: mean over batch, channels and frequency bins of
/// |Re F(pred) - Re F(target)| + |Im F(pred) - Im F(target)|, F the per-plane
/// 2-D DFT. Subgradient 0 where a difference is exactly 0.
template <typename T>
Tensor<T> fourier_l1(const Tensor<T>& pred, const Tensor<T>& target);

/// charbonnier + lambda * fourier_l1.
template <typename T>
Tensor<T> restoration_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& config = {});

/// 10 log10(1 / MSE) over all elements, values in [0, 1]. Returns +infinity
/// for identical inputs.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Gaussian-window SSIM over valid window positions, averaged over positions,
/// channels and batch. Accepts [H, W, C] or [B, H, W, C].
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

/// Normalized 1-D Gaussian taps of the SSIM window.
std::vector<double> ssim_taps();

}  // namespace cumamba
