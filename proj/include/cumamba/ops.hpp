#pragma once

#include <cstddef>
#include <vector>

#include "cumamba/tensor.hpp"

namespace cumamba::ops {

/// Negative-side slope of leaky_relu.
inline constexpr double kLeakySlope = 0.01;
inline constexpr double kLayerNormEps = 1e-6;

enum class UnaryOp { kExp, kSoftplus, kSilu, kSigmoid, kLeakyRelu, kNeg };
enum class BinaryOp { kAdd, kSub, kMul };

/// Trailing-dimension broadcasting; throws ShapeError naming both shapes.
Shape broadcast_shape(const Shape& a, const Shape& b);

template <typename T>
Tensor<T> elementwise(UnaryOp op, const Tensor<T>& x);
template <typename T>
Tensor<T> elementwise(BinaryOp op, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::kAdd, a, b); }
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::kSub, a, b); }
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return elementwise(BinaryOp::kMul, a, b); }
template <typename T>
Tensor<T> exp(const Tensor<T>& x) { return elementwise(UnaryOp::kExp, x); }
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) { return elementwise(UnaryOp::kSoftplus, x); }
template <typename T>
Tensor<T> silu(const Tensor<T>& x) { return elementwise(UnaryOp::kSilu, x); }
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) { return elementwise(UnaryOp::kSigmoid, x); }
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x) { return elementwise(UnaryOp::kLeakyRelu, x); }
template <typename T>
Tensor<T> neg(const Tensor<T>& x) { return elementwise(UnaryOp::kNeg, x); }

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// [M, K] x [K, N] -> [M, N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x[..., K] * w[K, N] + bias[N]; bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

/// Output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm);

/// Concatenation along the last axis; leading extents must agree.
template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b);

/// Normalizes over the last axis, then applies gamma/beta of that width.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = static_cast<T>(kLayerNormEps));

/// Convolution variants over channels-last feature maps x[B, H, W, C].
///
/// | kind           | weight shape         | output            |
/// |----------------|----------------------|-------------------|
/// | kPointwise1x1  | [Cin, Cout]          | [B, H, W, Cout]   |
/// | kDepthwise3x3  | [3, 3, C]            | [B, H, W, C]      |
/// | kPlain3x3      | [3, 3, Cin, Cout]    | [B, H, W, Cout]   |
/// | kStrided2x2    | [2, 2, Cin, Cout]    | [B, H/2, W/2, Cout] |
/// | kTransposed2x2 | [Cin, 2, 2, Cout]    | [B, 2H, 2W, Cout] |
///
/// 3x3 kinds pad by one pixel of zeros. Bias has Cout entries or is undefined.
enum class ConvKind { kPointwise1x1, kDepthwise3x3, kPlain3x3, kStrided2x2, kTransposed2x2 };

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, ConvKind kind);

/// Causal depthwise convolution along the sequence axis of x[B, L, D] with
/// w[K, D]: y[t] = bias + sum_k w[k] * x[t - (K - 1) + k], zero before t = 0.
template <typename T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

}  // namespace cumamba::ops
