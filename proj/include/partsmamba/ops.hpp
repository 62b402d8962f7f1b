#pragma once

// Differentiable tensor operations recorded on a Tape.

#include <cstddef>
#include <vector>

#include "partsmamba/autograd.hpp"

namespace partsmamba {

inline constexpr double kLayerNormEps = 1e-5;

/// out[..., j] = sum_i x[..., i] * w[i, j]. No bias.
Var linear_map(Var x, Var w);

/// Kernel-width-1 convolution over the channel axis of a [V, T, Cin] tensor.
Var pointwise_conv1d(Var x, Var k);

/// Normalizes every trailing-axis vector with its population variance,
/// then applies the affine gamma/beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps);

Var relu(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
/// s * x for a one-element tensor s.
Var scale(Var s, Var x);
Var sum(Var x);

/// out.flat[i] = x.flat[indices[i]]. Every permutation-like reshuffle in
/// the model (axis reversal, transposes, scan reordering) goes through here.
Var gather(Var x, std::vector<std::size_t> indices, Shape out_shape, const char* op = "gather");

Var reverse_axis(Var x, std::size_t axis);
/// [A, B, ...] -> [B, A, ...].
Var swap_leading_axes(Var x);
/// Concatenation along axis 0; trailing extents must agree.
Var concat_leading(const std::vector<Var>& parts);
/// Rows `rows` of axis 0, in the given order.
Var select_leading(Var x, const std::vector<std::size_t>& rows);

/// out[v, ...] = sum_u a[v, u] * x[u, ...].
Var joint_mix(Var a, Var x);

/// Depthwise temporal convolution of [V, T, C] with kernel [W, C] (W odd),
/// zero padded so the frame count is preserved.
Var temporal_conv(Var x, Var k);

/// Mean over the two leading axes of [V, T, C] -> [C].
Var mean_pool(Var x);

/// Softmax cross-entropy of a [K] logit vector against class `label`.
Var cross_entropy(Var logits, std::size_t label);

// Index maps shared by the ops above and by reordering code elsewhere.
std::vector<std::size_t> reverse_axis_indices(const Shape& shape, std::size_t axis);
std::vector<std::size_t> swap_leading_indices(const Shape& shape);

// Plain tensor versions for callers outside a tape.
Tensor reverse_axis(const Tensor& x, std::size_t axis);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace partsmamba
