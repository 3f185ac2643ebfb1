#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "gpmotion/rng.hpp"
#include "gpmotion/tape.hpp"

// Differentiable primitives recorded on a Tape.
//
// Image tensors are [N, C, H, W] (a rank-3 [C, H, W] input is treated as
// N = 1 and returned with rank 3). Convolutions are cross-correlations (the
// kernel is not flipped). Displacement fields are [N, 2, H, W] with channel 0
// the x (column) component and channel 1 the y (row) component.

namespace gpmotion::nn {

enum class Padding { same, valid };
enum class Activation { leaky_relu, tanh, exp };

inline constexpr double kLeakySlope = 0.2;

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
Var reshape(Var a, Shape shape);

Var activation(Var x, Activation kind, double alpha = kLeakySlope);
inline Var leaky_relu(Var x, double alpha = kLeakySlope) { return activation(x, Activation::leaky_relu, alpha); }
inline Var tanh(Var x) { return activation(x, Activation::tanh); }
inline Var exp(Var x) { return activation(x, Activation::exp); }

/// weight [C_out, C_in, k, k], k odd, stride 1 or 2. Same padding pads k/2
/// zeros on every side, giving ceil(H / stride) outputs.
Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, Padding padding = Padding::same);

/// Adjoint of conv2d(same padding, stride 2) with the same weight layout,
/// i.e. weight [C_in_of_this_op, C_out_of_this_op, k, k]. Doubles H and W.
Var conv_transpose2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride = 2);

/// x [C, T], weight [C_out, C, k] with k odd; symmetric zero padding keeps T.
/// Throws ConfigError when dilation >= T (no off-centre tap can ever land
/// inside the sequence).
Var conv1d_dilated(Var x, Var weight, std::optional<Var> bias, std::size_t dilation);

/// x [N, In] or [In], weight [Out, In], bias [Out].
Var fully_connected(Var x, Var weight, std::optional<Var> bias);

/// x [C, T]. Training mode zeroes whole channels with probability `rate` and
/// rescales survivors by 1 / (1 - rate); evaluation mode is the identity.
Var spatial_dropout1d(Var x, double rate, Rng& rng, bool training);

Var concat_channels(Var a, Var b);

/// Repeats a [1, ...] tensor n times along the leading axis.
Var broadcast_leading(Var x, std::size_t n);

/// Clamped bilinear sampling of src [N, C, H, W] at x + disp(x).
Var grid_sample(Var src, Var disp);

/// Spatial-transformer style sampling: image [H, W], coords [H, W, 2] holding
/// absolute (x, y) positions in pixel units.
Var bilinear_sample(Var image, Var coords);

/// Applies rows * plane * cols^T to every trailing [H, W] plane.
Var separable_filter(Var x, const Tensor& rows, const Tensor& cols);

/// out[t] = sum_s m[t, s] * x[s] along the leading axis; m [N, N].
Var mix_leading(Var x, const Tensor& m);

/// Rows [r0, r1) of a [R, C] matrix.
Var slice_rows(Var x, std::size_t r0, std::size_t r1);

/// Row means of a [R, C] matrix, returns [R].
Var mean_columns(Var x);

/// x [P, R] -> [R, width] with column cols[p] = row p of x; other columns 0.
Var scatter_columns(Var x, std::span<const std::size_t> cols, std::size_t width);

/// x [R, C] -> [n, R] with row i = column cols[i] of x.
Var gather_columns(Var x, std::span<const std::size_t> cols);

/// Picks entries of the leading axis: x [N, ...] -> [n, ...].
Var select_leading(Var x, std::span<const std::size_t> index);

/// 0.5 * sum (pred - target)^2.
Var half_squared_error(Var pred, const Tensor& target);

}  // namespace gpmotion::nn
