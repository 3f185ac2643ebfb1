#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "gpmotion/tape.hpp"

// Diffeomorphic deformation engine on 2-D grids.
//
// Fields are displacements in pixel units, stored channel-first: a single
// field is [2, H, W], a stack of fields is [N, 2, H, W]; channel 0 is the x
// (column) component, channel 1 the y (row) component. The deformation is
// phi(x) = x + u(x), and warping pulls back: warp(I, phi)(x) = I(x + u(x)).

namespace gpmotion::deform {

struct GridSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  double spacing = 1.5;  // mm per pixel, isotropic

  void validate() const;
};

struct SmoothingSpec {
  double sigma_spatial_mm = 3.0;  // 0 disables the pass
  double sigma_temporal = 1.5;    // in time steps; 0 disables the pass
};

enum class Interp { bilinear, nearest };

/// Normalised discrete Gaussian on [-r, r] with r = ceil(3 sigma).
std::vector<double> gaussian_taps(double sigma);

/// n x n matrix applying the 1-D Gaussian with border replication. sigma <= 0
/// gives the identity.
Tensor smoothing_operator(std::size_t n, double sigma);

/// Separable spatial Gaussian over the trailing [H, W] planes of `fields`.
Tensor smooth_spatial(const Tensor& fields, const SmoothingSpec& spec, const GridSpec& grid);
/// Gaussian along the leading (time) axis of a stack.
Tensor smooth_temporal(const Tensor& stack, const SmoothingSpec& spec);

/// Scaling and squaring: u0 = v / 2^n, then n times u <- u + u o (id + u).
Tensor exponentiate(const Tensor& velocity, int squaring_steps = 6);

/// Number of squarings so that max|v| / 2^n < 0.5 px (at least 1).
int adaptive_squaring_steps(const Tensor& velocity);

/// Displacement of phi_a o phi_b: u_b(x) + u_a(x + u_b(x)).
Tensor compose(const Tensor& a, const Tensor& b);

/// image [H, W]; field [2, H, W].
Tensor warp(const Tensor& image, const Tensor& field, Interp mode = Interp::bilinear);

/// det(I + grad u) per pixel: central differences inside, one-sided at the border.
Tensor jacobian_determinant(const Tensor& field);

struct FieldGradients {
  double spatial = 0.0;   // mean Frobenius norm of grad u over t and interior pixels
  double temporal = 0.0;  // mean |u_t - u_{t-1}| over consecutive pairs and pixels
};

FieldGradients field_gradients(std::span<const Tensor> fields);

/// Returns field i of a [N, 2, H, W] stack as [2, H, W].
Tensor field_at(const Tensor& stack, std::size_t i);
Tensor stack_fields(std::span<const Tensor> fields);

// Raw field export: H u16, W u16, T u16, then T*H*W*2 little-endian f32 with
// the component index fastest (x then y).
void write_fields_raw(const std::filesystem::path& path, std::span<const Tensor> fields);
std::vector<Tensor> read_fields_raw(const std::filesystem::path& path);

// Differentiable versions used inside the model.
Var smooth_spatial(Var fields, const SmoothingSpec& spec, const GridSpec& grid);
Var smooth_temporal(Var stack, const SmoothingSpec& spec);
Var exponentiate(Var velocity, int squaring_steps);
/// image [N, C, H, W] (or [1, C, H, W], broadcast), fields [N, 2, H, W].
Var warp(Var image, Var fields);

}  // namespace gpmotion::deform
