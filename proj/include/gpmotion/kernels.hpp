#pragma once

#include <cstddef>

// Raw numeric kernels behind the differentiable ops.
//
// Every kernel exists twice: the OpenMP version in gpmotion::kernels, used by
// the library, and a plain serial version in gpmotion::kernels::reference,
// kept for testing and benchmarking. Parallel loops only partition over
// outputs owned by a single iteration (an output plane, a weight slice), so
// results do not depend on the thread count.
//
// "Accumulate" kernels add into their output buffer; the others overwrite.

namespace gpmotion::kernels {

/// Cross-correlation with symmetric zero padding `pad` on both sides.
struct Conv2dDims {
  std::size_t batch, c_in, h_in, w_in;
  std::size_t c_out, k, stride, pad;
  std::size_t h_out, w_out;
};

/// out[n,co,y,x] = bias[co] + sum_{ci,ky,kx} w[co,ci,ky,kx] * in[n,ci,y*s+ky-p,x*s+kx-p]
void conv2d_forward(const double* in, const double* weight, const double* bias, double* out, const Conv2dDims& d);
/// Accumulate: grad_in += d(out)/d(in)^T grad_out
void conv2d_backward_input(const double* grad_out, const double* weight, double* grad_in, const Conv2dDims& d);
/// Accumulate: grad_w += d(out)/d(w)^T grad_out
void conv2d_backward_weight(const double* grad_out, const double* in, double* grad_w, const Conv2dDims& d);

/// Bilinear sampling of `src` [n, c, h, w] at (x + disp_x, y + disp_y), with
/// disp [n, 2, h, w] (channel 0 = x/column, 1 = y/row). Coordinates are
/// clamped to the image; the derivative w.r.t. a clamped coordinate is zero.
struct SampleDims {
  std::size_t batch, channels, h, w;
};

void grid_sample_forward(const double* src, const double* disp, double* out, const SampleDims& d);
/// Accumulate into grad_src and/or grad_disp (either may be null).
void grid_sample_backward(const double* src, const double* disp, const double* grad_out, double* grad_src,
                          double* grad_disp, const SampleDims& d);

/// out_plane = A * in_plane * B^T for `planes` consecutive h x w planes,
/// A [h, h], B [w, w]. With transpose=true computes A^T * in * B instead
/// (the adjoint). Used for separable linear filters.
void separable_apply(const double* in, double* out, std::size_t planes, std::size_t h, std::size_t w,
                     const double* a, const double* b, bool transpose);

/// out[t] = sum_s m[t, s] * in[s] where each in[s]/out[t] is a block of
/// `block` doubles; m is [steps, steps]. transpose=true applies m^T.
void mix_blocks(const double* in, double* out, std::size_t steps, std::size_t block, const double* m,
                bool transpose);

namespace reference {

void conv2d_forward(const double* in, const double* weight, const double* bias, double* out, const Conv2dDims& d);
void conv2d_backward_input(const double* grad_out, const double* weight, double* grad_in, const Conv2dDims& d);
void conv2d_backward_weight(const double* grad_out, const double* in, double* grad_w, const Conv2dDims& d);
void grid_sample_forward(const double* src, const double* disp, double* out, const SampleDims& d);
void grid_sample_backward(const double* src, const double* disp, const double* grad_out, double* grad_src,
                          double* grad_disp, const SampleDims& d);
void separable_apply(const double* in, double* out, std::size_t planes, std::size_t h, std::size_t w,
                     const double* a, const double* b, bool transpose);
void mix_blocks(const double* in, double* out, std::size_t steps, std::size_t block, const double* m,
                bool transpose);

}  // namespace reference

/// Sets the OpenMP thread count for the parallel kernels (0 keeps the default).
void set_num_threads(int threads);
int num_threads();

}  // namespace gpmotion::kernels
