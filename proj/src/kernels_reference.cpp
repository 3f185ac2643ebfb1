// Straightforward serial kernels. Deliberately unoptimized: bounds are checked
// per tap, loops follow the defining formulas.

#include <algorithm>
#include <vector>

#include "gpmotion/kernels.hpp"
#include "sample_tap.hpp"

namespace gpmotion::kernels::reference {

namespace {

inline bool input_pos(std::size_t o, std::size_t tap, const Conv2dDims& d, std::size_t extent, std::size_t& pos) {
  const long p = static_cast<long>(o * d.stride + tap) - static_cast<long>(d.pad);
  if (p < 0 || p >= static_cast<long>(extent)) return false;
  pos = static_cast<std::size_t>(p);
  return true;
}

}  // namespace

void conv2d_forward(const double* in, const double* weight, const double* bias, double* out, const Conv2dDims& d) {
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t co = 0; co < d.c_out; ++co)
      for (std::size_t oy = 0; oy < d.h_out; ++oy)
        for (std::size_t ox = 0; ox < d.w_out; ++ox) {
          double acc = bias ? bias[co] : 0.0;
          for (std::size_t ci = 0; ci < d.c_in; ++ci)
            for (std::size_t ky = 0; ky < d.k; ++ky)
              for (std::size_t kx = 0; kx < d.k; ++kx) {
                std::size_t iy, ix;
                if (!input_pos(oy, ky, d, d.h_in, iy) || !input_pos(ox, kx, d, d.w_in, ix)) continue;
                acc += weight[((co * d.c_in + ci) * d.k + ky) * d.k + kx] *
                       in[((n * d.c_in + ci) * d.h_in + iy) * d.w_in + ix];
              }
          out[((n * d.c_out + co) * d.h_out + oy) * d.w_out + ox] = acc;
        }
}

void conv2d_backward_input(const double* grad_out, const double* weight, double* grad_in, const Conv2dDims& d) {
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t co = 0; co < d.c_out; ++co)
      for (std::size_t oy = 0; oy < d.h_out; ++oy)
        for (std::size_t ox = 0; ox < d.w_out; ++ox) {
          const double g = grad_out[((n * d.c_out + co) * d.h_out + oy) * d.w_out + ox];
          for (std::size_t ci = 0; ci < d.c_in; ++ci)
            for (std::size_t ky = 0; ky < d.k; ++ky)
              for (std::size_t kx = 0; kx < d.k; ++kx) {
                std::size_t iy, ix;
                if (!input_pos(oy, ky, d, d.h_in, iy) || !input_pos(ox, kx, d, d.w_in, ix)) continue;
                grad_in[((n * d.c_in + ci) * d.h_in + iy) * d.w_in + ix] +=
                    g * weight[((co * d.c_in + ci) * d.k + ky) * d.k + kx];
              }
        }
}

void conv2d_backward_weight(const double* grad_out, const double* in, double* grad_w, const Conv2dDims& d) {
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t co = 0; co < d.c_out; ++co)
      for (std::size_t oy = 0; oy < d.h_out; ++oy)
        for (std::size_t ox = 0; ox < d.w_out; ++ox) {
          const double g = grad_out[((n * d.c_out + co) * d.h_out + oy) * d.w_out + ox];
          for (std::size_t ci = 0; ci < d.c_in; ++ci)
            for (std::size_t ky = 0; ky < d.k; ++ky)
              for (std::size_t kx = 0; kx < d.k; ++kx) {
                std::size_t iy, ix;
                if (!input_pos(oy, ky, d, d.h_in, iy) || !input_pos(ox, kx, d, d.w_in, ix)) continue;
                grad_w[((co * d.c_in + ci) * d.k + ky) * d.k + kx] +=
                    g * in[((n * d.c_in + ci) * d.h_in + iy) * d.w_in + ix];
              }
        }
}

void grid_sample_forward(const double* src, const double* disp, double* out, const SampleDims& d) {
  const std::size_t plane = d.h * d.w;
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t y = 0; y < d.h; ++y)
        for (std::size_t x = 0; x < d.w; ++x) {
          const std::size_t p = y * d.w + x;
          const auto tx = detail::make_tap(static_cast<double>(x) + disp[(n * 2) * plane + p], d.w);
          const auto ty = detail::make_tap(static_cast<double>(y) + disp[(n * 2 + 1) * plane + p], d.h);
          const double* s = src + (n * d.channels + c) * plane;
          const double top = (1 - tx.frac) * s[ty.lo * d.w + tx.lo] + tx.frac * s[ty.lo * d.w + tx.hi];
          const double bottom = (1 - tx.frac) * s[ty.hi * d.w + tx.lo] + tx.frac * s[ty.hi * d.w + tx.hi];
          out[(n * d.channels + c) * plane + p] = (1 - ty.frac) * top + ty.frac * bottom;
        }
}

void grid_sample_backward(const double* src, const double* disp, const double* grad_out, double* grad_src,
                          double* grad_disp, const SampleDims& d) {
  const std::size_t plane = d.h * d.w;
  for (std::size_t n = 0; n < d.batch; ++n)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (std::size_t y = 0; y < d.h; ++y)
        for (std::size_t x = 0; x < d.w; ++x) {
          const std::size_t p = y * d.w + x;
          const auto tx = detail::make_tap(static_cast<double>(x) + disp[(n * 2) * plane + p], d.w);
          const auto ty = detail::make_tap(static_cast<double>(y) + disp[(n * 2 + 1) * plane + p], d.h);
          const double g = grad_out[(n * d.channels + c) * plane + p];
          const double* s = src + (n * d.channels + c) * plane;
          if (grad_src) {
            double* gs = grad_src + (n * d.channels + c) * plane;
            gs[ty.lo * d.w + tx.lo] += g * (1 - ty.frac) * (1 - tx.frac);
            gs[ty.lo * d.w + tx.hi] += g * (1 - ty.frac) * tx.frac;
            gs[ty.hi * d.w + tx.lo] += g * ty.frac * (1 - tx.frac);
            gs[ty.hi * d.w + tx.hi] += g * ty.frac * tx.frac;
          }
          if (grad_disp) {
            const double s00 = s[ty.lo * d.w + tx.lo], s01 = s[ty.lo * d.w + tx.hi];
            const double s10 = s[ty.hi * d.w + tx.lo], s11 = s[ty.hi * d.w + tx.hi];
            if (tx.live) grad_disp[(n * 2) * plane + p] += g * ((1 - ty.frac) * (s01 - s00) + ty.frac * (s11 - s10));
            if (ty.live) grad_disp[(n * 2 + 1) * plane + p] += g * ((1 - tx.frac) * (s10 - s00) + tx.frac * (s11 - s01));
          }
        }
}

void separable_apply(const double* in, double* out, std::size_t planes, std::size_t h, std::size_t w,
                     const double* a, const double* b, bool transpose) {
  auto A = [&](std::size_t i, std::size_t j) { return transpose ? a[j * h + i] : a[i * h + j]; };
  auto B = [&](std::size_t i, std::size_t j) { return transpose ? b[j * w + i] : b[i * w + j]; };
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* x = in + pl * h * w;
    double* o = out + pl * h * w;
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        double acc = 0.0;
        for (std::size_t s = 0; s < h; ++s)
          for (std::size_t j = 0; j < w; ++j) acc += A(r, s) * x[s * w + j] * B(c, j);
        o[r * w + c] = acc;
      }
  }
}

void mix_blocks(const double* in, double* out, std::size_t steps, std::size_t block, const double* m,
                bool transpose) {
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t i = 0; i < block; ++i) {
      double acc = 0.0;
      for (std::size_t s = 0; s < steps; ++s)
        acc += (transpose ? m[s * steps + t] : m[t * steps + s]) * in[s * block + i];
      out[t * block + i] = acc;
    }
}

}  // namespace gpmotion::kernels::reference
