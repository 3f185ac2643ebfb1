#include "gpmotion/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "sample_tap.hpp"

namespace gpmotion::kernels {

namespace {

using std::ptrdiff_t;

// Output index range [lo, hi) for which in = o*stride + tap - pad lies in [0, extent).
inline void valid_range(std::size_t tap, const Conv2dDims& d, std::size_t extent, std::size_t out_extent,
                        std::size_t& lo, std::size_t& hi) {
  const auto s = static_cast<ptrdiff_t>(d.stride);
  const ptrdiff_t shift = static_cast<ptrdiff_t>(tap) - static_cast<ptrdiff_t>(d.pad);
  ptrdiff_t first = shift >= 0 ? 0 : (-shift + s - 1) / s;
  ptrdiff_t last = (static_cast<ptrdiff_t>(extent) - 1 - shift);  // o*s <= last
  ptrdiff_t end = last < 0 ? 0 : last / s + 1;
  end = std::min<ptrdiff_t>(end, static_cast<ptrdiff_t>(out_extent));
  first = std::min(first, end);
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(end);
}

}  // namespace

void conv2d_forward(const double* in, const double* weight, const double* bias, double* out, const Conv2dDims& d) {
  const std::size_t out_plane = d.h_out * d.w_out;
  const std::size_t in_plane = d.h_in * d.w_in;
  const auto total = static_cast<ptrdiff_t>(d.batch * d.c_out);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t job = 0; job < total; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / d.c_out;
    const std::size_t co = static_cast<std::size_t>(job) % d.c_out;
    double* o = out + (n * d.c_out + co) * out_plane;
    std::fill(o, o + out_plane, bias ? bias[co] : 0.0);
    for (std::size_t ci = 0; ci < d.c_in; ++ci) {
      const double* x = in + (n * d.c_in + ci) * in_plane;
      const double* wk = weight + (co * d.c_in + ci) * d.k * d.k;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        std::size_t oy_lo, oy_hi;
        valid_range(ky, d, d.h_in, d.h_out, oy_lo, oy_hi);
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          std::size_t ox_lo, ox_hi;
          valid_range(kx, d, d.w_in, d.w_out, ox_lo, ox_hi);
          const double wv = wk[ky * d.k + kx];
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const double* xrow = x + (oy * d.stride + ky - d.pad) * d.w_in + kx - d.pad;
            double* orow = o + oy * d.w_out;
            if (d.stride == 1) {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * xrow[ox];
            } else {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * xrow[ox * d.stride];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const double* grad_out, const double* weight, double* grad_in, const Conv2dDims& d) {
  const std::size_t out_plane = d.h_out * d.w_out;
  const std::size_t in_plane = d.h_in * d.w_in;
  const auto total = static_cast<ptrdiff_t>(d.batch * d.c_in);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t job = 0; job < total; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / d.c_in;
    const std::size_t ci = static_cast<std::size_t>(job) % d.c_in;
    double* gx = grad_in + (n * d.c_in + ci) * in_plane;
    for (std::size_t co = 0; co < d.c_out; ++co) {
      const double* g = grad_out + (n * d.c_out + co) * out_plane;
      const double* wk = weight + (co * d.c_in + ci) * d.k * d.k;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        std::size_t oy_lo, oy_hi;
        valid_range(ky, d, d.h_in, d.h_out, oy_lo, oy_hi);
        for (std::size_t kx = 0; kx < d.k; ++kx) {
          std::size_t ox_lo, ox_hi;
          valid_range(kx, d, d.w_in, d.w_out, ox_lo, ox_hi);
          const double wv = wk[ky * d.k + kx];
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            double* xrow = gx + (oy * d.stride + ky - d.pad) * d.w_in + kx - d.pad;
            const double* grow = g + oy * d.w_out;
            if (d.stride == 1) {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) xrow[ox] += wv * grow[ox];
            } else {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) xrow[ox * d.stride] += wv * grow[ox];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const double* grad_out, const double* in, double* grad_w, const Conv2dDims& d) {
  const std::size_t out_plane = d.h_out * d.w_out;
  const std::size_t in_plane = d.h_in * d.w_in;
  const auto total = static_cast<ptrdiff_t>(d.c_out * d.c_in);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t job = 0; job < total; ++job) {
    const std::size_t co = static_cast<std::size_t>(job) / d.c_in;
    const std::size_t ci = static_cast<std::size_t>(job) % d.c_in;
    double* gw = grad_w + (co * d.c_in + ci) * d.k * d.k;
    for (std::size_t ky = 0; ky < d.k; ++ky) {
      std::size_t oy_lo, oy_hi;
      valid_range(ky, d, d.h_in, d.h_out, oy_lo, oy_hi);
      for (std::size_t kx = 0; kx < d.k; ++kx) {
        std::size_t ox_lo, ox_hi;
        valid_range(kx, d, d.w_in, d.w_out, ox_lo, ox_hi);
        double acc = 0.0;
        for (std::size_t n = 0; n < d.batch; ++n) {
          const double* g = grad_out + (n * d.c_out + co) * out_plane;
          const double* x = in + (n * d.c_in + ci) * in_plane;
          for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
            const double* xrow = x + (oy * d.stride + ky - d.pad) * d.w_in + kx - d.pad;
            const double* grow = g + oy * d.w_out;
            if (d.stride == 1) {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) acc += grow[ox] * xrow[ox];
            } else {
              for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) acc += grow[ox] * xrow[ox * d.stride];
            }
          }
        }
        gw[ky * d.k + kx] += acc;
      }
    }
  }
}

void grid_sample_forward(const double* src, const double* disp, double* out, const SampleDims& d) {
  const std::size_t plane = d.h * d.w;
  const auto total = static_cast<ptrdiff_t>(d.batch * d.h);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t job = 0; job < total; ++job) {
    const std::size_t n = static_cast<std::size_t>(job) / d.h;
    const std::size_t y = static_cast<std::size_t>(job) % d.h;
    const double* dx = disp + (n * 2) * plane;
    const double* dy = dx + plane;
    for (std::size_t x = 0; x < d.w; ++x) {
      const std::size_t p = y * d.w + x;
      const auto tx = detail::make_tap(static_cast<double>(x) + dx[p], d.w);
      const auto ty = detail::make_tap(static_cast<double>(y) + dy[p], d.h);
      const double w00 = (1 - ty.frac) * (1 - tx.frac), w01 = (1 - ty.frac) * tx.frac;
      const double w10 = ty.frac * (1 - tx.frac), w11 = ty.frac * tx.frac;
      for (std::size_t c = 0; c < d.channels; ++c) {
        const double* s = src + (n * d.channels + c) * plane;
        out[(n * d.channels + c) * plane + p] = w00 * s[ty.lo * d.w + tx.lo] + w01 * s[ty.lo * d.w + tx.hi] +
                                                w10 * s[ty.hi * d.w + tx.lo] + w11 * s[ty.hi * d.w + tx.hi];
      }
    }
  }
}

void grid_sample_backward(const double* src, const double* disp, const double* grad_out, double* grad_src,
                          double* grad_disp, const SampleDims& d) {
  const std::size_t plane = d.h * d.w;
  if (grad_src) {
    // Scatter: each (n, c) plane is owned by one iteration.
    const auto total = static_cast<ptrdiff_t>(d.batch * d.channels);
#pragma omp parallel for schedule(static)
    for (ptrdiff_t job = 0; job < total; ++job) {
      const std::size_t n = static_cast<std::size_t>(job) / d.channels;
      const double* dx = disp + (n * 2) * plane;
      const double* dy = dx + plane;
      const double* g = grad_out + static_cast<std::size_t>(job) * plane;
      double* gs = grad_src + static_cast<std::size_t>(job) * plane;
      for (std::size_t y = 0; y < d.h; ++y) {
        for (std::size_t x = 0; x < d.w; ++x) {
          const std::size_t p = y * d.w + x;
          const auto tx = detail::make_tap(static_cast<double>(x) + dx[p], d.w);
          const auto ty = detail::make_tap(static_cast<double>(y) + dy[p], d.h);
          const double gv = g[p];
          gs[ty.lo * d.w + tx.lo] += gv * (1 - ty.frac) * (1 - tx.frac);
          gs[ty.lo * d.w + tx.hi] += gv * (1 - ty.frac) * tx.frac;
          gs[ty.hi * d.w + tx.lo] += gv * ty.frac * (1 - tx.frac);
          gs[ty.hi * d.w + tx.hi] += gv * ty.frac * tx.frac;
        }
      }
    }
  }
  if (grad_disp) {
    const auto total = static_cast<ptrdiff_t>(d.batch * d.h);
#pragma omp parallel for schedule(static)
    for (ptrdiff_t job = 0; job < total; ++job) {
      const std::size_t n = static_cast<std::size_t>(job) / d.h;
      const std::size_t y = static_cast<std::size_t>(job) % d.h;
      const double* dx = disp + (n * 2) * plane;
      const double* dy = dx + plane;
      double* gdx = grad_disp + (n * 2) * plane;
      double* gdy = gdx + plane;
      for (std::size_t x = 0; x < d.w; ++x) {
        const std::size_t p = y * d.w + x;
        const auto tx = detail::make_tap(static_cast<double>(x) + dx[p], d.w);
        const auto ty = detail::make_tap(static_cast<double>(y) + dy[p], d.h);
        double ax = 0.0, ay = 0.0;
        for (std::size_t c = 0; c < d.channels; ++c) {
          const double* s = src + (n * d.channels + c) * plane;
          const double gv = grad_out[(n * d.channels + c) * plane + p];
          const double s00 = s[ty.lo * d.w + tx.lo], s01 = s[ty.lo * d.w + tx.hi];
          const double s10 = s[ty.hi * d.w + tx.lo], s11 = s[ty.hi * d.w + tx.hi];
          ax += gv * ((1 - ty.frac) * (s01 - s00) + ty.frac * (s11 - s10));
          ay += gv * ((1 - tx.frac) * (s10 - s00) + tx.frac * (s11 - s01));
        }
        if (tx.live) gdx[p] += ax;
        if (ty.live) gdy[p] += ay;
      }
    }
  }
}

void separable_apply(const double* in, double* out, std::size_t planes, std::size_t h, std::size_t w,
                     const double* a, const double* b, bool transpose) {
  const auto total = static_cast<ptrdiff_t>(planes);
#pragma omp parallel
  {
    std::vector<double> tmp(h * w);
#pragma omp for schedule(static)
    for (ptrdiff_t pl = 0; pl < total; ++pl) {
      const double* x = in + static_cast<std::size_t>(pl) * h * w;
      double* o = out + static_cast<std::size_t>(pl) * h * w;
      // tmp = x * B^T (rows filtered), or x * B for the adjoint.
      std::fill(tmp.begin(), tmp.end(), 0.0);
      for (std::size_t r = 0; r < h; ++r) {
        const double* xr = x + r * w;
        double* tr = tmp.data() + r * w;
        for (std::size_t j = 0; j < w; ++j) {
          const double xv = xr[j];
          if (xv == 0.0) continue;
          // out[r, i] += x[r, j] * Bt[j, i]
          if (!transpose) {
            for (std::size_t i = 0; i < w; ++i) tr[i] += xv * b[i * w + j];
          } else {
            const double* brow = b + j * w;
            for (std::size_t i = 0; i < w; ++i) tr[i] += xv * brow[i];
          }
        }
      }
      // o = A * tmp (or A^T * tmp)
      std::fill(o, o + h * w, 0.0);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t s = 0; s < h; ++s) {
          const double av = transpose ? a[s * h + r] : a[r * h + s];
          if (av == 0.0) continue;
          const double* tr = tmp.data() + s * w;
          double* orow = o + r * w;
          for (std::size_t i = 0; i < w; ++i) orow[i] += av * tr[i];
        }
      }
    }
  }
}

void mix_blocks(const double* in, double* out, std::size_t steps, std::size_t block, const double* m,
                bool transpose) {
  const auto total = static_cast<ptrdiff_t>(steps);
#pragma omp parallel for schedule(static)
  for (ptrdiff_t t = 0; t < total; ++t) {
    double* o = out + static_cast<std::size_t>(t) * block;
    std::fill(o, o + block, 0.0);
    for (std::size_t s = 0; s < steps; ++s) {
      const double mv = transpose ? m[s * steps + static_cast<std::size_t>(t)] : m[static_cast<std::size_t>(t) * steps + s];
      if (mv == 0.0) continue;
      const double* x = in + s * block;
      for (std::size_t i = 0; i < block; ++i) o[i] += mv * x[i];
    }
  }
}

void set_num_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

int num_threads() { return omp_get_max_threads(); }

}  // namespace gpmotion::kernels
