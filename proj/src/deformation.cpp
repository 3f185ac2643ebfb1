#include "gpmotion/deformation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gpmotion/errors.hpp"
#include "gpmotion/kernels.hpp"
#include "gpmotion/ops.hpp"
#include "le_io.hpp"

namespace gpmotion::deform {

namespace {

struct Stack {
  std::size_t n, h, w;
  bool single;
};

Stack as_stack(const Shape& s) {
  if (s.size() == 3 && s[0] == 2) return {1, s[1], s[2], true};
  if (s.size() == 4 && s[1] == 2) return {s[0], s[2], s[3], false};
  throw ShapeError("expected a displacement field [2,H,W] or stack [N,2,H,W], got " + shape_str(s));
}

Tensor to_batch(const Tensor& t) {
  const Stack st = as_stack(t.shape());
  return st.single ? t.reshaped({1, 2, st.h, st.w}) : t;
}

Tensor sample(const Tensor& src, const Tensor& disp) {
  const kernels::SampleDims d{src.dim(0), src.dim(1), src.dim(2), src.dim(3)};
  Tensor out(src.shape());
  kernels::grid_sample_forward(src.data(), disp.data(), out.data(), d);
  return out;
}

}  // namespace

void GridSpec::validate() const {
  if (height < 4 || width < 4) throw ConfigError("grid extents must be at least 4");
  if (!(spacing > 0.0)) throw ConfigError("grid spacing must be positive");
}

std::vector<double> gaussian_taps(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const auto radius = static_cast<long>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    const double v = std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
    taps[static_cast<std::size_t>(k + radius)] = v;
    total += v;
  }
  for (auto& v : taps) v /= total;
  return taps;
}

Tensor smoothing_operator(std::size_t n, double sigma) {
  Tensor op({n, n});
  const auto taps = gaussian_taps(sigma);
  const long radius = static_cast<long>(taps.size() / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (long k = -radius; k <= radius; ++k) {
      const long j = std::clamp(static_cast<long>(i) + k, 0L, static_cast<long>(n) - 1);
      op[i * n + static_cast<std::size_t>(j)] += taps[static_cast<std::size_t>(k + radius)];
    }
  return op;
}

Tensor smooth_spatial(const Tensor& fields, const SmoothingSpec& spec, const GridSpec& grid) {
  if (!(spec.sigma_spatial_mm > 0.0)) return fields;
  const Shape& s = fields.shape();
  const std::size_t h = s[s.size() - 2], w = s.back();
  const double sigma_px = spec.sigma_spatial_mm / grid.spacing;
  const Tensor rows = smoothing_operator(h, sigma_px), cols = smoothing_operator(w, sigma_px);
  Tensor out(s);
  kernels::separable_apply(fields.data(), out.data(), fields.size() / (h * w), h, w, rows.data(), cols.data(), false);
  return out;
}

Tensor smooth_temporal(const Tensor& stack, const SmoothingSpec& spec) {
  if (!(spec.sigma_temporal > 0.0)) return stack;
  const std::size_t steps = stack.dim(0);
  const Tensor op = smoothing_operator(steps, spec.sigma_temporal);
  Tensor out(stack.shape());
  kernels::mix_blocks(stack.data(), out.data(), steps, stack.size() / steps, op.data(), false);
  return out;
}

Tensor exponentiate(const Tensor& velocity, int squaring_steps) {
  if (squaring_steps < 1) throw ConfigError("exponentiate: need at least one squaring step");
  const Stack st = as_stack(velocity.shape());
  Tensor u = to_batch(velocity);
  const double factor = std::ldexp(1.0, -squaring_steps);
  for (auto& v : u.values()) v *= factor;
  for (int i = 0; i < squaring_steps; ++i) {
    const Tensor moved = sample(u, u);
    for (std::size_t k = 0; k < u.size(); ++k) u[k] += moved[k];
  }
  return st.single ? std::move(u).reshaped({2, st.h, st.w}) : u;
}

int adaptive_squaring_steps(const Tensor& velocity) {
  const Stack st = as_stack(velocity.shape());
  const std::size_t plane = st.h * st.w;
  double peak = 0.0;
  for (std::size_t n = 0; n < st.n; ++n)
    for (std::size_t p = 0; p < plane; ++p) {
      const double vx = velocity[(n * 2) * plane + p], vy = velocity[(n * 2 + 1) * plane + p];
      peak = std::max(peak, std::hypot(vx, vy));
    }
  int steps = 1;
  while (std::ldexp(peak, -steps) >= 0.5 && steps < 30) ++steps;
  return steps;
}

Tensor compose(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("compose: grid mismatch");
  const Stack st = as_stack(a.shape());
  const Tensor ab = to_batch(a), bb = to_batch(b);
  Tensor out = sample(ab, bb);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += bb[k];
  return st.single ? std::move(out).reshaped({2, st.h, st.w}) : out;
}

Tensor warp(const Tensor& image, const Tensor& field, Interp mode) {
  const Stack st = as_stack(field.shape());
  if (image.shape() != Shape{st.h, st.w} || !st.single) throw ShapeError("warp: image and field grids differ");
  const std::size_t h = st.h, w = st.w, plane = h * w;
  if (mode == Interp::bilinear) {
    const Tensor out = sample(image.reshaped({1, 1, h, w}), field.reshaped({1, 2, h, w}));
    return out.reshaped({h, w});
  }
  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      const double px = std::clamp(static_cast<double>(x) + field[p], 0.0, static_cast<double>(w - 1));
      const double py = std::clamp(static_cast<double>(y) + field[plane + p], 0.0, static_cast<double>(h - 1));
      const auto sx = static_cast<std::size_t>(std::lround(px));
      const auto sy = static_cast<std::size_t>(std::lround(py));
      out[p] = image[sy * w + sx];
    }
  return out;
}

namespace {

// d(component)/d(axis) with central differences inside, one-sided at borders.
double partial(const double* c, std::size_t h, std::size_t w, std::size_t y, std::size_t x, bool along_x) {
  if (along_x) {
    if (w < 2) return 0.0;
    if (x == 0) return c[y * w + 1] - c[y * w];
    if (x == w - 1) return c[y * w + x] - c[y * w + x - 1];
    return 0.5 * (c[y * w + x + 1] - c[y * w + x - 1]);
  }
  if (h < 2) return 0.0;
  if (y == 0) return c[w + x] - c[x];
  if (y == h - 1) return c[y * w + x] - c[(y - 1) * w + x];
  return 0.5 * (c[(y + 1) * w + x] - c[(y - 1) * w + x]);
}

}  // namespace

Tensor jacobian_determinant(const Tensor& field) {
  const Stack st = as_stack(field.shape());
  if (!st.single) throw ShapeError("jacobian_determinant: expected a single field");
  const std::size_t h = st.h, w = st.w;
  const double* ux = field.data();
  const double* uy = field.data() + h * w;
  Tensor det({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double a = 1.0 + partial(ux, h, w, y, x, true);
      const double b = partial(ux, h, w, y, x, false);
      const double c = partial(uy, h, w, y, x, true);
      const double d = 1.0 + partial(uy, h, w, y, x, false);
      det[y * w + x] = a * d - b * c;
    }
  return det;
}

FieldGradients field_gradients(std::span<const Tensor> fields) {
  FieldGradients out;
  if (fields.empty()) return out;
  const Stack st = as_stack(fields[0].shape());
  const std::size_t h = st.h, w = st.w, plane = h * w;
  double spatial = 0.0;
  std::size_t spatial_count = 0;
  for (const Tensor& f : fields) {
    if (f.shape() != fields[0].shape()) throw ShapeError("field_gradients: grid mismatch");
    for (std::size_t y = 1; y + 1 < h; ++y)
      for (std::size_t x = 1; x + 1 < w; ++x) {
        double fro = 0.0;
        for (std::size_t c = 0; c < 2; ++c) {
          const double* comp = f.data() + c * plane;
          const double dx = partial(comp, h, w, y, x, true), dy = partial(comp, h, w, y, x, false);
          fro += dx * dx + dy * dy;
        }
        spatial += std::sqrt(fro);
        ++spatial_count;
      }
  }
  out.spatial = spatial_count ? spatial / static_cast<double>(spatial_count) : 0.0;
  if (fields.size() >= 2) {
    double temporal = 0.0;
    for (std::size_t t = 1; t < fields.size(); ++t)
      for (std::size_t p = 0; p < plane; ++p) {
        const double dx = fields[t][p] - fields[t - 1][p];
        const double dy = fields[t][plane + p] - fields[t - 1][plane + p];
        temporal += std::hypot(dx, dy);
      }
    out.temporal = temporal / static_cast<double>((fields.size() - 1) * plane);
  }
  return out;
}

Tensor field_at(const Tensor& stack, std::size_t i) {
  const Stack st = as_stack(stack.shape());
  if (i >= st.n) throw ShapeError("field_at: index out of range");
  const std::size_t block = 2 * st.h * st.w;
  std::vector<double> v(stack.data() + i * block, stack.data() + (i + 1) * block);
  return Tensor({2, st.h, st.w}, std::move(v));
}

Tensor stack_fields(std::span<const Tensor> fields) {
  if (fields.empty()) throw ShapeError("stack_fields: empty");
  const Stack st = as_stack(fields[0].shape());
  Tensor out({fields.size(), 2, st.h, st.w});
  const std::size_t block = 2 * st.h * st.w;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].shape() != fields[0].shape()) throw ShapeError("stack_fields: grid mismatch");
    std::copy_n(fields[i].data(), block, out.data() + i * block);
  }
  return out;
}

void write_fields_raw(const std::filesystem::path& path, std::span<const Tensor> fields) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  std::size_t h = 0, w = 0;
  if (!fields.empty()) {
    const Stack st = as_stack(fields[0].shape());
    h = st.h;
    w = st.w;
  }
  if (h > 0xffff || w > 0xffff || fields.size() > 0xffff) throw DataError("field export: extents exceed u16");
  io::write_u16(os, static_cast<std::uint16_t>(h));
  io::write_u16(os, static_cast<std::uint16_t>(w));
  io::write_u16(os, static_cast<std::uint16_t>(fields.size()));
  const std::size_t plane = h * w;
  for (const Tensor& f : fields) {
    if (f.shape() != fields[0].shape()) throw ShapeError("field export: grid mismatch");
    for (std::size_t p = 0; p < plane; ++p) {
      io::write_f32(os, static_cast<float>(f[p]));
      io::write_f32(os, static_cast<float>(f[plane + p]));
    }
  }
  if (!os) throw DataError("failed writing " + path.string());
}

std::vector<Tensor> read_fields_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  const std::size_t h = io::read_u16(is), w = io::read_u16(is), t = io::read_u16(is);
  std::vector<Tensor> out;
  const std::size_t plane = h * w;
  for (std::size_t i = 0; i < t; ++i) {
    Tensor f({2, h, w});
    for (std::size_t p = 0; p < plane; ++p) {
      f[p] = io::read_f32(is);
      f[plane + p] = io::read_f32(is);
    }
    out.push_back(std::move(f));
  }
  return out;
}

Var smooth_spatial(Var fields, const SmoothingSpec& spec, const GridSpec& grid) {
  if (!(spec.sigma_spatial_mm > 0.0)) return fields;
  const Shape& s = fields.shape();
  const double sigma_px = spec.sigma_spatial_mm / grid.spacing;
  return nn::separable_filter(fields, smoothing_operator(s[s.size() - 2], sigma_px),
                              smoothing_operator(s.back(), sigma_px));
}

Var smooth_temporal(Var stack, const SmoothingSpec& spec) {
  if (!(spec.sigma_temporal > 0.0)) return stack;
  return nn::mix_leading(stack, smoothing_operator(stack.shape()[0], spec.sigma_temporal));
}

Var exponentiate(Var velocity, int squaring_steps) {
  if (squaring_steps < 1) throw ConfigError("exponentiate: need at least one squaring step");
  Var u = nn::scale(velocity, std::ldexp(1.0, -squaring_steps));
  for (int i = 0; i < squaring_steps; ++i) u = nn::add(u, nn::grid_sample(u, u));
  return u;
}

Var warp(Var image, Var fields) {
  const std::size_t n = fields.shape()[0];
  if (image.shape()[0] == 1 && n > 1) image = nn::broadcast_leading(image, n);
  return nn::grid_sample(image, fields);
}

}  // namespace gpmotion::deform
