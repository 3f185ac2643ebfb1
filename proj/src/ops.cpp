#include "gpmotion/ops.hpp"

#include <cmath>
#include <string>

#include "gpmotion/errors.hpp"
#include "gpmotion/kernels.hpp"

namespace gpmotion::nn {

namespace {

void accumulate(Tensor& dst, const Tensor& src, double factor = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

// View of an image tensor as [N, C, H, W].
struct Image4 {
  std::size_t n, c, h, w;
  bool rank3;
};

Image4 as_image(const Shape& s, const char* op) {
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], false};
  if (s.size() == 3) return {1, s[0], s[1], s[2], true};
  throw ShapeError(std::string(op) + ": expected [N,C,H,W] or [C,H,W], got " + shape_str(s));
}

Shape image_shape(const Image4& im, std::size_t c, std::size_t h, std::size_t w) {
  if (im.rank3) return {c, h, w};
  return {im.n, c, h, w};
}

void check_bias(const std::optional<Var>& bias, std::size_t channels, const char* op) {
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != channels))
    throw ShapeError(std::string(op) + ": bias must be [" + std::to_string(channels) + "]");
}

}  // namespace

Var add(Var a, Var b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  accumulate(out, b.value());
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad(ib), g);
  });
}

Var sub(Var a, Var b) {
  require(a.shape() == b.shape(), "sub: shape mismatch");
  Tensor out = a.value();
  accumulate(out, b.value(), -1.0);
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) accumulate(t.grad(ia), g);
    if (t.requires_grad(ib)) accumulate(t.grad(ib), g, -1.0);
  });
}

Var mul(Var a, Var b) {
  require(a.shape() == b.shape(), "mul: shape mismatch");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& ga = t.grad(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  const auto ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, factor](Tape& t, std::size_t self) {
    accumulate(t.grad(ia), t.grad(self), factor);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const auto ia = a.id();
  return a.tape().record(Tensor({1}, s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad(ia).values()) v += g;
  });
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const auto ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    accumulate(t.grad(ia), t.grad(self));
  });
}

Var activation(Var x, Activation kind, double alpha) {
  Tensor out = x.value();
  for (auto& v : out.values()) {
    switch (kind) {
      case Activation::leaky_relu: v = v > 0.0 ? v : alpha * v; break;
      case Activation::tanh: v = std::tanh(v); break;
      case Activation::exp: v = std::exp(v); break;
    }
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, kind, alpha](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& in = t.value(ix);
    const Tensor& y = t.value(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < g.size(); ++i) {
      double d = 0.0;
      switch (kind) {
        case Activation::leaky_relu: d = in[i] > 0.0 ? 1.0 : alpha; break;
        case Activation::tanh: d = 1.0 - y[i] * y[i]; break;
        case Activation::exp: d = y[i]; break;
      }
      gx[i] += g[i] * d;
    }
  });
}

Var conv2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride, Padding padding) {
  const Image4 im = as_image(x.shape(), "conv2d");
  const Shape& ws = weight.shape();
  require(ws.size() == 4 && ws[2] == ws[3] && ws[2] % 2 == 1, "conv2d: weight must be [C_out, C_in, k, k] with k odd");
  require(ws[1] == im.c, "conv2d: kernel expects " + std::to_string(ws[1]) + " input channels, input has " +
                             std::to_string(im.c));
  require(stride == 1 || stride == 2, "conv2d: stride must be 1 or 2");
  check_bias(bias, ws[0], "conv2d");
  kernels::Conv2dDims d{};
  d.batch = im.n;
  d.c_in = im.c;
  d.h_in = im.h;
  d.w_in = im.w;
  d.c_out = ws[0];
  d.k = ws[2];
  d.stride = stride;
  if (padding == Padding::same) {
    d.pad = d.k / 2;
    d.h_out = (im.h + stride - 1) / stride;
    d.w_out = (im.w + stride - 1) / stride;
  } else {
    require(im.h >= d.k && im.w >= d.k, "conv2d: input smaller than kernel for valid padding");
    d.pad = 0;
    d.h_out = (im.h - d.k) / stride + 1;
    d.w_out = (im.w - d.k) / stride + 1;
  }
  Tensor out(image_shape(im, d.c_out, d.h_out, d.w_out));
  kernels::conv2d_forward(x.value().data(), weight.value().data(), bias ? bias->value().data() : nullptr, out.data(),
                          d);
  const auto ix = x.id(), iw = weight.id();
  const auto ib = bias ? bias->id() : std::size_t{0};
  const bool has_bias = bias.has_value();
  Var bvar = bias.value_or(Var());
  return x.tape().record(std::move(out), {x, weight, bvar}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) kernels::conv2d_backward_input(g.data(), t.value(iw).data(), t.grad(ix).data(), d);
    if (t.requires_grad(iw)) kernels::conv2d_backward_weight(g.data(), t.value(ix).data(), t.grad(iw).data(), d);
    if (has_bias && t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const std::size_t plane = d.h_out * d.w_out;
      for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t co = 0; co < d.c_out; ++co) {
          const double* gp = g.data() + (n * d.c_out + co) * plane;
          double s = 0.0;
          for (std::size_t p = 0; p < plane; ++p) s += gp[p];
          gb[co] += s;
        }
    }
  });
}

Var conv_transpose2d(Var x, Var weight, std::optional<Var> bias, std::size_t stride) {
  const Image4 im = as_image(x.shape(), "conv_transpose2d");
  const Shape& ws = weight.shape();
  require(stride == 2, "conv_transpose2d: only stride 2 is supported");
  require(ws.size() == 4 && ws[2] == ws[3] && ws[2] % 2 == 1,
          "conv_transpose2d: weight must be [C_in, C_out, k, k] with k odd");
  require(ws[0] == im.c, "conv_transpose2d: kernel expects " + std::to_string(ws[0]) + " input channels, input has " +
                             std::to_string(im.c));
  check_bias(bias, ws[1], "conv_transpose2d");
  // The forward conv2d this op is the adjoint of: [N, C_out, 2H, 2W] -> [N, C_in, H, W].
  kernels::Conv2dDims d{};
  d.batch = im.n;
  d.c_in = ws[1];
  d.h_in = im.h * stride;
  d.w_in = im.w * stride;
  d.c_out = ws[0];
  d.k = ws[2];
  d.stride = stride;
  d.pad = d.k / 2;
  d.h_out = im.h;
  d.w_out = im.w;
  Tensor out(image_shape(im, d.c_in, d.h_in, d.w_in));
  kernels::conv2d_backward_input(x.value().data(), weight.value().data(), out.data(), d);
  if (bias) {
    const std::size_t plane = d.h_in * d.w_in;
    const Tensor& b = bias->value();
    for (std::size_t n = 0; n < d.batch; ++n)
      for (std::size_t c = 0; c < d.c_in; ++c) {
        double* p = out.data() + (n * d.c_in + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
      }
  }
  const auto ix = x.id(), iw = weight.id();
  const auto ib = bias ? bias->id() : std::size_t{0};
  const bool has_bias = bias.has_value();
  Var bvar = bias.value_or(Var());
  return x.tape().record(std::move(out), {x, weight, bvar}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) {
      Tensor tmp(t.value(ix).shape());
      kernels::conv2d_forward(g.data(), t.value(iw).data(), nullptr, tmp.data(), d);
      accumulate(t.grad(ix), tmp);
    }
    if (t.requires_grad(iw)) kernels::conv2d_backward_weight(t.value(ix).data(), g.data(), t.grad(iw).data(), d);
    if (has_bias && t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      const std::size_t plane = d.h_in * d.w_in;
      for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t c = 0; c < d.c_in; ++c) {
          const double* gp = g.data() + (n * d.c_in + c) * plane;
          double s = 0.0;
          for (std::size_t p = 0; p < plane; ++p) s += gp[p];
          gb[c] += s;
        }
    }
  });
}

Var conv1d_dilated(Var x, Var weight, std::optional<Var> bias, std::size_t dilation) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 2, "conv1d_dilated: input must be [C, T]");
  require(ws.size() == 3 && ws[2] % 2 == 1, "conv1d_dilated: weight must be [C_out, C_in, k] with k odd");
  require(ws[1] == xs[0], "conv1d_dilated: channel mismatch");
  check_bias(bias, ws[0], "conv1d_dilated");
  const std::size_t c_in = xs[0], steps = xs[1], c_out = ws[0], k = ws[2];
  if (dilation == 0) throw ConfigError("conv1d_dilated: dilation must be positive");
  if (k > 1 && dilation >= steps)
    throw ConfigError("conv1d_dilated: dilation " + std::to_string(dilation) + " exceeds sequence length " +
                      std::to_string(steps));
  const long half = static_cast<long>(k / 2);
  auto tap = [=](std::size_t t, std::size_t j, std::size_t& src) {
    const long s = static_cast<long>(t) + (static_cast<long>(j) - half) * static_cast<long>(dilation);
    if (s < 0 || s >= static_cast<long>(steps)) return false;
    src = static_cast<std::size_t>(s);
    return true;
  };
  Tensor out({c_out, steps});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  for (std::size_t co = 0; co < c_out; ++co)
    for (std::size_t t = 0; t < steps; ++t) {
      double acc = bias ? bias->value()[co] : 0.0;
      for (std::size_t ci = 0; ci < c_in; ++ci)
        for (std::size_t j = 0; j < k; ++j) {
          std::size_t s;
          if (tap(t, j, s)) acc += wv[(co * c_in + ci) * k + j] * xv[ci * steps + s];
        }
      out[co * steps + t] = acc;
    }
  const auto ix = x.id(), iw = weight.id();
  const auto ib = bias ? bias->id() : std::size_t{0};
  const bool has_bias = bias.has_value();
  Var bvar = bias.value_or(Var());
  return x.tape().record(std::move(out), {x, weight, bvar}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    const bool gx_on = t.requires_grad(ix), gw_on = t.requires_grad(iw);
    Tensor* gx = gx_on ? &t.grad(ix) : nullptr;
    Tensor* gw = gw_on ? &t.grad(iw) : nullptr;
    for (std::size_t co = 0; co < c_out; ++co)
      for (std::size_t tt = 0; tt < steps; ++tt) {
        const double gv = g[co * steps + tt];
        for (std::size_t ci = 0; ci < c_in; ++ci)
          for (std::size_t j = 0; j < k; ++j) {
            std::size_t s;
            if (!tap(tt, j, s)) continue;
            if (gx) (*gx)[ci * steps + s] += gv * wv[(co * c_in + ci) * k + j];
            if (gw) (*gw)[(co * c_in + ci) * k + j] += gv * xv[ci * steps + s];
          }
      }
    if (has_bias && t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t tt = 0; tt < steps; ++tt) gb[co] += g[co * steps + tt];
    }
  });
}

Var fully_connected(Var x, Var weight, std::optional<Var> bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require(xs.size() == 1 || xs.size() == 2, "fully_connected: input must be [N, In] or [In]");
  require(ws.size() == 2, "fully_connected: weight must be [Out, In]");
  const std::size_t rows = xs.size() == 2 ? xs[0] : 1;
  const std::size_t in = xs.back(), outs = ws[0];
  require(ws[1] == in, "fully_connected: inner dimensions disagree (" + std::to_string(ws[1]) + " vs " +
                           std::to_string(in) + ")");
  check_bias(bias, outs, "fully_connected");
  Tensor out(xs.size() == 2 ? Shape{rows, outs} : Shape{outs});
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < outs; ++o) {
      double acc = bias ? bias->value()[o] : 0.0;
      const double* wr = wv.data() + o * in;
      const double* xr = xv.data() + r * in;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      out[r * outs + o] = acc;
    }
  const auto ix = x.id(), iw = weight.id();
  const auto ib = bias ? bias->id() : std::size_t{0};
  const bool has_bias = bias.has_value();
  Var bvar = bias.value_or(Var());
  return x.tape().record(std::move(out), {x, weight, bvar}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    if (t.requires_grad(ix)) {
      Tensor& gx = t.grad(ix);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outs; ++o) {
          const double gv = g[r * outs + o];
          const double* wr = wv.data() + o * in;
          double* gxr = gx.data() + r * in;
          for (std::size_t i = 0; i < in; ++i) gxr[i] += gv * wr[i];
        }
    }
    if (t.requires_grad(iw)) {
      Tensor& gw = t.grad(iw);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outs; ++o) {
          const double gv = g[r * outs + o];
          const double* xr = xv.data() + r * in;
          double* gwr = gw.data() + o * in;
          for (std::size_t i = 0; i < in; ++i) gwr[i] += gv * xr[i];
        }
    }
    if (has_bias && t.requires_grad(ib)) {
      Tensor& gb = t.grad(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < outs; ++o) gb[o] += g[r * outs + o];
    }
  });
}

Var spatial_dropout1d(Var x, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("spatial_dropout1d: rate must be in [0, 1)");
  require(x.shape().size() == 2, "spatial_dropout1d: input must be [C, T]");
  if (!training || rate == 0.0) return x;
  const std::size_t channels = x.shape()[0], steps = x.shape()[1];
  std::vector<double> mask(channels);
  for (auto& m : mask) m = rng.bernoulli(rate) ? 0.0 : 1.0 / (1.0 - rate);
  Tensor out = x.value();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t t = 0; t < steps; ++t) out[c * steps + t] *= mask[c];
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, mask, steps](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t c = 0; c < mask.size(); ++c)
      for (std::size_t s = 0; s < steps; ++s) gx[c * steps + s] += g[c * steps + s] * mask[c];
  });
}

Var concat_channels(Var a, Var b) {
  const Image4 ia_ = as_image(a.shape(), "concat_channels");
  const Image4 ib_ = as_image(b.shape(), "concat_channels");
  require(ia_.n == ib_.n && ia_.h == ib_.h && ia_.w == ib_.w && ia_.rank3 == ib_.rank3,
          "concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t plane = ia_.h * ia_.w, ca = ia_.c, cb = ib_.c, n = ia_.n;
  Tensor out(image_shape(ia_, ca + cb, ia_.h, ia_.w));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(bv.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
  }
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t i = 0; i < n; ++i) {
      if (t.requires_grad(ia)) {
        double* ga = t.grad(ia).data() + i * ca * plane;
        const double* gs = g.data() + i * (ca + cb) * plane;
        for (std::size_t p = 0; p < ca * plane; ++p) ga[p] += gs[p];
      }
      if (t.requires_grad(ib)) {
        double* gb = t.grad(ib).data() + i * cb * plane;
        const double* gs = g.data() + (i * (ca + cb) + ca) * plane;
        for (std::size_t p = 0; p < cb * plane; ++p) gb[p] += gs[p];
      }
    }
  });
}

Var broadcast_leading(Var x, std::size_t n) {
  const Shape& xs = x.shape();
  require(!xs.empty() && xs[0] == 1, "broadcast_leading: leading extent must be 1");
  Shape s = xs;
  s[0] = n;
  const std::size_t block = x.value().size();
  Tensor out(s);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.value().data(), block, out.data() + i * block);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, n, block](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < block; ++p) gx[p] += g[i * block + p];
  });
}

Var grid_sample(Var src, Var disp) {
  const Shape& ss = src.shape();
  const Shape& ds = disp.shape();
  require(ss.size() == 4 && ds.size() == 4 && ds[1] == 2 && ss[0] == ds[0] && ss[2] == ds[2] && ss[3] == ds[3],
          "grid_sample: expected src [N,C,H,W] and disp [N,2,H,W], got " + shape_str(ss) + " and " + shape_str(ds));
  const kernels::SampleDims d{ss[0], ss[1], ss[2], ss[3]};
  Tensor out(ss);
  kernels::grid_sample_forward(src.value().data(), disp.value().data(), out.data(), d);
  const auto is = src.id(), id = disp.id();
  return src.tape().record(std::move(out), {src, disp}, [=](Tape& t, std::size_t self) {
    double* gs = t.requires_grad(is) ? t.grad(is).data() : nullptr;
    double* gd = t.requires_grad(id) ? t.grad(id).data() : nullptr;
    kernels::grid_sample_backward(t.value(is).data(), t.value(id).data(), t.grad(self).data(), gs, gd, d);
  });
}

Var bilinear_sample(Var image, Var coords) {
  const Shape& is_ = image.shape();
  const Shape& cs = coords.shape();
  require(is_.size() == 2 && cs.size() == 3 && cs[2] == 2 && cs[0] == is_[0] && cs[1] == is_[1],
          "bilinear_sample: expected image [H,W] and coords [H,W,2]");
  const std::size_t h = is_[0], w = is_[1], plane = h * w;
  Tensor disp({1, 2, h, w});
  const Tensor& cv = coords.value();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      disp[y * w + x] = cv[(y * w + x) * 2] - static_cast<double>(x);
      disp[plane + y * w + x] = cv[(y * w + x) * 2 + 1] - static_cast<double>(y);
    }
  const kernels::SampleDims d{1, 1, h, w};
  Tensor out({h, w});
  kernels::grid_sample_forward(image.value().data(), disp.data(), out.data(), d);
  const auto ii = image.id(), ic = coords.id();
  return image.tape().record(std::move(out), {image, coords}, [=](Tape& t, std::size_t self) {
    double* gi = t.requires_grad(ii) ? t.grad(ii).data() : nullptr;
    Tensor gdisp;
    if (t.requires_grad(ic)) gdisp = Tensor({1, 2, h, w});
    kernels::grid_sample_backward(t.value(ii).data(), disp.data(), t.grad(self).data(), gi,
                                  gdisp.empty() ? nullptr : gdisp.data(), d);
    if (!gdisp.empty()) {
      Tensor& gc = t.grad(ic);
      for (std::size_t p = 0; p < plane; ++p) {
        gc[p * 2] += gdisp[p];
        gc[p * 2 + 1] += gdisp[plane + p];
      }
    }
  });
}

Var separable_filter(Var x, const Tensor& rows, const Tensor& cols) {
  const Shape& xs = x.shape();
  require(xs.size() >= 2, "separable_filter: input needs trailing [H, W]");
  const std::size_t h = xs[xs.size() - 2], w = xs.back();
  require(rows.shape() == Shape{h, h} && cols.shape() == Shape{w, w}, "separable_filter: operator size mismatch");
  const std::size_t planes = x.value().size() / (h * w);
  Tensor out(xs);
  kernels::separable_apply(x.value().data(), out.data(), planes, h, w, rows.data(), cols.data(), false);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    Tensor tmp(xs);
    kernels::separable_apply(t.grad(self).data(), tmp.data(), planes, h, w, rows.data(), cols.data(), true);
    accumulate(t.grad(ix), tmp);
  });
}

Var mix_leading(Var x, const Tensor& m) {
  const Shape& xs = x.shape();
  require(!xs.empty(), "mix_leading: empty shape");
  const std::size_t steps = xs[0];
  require(m.shape() == Shape{steps, steps}, "mix_leading: operator must be [N, N]");
  const std::size_t block = x.value().size() / steps;
  Tensor out(xs);
  kernels::mix_blocks(x.value().data(), out.data(), steps, block, m.data(), false);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    Tensor tmp(xs);
    kernels::mix_blocks(t.grad(self).data(), tmp.data(), steps, block, m.data(), true);
    accumulate(t.grad(ix), tmp);
  });
}

Var slice_rows(Var x, std::size_t r0, std::size_t r1) {
  const Shape& xs = x.shape();
  require(xs.size() == 2 && r0 < r1 && r1 <= xs[0], "slice_rows: bad range");
  const std::size_t cols = xs[1];
  Tensor out({r1 - r0, cols});
  std::copy_n(x.value().data() + r0 * cols, (r1 - r0) * cols, out.data());
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    double* gx = t.grad(ix).data() + r0 * cols;
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var mean_columns(Var x) {
  const Shape& xs = x.shape();
  require(xs.size() == 2, "mean_columns: input must be [R, C]");
  const std::size_t rows = xs[0], cols = xs[1];
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x.value()[r * cols + c];
    out[r] = s / static_cast<double>(cols);
  }
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[r] / static_cast<double>(cols);
  });
}

Var scatter_columns(Var x, std::span<const std::size_t> cols, std::size_t width) {
  const Shape& xs = x.shape();
  require(xs.size() == 2 && xs[0] == cols.size(), "scatter_columns: need one column index per input row");
  const std::size_t rows = xs[1];
  std::vector<std::size_t> where(cols.begin(), cols.end());
  for (auto c : where) require(c < width, "scatter_columns: column index out of range");
  Tensor out({rows, width});
  for (std::size_t p = 0; p < where.size(); ++p)
    for (std::size_t r = 0; r < rows; ++r) out[r * width + where[p]] += x.value()[p * rows + r];
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t p = 0; p < where.size(); ++p)
      for (std::size_t r = 0; r < rows; ++r) gx[p * rows + r] += g[r * width + where[p]];
  });
}

Var gather_columns(Var x, std::span<const std::size_t> cols) {
  const Shape& xs = x.shape();
  require(xs.size() == 2, "gather_columns: input must be [R, C]");
  const std::size_t rows = xs[0], width = xs[1];
  std::vector<std::size_t> where(cols.begin(), cols.end());
  for (auto c : where) require(c < width, "gather_columns: column index out of range");
  Tensor out({where.size(), rows});
  for (std::size_t i = 0; i < where.size(); ++i)
    for (std::size_t r = 0; r < rows; ++r) out[i * rows + r] = x.value()[r * width + where[i]];
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < where.size(); ++i)
      for (std::size_t r = 0; r < rows; ++r) gx[r * width + where[i]] += g[i * rows + r];
  });
}

Var select_leading(Var x, std::span<const std::size_t> index) {
  const Shape& xs = x.shape();
  require(!xs.empty() && !index.empty(), "select_leading: empty selection");
  const std::size_t block = x.value().size() / xs[0];
  std::vector<std::size_t> where(index.begin(), index.end());
  for (auto i : where) require(i < xs[0], "select_leading: index out of range");
  Shape s = xs;
  s[0] = where.size();
  Tensor out(s);
  for (std::size_t i = 0; i < where.size(); ++i)
    std::copy_n(x.value().data() + where[i] * block, block, out.data() + i * block);
  const auto ix = x.id();
  return x.tape().record(std::move(out), {x}, [=](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& gx = t.grad(ix);
    for (std::size_t i = 0; i < where.size(); ++i)
      for (std::size_t p = 0; p < block; ++p) gx[where[i] * block + p] += g[i * block + p];
  });
}

Var half_squared_error(Var pred, const Tensor& target) {
  require(pred.value().size() == target.size(), "half_squared_error: size mismatch");
  double s = 0.0;
  const Tensor& pv = pred.value();
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double r = pv[i] - target[i];
    s += r * r;
  }
  const auto ip = pred.id();
  return pred.tape().record(Tensor({1}, 0.5 * s), {pred}, [ip, target](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    const Tensor& pv = t.value(ip);
    Tensor& gp = t.grad(ip);
    for (std::size_t i = 0; i < pv.size(); ++i) gp[i] += g * (pv[i] - target[i]);
  });
}

}  // namespace gpmotion::nn
