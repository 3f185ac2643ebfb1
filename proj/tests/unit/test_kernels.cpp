#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gpmotion/kernels.hpp"
#include "gpmotion/rng.hpp"

// The OpenMP kernels must give bit-identical results for every thread count
// (each parallel loop owns its outputs) and agree with the serial reference,
// which evaluates the same sums in a different but algebraically equal form.

using namespace gpmotion;
namespace k = gpmotion::kernels;

namespace {

using Buffers = std::vector<std::vector<double>>;

std::vector<double> buffer(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b) {
  ASSERT_EQ(a.size(), b.size());
  double scale = 1.0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-13 * scale) << i;
}

// Runs `fast` at 1, 2 and 4 threads, requires identical bits, then compares
// the result with `ref`.
void check(const std::function<Buffers()>& fast, const std::function<Buffers()>& ref) {
  k::set_num_threads(1);
  const Buffers base = fast();
  for (int t : {2, 4}) {
    k::set_num_threads(t);
    EXPECT_EQ(fast(), base) << t << " threads";
  }
  k::set_num_threads(1);
  const Buffers want = ref();
  ASSERT_EQ(base.size(), want.size());
  for (std::size_t i = 0; i < base.size(); ++i) expect_close(base[i], want[i]);
}

}  // namespace

TEST(Kernels, Conv2dMatchesReference) {
  for (std::size_t stride : {1u, 2u}) {
    const std::size_t h = 9, w = 7, kk = 3, pad = 1;
    const std::size_t ho = (h + stride - 1) / stride, wo = (w + stride - 1) / stride;
    const k::Conv2dDims d{3, 2, h, w, 4, kk, stride, pad, ho, wo};
    const auto in = buffer(3 * 2 * h * w, 1), wt = buffer(4 * 2 * 9, 2), b = buffer(4, 3);
    const auto g = buffer(3 * 4 * ho * wo, 4);
    const auto run = [&](bool fast) {
      std::vector<double> o(3 * 4 * ho * wo), gi(in.size(), 0.5), gw(wt.size(), 0.25);
      if (fast) {
        k::conv2d_forward(in.data(), wt.data(), b.data(), o.data(), d);
        k::conv2d_backward_input(g.data(), wt.data(), gi.data(), d);
        k::conv2d_backward_weight(g.data(), in.data(), gw.data(), d);
      } else {
        k::reference::conv2d_forward(in.data(), wt.data(), b.data(), o.data(), d);
        k::reference::conv2d_backward_input(g.data(), wt.data(), gi.data(), d);
        k::reference::conv2d_backward_weight(g.data(), in.data(), gw.data(), d);
      }
      return Buffers{o, gi, gw};
    };
    check([&] { return run(true); }, [&] { return run(false); });
  }
}

TEST(Kernels, GridSampleMatchesReference) {
  const k::SampleDims d{2, 3, 6, 5};
  const auto src = buffer(2 * 3 * 30, 1), disp = buffer(2 * 2 * 30, 2, 2.0), g = buffer(2 * 3 * 30, 3);
  const auto run = [&](bool fast) {
    std::vector<double> o(src.size()), gs(src.size()), gd(disp.size());
    if (fast) {
      k::grid_sample_forward(src.data(), disp.data(), o.data(), d);
      k::grid_sample_backward(src.data(), disp.data(), g.data(), gs.data(), gd.data(), d);
    } else {
      k::reference::grid_sample_forward(src.data(), disp.data(), o.data(), d);
      k::reference::grid_sample_backward(src.data(), disp.data(), g.data(), gs.data(), gd.data(), d);
    }
    return Buffers{o, gs, gd};
  };
  check([&] { return run(true); }, [&] { return run(false); });
}

TEST(Kernels, SeparableAndMixMatchReference) {
  const std::size_t planes = 5, h = 6, w = 4;
  const auto in = buffer(planes * h * w, 1), a = buffer(h * h, 2), b = buffer(w * w, 3), m = buffer(planes * planes, 4);
  for (bool tr : {false, true}) {
    const auto run = [&](bool fast) {
      std::vector<double> o(in.size()), mo(in.size());
      if (fast) {
        k::separable_apply(in.data(), o.data(), planes, h, w, a.data(), b.data(), tr);
        k::mix_blocks(in.data(), mo.data(), planes, h * w, m.data(), tr);
      } else {
        k::reference::separable_apply(in.data(), o.data(), planes, h, w, a.data(), b.data(), tr);
        k::reference::mix_blocks(in.data(), mo.data(), planes, h * w, m.data(), tr);
      }
      return Buffers{o, mo};
    };
    check([&] { return run(true); }, [&] { return run(false); });
  }
}

TEST(Kernels, ThreadCountSetter) {
  k::set_num_threads(3);
  EXPECT_EQ(k::num_threads(), 3);
  k::set_num_threads(1);
}
