#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

namespace gpmotion::kernels::detail {

// One axis of a clamped bilinear lookup: value = (1-frac)*v[lo] + frac*v[hi].
// `live` is false when the coordinate was clamped (zero derivative).
struct Tap {
  std::size_t lo;
  std::size_t hi;
  double frac;
  bool live;
};

inline Tap make_tap(double p, std::size_t n) {
  if (n == 1) return {0, 0, 0.0, false};
  const double last = static_cast<double>(n - 1);
  bool live = true;
  if (p < 0.0) {
    p = 0.0;
    live = false;
  } else if (p > last) {
    p = last;
    live = false;
  }
  const auto lo = std::min(static_cast<std::size_t>(std::floor(p)), n - 2);
  return {lo, lo + 1, p - static_cast<double>(lo), live};
}

}  // namespace gpmotion::kernels::detail
