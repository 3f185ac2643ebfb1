#pragma once

#include <filesystem>

#include "gpmotion/tensor.hpp"

namespace gpmotion {

struct PgmScale {
  double lo = 0.0;  // value mapped to 0
  double hi = 1.0;  // value mapped to 255
};

/// Binary PGM (P5, maxval 255) of an [H, W] image, affinely rescaled so that
/// [lo, hi] spans 0..255, with the scale written to `<path>.json`.
void write_pgm(const std::filesystem::path& path, const Tensor& image, PgmScale scale);
/// Same, with lo/hi taken from the image range.
PgmScale write_pgm_autoscale(const std::filesystem::path& path, const Tensor& image);

/// Raw 0..255 values as an [H, W] tensor.
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace gpmotion
