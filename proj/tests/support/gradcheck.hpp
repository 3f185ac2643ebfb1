#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "gpmotion/ops.hpp"
#include "gpmotion/rng.hpp"
#include "gpmotion/tape.hpp"

// Central finite-difference checks against Tape::backward.

namespace gpmotion::testing {

struct GradCheckResult {
  double rel_error = 0.0;  // ||g_tape - g_fd|| / max(||g_tape||, ||g_fd||, floor)
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_entries = 0;  // 0 checks every entry; else a random sample across all parameters
  std::uint64_t sample_seed = 5;
  double floor = 1e-12;
};

/// `loss` records a scalar on the given tape using the parameters.
using LossBuilder = std::function<Var(Tape&)>;

GradCheckResult gradcheck(std::vector<Parameter*> params, const LossBuilder& loss, const GradCheckOptions& opt = {});

/// sum(x * R) with a fixed random R, turning any output into a scalar whose
/// gradient exercises every output entry.
Var random_projection(Var x, std::uint64_t seed);

Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0);

}  // namespace gpmotion::testing
