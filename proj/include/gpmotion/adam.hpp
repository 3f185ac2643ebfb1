#pragma once

#include <span>

#include "gpmotion/tape.hpp"

namespace gpmotion {

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;  // L2: lambda * w is added to the gradient
};

/// One bias-corrected Adam update of every parameter from its accumulated
/// gradient. Gradients are left untouched; callers zero them.
void adam_step(std::span<Parameter> params, const AdamSettings& settings);

}  // namespace gpmotion
