#pragma once

#include <span>
#include <vector>

#include "gpmotion/tensor.hpp"

// Temporal interpolation of displacement fields between known time points,
// applied independently per pixel and component. Queries before the first
// knot or after the last one take the nearest knot's value.

namespace gpmotion::baselines {

enum class Kind { linear, cubic };

/// Weights w [Q, n] with value(query q) = sum_j w[q, j] * y_j. The cubic kind
/// is a not-a-knot spline (exact on cubics) for n >= 4 knots, the quadratic
/// interpolant for 3 and linear for 2. Knot times must be strictly increasing.
std::vector<std::vector<double>> interpolation_weights(std::span<const double> knots, std::span<const double> queries,
                                                       Kind kind);

std::vector<double> interpolate_series(std::span<const double> knots, std::span<const double> values,
                                       std::span<const double> queries, Kind kind);

std::vector<Tensor> interpolate_fields(std::span<const double> knots, std::span<const Tensor> fields,
                                       std::span<const double> queries, Kind kind);

}  // namespace gpmotion::baselines
