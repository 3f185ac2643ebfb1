#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gpmotion/synthdata.hpp"
#include "gpmotion/tensor.hpp"

namespace gpmotion::metrics {

double rmse(const Tensor& a, const Tensor& b);

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const Mask& a, const Mask& b, std::uint8_t label);

/// Pooled 95th percentile of the symmetric boundary distances, in mm.
/// Boundary = label pixels with a 4-neighbour outside the label (or outside
/// the image). Throws DataError when either label set is empty.
double hausdorff95(const Mask& a, const Mask& b, std::uint8_t label, double spacing);

/// Linear-interpolated percentile at rank (n - 1) q of the sorted values.
double percentile(std::vector<double> values, double q);

/// Nearest-neighbour pull-back of a label image.
Mask warp_mask(const Mask& mask, const Tensor& field);

/// Blood-pool area per frame: frame 0 is the unwarped ED mask, frame t + 1
/// the ED mask warped by fields[t]. Length fields.size() + 1.
std::vector<double> volume_curve(const Mask& ed, std::span<const Tensor> fields, double spacing);

/// Mean |u_pred - u_gt| over interior pixels; restricted to non-background
/// pixels of `object` when given.
double endpoint_error(const Tensor& pred, const Tensor& truth, const Mask* object = nullptr);

double curve_rmse(std::span<const double> a, std::span<const double> b);
double pearson(std::span<const double> a, std::span<const double> b);

/// Fraction of interior pixels with det(I + grad u) > 0.
double positive_jacobian_fraction(const Tensor& field);

struct EvalRow {
  std::string sequence;
  double rmse = 0;
  double dice_pool = 0;
  double dice_ring = 0;
  double hd95_pool_mm = 0;
  double hd95_ring_mm = 0;
  double spatial_grad = 0;
  double temporal_grad = 0;
  double volume_curve_rmse = 0;
  double endpoint_error_px = 0;
  double det_jac_positive = 0;
};

/// Metric column names in CSV order.
const std::vector<std::string>& eval_columns();
std::vector<double> eval_values(const EvalRow& row);

/// Scores a sequence given one displacement per frame pair (fields[k] maps
/// frame 0 onto frame k + 1). Dice and HD95 are taken at the ES frame, the
/// frame with the smallest true blood-pool area.
EvalRow evaluate_sequence(const SequenceRecord& record, std::span<const Tensor> fields, const std::string& name);

struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<EvalRow> undeformed;  // same sequences with identity fields

  void write_csv(const std::filesystem::path& path) const;
  nlohmann::json summary() const;
};

/// Column-wise mean and population std.
nlohmann::json aggregate(const std::vector<EvalRow>& rows);

}  // namespace gpmotion::metrics
