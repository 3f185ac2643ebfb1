#include "gpmotion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "gpmotion/deformation.hpp"
#include "gpmotion/errors.hpp"

namespace gpmotion::metrics {

namespace {

struct Point {
  long x, y;
};

std::vector<Point> boundary(const Mask& m, std::uint8_t label) {
  std::vector<Point> out;
  const long h = static_cast<long>(m.height), w = static_cast<long>(m.width);
  const auto at = [&](long y, long x) {
    return y >= 0 && y < h && x >= 0 && x < w && m.labels[static_cast<std::size_t>(y * w + x)] == label;
  };
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x)
      if (at(y, x) && !(at(y - 1, x) && at(y + 1, x) && at(y, x - 1) && at(y, x + 1))) out.push_back({x, y});
  return out;
}

void directed(const std::vector<Point>& from, const std::vector<Point>& to, std::vector<double>& out) {
  for (const Point& p : from) {
    long best = std::numeric_limits<long>::max();
    for (const Point& q : to) best = std::min(best, (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y));
    out.push_back(std::sqrt(static_cast<double>(best)));
  }
}

void require_same(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width || a.labels.size() != b.labels.size())
    throw ShapeError("masks live on different grids");
}

}  // namespace

double rmse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("rmse: grid mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

double dice(const Mask& a, const Mask& b, std::uint8_t label) {
  require_same(a, b);
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.labels.size(); ++i) {
    const bool ia = a.labels[i] == label, ib = b.labels[i] == label;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double hausdorff95(const Mask& a, const Mask& b, std::uint8_t label, double spacing) {
  require_same(a, b);
  const auto ba = boundary(a, label), bb = boundary(b, label);
  if (ba.empty() || bb.empty()) throw DataError("hausdorff95: label " + std::to_string(label) + " is empty");
  std::vector<double> d;
  d.reserve(ba.size() + bb.size());
  directed(ba, bb, d);
  directed(bb, ba, d);
  return percentile(std::move(d), 0.95) * spacing;
}

Mask warp_mask(const Mask& mask, const Tensor& field) {
  Tensor img({mask.height, mask.width});
  for (std::size_t i = 0; i < mask.labels.size(); ++i) img[i] = mask.labels[i];
  const Tensor out = deform::warp(img, field, deform::Interp::nearest);
  Mask m{mask.height, mask.width, std::vector<std::uint8_t>(mask.labels.size())};
  for (std::size_t i = 0; i < m.labels.size(); ++i) m.labels[i] = static_cast<std::uint8_t>(out[i]);
  return m;
}

std::vector<double> volume_curve(const Mask& ed, std::span<const Tensor> fields, double spacing) {
  const double px = spacing * spacing;
  std::vector<double> curve{static_cast<double>(ed.count(1)) * px};
  for (const Tensor& f : fields) curve.push_back(static_cast<double>(warp_mask(ed, f).count(1)) * px);
  return curve;
}

double endpoint_error(const Tensor& pred, const Tensor& truth, const Mask* object) {
  if (pred.shape() != truth.shape() || pred.rank() != 3 || pred.dim(0) != 2)
    throw ShapeError("endpoint_error: fields must share a [2, H, W] grid");
  const std::size_t h = pred.dim(1), w = pred.dim(2), plane = h * w;
  if (object && (object->height != h || object->width != w)) throw ShapeError("endpoint_error: mask grid mismatch");
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const std::size_t p = y * w + x;
      if (object && object->labels[p] == 0) continue;
      s += std::hypot(pred[p] - truth[p], pred[plane + p] - truth[plane + p]);
      ++n;
    }
  return n ? s / static_cast<double>(n) : 0.0;
}

double curve_rmse(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("curve_rmse: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ShapeError("pearson: need two equal-length series");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

double positive_jacobian_fraction(const Tensor& field) {
  const Tensor det = deform::jacobian_determinant(field);
  const std::size_t h = det.dim(0), w = det.dim(1);
  std::size_t pos = 0, n = 0;
  for (std::size_t y = 1; y + 1 < h; ++y)
    for (std::size_t x = 1; x + 1 < w; ++x, ++n) pos += det[y * w + x] > 0.0;
  return n ? static_cast<double>(pos) / static_cast<double>(n) : 1.0;
}

const std::vector<std::string>& eval_columns() {
  static const std::vector<std::string> cols{"rmse",          "dice_pool",         "dice_ring",
                                             "hd95_pool_mm",  "hd95_ring_mm",      "spatial_grad",
                                             "temporal_grad", "volume_curve_rmse", "endpoint_error_px",
                                             "det_jac_positive"};
  return cols;
}

std::vector<double> eval_values(const EvalRow& r) {
  return {r.rmse,          r.dice_pool,         r.dice_ring,         r.hd95_pool_mm, r.hd95_ring_mm, r.spatial_grad,
          r.temporal_grad, r.volume_curve_rmse, r.endpoint_error_px, r.det_jac_positive};
}

EvalRow evaluate_sequence(const SequenceRecord& record, std::span<const Tensor> fields, const std::string& name) {
  const std::size_t f = record.frames.size();
  if (f < 2 || fields.size() != f - 1) throw ShapeError("evaluate_sequence: need one field per frame pair");
  if (record.masks.size() != f) throw DataError("evaluation needs masks on every frame");
  EvalRow row;
  row.sequence = name;
  const auto truth_curve = ground_truth_volume_curve(record);
  const std::size_t es = static_cast<std::size_t>(
      std::min_element(truth_curve.begin() + 1, truth_curve.end()) - truth_curve.begin());

  double sum_rmse = 0.0, sum_epe = 0.0, sum_det = 0.0;
  for (std::size_t k = 0; k + 1 < f; ++k) {
    sum_rmse += rmse(deform::warp(record.frames[0], fields[k]), record.frames[k + 1]);
    sum_det += positive_jacobian_fraction(fields[k]);
    if (record.has_truth) sum_epe += endpoint_error(fields[k], record.fields[k + 1], &record.masks[0]);
  }
  const auto pairs = static_cast<double>(f - 1);
  row.rmse = sum_rmse / pairs;
  row.det_jac_positive = sum_det / pairs;
  row.endpoint_error_px = record.has_truth ? sum_epe / pairs : std::numeric_limits<double>::quiet_NaN();

  const Mask warped_es = warp_mask(record.masks[0], fields[es - 1]);
  row.dice_pool = dice(warped_es, record.masks[es], 1);
  row.dice_ring = dice(warped_es, record.masks[es], 2);
  row.hd95_pool_mm = hausdorff95(warped_es, record.masks[es], 1, record.spacing);
  row.hd95_ring_mm = hausdorff95(warped_es, record.masks[es], 2, record.spacing);

  const auto g = deform::field_gradients(fields);
  row.spatial_grad = g.spatial;
  row.temporal_grad = g.temporal;
  const auto curve = volume_curve(record.masks[0], fields, record.spacing);
  row.volume_curve_rmse = curve_rmse(curve, truth_curve);
  return row;
}

nlohmann::json aggregate(const std::vector<EvalRow>& rows) {
  nlohmann::json out = nlohmann::json::object();
  const auto& cols = eval_columns();
  for (std::size_t c = 0; c < cols.size(); ++c) {
    double mean = 0.0, sq = 0.0;
    for (const auto& r : rows) mean += eval_values(r)[c];
    mean = rows.empty() ? 0.0 : mean / static_cast<double>(rows.size());
    for (const auto& r : rows) sq += (eval_values(r)[c] - mean) * (eval_values(r)[c] - mean);
    const double sd = rows.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(rows.size()));
    out[cols[c]] = {{"mean", mean}, {"std", sd}};
  }
  out["count"] = rows.size();
  return out;
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << "sequence,method";
  for (const auto& c : eval_columns()) os << ',' << c;
  os << '\n';
  os << std::setprecision(17);
  const auto emit = [&](const std::vector<EvalRow>& rows, const char* method) {
    for (const auto& r : rows) {
      os << r.sequence << ',' << method;
      for (double v : eval_values(r)) os << ',' << v;
      os << '\n';
    }
  };
  emit(rows, "model");
  emit(undeformed, "undeformed");
  if (!os) throw DataError("failed writing " + path.string());
}

nlohmann::json EvalReport::summary() const { return {{"model", aggregate(rows)}, {"undeformed", aggregate(undeformed)}}; }

}  // namespace gpmotion::metrics
