#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "gpmotion/errors.hpp"
#include "gpmotion/metrics.hpp"
#include "gpmotion/rng.hpp"

using namespace gpmotion;

namespace {

Mask empty_mask(std::size_t h, std::size_t w) { return Mask{h, w, std::vector<std::uint8_t>(h * w, 0)}; }

Mask square(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0, std::size_t n) {
  Mask m = empty_mask(h, w);
  for (std::size_t y = y0; y < y0 + n; ++y)
    for (std::size_t x = x0; x < x0 + n; ++x) m.labels[y * w + x] = 1;
  return m;
}

Mask disc(std::size_t n, double r) {
  Mask m = empty_mask(n, n);
  const double c = (static_cast<double>(n) - 1) / 2;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      if (std::hypot(x - c, y - c) <= r) m.labels[y * n + x] = 1;
  return m;
}

}  // namespace

TEST(Rmse, HandValues) {
  Tensor a({4, 4}, 0.3);
  EXPECT_EQ(metrics::rmse(a, a), 0.0);
  EXPECT_NEAR(metrics::rmse(a, Tensor({4, 4}, 0.4)), 0.1, 1e-12);
  Tensor b = a;
  for (std::size_t i = 0; i < 8; ++i) b[i] += 0.2;
  EXPECT_NEAR(metrics::rmse(a, b), 0.141421, 1e-6);
  EXPECT_THROW(metrics::rmse(a, Tensor({4, 5})), ShapeError);
}

TEST(Dice, HandValues) {
  const Mask a = square(20, 20, 0, 0, 10);  // 100 px
  EXPECT_EQ(metrics::dice(a, a, 1), 1.0);
  EXPECT_EQ(metrics::dice(a, square(20, 20, 10, 10, 10), 1), 0.0);
  // Shift by 5 columns: overlap 10 x 5 = 50.
  EXPECT_DOUBLE_EQ(metrics::dice(a, square(20, 20, 0, 5, 10), 1), 0.5);
  EXPECT_EQ(metrics::dice(empty_mask(4, 4), empty_mask(4, 4), 1), 1.0);
}

TEST(Dice, SymmetricAndRotationInvariant) {
  Rng rng(3);
  Mask a = empty_mask(16, 16), b = empty_mask(16, 16);
  for (auto& l : a.labels) l = rng.uniform() < 0.4;
  for (auto& l : b.labels) l = rng.uniform() < 0.5;
  const double d = metrics::dice(a, b, 1);
  EXPECT_DOUBLE_EQ(metrics::dice(b, a, 1), d);
  for (int k = 1; k < 4; ++k) EXPECT_DOUBLE_EQ(metrics::dice(rotate90(a, k), rotate90(b, k), 1), d);
}

TEST(Hausdorff95, HandValues) {
  const Mask a = square(10, 10, 2, 2, 1), b = square(10, 10, 2, 6, 1);
  EXPECT_DOUBLE_EQ(metrics::hausdorff95(a, b, 1, 1.5), 6.0);
  EXPECT_EQ(metrics::hausdorff95(a, a, 1, 1.5), 0.0);
  const Mask s = square(20, 20, 5, 5, 8), t = square(20, 20, 5, 6, 8);
  EXPECT_DOUBLE_EQ(metrics::hausdorff95(s, t, 1, 1.0), 1.0);
  EXPECT_THROW(metrics::hausdorff95(s, empty_mask(20, 20), 1, 1.0), DataError);
}

TEST(Hausdorff95, Symmetric) {
  const Mask a = disc(24, 7), b = square(24, 24, 3, 9, 10);
  EXPECT_DOUBLE_EQ(metrics::hausdorff95(a, b, 1, 1.5), metrics::hausdorff95(b, a, 1, 1.5));
}

TEST(Percentile, LinearBetweenOrderStatistics) {
  EXPECT_DOUBLE_EQ(metrics::percentile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(metrics::percentile({0, 10}, 0.95), 9.5);
  EXPECT_DOUBLE_EQ(metrics::percentile({7}, 0.95), 7.0);
}

TEST(VolumeCurve, IdentityIsConstantAndLengthF) {
  const Mask ed = disc(32, 8);
  std::vector<Tensor> fields(5, Tensor({2, 32, 32}));
  const auto curve = metrics::volume_curve(ed, fields, 1.5);
  ASSERT_EQ(curve.size(), 6u);
  for (double v : curve) EXPECT_EQ(v, static_cast<double>(ed.count(1)) * 2.25);
}

TEST(VolumeCurve, DilationFieldShrinksAreaBy121) {
  // Pull-back through u = 0.1 (x - c) maps x to 1.1 (x - c), so the warped
  // disc has radius r / 1.1 and area ratio ED / warped = 1.21.
  const std::size_t n = 48;
  const double r = 16, c = (n - 1) / 2.0;
  Tensor u({2, n, n});
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      u[y * n + x] = 0.1 * (x - c);
      u[n * n + y * n + x] = 0.1 * (y - c);
    }
  const std::vector<Tensor> fields{u};
  const auto curve = metrics::volume_curve(disc(n, r), fields, 1.0);
  const double rw = r / 1.1;
  EXPECT_NEAR(curve[1], std::numbers::pi * rw * rw, 2 * std::numbers::pi * rw * 0.5);
  EXPECT_NEAR(curve[0] / curve[1], 1.21, 0.06);
}

TEST(EndpointError, HandValuesAndSymmetry) {
  Tensor a({2, 8, 8});
  EXPECT_EQ(metrics::endpoint_error(a, a), 0.0);
  Tensor b = a;
  for (std::size_t i = 0; i < 64; ++i) b[i] = 1.0;
  EXPECT_DOUBLE_EQ(metrics::endpoint_error(a, b), 1.0);
  Rng rng(4);
  Tensor p({2, 8, 8}), q({2, 8, 8});
  for (auto& v : p.values()) v = rng.normal() * 0.3;
  for (auto& v : q.values()) v = rng.normal() * 0.3;
  EXPECT_DOUBLE_EQ(metrics::endpoint_error(p, q), metrics::endpoint_error(q, p));
  EXPECT_THROW(metrics::endpoint_error(p, Tensor({2, 8, 9})), ShapeError);
}

TEST(Pearson, HandValues) {
  const std::vector<double> a{1, 2, 3, 4}, b{2, 4, 6, 8}, c{4, 3, 2, 1};
  EXPECT_NEAR(metrics::pearson(a, b), 1.0, 1e-15);
  EXPECT_NEAR(metrics::pearson(a, c), -1.0, 1e-15);
  EXPECT_DOUBLE_EQ(metrics::curve_rmse(a, b), std::sqrt(30.0 / 4));
}

TEST(EvaluateSequence, TruthAndIdentityFields) {
  DatasetSpec ds;
  ds.count = 1;
  const auto rec = generate_dataset(ds, 5)[0];
  const std::span<const Tensor> truth(rec.fields.data() + 1, rec.fields.size() - 1);
  const auto exact = metrics::evaluate_sequence(rec, truth, "s");
  EXPECT_EQ(exact.endpoint_error_px, 0.0);
  EXPECT_EQ(exact.det_jac_positive, 1.0);
  EXPECT_GT(exact.dice_pool, 0.9);

  const std::vector<Tensor> zero(truth.size(), Tensor({2, rec.height, rec.width}));
  const auto und = metrics::evaluate_sequence(rec, zero, "s");
  EXPECT_EQ(und.spatial_grad, 0.0);
  EXPECT_EQ(und.temporal_grad, 0.0);
  EXPECT_EQ(und.det_jac_positive, 1.0);
  EXPECT_LT(und.dice_pool, exact.dice_pool);
  EXPECT_GT(und.endpoint_error_px, exact.endpoint_error_px);
  for (double v : metrics::eval_values(und)) EXPECT_TRUE(std::isfinite(v));
}

TEST(EvalReport, CsvHeaderAndAggregate) {
  metrics::EvalReport rep;
  metrics::EvalRow r1, r2;
  r1.sequence = "a";
  r1.rmse = 1.0;
  r2.sequence = "b";
  r2.rmse = 3.0;
  rep.rows = {r1, r2};
  rep.undeformed = {r1};
  const auto path = std::filesystem::temp_directory_path() / "gpmotion_eval.csv";
  rep.write_csv(path);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header,
            "sequence,method,rmse,dice_pool,dice_ring,hd95_pool_mm,hd95_ring_mm,spatial_grad,temporal_grad,"
            "volume_curve_rmse,endpoint_error_px,det_jac_positive");
  std::size_t lines = 0;
  for (std::string line; std::getline(is, line);) ++lines;
  EXPECT_EQ(lines, 3u);
  std::filesystem::remove(path);

  const auto agg = metrics::aggregate(rep.rows);
  EXPECT_DOUBLE_EQ(agg["rmse"]["mean"].get<double>(), 2.0);
  EXPECT_DOUBLE_EQ(agg["rmse"]["std"].get<double>(), 1.0);
  EXPECT_EQ(agg["count"].get<std::size_t>(), 2u);
}
