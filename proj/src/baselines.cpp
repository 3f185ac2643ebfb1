#include "gpmotion/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>

#include "gpmotion/errors.hpp"

namespace gpmotion::baselines {

namespace {

// Second derivatives of the not-a-knot spline through (t, y).
Eigen::VectorXd not_a_knot_moments(std::span<const double> t, const Eigen::VectorXd& y) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  const auto h = [&](Eigen::Index i) { return t[static_cast<std::size_t>(i + 1)] - t[static_cast<std::size_t>(i)]; };
  // Third derivative continuous across the second and the second-to-last knot.
  a(0, 0) = h(1);
  a(0, 1) = -(h(0) + h(1));
  a(0, 2) = h(0);
  a(n - 1, n - 3) = h(n - 2);
  a(n - 1, n - 2) = -(h(n - 3) + h(n - 2));
  a(n - 1, n - 1) = h(n - 3);
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    a(i, i - 1) = h(i - 1);
    a(i, i) = 2.0 * (h(i - 1) + h(i));
    a(i, i + 1) = h(i);
    rhs(i) = 6.0 * ((y(i + 1) - y(i)) / h(i) - (y(i) - y(i - 1)) / h(i - 1));
  }
  return a.partialPivLu().solve(rhs);
}

double eval_cubic(std::span<const double> t, const Eigen::VectorXd& y, const Eigen::VectorXd& m, double q) {
  std::size_t i = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), q) - t.begin());
  i = std::clamp<std::size_t>(i, 1, t.size() - 1) - 1;
  const double h = t[i + 1] - t[i], a = t[i + 1] - q, b = q - t[i];
  const auto ii = static_cast<Eigen::Index>(i);
  return m(ii) * a * a * a / (6 * h) + m(ii + 1) * b * b * b / (6 * h) + (y(ii) / h - m(ii) * h / 6) * a +
         (y(ii + 1) / h - m(ii + 1) * h / 6) * b;
}

double eval_quadratic(std::span<const double> t, const Eigen::VectorXd& y, double q) {
  double v = 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    double l = 1.0;
    for (std::size_t k = 0; k < 3; ++k)
      if (k != j) l *= (q - t[k]) / (t[j] - t[k]);
    v += l * y(static_cast<Eigen::Index>(j));
  }
  return v;
}

double eval_linear(std::span<const double> t, const Eigen::VectorXd& y, double q) {
  std::size_t i = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), q) - t.begin());
  i = std::clamp<std::size_t>(i, 1, t.size() - 1) - 1;
  const double f = (q - t[i]) / (t[i + 1] - t[i]);
  const auto ii = static_cast<Eigen::Index>(i);
  return (1 - f) * y(ii) + f * y(ii + 1);
}

}  // namespace

std::vector<std::vector<double>> interpolation_weights(std::span<const double> knots, std::span<const double> queries,
                                                       Kind kind) {
  const std::size_t n = knots.size();
  if (n == 0) throw ConfigError("interpolation needs at least one knot");
  for (std::size_t i = 1; i < n; ++i)
    if (!(knots[i] > knots[i - 1])) throw ConfigError("knot times must be strictly increasing");
  std::vector<std::vector<double>> w(queries.size(), std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    e(static_cast<Eigen::Index>(j)) = 1.0;
    Eigen::VectorXd m;
    if (kind == Kind::cubic && n >= 4) m = not_a_knot_moments(knots, e);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const double x = queries[q];
      double v;
      if (n == 1 || x <= knots.front()) {
        v = e(0);
      } else if (x >= knots.back()) {
        v = e(static_cast<Eigen::Index>(n - 1));
      } else if (kind == Kind::linear || n == 2) {
        v = eval_linear(knots, e, x);
      } else if (n == 3) {
        v = eval_quadratic(knots, e, x);
      } else {
        v = eval_cubic(knots, e, m, x);
      }
      w[q][j] = v;
    }
  }
  return w;
}

std::vector<double> interpolate_series(std::span<const double> knots, std::span<const double> values,
                                       std::span<const double> queries, Kind kind) {
  if (values.size() != knots.size()) throw ShapeError("one value per knot required");
  const auto w = interpolation_weights(knots, queries, kind);
  std::vector<double> out(queries.size(), 0.0);
  for (std::size_t q = 0; q < queries.size(); ++q)
    for (std::size_t j = 0; j < knots.size(); ++j) out[q] += w[q][j] * values[j];
  return out;
}

std::vector<Tensor> interpolate_fields(std::span<const double> knots, std::span<const Tensor> fields,
                                       std::span<const double> queries, Kind kind) {
  if (fields.size() != knots.size()) throw ShapeError("one field per knot required");
  for (const Tensor& f : fields)
    if (f.shape() != fields[0].shape()) throw ShapeError("knot fields live on different grids");
  const auto w = interpolation_weights(knots, queries, kind);
  std::vector<Tensor> out;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    Tensor f(fields[0].shape());
    for (std::size_t j = 0; j < knots.size(); ++j) {
      if (w[q][j] == 0.0) continue;
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += w[q][j] * fields[j][i];
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace gpmotion::baselines
