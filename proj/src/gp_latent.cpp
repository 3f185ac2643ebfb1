#include "gpmotion/gp_latent.hpp"

#include <cmath>

#include "gpmotion/errors.hpp"

namespace gpmotion::gp {

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::cauchy: return "cauchy";
    case KernelKind::rbf: return "rbf";
    case KernelKind::identity: return "identity";
  }
  return "?";
}

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "cauchy") return KernelKind::cauchy;
  if (name == "rbf") return KernelKind::rbf;
  if (name == "identity") return KernelKind::identity;
  throw ConfigError("unknown kernel kind '" + name + "' (expected cauchy, rbf or identity)");
}

void KernelSpec::validate() const {
  if (!(length_scale > 0.0)) throw ConfigError("kernel.length_scale must be positive");
  if (!(sigma_k > 0.0)) throw ConfigError("kernel.sigma_k must be positive");
  if (!(jitter >= 0.0)) throw ConfigError("kernel.jitter must be non-negative");
}

double kernel_eval(const KernelSpec& spec, long tau, long tau_prime) {
  const double delta = static_cast<double>(tau - tau_prime);
  const double var = spec.sigma_k * spec.sigma_k;
  const double l2 = spec.length_scale * spec.length_scale;
  switch (spec.kind) {
    case KernelKind::cauchy: return var / (1.0 + delta * delta / l2);
    case KernelKind::rbf: return var * std::exp(-delta * delta / (2.0 * l2));
    case KernelKind::identity: return tau == tau_prime ? 1.0 : 0.0;
  }
  return 0.0;
}

Eigen::MatrixXd cholesky_banachiewicz(const Eigen::MatrixXd& x) {
  if (x.rows() != x.cols()) throw ShapeError("cholesky: matrix must be square");
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      double s = x(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0)) throw NumericError("cholesky: matrix is not positive definite (pivot " + std::to_string(i) + ")");
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

TemporalKernel::TemporalKernel(const KernelSpec& spec, std::size_t steps) : spec_(spec), steps_(steps) {
  spec.validate();
  if (steps == 0) throw ConfigError("temporal kernel needs at least one step");
  const auto n = static_cast<Eigen::Index>(steps);
  matrix_.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) matrix_(i, j) = kernel_eval(spec, static_cast<long>(i), static_cast<long>(j));

  constexpr double kMaxJitter = 1e-4;
  double jitter = spec.jitter;
  for (;;) {
    covariance_ = matrix_ + jitter * Eigen::MatrixXd::Identity(n, n);
    try {
      factor_ = cholesky_banachiewicz(covariance_);
      break;
    } catch (const NumericError&) {
      if (jitter >= kMaxJitter) throw NumericError("kernel matrix is not positive definite even with jitter 1e-4");
      jitter = jitter > 0.0 ? std::min(2.0 * jitter, kMaxJitter) : 1e-8;
    }
  }
  jitter_ = jitter;
  // K^-1 = L^-T L^-1 via two triangular solves, carried out in extended
  // precision: smooth kernels have condition numbers near 1e8 and a double
  // inverse would lose half its digits.
  using MatrixXld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const MatrixXld lx = MatrixXld(covariance_.cast<long double>()).llt().matrixL();
  const MatrixXld linv = lx.triangularView<Eigen::Lower>().solve(MatrixXld::Identity(n, n));
  inverse_ = (linv.transpose() * linv).cast<double>();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(covariance_);
  root_ = eig.eigenvectors() * eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

void PosteriorParams::validate() const {
  if (s.size() == 0 || mu.size() % s.size() != 0) throw ShapeError("posterior: mu length must be a multiple of D");
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(s[i] > 0.0) || !std::isfinite(s[i])) throw NumericError("posterior: variance multipliers must be positive");
  if (!mu.allFinite()) throw NumericError("posterior: non-finite mean");
}

BlockFactor::BlockFactor(const Eigen::VectorXd& s, const Eigen::MatrixXd& kernel_factor)
    : scale_(s.size()), factor_(kernel_factor) {
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!(s[i] > 0.0)) throw NumericError("block_cholesky: variance multipliers must be positive");
    scale_[i] = std::sqrt(s[i]);
  }
}

Eigen::VectorXd BlockFactor::apply(const Eigen::VectorXd& eps) const {
  const Eigen::Index t = factor_.rows();
  if (eps.size() != scale_.size() * t) throw ShapeError("block factor: eps has wrong length");
  Eigen::VectorXd out(eps.size());
  for (Eigen::Index i = 0; i < scale_.size(); ++i)
    out.segment(i * t, t) = scale_[i] * (factor_ * eps.segment(i * t, t));
  return out;
}

Eigen::MatrixXd BlockFactor::dense() const {
  const Eigen::Index t = factor_.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(scale_.size() * t, scale_.size() * t);
  for (Eigen::Index i = 0; i < scale_.size(); ++i) out.block(i * t, i * t, t, t) = scale_[i] * factor_;
  return out;
}

BlockFactor block_cholesky(const Eigen::VectorXd& s, const Eigen::MatrixXd& kernel_factor) {
  return BlockFactor(s, kernel_factor);
}

Eigen::MatrixXd assemble_posterior_covariance(const Eigen::VectorXd& s, const Eigen::MatrixXd& k) {
  const Eigen::Index t = k.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(s.size() * t, s.size() * t);
  for (Eigen::Index i = 0; i < s.size(); ++i) out.block(i * t, i * t, t, t) = s[i] * k;
  return out;
}

Eigen::MatrixXd assemble_prior_covariance(std::size_t dims, const Eigen::MatrixXd& k) {
  return assemble_posterior_covariance(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(dims)), k);
}

MotionMatrix sample_posterior(const PosteriorParams& params, const Eigen::MatrixXd& kernel_factor,
                              const Eigen::VectorXd& eps) {
  params.validate();
  const Eigen::VectorXd flat = params.mu + block_cholesky(params.s, kernel_factor).apply(eps);
  const auto d = static_cast<Eigen::Index>(params.dims());
  const auto t = static_cast<Eigen::Index>(params.steps());
  MotionMatrix out;
  out.z.resize(d, t);
  for (Eigen::Index i = 0; i < d; ++i) out.z.row(i) = flat.segment(i * t, t).transpose();
  out.provenance = Provenance::sampled;
  return out;
}

double kl_gp(const PosteriorParams& params, const TemporalKernel& kernel) {
  params.validate();
  const auto t = static_cast<Eigen::Index>(kernel.steps());
  if (static_cast<Eigen::Index>(params.steps()) != t) throw ShapeError("kl_gp: posterior length differs from kernel");
  const double steps = static_cast<double>(t);
  double kl = 0.0;
  for (Eigen::Index i = 0; i < params.s.size(); ++i) {
    const auto seg = params.mu.segment(i * t, t);
    const double quad = seg.dot(kernel.inverse() * seg);
    kl += params.s[i] * steps + quad - steps - steps * std::log(params.s[i]);
  }
  return 0.5 * kl;
}

double kl_dense(const Eigen::VectorXd& mu_q, const Eigen::MatrixXd& sigma_q, const Eigen::VectorXd& mu_p,
                const Eigen::MatrixXd& sigma_p) {
  const Eigen::Index n = mu_q.size();
  if (mu_p.size() != n || sigma_q.rows() != n || sigma_p.rows() != n || sigma_q.cols() != n || sigma_p.cols() != n)
    throw ShapeError("kl_dense: dimension mismatch");
  const Eigen::LLT<Eigen::MatrixXd> lp(sigma_p), lq(sigma_q);
  if (lp.info() != Eigen::Success || lq.info() != Eigen::Success)
    throw NumericError("kl_dense: covariance is not positive definite");
  const Eigen::VectorXd diff = mu_p - mu_q;
  const double trace = lp.solve(sigma_q).trace();
  const double quad = diff.dot(lp.solve(diff));
  const Eigen::MatrixXd lpm = lp.matrixL(), lqm = lq.matrixL();
  const double logdet_p = 2.0 * lpm.diagonal().array().log().sum();
  const double logdet_q = 2.0 * lqm.diagonal().array().log().sum();
  return 0.5 * (trace + quad - static_cast<double>(n) + logdet_p - logdet_q);
}

Var kl_gp(Var mu, Var s, const TemporalKernel& kernel) {
  const Shape& ms = mu.shape();
  const std::size_t t = kernel.steps();
  if (ms.size() != 2 || ms[1] != t || s.shape() != Shape{ms[0]})
    throw ShapeError("kl_gp: expected mu [D, T] and s [D]");
  const std::size_t d = ms[0];
  const double steps = static_cast<double>(t);
  const Eigen::MatrixXd& kinv = kernel.inverse();
  // Row-major [D, T] maps to a T x D column-major matrix: column i = segment i.
  using Map = Eigen::Map<const Eigen::MatrixXd>;
  const Map mu_cols(mu.value().data(), static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
  const Eigen::MatrixXd kinv_mu = kinv * mu_cols;
  double kl = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double si = s.value()[i];
    if (!(si > 0.0)) throw NumericError("kl_gp: variance multiplier must be positive");
    const auto col = static_cast<Eigen::Index>(i);
    kl += si * steps + mu_cols.col(col).dot(kinv_mu.col(col)) - steps - steps * std::log(si);
  }
  const auto imu = mu.id(), is = s.id();
  return mu.tape().record(Tensor({1}, 0.5 * kl), {mu, s}, [=](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    if (tp.requires_grad(imu)) {
      Tensor& gm = tp.grad(imu);
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < t; ++k)
          gm[i * t + k] += g * kinv_mu(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
    }
    if (tp.requires_grad(is)) {
      Tensor& gs = tp.grad(is);
      const Tensor& sv = tp.value(is);
      for (std::size_t i = 0; i < d; ++i) gs[i] += g * 0.5 * (steps - steps / sv[i]);
    }
  });
}

Var sample_posterior(Var mu, Var s, const TemporalKernel& kernel, const Tensor& eps) {
  const Shape& ms = mu.shape();
  const std::size_t t = kernel.steps();
  if (ms.size() != 2 || ms[1] != t || s.shape() != Shape{ms[0]} || eps.shape() != ms)
    throw ShapeError("sample_posterior: expected mu [D, T], s [D], eps [D, T]");
  const std::size_t d = ms[0];
  const Eigen::MatrixXd& l = kernel.factor();
  // noise[i, :] = L_K eps[i, :]
  Tensor noise(ms);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t r = 0; r < t; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c <= r; ++c) acc += l(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) * eps[i * t + c];
      noise[i * t + r] = acc;
    }
  Tensor out = mu.value();
  for (std::size_t i = 0; i < d; ++i) {
    const double si = s.value()[i];
    if (!(si > 0.0)) throw NumericError("sample_posterior: variance multiplier must be positive");
    const double root = std::sqrt(si);
    for (std::size_t k = 0; k < t; ++k) out[i * t + k] += root * noise[i * t + k];
  }
  const auto imu = mu.id(), is = s.id();
  return mu.tape().record(std::move(out), {mu, s}, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    if (tp.requires_grad(imu)) {
      Tensor& gm = tp.grad(imu);
      for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
    }
    if (tp.requires_grad(is)) {
      Tensor& gs = tp.grad(is);
      const Tensor& sv = tp.value(is);
      for (std::size_t i = 0; i < d; ++i) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t; ++k) acc += g[i * t + k] * noise[i * t + k];
        gs[i] += acc * 0.5 / std::sqrt(sv[i]);
      }
    }
  });
}

}  // namespace gpmotion::gp
