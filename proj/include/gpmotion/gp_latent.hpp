#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>

#include "gpmotion/tape.hpp"

// Gaussian-process temporal prior over the motion matrix.
//
// Layout: the posterior mean mu has length D * T and is dimension-major
// (segment i = mu[i*T, (i+1)*T) is the temporal trajectory of latent
// dimension i). The posterior covariance is block diagonal with block i equal
// to s_i * K, where s_i > 0 is the encoder's exponentiated variance output and
// K is the prior's temporal kernel matrix (including jitter). Hence:
//
//   L*        = Diag_i( sqrt(s_i) * L_K )
//   KL(q||p)  = 1/2 * sum_i [ s_i*T + mu_i^T K^-1 mu_i - T - T*ln(s_i) ]

namespace gpmotion::gp {

enum class KernelKind { cauchy, rbf, identity };

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

struct KernelSpec {
  KernelKind kind = KernelKind::cauchy;
  double length_scale = 7.0;  // in time steps
  double sigma_k = 1.005;
  double jitter = 1e-8;

  void validate() const;
};

/// Cauchy: sigma_k^2 / (1 + (t - t')^2 / l^2).  RBF: sigma_k^2 exp(-(t - t')^2 / (2 l^2)).
/// Identity: Kronecker delta (time-independent prior).
double kernel_eval(const KernelSpec& spec, long tau, long tau_prime);

/// Plain Cholesky-Banachiewicz (row by row). Throws NumericError on a
/// non-positive pivot.
Eigen::MatrixXd cholesky_banachiewicz(const Eigen::MatrixXd& x);

/// Kernel matrix K over T latent steps with its factor and inverse, computed
/// once and shared read-only.
class TemporalKernel {
 public:
  TemporalKernel(const KernelSpec& spec, std::size_t steps);

  const KernelSpec& spec() const noexcept { return spec_; }
  std::size_t steps() const noexcept { return steps_; }
  /// K as evaluated by kernel_eval, without jitter.
  const Eigen::MatrixXd& matrix() const noexcept { return matrix_; }
  /// K + jitter * I: the covariance actually used.
  const Eigen::MatrixXd& covariance() const noexcept { return covariance_; }
  const Eigen::MatrixXd& factor() const noexcept { return factor_; }
  const Eigen::MatrixXd& inverse() const noexcept { return inverse_; }
  /// Symmetric square root S of the covariance (S * S = K + jitter * I).
  const Eigen::MatrixXd& root() const noexcept { return root_; }
  double jitter() const noexcept { return jitter_; }

 private:
  KernelSpec spec_;
  std::size_t steps_;
  double jitter_;
  Eigen::MatrixXd matrix_, covariance_, factor_, inverse_, root_;
};

struct PosteriorParams {
  Eigen::VectorXd mu;  // D * T, dimension-major
  Eigen::VectorXd s;   // D, strictly positive

  std::size_t dims() const { return static_cast<std::size_t>(s.size()); }
  std::size_t steps() const { return dims() ? static_cast<std::size_t>(mu.size()) / dims() : 0; }
  void validate() const;
};

enum class Provenance { sampled, mean, transported };

struct MotionMatrix {
  Eigen::MatrixXd z;  // D x T
  Provenance provenance = Provenance::sampled;
};

/// Block-diagonal factor of the posterior covariance, stored as per-block
/// scales plus the shared L_K (O(D * T^2) to assemble densely).
class BlockFactor {
 public:
  BlockFactor(const Eigen::VectorXd& s, const Eigen::MatrixXd& kernel_factor);

  std::size_t blocks() const { return static_cast<std::size_t>(scale_.size()); }
  Eigen::MatrixXd block(std::size_t i) const { return scale_[static_cast<Eigen::Index>(i)] * factor_; }
  /// L* * eps for eps of length D * T.
  Eigen::VectorXd apply(const Eigen::VectorXd& eps) const;
  Eigen::MatrixXd dense() const;

 private:
  Eigen::VectorXd scale_;  // sqrt(s_i)
  Eigen::MatrixXd factor_;
};

BlockFactor block_cholesky(const Eigen::VectorXd& s, const Eigen::MatrixXd& kernel_factor);

/// Dense Sigma* = Diag_i(s_i * K).
Eigen::MatrixXd assemble_posterior_covariance(const Eigen::VectorXd& s, const Eigen::MatrixXd& k);
/// Dense prior covariance Diag_D(K).
Eigen::MatrixXd assemble_prior_covariance(std::size_t dims, const Eigen::MatrixXd& k);

/// z = mu + L* eps reshaped to D x T.
MotionMatrix sample_posterior(const PosteriorParams& params, const Eigen::MatrixXd& kernel_factor,
                              const Eigen::VectorXd& eps);

double kl_gp(const PosteriorParams& params, const TemporalKernel& kernel);

/// KL( N(mu_q, sigma_q) || N(mu_p, sigma_p) ) evaluated densely.
double kl_dense(const Eigen::VectorXd& mu_q, const Eigen::MatrixXd& sigma_q, const Eigen::VectorXd& mu_p,
                const Eigen::MatrixXd& sigma_p);

// Tape versions used by the model. mu is a [D, T] var, s a [D] var.
Var kl_gp(Var mu, Var s, const TemporalKernel& kernel);
Var sample_posterior(Var mu, Var s, const TemporalKernel& kernel, const Tensor& eps);

}  // namespace gpmotion::gp
