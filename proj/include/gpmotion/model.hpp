#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gpmotion/deformation.hpp"
#include "gpmotion/gp_latent.hpp"
#include "gpmotion/rng.hpp"
#include "gpmotion/tape.hpp"

// Conditional VAE over a D x T_lat motion matrix.
//
//   encoder  (I_0, I_t) -> gamma_t (2D)          shared over all pairs
//   TCN      Gamma [2D, T_lat] -> mu [D, T_lat], s [D]
//   decoder  (z_t, I_0) -> v_t -> smooth -> exp -> phi_t, I_0 o phi_t
//
// Frames are [H, W] images; frame 0 is the reference and pair k couples
// frame 0 with frame k + 1.

namespace gpmotion {

struct ModelConfig {
  std::size_t latent_dims = 8;    // D
  std::size_t latent_steps = 16;  // T_lat
  std::size_t height = 32;
  std::size_t width = 32;
  double spacing = 1.5;
  std::array<std::size_t, 4> encoder_channels{8, 16, 16, 4};
  std::array<std::size_t, 4> decoder_channels{16, 16, 16, 8};
  std::vector<std::size_t> dilations{1, 2, 4, 8};
  double tcn_dropout = 0.1;
  double sigma_l = 0.0045;
  double td_rate = 0.5;
  std::size_t max_frames = 16;  // frames decoded per step under sub-sequence training
  double v_max = 5.0;
  int squaring_steps = 6;
  bool adaptive_squaring = false;  // use max|v| / 2^n < 0.5 px instead of a fixed count
  deform::SmoothingSpec smoothing;
  gp::KernelSpec kernel;

  void validate() const;
  deform::GridSpec grid() const { return {height, width, spacing}; }
};

/// slot(k) = round(k (T_lat - 1) / (P - 1)), collisions pushed right.
std::vector<std::size_t> assign_slots(std::size_t pairs, std::size_t latent_steps);

struct FeatureMatrix {
  Tensor gamma;                 // [2D, T_lat]
  std::vector<bool> available;  // per column
};

/// features [P, 2D] (row k = gamma of pair k) placed into T_lat columns.
FeatureMatrix assemble_feature_matrix(const Tensor& features, std::size_t latent_steps);

/// Each available column zeroed with probability rate. Returns the dropped
/// column indices; `available` is left unchanged on purpose.
std::vector<std::size_t> temporal_dropout(FeatureMatrix& fm, double rate, Rng& rng);

/// All pairs when F - 1 <= max_frames, else a sorted random subset.
std::vector<std::size_t> subsequence_select(std::size_t frames, std::size_t max_frames, Rng& rng);

struct Posterior {
  Var mu;  // [D, T_lat]
  Var s;   // [D]
};

struct Decoded {
  Var velocity;  // [n, 2, H, W] after tanh scaling, before smoothing
  Var fields;    // [n, 2, H, W] displacements
  Var warped;    // [n, 1, H, W]
};

/// What a training step feeds through the network.
struct StepPlan {
  std::vector<std::size_t> loss_pairs;     // pairs reconstructed in the loss
  std::vector<std::size_t> encoded_pairs;  // pairs whose features enter Gamma
  bool sample = true;                      // z ~ q, else z = mu
  bool training = true;                    // TCN dropout on
};

struct StepResult {
  Var loss, recon, kl;
  Posterior posterior;
  Var z;
  Decoded decoded;
};

class MotionModel {
 public:
  explicit MotionModel(ModelConfig config, std::uint64_t init_seed = 1);

  const ModelConfig& config() const noexcept { return config_; }
  const gp::TemporalKernel& kernel() const noexcept { return kernel_; }

  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  Parameter& parameter(const std::string& name);
  std::size_t parameter_count() const;
  void zero_grad();
  bool parameters_finite() const;

  /// frames[0] = I_0; returns [n, 2D] features for the listed pairs.
  Var encode_pairs(Tape& tape, std::span<const Tensor> frames, std::span<const std::size_t> pairs);

  /// Gamma [2D, T_lat] -> posterior. rng is only used when training.
  Posterior tcn(Tape& tape, Var gamma, Rng* rng, bool training);

  /// Decodes columns `slots` of z [D, T_lat] conditioned on I_0.
  Decoded decode(Tape& tape, Var z, const Tensor& i0, std::span<const std::size_t> slots);

  /// Full ELBO step: encode, assemble, TCN, sample, decode, loss.
  StepResult elbo(Tape& tape, std::span<const Tensor> frames, const StepPlan& plan, Rng& rng);

  /// Gamma over T_lat columns built from the listed pairs (zeros elsewhere).
  Var feature_matrix(Tape& tape, std::span<const Tensor> frames, std::span<const std::size_t> pairs);

 private:
  Var param(Tape& tape, const std::string& name);
  Parameter& add_param(const std::string& name, Shape shape, double stddev, Rng& rng);

  ModelConfig config_;
  gp::TemporalKernel kernel_;
  Tensor mean_basis_;  // K^(1/2), applied to the TCN's mean rows
  std::vector<Parameter> params_;
};

/// Bilinear resize of an [H, W] image with half-pixel centres.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);

}  // namespace gpmotion
