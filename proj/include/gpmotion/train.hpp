#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "gpmotion/adam.hpp"
#include "gpmotion/model.hpp"
#include "gpmotion/synthdata.hpp"

namespace gpmotion {

struct AugmentSettings {
  bool enabled = true;
  double max_shift_px = 4.0;
  double max_rotation_deg = 15.0;
  double scale_min = 0.9;
  double scale_max = 1.1;
  double mirror_prob = 0.5;
};

struct TrainSettings {
  std::size_t epochs = 20;
  AdamSettings adam;
  AugmentSettings augment;
  bool check_finite = false;  // per-node NaN/Inf checks on the tape (slow)

  void validate() const;
};

struct TrainLogRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss = 0, recon = 0, kl = 0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<double> epoch_loss;  // mean loss per epoch
};

/// Random similarity transform (plus optional mirror) applied identically to
/// every frame of a sequence.
std::vector<Tensor> augment_frames(std::span<const Tensor> frames, const AugmentSettings& settings, Rng& rng);

/// One pass of the per-sequence schedule: shuffle, augment, pick the
/// sub-sequence, temporal dropout, ELBO, backward, Adam. Deterministic for a
/// given seed. Throws NumericError when the loss stops being finite.
TrainResult train(MotionModel& model, const std::vector<SequenceRecord>& data, const TrainSettings& settings,
                  std::uint64_t seed, const std::function<void(const TrainLogRow&)>& on_step = {});

/// Header: epoch,step,loss,recon,kl
void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log);

}  // namespace gpmotion
