#pragma once

#include <span>
#include <vector>

#include "gpmotion/metrics.hpp"
#include "gpmotion/model.hpp"
#include "gpmotion/synthdata.hpp"

// Posterior-mean inference. Every entry point decodes the full latent grid
// (all T_lat slots) from z = mu, so register, interpolate with every pair and
// transport of a sequence's own z share one code path.

namespace gpmotion {

struct Inference {
  gp::MotionMatrix z;           // D x T_lat, provenance mean or transported
  Tensor s;                     // [D]
  Tensor fields;                // [T_lat, 2, H, W]
  Tensor warped;                // [T_lat, H, W]
  std::vector<std::size_t> slots;  // pair k -> slot (empty for simulate/transport)

  Tensor slot_field(std::size_t slot) const;
  /// One field per frame pair, read from the pair slots.
  std::vector<Tensor> pair_fields() const;
  std::vector<Tensor> all_fields() const;
};

/// Features from every pair.
Inference register_sequence(MotionModel& model, std::span<const Tensor> frames);
/// Features only from the listed pairs; throws ConfigError when empty.
Inference interpolate(MotionModel& model, std::span<const Tensor> frames, std::span<const std::size_t> provided);
/// Gamma = 0, conditioned on I_0 only.
Inference simulate(MotionModel& model, const Tensor& i0);
/// Decodes a given motion matrix on a new reference frame.
Inference transport(MotionModel& model, const gp::MotionMatrix& z, const Tensor& i0);

/// Frame numbers to sorted pair indices; frame 0 (the reference) is dropped.
std::vector<std::size_t> frames_to_pairs(std::span<const std::size_t> frames, std::size_t frame_count);

/// Frame selection for interpolation: all, every2, every5, first5 or
/// "frames 0,10" (also "frames:0,10"). Returns sorted frame numbers.
std::vector<std::size_t> parse_provide(const std::string& mode, std::size_t frame_count);

/// Registers every record (optionally rotated by quarter turns) and scores it
/// against the identity baseline. Parallel over records.
metrics::EvalReport evaluate_dataset(MotionModel& model, const std::vector<SequenceRecord>& records,
                                     int quarter_turns = 0);

}  // namespace gpmotion
