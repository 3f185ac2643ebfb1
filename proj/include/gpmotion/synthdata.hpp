#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gpmotion/rng.hpp"
#include "gpmotion/tensor.hpp"

// Synthetic cardiac-like sequences with analytic motion.
//
// A textured ring (myocardium analog) around a bright disc (blood pool) is
// scaled radially about its centre c by s(t). Frame t is the reference
// pattern P pulled back through the inverse scaling,
//
//   I_t(x) = P(c + (x - c) / s(t)),
//
// so the displacement that maps frame 0 onto frame t under the pull-back
// warp I_0(x + u(x)) is u(x) = (1 / s(t) - 1) (x - c).
//
// s(t) is a piecewise cosine over tau = t / (F - 1) with tau_es the ES frame:
//   [0, tau_es]           contraction 1 -> 1 - c
//   next 60% of the rest  relaxation  1 - c -> 1 - 0.2 c   (rest excludes the plateau)
//   plateau               hold 1 - 0.2 c
//   last 40% of the rest  atrial rise 1 - 0.2 c -> 1
// Each piece is a half cosine, so s is C1 at the joins.

namespace gpmotion {

/// Label image: 0 background, 1 blood pool, 2 ring.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  std::size_t count(std::uint8_t label) const;
  friend bool operator==(const Mask&, const Mask&) = default;
};

struct SyntheticSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  double spacing = 1.5;
  std::size_t frames = 16;
  double pool_radius = 7.0;
  double ring_thickness = 3.0;
  double contraction = 0.3;
  double es_fraction = 0.4;
  double plateau_fraction = 0.3;
  double center_jitter = 0.75;  // std in px, clamped to 2 std
  double noise_std = 0.02;
  std::uint64_t texture_seed = 0;

  void validate() const;
};

/// Ranges sampled per record when generating a dataset.
struct DatasetSpec {
  SyntheticSpec base;
  std::size_t count = 200;
  double contraction_min = 0.15;
  double contraction_max = 0.45;
  double es_min = 0.35;
  double es_max = 0.45;
};

struct SequenceRecord {
  std::size_t height = 0;
  std::size_t width = 0;
  double spacing = 1.0;
  std::vector<Tensor> frames;  // [H, W] in [0, 1]
  std::vector<Mask> masks;     // empty when absent
  bool has_truth = false;
  std::vector<double> scale;   // s(t)
  std::vector<Tensor> fields;  // ground-truth displacement per frame, [2, H, W]

  std::size_t frame_count() const { return frames.size(); }
};

/// s at frame t of F.
double scale_curve(const SyntheticSpec& spec, std::size_t frame);
std::size_t es_frame(const SyntheticSpec& spec);

SequenceRecord generate_sequence(const SyntheticSpec& spec, Rng& rng);
/// Record i uses Rng::substream(seed, i); runs in parallel over records.
std::vector<SequenceRecord> generate_dataset(const DatasetSpec& spec, std::uint64_t seed);

/// Blood-pool area per frame in mm^2.
std::vector<double> ground_truth_volume_curve(const SequenceRecord& record);

/// Counter-clockwise rotation by quarter turns (square grids only). Frames,
/// masks and ground-truth fields are rotated consistently.
SequenceRecord rotate90(const SequenceRecord& record, int quarter_turns);
Tensor rotate90(const Tensor& image, int quarter_turns);
Mask rotate90(const Mask& mask, int quarter_turns);

// MOTN container. Errors: DataError with "bad magic", "truncated" or
// "unsupported version" in the message.
void write_dataset(const std::filesystem::path& path, const std::vector<SequenceRecord>& records);
std::vector<SequenceRecord> read_dataset(const std::filesystem::path& path);

}  // namespace gpmotion
