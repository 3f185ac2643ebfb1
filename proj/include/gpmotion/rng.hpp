#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace gpmotion {

/// Seeded random stream. One instance is threaded through every stochastic
/// operation of a run; independent records use substreams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Independent stream derived from (seed, stream) via seed_seq.
  static Rng substream(std::uint64_t seed, std::uint64_t stream);

  double uniform();                      // [0, 1)
  double uniform(double lo, double hi);  // [lo, hi)
  double normal();                       // N(0, 1)
  bool bernoulli(double p);
  std::size_t index(std::size_t n);      // uniform in [0, n)

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace gpmotion
