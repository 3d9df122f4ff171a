#pragma once

#include <cstdint>
#include <random>

namespace mkmtrl {

/// Platform-stable random stream. std::mt19937_64's output sequence is fixed
/// by the standard, but the <random> distributions are not, so the draws
/// below are computed here from raw engine output.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t index(std::uint64_t n);

  /// Standard normal (Box-Muller; the second variate is cached).
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// SplitMix64 finalizer; used to derive independent seeds from a master seed
/// and a counter so that streams do not depend on how many came before.
std::uint64_t mix_seed(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0);

}  // namespace mkmtrl
