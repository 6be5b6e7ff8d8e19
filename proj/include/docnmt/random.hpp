#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace docnmt {

// Seedable generator shared by initialization, dropout and shuffling.
// The engine state round-trips through a string so training can resume
// mid-stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection sampling.
  std::uint64_t below(std::uint64_t n);

  // Standard normal via Box-Muller; deterministic across platforms.
  double normal();

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace docnmt
