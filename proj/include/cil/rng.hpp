#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cil {

/// Seedable generator used everywhere randomness is needed.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard distributions are implementation-defined, so the
/// uniform and normal transforms are done here by hand; a given seed yields
/// the same stream on every conforming toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  /// Uniform integer on [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// Splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Named substream seed: all randomness flows from one root seed through
/// named children ("env", "featurizer", "solver", "eval", ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  return mix64(root ^ mix64(index + 0x9e3779b97f4a7c15ULL));
}

}  // namespace cil
