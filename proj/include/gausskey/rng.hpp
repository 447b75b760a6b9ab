#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace gausskey {

/// Deterministic 64-bit generator used for every random draw in the library.
///
/// Core sequence: SplitMix64 (Steele, Lea & Flood 2014). Component streams
/// are derived by mixing the user seed with an FNV-1a hash of a fixed label,
/// so each subsystem ("tps", "trajectory", "lstm-init", ...) gets an
/// independent stream from one top-level --seed. Gaussians come from the
/// basic Box-Muller transform, two uniforms per pair, no cached spare.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller. u is kept away from 0 so log() is safe.
  double normal() {
    const double u = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double v = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586476925287 * v);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stream for one named component, derived from the run seed.
inline Rng component_rng(std::uint64_t seed, std::string_view label) {
  Rng mix(seed ^ fnv1a64(label));
  return Rng(mix.next_u64());
}

}  // namespace gausskey
