#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace nlden {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream key from a root seed and a path of
/// integer labels, e.g. derive_seed(seed, {step, item}).
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t key = mix64(seed + 0x9e3779b97f4a7c15ULL);
  for (std::uint64_t label : path) {
    key = mix64(key ^ mix64(label + 0x632be59bd9b4e019ULL));
  }
  return key;
}

/// SplitMix64 stream. Every random quantity in the library is drawn from one
/// of these, keyed by derive_seed(), so results depend only on the seed and
/// the logical position of the draw, never on thread scheduling.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  constexpr explicit SplitMix64(std::uint64_t key) noexcept : state_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  constexpr result_type operator()() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

}  // namespace nlden
