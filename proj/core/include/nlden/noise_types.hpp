#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace nlden {

/// Four patch groups: relative noise level crossed with background texture.
enum class NoiseBin : std::uint8_t {
  HighNoiseClean = 0,
  LowNoiseClean = 1,
  HighNoiseLumpy = 2,
  LowNoiseLumpy = 3,
};

inline constexpr std::size_t kNoiseBinCount = 4;

std::string_view to_string(NoiseBin bin) noexcept;
NoiseBin noise_bin_from_string(std::string_view name);

struct NoiseDescriptor {
  double otsu_threshold = 0.0;
  std::size_t mask_voxel_count = 0;
  double mask_mean_counts = 0.0;
  double cov = 0.0;
  double lumpiness = 0.0;
  NoiseBin bin = NoiseBin::HighNoiseClean;
  double embed_scalar = 0.0;
};

}  // namespace nlden
