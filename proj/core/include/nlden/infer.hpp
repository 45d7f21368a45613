#pragma once

#include <cstddef>

#include "nlden/model.hpp"
#include "nlden/noise.hpp"
#include "nlden/volume.hpp"

namespace nlden {

/// How inference derives the embedding scalar of each patch.
struct NoisePipeline {
  BinningConfig binning;
  EmbedStats stats;
  /// Used when a patch has no valid descriptor (constant, empty mask...).
  double fallback_scalar = 0.0;
};

struct InferenceReport {
  std::size_t patches = 0;
  std::size_t fallbacks = 0;
};

struct InferenceOptions {
  std::size_t patch_size = 32;
  std::size_t stride = 16;
  bool use_nle = true;
  std::size_t threads = 1;
};

/// Sliding-window denoising: covering patches (last origin clamped to the
/// edge), per-patch descriptor computed from the input patch in counts
/// (values * counts_per_suv), network evaluation, uniform overlap averaging.
Volume infer_volume(const Volume& volume, const ModelConfig& config, const ParamSet<float>& params,
                    const InferenceOptions& options, const NoisePipeline& noise,
                    InferenceReport* report = nullptr);

}  // namespace nlden
