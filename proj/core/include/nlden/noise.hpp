#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nlden/noise_types.hpp"
#include "nlden/volume.hpp"

namespace nlden {

struct BinningConfig {
  double cov_split = 0.3;
  double lump_split = 0.2;
  std::size_t histogram_bins = 256;

  void validate() const;
};

/// Training-set location and scale of ln(COV).
struct EmbedStats {
  double mu_logcov = 0.0;
  double sigma_logcov = 1.0;
};

struct OtsuResult {
  double threshold = 0.0;
  /// Index k in [1, bins-1] of the winning edge min + k * (max - min) / bins.
  std::size_t edge = 0;
};

/// Histogram Otsu. Candidates are the interior bin edges; the lowest edge
/// maximizing the between-class variance wins. Voxels with value > threshold
/// are foreground.
OtsuResult otsu(std::span<const float> values, std::size_t histogram_bins = 256);
double otsu_threshold(std::span<const float> values, std::size_t histogram_bins = 256);

/// Histogram bin of `value` such that bin >= k exactly when value > edge k.
std::size_t otsu_bin_index(double value, double lo, double hi, std::size_t bins) noexcept;

struct MaskMean {
  double mean = 0.0;
  std::size_t count = 0;
};

MaskMean mask_mean(std::span<const float> counts, double threshold);
double cov_from_mean(double mean_counts);
double background_lumpiness(std::span<const float> counts, double threshold);
NoiseBin classify_bin(double cov, double lumpiness, const BinningConfig& config);

EmbedStats fit_embed_stats(std::span<const double> covs);
double embed_scalar(double cov, const EmbedStats& stats);

/// otsu -> mask mean -> COV -> lumpiness -> bin -> embedding scalar, on a
/// counts-domain patch.
NoiseDescriptor describe_patch(std::span<const float> counts, const BinningConfig& config,
                               const EmbedStats& stats);

/// One newline-free JSON record of the patch-descriptor manifest.
std::string descriptor_record(const std::string& volume_id, const Patch& patch);

}  // namespace nlden
