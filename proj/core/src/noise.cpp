#include "nlden/noise.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "nlden/error.hpp"

namespace nlden {

std::string_view to_string(NoiseBin bin) noexcept {
  switch (bin) {
    case NoiseBin::HighNoiseClean: return "HighNoiseClean";
    case NoiseBin::LowNoiseClean: return "LowNoiseClean";
    case NoiseBin::HighNoiseLumpy: return "HighNoiseLumpy";
    case NoiseBin::LowNoiseLumpy: return "LowNoiseLumpy";
  }
  return "HighNoiseClean";
}

NoiseBin noise_bin_from_string(std::string_view name) {
  for (std::size_t b = 0; b < kNoiseBinCount; ++b) {
    if (to_string(static_cast<NoiseBin>(b)) == name) return static_cast<NoiseBin>(b);
  }
  throw Error(ErrorKind::Format, "unknown noise bin '" + std::string(name) + "'");
}

void BinningConfig::validate() const {
  if (!(cov_split > 0.0) || !(lump_split > 0.0)) {
    throw Error(ErrorKind::Config, "cov_split and lump_split must be positive");
  }
  if (histogram_bins < 2) throw Error(ErrorKind::Config, "histogram_bins must be >= 2");
}

namespace {

/// Ranks candidate partitions by (n0*s1 - n1*s0)^2 / (n0*n1), which is the
/// between-class variance up to the constant factor 1/N^2 (means measured in
/// bin units). Integer statistics make equal partitions compare exactly equal.
struct Separation {
  std::int64_t numerator = 0;
  std::int64_t n0 = 0;
  std::int64_t n1 = 0;
};

bool better(const Separation& a, const Separation& b, bool exact) {
  if (a.n0 == 0 || a.n1 == 0) return false;
  if (b.n0 == 0 || b.n1 == 0) return true;
  if (exact) {
    __extension__ typedef unsigned __int128 u128;
    const u128 na = static_cast<u128>(a.numerator < 0 ? -a.numerator : a.numerator);
    const u128 nb = static_cast<u128>(b.numerator < 0 ? -b.numerator : b.numerator);
    return na * na * static_cast<u128>(b.n0 * b.n1) > nb * nb * static_cast<u128>(a.n0 * a.n1);
  }
  const long double va = static_cast<long double>(a.numerator) * a.numerator / (static_cast<long double>(a.n0) * a.n1);
  const long double vb = static_cast<long double>(b.numerator) * b.numerator / (static_cast<long double>(b.n0) * b.n1);
  return va > vb;
}

}  // namespace

std::size_t otsu_bin_index(double value, double lo, double hi, std::size_t bins) noexcept {
  const double width = (hi - lo) / static_cast<double>(bins);
  auto edge = [&](std::size_t k) { return lo + static_cast<double>(k) * width; };
  double guess = std::ceil((value - lo) / width) - 1.0;
  std::size_t b = guess <= 0.0 ? 0 : std::min(static_cast<std::size_t>(guess), bins - 1);
  while (b > 0 && !(value > edge(b))) --b;
  while (b + 1 < bins && value > edge(b + 1)) ++b;
  return b;
}

OtsuResult otsu(std::span<const float> values, std::size_t histogram_bins) {
  if (values.size() < 2) throw Error(ErrorKind::Parameter, "otsu needs at least two values");
  if (histogram_bins < 2) throw Error(ErrorKind::Parameter, "histogram_bins must be >= 2");
  const auto [min_it, max_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *min_it;
  const double hi = *max_it;
  if (!(hi > lo)) throw Error(ErrorKind::ConstantInput, "all values equal " + std::to_string(lo));

  std::vector<std::int64_t> hist(histogram_bins, 0);
  for (float v : values) ++hist[otsu_bin_index(v, lo, hi, histogram_bins)];

  const auto total_n = static_cast<std::int64_t>(values.size());
  std::int64_t total_s = 0;
  for (std::size_t b = 0; b < histogram_bins; ++b) total_s += hist[b] * static_cast<std::int64_t>(b);

  // 128-bit cross-multiplication is exact while N^6 * bins^2 / 4 < 2^128.
  const bool exact =
      6 * std::bit_width(values.size()) + 2 * std::bit_width(histogram_bins) <= 128;

  Separation best;
  std::size_t best_edge = 1;
  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  for (std::size_t k = 1; k < histogram_bins; ++k) {
    n0 += hist[k - 1];
    s0 += hist[k - 1] * static_cast<std::int64_t>(k - 1);
    Separation cand{n0 * (total_s - s0) - (total_n - n0) * s0, n0, total_n - n0};
    if (better(cand, best, exact)) {
      best = cand;
      best_edge = k;
    }
  }
  const double width = (hi - lo) / static_cast<double>(histogram_bins);
  return {lo + static_cast<double>(best_edge) * width, best_edge};
}

double otsu_threshold(std::span<const float> values, std::size_t histogram_bins) {
  return otsu(values, histogram_bins).threshold;
}

MaskMean mask_mean(std::span<const float> counts, double threshold) {
  double sum = 0.0;
  std::size_t n = 0;
  for (float v : counts) {
    if (v > threshold) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorKind::EmptyMask, "no voxel above threshold " + std::to_string(threshold));
  return {sum / static_cast<double>(n), n};
}

double cov_from_mean(double mean_counts) {
  if (!(mean_counts > 0.0) || !std::isfinite(mean_counts)) {
    throw Error(ErrorKind::Parameter, "mean counts must be positive, got " + std::to_string(mean_counts));
  }
  return 1.0 / std::sqrt(mean_counts);
}

double background_lumpiness(std::span<const float> counts, double threshold) {
  double sum = 0.0;
  std::size_t n = 0;
  for (float v : counts) {
    if (!(v > threshold)) {
      sum += v;
      ++n;
    }
  }
  if (n < 2) {
    throw Error(ErrorKind::EmptyBackground,
                std::to_string(n) + " background voxels at or below threshold (need 2)");
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (float v : counts) {
    if (!(v > threshold)) ss += (v - mean) * (v - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (sd == 0.0) return 0.0;
  return sd / (mean + 1e-6);
}

NoiseBin classify_bin(double cov, double lumpiness, const BinningConfig& config) {
  if (!std::isfinite(cov) || !std::isfinite(lumpiness) || cov < 0.0 || lumpiness < 0.0) {
    throw Error(ErrorKind::Parameter, "cov and lumpiness must be finite and non-negative");
  }
  const bool high = cov >= config.cov_split;
  const bool lumpy = lumpiness >= config.lump_split;
  if (lumpy) return high ? NoiseBin::HighNoiseLumpy : NoiseBin::LowNoiseLumpy;
  return high ? NoiseBin::HighNoiseClean : NoiseBin::LowNoiseClean;
}

EmbedStats fit_embed_stats(std::span<const double> covs) {
  if (covs.size() < 2) throw Error(ErrorKind::Parameter, "need at least two COVs to fit embed stats");
  double sum = 0.0;
  for (double c : covs) {
    if (!(c > 0.0)) throw Error(ErrorKind::Parameter, "COV must be positive");
    sum += std::log(c);
  }
  const double mu = sum / static_cast<double>(covs.size());
  double ss = 0.0;
  for (double c : covs) ss += (std::log(c) - mu) * (std::log(c) - mu);
  const double sigma = std::sqrt(ss / static_cast<double>(covs.size() - 1));
  if (!(sigma > 0.0)) throw Error(ErrorKind::Parameter, "ln(COV) has zero spread");
  return {mu, sigma};
}

double embed_scalar(double cov, const EmbedStats& stats) {
  if (!(cov > 0.0)) throw Error(ErrorKind::Parameter, "COV must be positive");
  if (!(stats.sigma_logcov > 0.0)) throw Error(ErrorKind::Parameter, "sigma_logcov must be positive");
  return (std::log(cov) - stats.mu_logcov) / stats.sigma_logcov;
}

NoiseDescriptor describe_patch(std::span<const float> counts, const BinningConfig& config,
                               const EmbedStats& stats) {
  NoiseDescriptor d;
  d.otsu_threshold = otsu_threshold(counts, config.histogram_bins);
  const MaskMean mm = mask_mean(counts, d.otsu_threshold);
  d.mask_mean_counts = mm.mean;
  d.mask_voxel_count = mm.count;
  d.cov = cov_from_mean(mm.mean);
  d.lumpiness = background_lumpiness(counts, d.otsu_threshold);
  d.bin = classify_bin(d.cov, d.lumpiness, config);
  d.embed_scalar = embed_scalar(d.cov, stats);
  return d;
}

std::string descriptor_record(const std::string& volume_id, const Patch& patch) {
  nlohmann::ordered_json j;
  j["volume_id"] = volume_id;
  j["origin"] = {patch.origin[0], patch.origin[1], patch.origin[2]};
  j["size"] = patch.size;
  if (patch.descriptor) {
    const NoiseDescriptor& d = *patch.descriptor;
    j["otsu_threshold"] = d.otsu_threshold;
    j["mask_voxel_count"] = d.mask_voxel_count;
    j["mask_mean_counts"] = d.mask_mean_counts;
    j["cov"] = d.cov;
    j["lumpiness"] = d.lumpiness;
    j["bin"] = std::string(to_string(d.bin));
    j["embed_scalar"] = d.embed_scalar;
  }
  return j.dump();
}

}  // namespace nlden
