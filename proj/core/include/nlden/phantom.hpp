#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nlden/volume.hpp"

namespace nlden {

struct Sphere {
  std::array<double, 3> center{0.0, 0.0, 0.0};  // voxel coordinates
  double radius = 1.0;                          // voxels
  double contrast = 1.0;                        // multiplier on the background rate
};

/// Random Gaussian bumps added on top of the background.
struct LumpyBlobs {
  std::size_t count = 0;
  double amplitude = 0.0;  // expected counts at a bump centre
  double width = 2.0;      // Gaussian sigma in voxels
};

struct PhantomSpec {
  Dims dims{64, 64, 64};
  Spacing voxel_size{2.5f, 2.5f, 2.5f};
  double background_rate = 10.0;
  std::vector<Sphere> spheres;
  LumpyBlobs blobs;
  std::uint64_t seed = 0;

  void validate() const;
};

struct CountSimConfig {
  std::vector<double> fractions{0.125, 0.25, 1.0};
  double psf_fwhm_mm = 4.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Noiseless expected counts: background * product of containing-sphere
/// contrasts + sum of lumpy bumps.
Volume generate_phantom(const PhantomSpec& spec);

/// Independent Poisson draw per voxel, keyed by (seed, voxel index).
Volume sample_counts(const Volume& lambda, std::uint64_t seed);

/// Binomial(count, fraction) per voxel; maps Poisson(l) to Poisson(f * l).
Volume thin_counts(const Volume& counts, double fraction, std::uint64_t seed);

/// Separable Gaussian blur standing in for reconstruction. Kernel truncated
/// at 3 sigma and renormalized; boundaries use half-sample symmetric
/// reflection so both constants and total counts are preserved.
Volume recon_surrogate(const Volume& counts, double psf_fwhm_mm);

/// Normalized 1D taps (length 2R+1) used by recon_surrogate for sigma in voxels.
std::vector<double> gaussian_taps(double sigma_voxels);

struct FractionVolume {
  double fraction = 1.0;
  Volume raw;    // thinned counts before blurring
  Volume recon;  // after recon_surrogate
};

struct PairedDataset {
  Volume lambda;
  Volume reference;  // recon_surrogate(lambda)
  Volume full_raw;
  std::vector<FractionVolume> fractions;  // same order as CountSimConfig::fractions

  const FractionVolume& at_fraction(double fraction) const;
};

PairedDataset make_paired_dataset(const PhantomSpec& spec, const CountSimConfig& sim);

/// "full" for 1, otherwise "f" followed by the decimal digits: 0.125 -> "f0125".
std::string fraction_tag(double fraction);

/// Scanner calibration of the full-activity acquisition of one phantom.
struct SuvCalibration {
  double administered_activity_mbq = 1.0;
  double weight_kg = 1.0;
  double sensitivity = 1.0;
};

/// Writes ref.nvol, one file per fraction and manifest.json into `dir`.
/// With a calibration, volumes are stored SUV normalised; a fraction f is
/// treated as a scan at f times the administered activity.
void write_paired_dataset(const std::filesystem::path& dir, const std::string& id,
                          const PairedDataset& data, const PhantomSpec& spec,
                          const CountSimConfig& sim,
                          const std::optional<SuvCalibration>& suv = std::nullopt);

/// Rule for a reproducible family of phantoms spanning several background
/// count tiers, alternately clean and lumpy.
struct PhantomSetConfig {
  std::size_t count = 20;
  Dims dims{64, 64, 64};
  Spacing voxel_size{2.5f, 2.5f, 2.5f};
  std::vector<double> background_tiers{16.0, 64.0, 256.0};
  std::size_t min_spheres = 2;
  std::size_t max_spheres = 5;
  double min_radius = 3.0;
  double max_radius = 8.0;
  double min_contrast = 1.5;
  double max_contrast = 6.0;
  std::size_t blob_count = 30;
  double blob_relative_amplitude = 0.8;  // multiple of the background rate
  double blob_width = 2.5;

  void validate() const;
};

std::vector<PhantomSpec> make_phantom_set(const PhantomSetConfig& config, std::uint64_t seed);

}  // namespace nlden
