#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "nlden/noise_types.hpp"

namespace nlden {

struct Dims {
  std::size_t nx = 1;
  std::size_t ny = 1;
  std::size_t nz = 1;

  constexpr std::size_t count() const noexcept { return nx * ny * nz; }
  constexpr std::size_t operator[](std::size_t axis) const noexcept {
    return axis == 0 ? nx : (axis == 1 ? ny : nz);
  }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

struct Spacing {
  float sx = 1.0f;
  float sy = 1.0f;
  float sz = 1.0f;

  constexpr float operator[](std::size_t axis) const noexcept {
    return axis == 0 ? sx : (axis == 1 ? sy : sz);
  }
  friend constexpr bool operator==(const Spacing&, const Spacing&) = default;
};

using Index3 = std::array<std::size_t, 3>;

enum class Domain : std::uint8_t { Counts = 0, SUV = 1 };

struct VolumeHeader {
  Dims dims;
  Spacing voxel_size;
  Domain domain = Domain::Counts;
  float counts_per_suv = 1.0f;

  friend bool operator==(const VolumeHeader&, const VolumeHeader&) = default;
};

/// Dense 3D grid of float voxels stored x-fastest, then y, then z.
class Volume {
 public:
  Volume() = default;
  /// Validates every invariant (sizes, finiteness, non-negative counts).
  Volume(VolumeHeader header, std::vector<float> values);
  static Volume filled(VolumeHeader header, float value);

  const VolumeHeader& header() const noexcept { return header_; }
  const Dims& dims() const noexcept { return header_.dims; }
  const Spacing& voxel_size() const noexcept { return header_.voxel_size; }
  Domain domain() const noexcept { return header_.domain; }
  float counts_per_suv() const noexcept { return header_.counts_per_suv; }

  std::span<const float> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + header_.dims.nx * (y + header_.dims.ny * z);
  }
  float at(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return values_[index(x, y, z)];
  }

  /// Moves the voxel buffer out, leaving the volume empty.
  std::vector<float> release_values() && { return std::move(values_); }

 private:
  VolumeHeader header_;
  std::vector<float> values_{0.0f};
};

/// Cubic sub-volume of edge `size` at `origin` in its parent grid.
struct Patch {
  Index3 origin{0, 0, 0};
  std::size_t size = 0;
  std::vector<float> values;
  std::optional<NoiseDescriptor> descriptor;

  std::size_t voxel_count() const noexcept { return size * size * size; }
};

// NVOL serialization. Layout (little-endian): "NVOL", version 0x01,
// u32 nx ny nz, f32 sx sy sz, u8 domain, f32 counts_per_suv, f32 payload.
inline constexpr std::size_t kNvolHeaderBytes = 34;

Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& volume, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_nvol(const Volume& volume);
Volume decode_nvol(std::span<const std::uint8_t> bytes);

/// Per-axis origins {0, stride, 2*stride, ...} with origin + p <= dim. When
/// `clamp_last` is set, a final origin dim - p is appended if the regular
/// grid leaves the far edge uncovered.
std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t p, std::size_t stride,
                                      bool clamp_last);

std::vector<Patch> extract_patches(const Volume& volume, std::size_t p, std::size_t stride);
/// Like extract_patches but guarantees full coverage by clamping the last
/// origin on each axis to the volume edge.
std::vector<Patch> extract_covering_patches(const Volume& volume, std::size_t p,
                                            std::size_t stride);
Patch extract_patch(const Volume& volume, const Index3& origin, std::size_t p);

/// Uniform overlap averaging of patch values onto the grid described by `header`.
Volume reassemble(std::span<const Patch> patches, const VolumeHeader& header);

Volume suv_normalize(const Volume& counts, double administered_activity_mbq, double weight_kg,
                     double sensitivity);
/// Inverse of suv_normalize using the stored calibration.
Volume suv_to_counts(const Volume& suv);

struct FlipDecision {
  bool flip_x = false;
  bool flip_y = false;
};

FlipDecision draw_flips(std::uint64_t seed) noexcept;
void flip_in_place(std::span<float> cube, std::size_t p, FlipDecision flips);
std::pair<Patch, Patch> flip_augment(const Patch& input, const Patch& target, std::uint64_t seed);

}  // namespace nlden
