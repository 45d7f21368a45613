#include "nlden/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "nlden/error.hpp"
#include "nlden/rng.hpp"

namespace nlden {
namespace {

void validate_header(const VolumeHeader& h) {
  if (h.dims.nx < 1 || h.dims.ny < 1 || h.dims.nz < 1) {
    throw Error(ErrorKind::Geometry, "volume dims must be >= 1");
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(h.voxel_size[a] > 0.0f) || !std::isfinite(h.voxel_size[a])) {
      throw Error(ErrorKind::Geometry, "voxel size must be positive and finite");
    }
  }
  if (!(h.counts_per_suv > 0.0f) || !std::isfinite(h.counts_per_suv)) {
    throw Error(ErrorKind::Parameter, "counts_per_suv must be positive and finite");
  }
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

float get_f32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return std::bit_cast<float>(get_u32(bytes, offset));
}

std::string at_offset(std::size_t offset) { return " at byte offset " + std::to_string(offset); }

void check_patch_geometry(const Dims& dims, std::size_t p, std::size_t stride) {
  if (p == 0) throw Error(ErrorKind::Geometry, "patch size must be >= 1");
  if (stride == 0) throw Error(ErrorKind::Geometry, "stride must be >= 1");
  if (p > dims.nx || p > dims.ny || p > dims.nz) {
    throw Error(ErrorKind::Geometry, "patch size " + std::to_string(p) +
                                         " exceeds volume dims " + std::to_string(dims.nx) + "x" +
                                         std::to_string(dims.ny) + "x" + std::to_string(dims.nz));
  }
}

std::vector<Patch> extract_on_grid(const Volume& volume, std::size_t p, std::size_t stride,
                                   bool clamp_last) {
  check_patch_geometry(volume.dims(), p, stride);
  const auto ox = axis_origins(volume.dims().nx, p, stride, clamp_last);
  const auto oy = axis_origins(volume.dims().ny, p, stride, clamp_last);
  const auto oz = axis_origins(volume.dims().nz, p, stride, clamp_last);
  std::vector<Patch> patches;
  patches.reserve(ox.size() * oy.size() * oz.size());
  for (std::size_t z : oz) {
    for (std::size_t y : oy) {
      for (std::size_t x : ox) patches.push_back(extract_patch(volume, {x, y, z}, p));
    }
  }
  return patches;
}

}  // namespace

Volume::Volume(VolumeHeader header, std::vector<float> values)
    : header_(header), values_(std::move(values)) {
  validate_header(header_);
  if (values_.size() != header_.dims.count()) {
    throw Error(ErrorKind::Geometry, "expected " + std::to_string(header_.dims.count()) +
                                         " voxels, got " + std::to_string(values_.size()));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const float v = values_[i];
    if (!std::isfinite(v)) {
      throw Error(ErrorKind::Domain, "non-finite voxel at index " + std::to_string(i));
    }
    if (header_.domain == Domain::Counts && v < 0.0f) {
      throw Error(ErrorKind::Domain, "negative count at index " + std::to_string(i));
    }
  }
}

Volume Volume::filled(VolumeHeader header, float value) {
  validate_header(header);
  return Volume(header, std::vector<float>(header.dims.count(), value));
}

std::vector<std::uint8_t> encode_nvol(const Volume& volume) {
  const auto& h = volume.header();
  std::vector<std::uint8_t> out;
  out.reserve(kNvolHeaderBytes + 4 * volume.size());
  out.insert(out.end(), {'N', 'V', 'O', 'L', 0x01});
  put_u32(out, static_cast<std::uint32_t>(h.dims.nx));
  put_u32(out, static_cast<std::uint32_t>(h.dims.ny));
  put_u32(out, static_cast<std::uint32_t>(h.dims.nz));
  put_f32(out, h.voxel_size.sx);
  put_f32(out, h.voxel_size.sy);
  put_f32(out, h.voxel_size.sz);
  out.push_back(static_cast<std::uint8_t>(h.domain));
  put_f32(out, h.counts_per_suv);
  for (float v : volume.values()) put_f32(out, v);
  return out;
}

Volume decode_nvol(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kNvolHeaderBytes) {
    throw Error(ErrorKind::Format, "truncated header: " + std::to_string(bytes.size()) +
                                       " bytes" + at_offset(bytes.size()));
  }
  if (std::memcmp(bytes.data(), "NVOL", 4) != 0) {
    throw Error(ErrorKind::Format, "bad magic" + at_offset(0));
  }
  if (bytes[4] != 0x01) {
    throw Error(ErrorKind::Format, "unsupported version " + std::to_string(bytes[4]) + at_offset(4));
  }
  VolumeHeader h;
  h.dims = {get_u32(bytes, 5), get_u32(bytes, 9), get_u32(bytes, 13)};
  h.voxel_size = {get_f32(bytes, 17), get_f32(bytes, 21), get_f32(bytes, 25)};
  if (bytes[29] > 1) {
    throw Error(ErrorKind::Format, "unknown domain code " + std::to_string(bytes[29]) + at_offset(29));
  }
  h.domain = static_cast<Domain>(bytes[29]);
  h.counts_per_suv = get_f32(bytes, 30);
  if (h.dims.nx == 0 || h.dims.ny == 0 || h.dims.nz == 0) {
    throw Error(ErrorKind::Format, "zero dimension" + at_offset(5));
  }
  for (std::size_t a = 0; a < 3; ++a) {
    if (!(h.voxel_size[a] > 0.0f) || !std::isfinite(h.voxel_size[a])) {
      throw Error(ErrorKind::Format, "invalid voxel size" + at_offset(17 + 4 * a));
    }
  }
  if (!(h.counts_per_suv > 0.0f) || !std::isfinite(h.counts_per_suv)) {
    throw Error(ErrorKind::Format, "invalid counts_per_suv" + at_offset(30));
  }
  const std::size_t n = h.dims.count();
  const std::size_t expected = kNvolHeaderBytes + 4 * n;
  if (bytes.size() < expected) {
    throw Error(ErrorKind::Format, "truncated payload: header declares " + std::to_string(n) +
                                       " voxels but only " +
                                       std::to_string((bytes.size() - kNvolHeaderBytes) / 4) +
                                       " present" + at_offset(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw Error(ErrorKind::Format, "trailing bytes after payload" + at_offset(expected));
  }
  std::vector<float> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t off = kNvolHeaderBytes + 4 * i;
    values[i] = get_f32(bytes, off);
    if (!std::isfinite(values[i])) {
      throw Error(ErrorKind::Format, "non-finite voxel value" + at_offset(off));
    }
    if (h.domain == Domain::Counts && values[i] < 0.0f) {
      throw Error(ErrorKind::Format, "negative count" + at_offset(off));
    }
  }
  return Volume(h, std::move(values));
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::Io, "read failed for " + path.string());
  try {
    return decode_nvol(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void save_volume(const Volume& volume, const std::filesystem::path& path) {
  const auto bytes = encode_nvol(volume);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t p, std::size_t stride,
                                      bool clamp_last) {
  std::vector<std::size_t> origins;
  if (p > dim || stride == 0) return origins;
  for (std::size_t o = 0; o + p <= dim; o += stride) origins.push_back(o);
  if (clamp_last && origins.back() + p < dim) origins.push_back(dim - p);
  return origins;
}

Patch extract_patch(const Volume& volume, const Index3& origin, std::size_t p) {
  const Dims& d = volume.dims();
  if (p == 0 || origin[0] + p > d.nx || origin[1] + p > d.ny || origin[2] + p > d.nz) {
    throw Error(ErrorKind::Geometry, "patch at (" + std::to_string(origin[0]) + "," +
                                         std::to_string(origin[1]) + "," +
                                         std::to_string(origin[2]) + ") size " +
                                         std::to_string(p) + " leaves the volume");
  }
  Patch patch;
  patch.origin = origin;
  patch.size = p;
  patch.values.resize(p * p * p);
  const auto src = volume.values();
  for (std::size_t z = 0; z < p; ++z) {
    for (std::size_t y = 0; y < p; ++y) {
      const std::size_t s = volume.index(origin[0], origin[1] + y, origin[2] + z);
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s), p,
                  patch.values.begin() + static_cast<std::ptrdiff_t>(p * (y + p * z)));
    }
  }
  return patch;
}

std::vector<Patch> extract_patches(const Volume& volume, std::size_t p, std::size_t stride) {
  return extract_on_grid(volume, p, stride, false);
}

std::vector<Patch> extract_covering_patches(const Volume& volume, std::size_t p,
                                            std::size_t stride) {
  return extract_on_grid(volume, p, stride, true);
}

Volume reassemble(std::span<const Patch> patches, const VolumeHeader& header) {
  validate_header(header);
  const Dims& d = header.dims;
  std::vector<double> sum(d.count(), 0.0);
  std::vector<std::uint32_t> hits(d.count(), 0);
  for (const Patch& patch : patches) {
    const std::size_t p = patch.size;
    if (patch.values.size() != p * p * p || patch.origin[0] + p > d.nx ||
        patch.origin[1] + p > d.ny || patch.origin[2] + p > d.nz) {
      throw Error(ErrorKind::Geometry, "patch does not fit the target grid");
    }
    for (std::size_t z = 0; z < p; ++z) {
      for (std::size_t y = 0; y < p; ++y) {
        const std::size_t row =
            patch.origin[0] + d.nx * ((patch.origin[1] + y) + d.ny * (patch.origin[2] + z));
        const float* src = patch.values.data() + p * (y + p * z);
        for (std::size_t x = 0; x < p; ++x) {
          sum[row + x] += static_cast<double>(src[x]);
          ++hits[row + x];
        }
      }
    }
  }
  std::vector<float> values(d.count());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (hits[i] == 0) {
      const std::size_t x = i % d.nx;
      const std::size_t y = (i / d.nx) % d.ny;
      const std::size_t z = i / (d.nx * d.ny);
      throw Error(ErrorKind::Coverage, "voxel (" + std::to_string(x) + "," + std::to_string(y) +
                                           "," + std::to_string(z) +
                                           ") is not covered by any patch");
    }
    values[i] = static_cast<float>(sum[i] / hits[i]);
  }
  return Volume(header, std::move(values));
}

Volume suv_normalize(const Volume& counts, double administered_activity_mbq, double weight_kg,
                     double sensitivity) {
  if (!(administered_activity_mbq > 0.0) || !(weight_kg > 0.0) || !(sensitivity > 0.0)) {
    throw Error(ErrorKind::Parameter,
                "administered activity, weight and sensitivity must all be positive");
  }
  if (counts.domain() != Domain::Counts) {
    throw Error(ErrorKind::Domain, "suv_normalize expects a Counts-domain volume");
  }
  const double scale = sensitivity * administered_activity_mbq / weight_kg;
  VolumeHeader h = counts.header();
  h.domain = Domain::SUV;
  h.counts_per_suv = static_cast<float>(scale);
  std::vector<float> values(counts.size());
  const auto src = counts.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<float>(static_cast<double>(src[i]) / scale);
  }
  return Volume(h, std::move(values));
}

Volume suv_to_counts(const Volume& suv) {
  if (suv.domain() != Domain::SUV) {
    throw Error(ErrorKind::Domain, "suv_to_counts expects an SUV-domain volume");
  }
  VolumeHeader h = suv.header();
  const double scale = h.counts_per_suv;
  h.domain = Domain::Counts;
  h.counts_per_suv = 1.0f;
  std::vector<float> values(suv.size());
  const auto src = suv.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = static_cast<float>(static_cast<double>(src[i]) * scale);
  }
  return Volume(h, std::move(values));
}

FlipDecision draw_flips(std::uint64_t seed) noexcept {
  SplitMix64 rng(derive_seed(seed, {0x666c6970ULL}));
  FlipDecision d;
  d.flip_x = (rng() >> 63) != 0;
  d.flip_y = (rng() >> 63) != 0;
  return d;
}

void flip_in_place(std::span<float> cube, std::size_t p, FlipDecision flips) {
  if (flips.flip_x) {
    for (std::size_t row = 0; row < p * p; ++row) {
      std::reverse(cube.begin() + static_cast<std::ptrdiff_t>(row * p),
                   cube.begin() + static_cast<std::ptrdiff_t>((row + 1) * p));
    }
  }
  if (flips.flip_y) {
    for (std::size_t z = 0; z < p; ++z) {
      float* slab = cube.data() + z * p * p;
      for (std::size_t y = 0; y < p / 2; ++y) {
        std::swap_ranges(slab + y * p, slab + (y + 1) * p, slab + (p - 1 - y) * p);
      }
    }
  }
}

std::pair<Patch, Patch> flip_augment(const Patch& input, const Patch& target, std::uint64_t seed) {
  if (input.size != target.size || input.values.size() != target.values.size() ||
      input.values.size() != input.voxel_count()) {
    throw Error(ErrorKind::Geometry, "input and target patches differ in size");
  }
  const FlipDecision flips = draw_flips(seed);
  std::pair<Patch, Patch> out{input, target};
  flip_in_place(out.first.values, input.size, flips);
  flip_in_place(out.second.values, target.size, flips);
  return out;
}

}  // namespace nlden
