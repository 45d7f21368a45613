#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

#include "nlden/error.hpp"
#include "nlden/noise.hpp"
#include "nlden/volume.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace nlden;
using testing_support::TempDir;

namespace {

VolumeHeader header(std::size_t nx, std::size_t ny, std::size_t nz, Domain domain = Domain::Counts) {
  VolumeHeader h;
  h.dims = {nx, ny, nz};
  h.voxel_size = {2.0f, 2.5f, 3.0f};
  h.domain = domain;
  return h;
}

Volume random_volume(std::size_t nx, std::size_t ny, std::size_t nz, std::uint64_t seed) {
  return Volume(header(nx, ny, nz), oracle::random_floats(nx * ny * nz, seed, 0.0f, 50.0f));
}

template <typename F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no nlden::Error thrown";
  return ErrorKind::Config;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Volume, RejectsInvalidConstruction) {
  EXPECT_EQ(kind_of([] { Volume(header(2, 2, 2), std::vector<float>(7, 1.0f)); }), ErrorKind::Geometry);
  EXPECT_EQ(kind_of([] { Volume(header(0, 2, 2), {}); }), ErrorKind::Geometry);
  EXPECT_EQ(kind_of([] { Volume(header(1, 1, 2), {1.0f, -1.0f}); }), ErrorKind::Domain);
  EXPECT_EQ(kind_of([] { Volume(header(1, 1, 1), {std::numeric_limits<float>::quiet_NaN()}); }),
            ErrorKind::Domain);
  VolumeHeader h = header(1, 1, 1);
  h.counts_per_suv = 0.0f;
  EXPECT_EQ(kind_of([&] { Volume(h, {1.0f}); }), ErrorKind::Parameter);
  // SUV volumes may hold negative values (e.g. after denoising).
  EXPECT_NO_THROW(Volume(header(1, 1, 1, Domain::SUV), {-0.5f}));
}

TEST(Volume, XFastestIndexing) {
  std::vector<float> v(24);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i);
  const Volume vol(header(2, 3, 4), v);
  EXPECT_EQ(vol.at(1, 0, 0), 1.0f);
  EXPECT_EQ(vol.at(0, 1, 0), 2.0f);
  EXPECT_EQ(vol.at(0, 0, 1), 6.0f);
  EXPECT_EQ(vol.at(1, 2, 3), 23.0f);
}

TEST(Nvol, RoundTripIsBitExactIncludingSignedZero) {
  TempDir dir;
  std::vector<float> values = {0.0f, -0.0f, 1e-38f, 3.4e38f, std::numeric_limits<float>::denorm_min(),
                               -7.25f, 1.0f / 3.0f, 12345.678f};
  const Volume vol(header(2, 2, 2, Domain::SUV), values);
  save_volume(vol, dir / "v.nvol");
  const Volume back = load_volume(dir / "v.nvol");
  EXPECT_EQ(back.header(), vol.header());
  ASSERT_EQ(back.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back.values()[i]), std::bit_cast<std::uint32_t>(values[i])) << i;
  }
}

TEST(Nvol, ResaveIsByteIdentical) {
  TempDir dir;
  save_volume(random_volume(5, 4, 3, 11), dir / "a.nvol");
  save_volume(load_volume(dir / "a.nvol"), dir / "b.nvol");
  EXPECT_EQ(oracle::read_file(dir / "a.nvol"), oracle::read_file(dir / "b.nvol"));
}

TEST(Nvol, HeaderLayout) {
  VolumeHeader h = header(1, 1, 1);
  const auto bytes = encode_nvol(Volume(h, {3.5f}));
  ASSERT_EQ(bytes.size(), kNvolHeaderBytes + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NVOL");
  EXPECT_EQ(bytes[4], 0x01);
  std::uint32_t nx = 0;
  std::memcpy(&nx, bytes.data() + 5, 4);
  EXPECT_EQ(nx, 1u);
  float sy = 0.0f;
  std::memcpy(&sy, bytes.data() + 21, 4);
  EXPECT_EQ(sy, 2.5f);
  EXPECT_EQ(bytes[29], 0);
  float payload = 0.0f;
  std::memcpy(&payload, bytes.data() + kNvolHeaderBytes, 4);
  EXPECT_EQ(payload, 3.5f);
}

TEST(Nvol, BadMagicIsFormatErrorAtOffsetZero) {
  TempDir dir;
  auto bytes = encode_nvol(Volume(header(1, 1, 1), {1.0f}));
  std::memcpy(bytes.data(), "XXXX", 4);
  write_bytes(dir / "bad.nvol", bytes);
  try {
    load_volume(dir / "bad.nvol");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos) << e.what();
  }
}

TEST(Nvol, TruncatedPayloadIsFormatError) {
  auto bytes = encode_nvol(Volume(header(2, 2, 2), std::vector<float>(8, 1.0f)));
  bytes.resize(bytes.size() - 4);  // 7 voxels for a 2x2x2 header
  try {
    decode_nvol(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
}

TEST(Nvol, NonFiniteValueReportsByteOffset) {
  auto bytes = encode_nvol(Volume(header(3, 1, 1, Domain::SUV), {1.0f, 2.0f, 3.0f}));
  const float inf = std::numeric_limits<float>::infinity();
  std::memcpy(bytes.data() + kNvolHeaderBytes + 8, &inf, 4);
  try {
    decode_nvol(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
    EXPECT_NE(std::string(e.what()).find(std::to_string(kNvolHeaderBytes + 8)), std::string::npos) << e.what();
  }
}

TEST(Nvol, UnwritablePathIsIoError) {
  TempDir dir;
  EXPECT_EQ(kind_of([&] { save_volume(Volume(header(1, 1, 1), {1.0f}), dir / "missing" / "sub" / "v.nvol"); }),
            ErrorKind::Io);
  EXPECT_EQ(kind_of([&] { load_volume(dir / "nope.nvol"); }), ErrorKind::Io);
}

TEST(Patches, CountsFollowTheGridFormula) {
  const Volume v = Volume::filled(header(64, 64, 64), 1.0f);
  EXPECT_EQ(extract_patches(v, 32, 32).size(), 8u);
  EXPECT_EQ(extract_patches(v, 32, 16).size(), 27u);
  const Volume w = Volume::filled(header(40, 33, 32), 1.0f);
  // floor((40-32)/5)+1 = 2, floor(1/5)+1 = 1, 1
  EXPECT_EQ(extract_patches(w, 32, 5).size(), 2u);
}

TEST(Patches, SinglePatchEqualsVolume) {
  const Volume v = random_volume(32, 32, 32, 3);
  const auto patches = extract_patches(v, 32, 1);
  ASSERT_EQ(patches.size(), 1u);
  EXPECT_TRUE(std::equal(patches[0].values.begin(), patches[0].values.end(), v.values().begin()));
}

TEST(Patches, CopiesParentValues) {
  const Volume v = random_volume(10, 9, 8, 5);
  for (const Patch& p : extract_patches(v, 4, 3)) {
    for (std::size_t z = 0; z < 4; ++z)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) {
          ASSERT_EQ(p.values[x + 4 * (y + 4 * z)], v.at(p.origin[0] + x, p.origin[1] + y, p.origin[2] + z));
        }
  }
}

TEST(Patches, OversizedPatchIsGeometryError) {
  const Volume v = Volume::filled(header(16, 16, 8), 1.0f);
  EXPECT_EQ(kind_of([&] { extract_patches(v, 9, 1); }), ErrorKind::Geometry);
  EXPECT_EQ(kind_of([&] { extract_patches(v, 4, 0); }), ErrorKind::Geometry);
}

TEST(Patches, CoveringPatchesClampLastOrigin) {
  EXPECT_EQ(axis_origins(20, 8, 8, false), (std::vector<std::size_t>{0, 8}));
  EXPECT_EQ(axis_origins(20, 8, 8, true), (std::vector<std::size_t>{0, 8, 12}));
  EXPECT_EQ(axis_origins(16, 8, 8, true), (std::vector<std::size_t>{0, 8}));
}

TEST(Reassemble, IdentityOnTiledPatches) {
  const Volume v = random_volume(16, 16, 16, 8);
  const auto patches = extract_patches(v, 8, 8);
  const Volume back = reassemble(patches, v.header());
  EXPECT_TRUE(std::equal(back.values().begin(), back.values().end(), v.values().begin()));
}

TEST(Reassemble, OverlapIsArithmeticMean) {
  Patch a{{0, 0, 0}, 2, std::vector<float>(8, 1.0f), std::nullopt};
  Patch b{{0, 0, 0}, 2, std::vector<float>(8, 3.0f), std::nullopt};
  const std::vector<Patch> both{a, b};
  const Volume out = reassemble(both, header(2, 2, 2));
  for (float x : out.values()) EXPECT_EQ(x, 2.0f);
}

TEST(Reassemble, MatchesBruteForceAveragingOracle) {
  const Volume v = random_volume(19, 17, 13, 21);
  auto patches = extract_covering_patches(v, 8, 4);
  // Perturb predictions so averaging is non-trivial.
  for (std::size_t i = 0; i < patches.size(); ++i) {
    for (float& x : patches[i].values) x += static_cast<float>(i % 5);
  }
  const Volume out = reassemble(patches, v.header());
  for (std::size_t z = 0; z < 13; ++z)
    for (std::size_t y = 0; y < 17; ++y)
      for (std::size_t x = 0; x < 19; ++x) {
        double sum = 0.0;
        int n = 0;
        for (const Patch& p : patches) {
          if (x >= p.origin[0] && x < p.origin[0] + 8 && y >= p.origin[1] && y < p.origin[1] + 8 &&
              z >= p.origin[2] && z < p.origin[2] + 8) {
            sum += p.values[(x - p.origin[0]) + 8 * ((y - p.origin[1]) + 8 * (z - p.origin[2]))];
            ++n;
          }
        }
        ASSERT_GT(n, 0);
        ASSERT_NEAR(out.at(x, y, z), sum / n, 1e-5 * std::max(1.0, std::abs(sum / n)));
      }
}

TEST(Reassemble, IdentityPredictionsWithOverlapRecoverVolume) {
  const Volume v = random_volume(24, 20, 16, 2);
  const Volume out = reassemble(extract_covering_patches(v, 8, 4), v.header());
  for (std::size_t i = 0; i < v.size(); ++i) ASSERT_NEAR(out.values()[i], v.values()[i], 1e-6 * 50);
}

TEST(Reassemble, UncoveredVoxelIsCoverageErrorNamingIndex) {
  const Volume v = random_volume(10, 10, 10, 1);
  const auto patches = extract_patches(v, 4, 4);  // x = 8, 9 uncovered
  try {
    reassemble(patches, v.header());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Coverage);
    EXPECT_NE(std::string(e.what()).find("(8,0,0)"), std::string::npos) << e.what();
  }
}

TEST(Suv, UnitCalibration) {
  const Volume c = Volume::filled(header(1, 1, 1), 10.0f);
  EXPECT_EQ(suv_normalize(c, 80.0, 80.0, 1.0).values()[0], 10.0f);
  const Volume s = suv_normalize(c, 400.0, 80.0, 1.0);
  EXPECT_EQ(s.values()[0], 2.0f);
  EXPECT_EQ(s.domain(), Domain::SUV);
  EXPECT_EQ(s.counts_per_suv(), 5.0f);
}

TEST(Suv, RoundTripRecoversCounts) {
  const Volume c = random_volume(6, 5, 4, 9);
  const Volume back = suv_to_counts(suv_normalize(c, 372.0, 71.3, 8.25));
  EXPECT_EQ(back.domain(), Domain::Counts);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_NEAR(back.values()[i], c.values()[i], 1e-6 * std::max(1.0f, c.values()[i]));
  }
}

TEST(Suv, RejectsNonPositiveInputs) {
  const Volume c = Volume::filled(header(1, 1, 1), 1.0f);
  EXPECT_EQ(kind_of([&] { suv_normalize(c, 0.0, 1.0, 1.0); }), ErrorKind::Parameter);
  EXPECT_EQ(kind_of([&] { suv_normalize(c, 1.0, -1.0, 1.0); }), ErrorKind::Parameter);
  EXPECT_EQ(kind_of([&] { suv_normalize(c, 1.0, 1.0, 0.0); }), ErrorKind::Parameter);
}

TEST(Flip, InvolutionAndPermutation) {
  const auto values = oracle::random_floats(6 * 6 * 6, 4);
  for (int mask = 0; mask < 4; ++mask) {
    const FlipDecision f{(mask & 1) != 0, (mask & 2) != 0};
    std::vector<float> v = values;
    flip_in_place(v, 6, f);
    std::vector<float> a = v, b = values;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    flip_in_place(v, 6, f);
    EXPECT_EQ(v, values);
  }
}

TEST(Flip, ReflectsXAndYOnly) {
  std::vector<float> v(27);
  for (std::size_t i = 0; i < 27; ++i) v[i] = static_cast<float>(i);
  std::vector<float> fx = v;
  flip_in_place(fx, 3, {true, false});
  EXPECT_EQ(fx[0 + 3 * (1 + 3 * 2)], v[2 + 3 * (1 + 3 * 2)]);
  std::vector<float> fy = v;
  flip_in_place(fy, 3, {false, true});
  EXPECT_EQ(fy[1 + 3 * (0 + 3 * 2)], v[1 + 3 * (2 + 3 * 2)]);
}

TEST(Flip, AugmentAppliesSameFlipToBothAndIsDeterministic) {
  Patch in{{0, 0, 0}, 4, oracle::random_floats(64, 1), std::nullopt};
  Patch tg{{0, 0, 0}, 4, oracle::random_floats(64, 2), std::nullopt};
  NoiseDescriptor d;
  d.embed_scalar = 0.75;
  in.descriptor = d;
  std::map<int, int> seen;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const auto [a, b] = flip_augment(in, tg, seed);
    const auto [a2, b2] = flip_augment(in, tg, seed);
    EXPECT_EQ(a.values, a2.values);
    EXPECT_EQ(b.values, b2.values);
    const FlipDecision f = draw_flips(seed);
    std::vector<float> expect_a = in.values, expect_b = tg.values;
    flip_in_place(expect_a, 4, f);
    flip_in_place(expect_b, 4, f);
    EXPECT_EQ(a.values, expect_a);
    EXPECT_EQ(b.values, expect_b);
    ASSERT_TRUE(a.descriptor.has_value());
    EXPECT_EQ(a.descriptor->embed_scalar, 0.75);
    ++seen[(f.flip_x ? 1 : 0) + (f.flip_y ? 2 : 0)];
  }
  EXPECT_EQ(seen.size(), 4u);  // all four outcomes occur
}

TEST(Flip, SizeMismatchIsGeometryError) {
  Patch a{{0, 0, 0}, 4, std::vector<float>(64, 1.0f), std::nullopt};
  Patch b{{0, 0, 0}, 2, std::vector<float>(8, 1.0f), std::nullopt};
  EXPECT_EQ(kind_of([&] { flip_augment(a, b, 1); }), ErrorKind::Geometry);
}

TEST(Flip, PreservesMeanMaxAndOtsu) {
  auto values = oracle::random_floats(8 * 8 * 8, 17, 0.0f, 10.0f);
  for (std::size_t i = 0; i < 100; ++i) values[i] += 40.0f;
  std::vector<float> f = values;
  flip_in_place(f, 8, {true, true});
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    s1 += values[i];
    s2 += f[i];
  }
  EXPECT_NEAR(s1, s2, 1e-9 * s1);
  EXPECT_EQ(*std::max_element(values.begin(), values.end()), *std::max_element(f.begin(), f.end()));
  EXPECT_EQ(otsu_threshold(values), otsu_threshold(f));
}
