#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/multiprecision/cpp_int.hpp>
#include <json.hpp>

#include "nlden/error.hpp"
#include "nlden/noise.hpp"
#include "oracles.hpp"
#include "otsu_oracle.hpp"

using namespace nlden;

namespace {

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

std::vector<float> bimodal(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> a(10.0, 2.0), b(40.0, 5.0);
  std::bernoulli_distribution pick(0.3);
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(pick(rng) ? b(rng) : a(rng));
  return v;
}

}  // namespace

TEST(Otsu, ConstantInputIsRejected) {
  const std::vector<float> v(100, 5.0f);
  EXPECT_EQ(kind_of([&] { otsu_threshold(v); }), ErrorKind::ConstantInput);
  EXPECT_EQ(kind_of([] { otsu_threshold(std::vector<float>{}); }), ErrorKind::Parameter);
}

TEST(Otsu, SeparatesTwoClustersExactly) {
  std::vector<float> v(1000, 0.0f);
  std::fill(v.begin() + 500, v.end(), 10.0f);
  const double t = otsu_threshold(v);
  EXPECT_GT(t, 0.0);
  EXPECT_LT(t, 10.0);
  for (float x : v) EXPECT_EQ(x > t, x == 10.0f);
}

TEST(Otsu, TieBreaksTowardLowestThreshold) {
  // Two clusters: every interior edge yields the same partition, so the
  // first edge must win.
  std::vector<float> v(10, 0.0f);
  std::fill(v.begin() + 5, v.end(), 1.0f);
  const OtsuResult r = otsu(v, 256);
  EXPECT_EQ(r.edge, 1u);
}

TEST(Otsu, BinIndexAgreesWithStrictThresholdRule) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5.0, 7.0);
  const double lo = -5.0, hi = 7.0;
  for (int i = 0; i < 20000; ++i) {
    const double v = (i % 10 == 0) ? lo + (i / 10 % 64) * (hi - lo) / 64 : u(rng);
    EXPECT_EQ(otsu_bin_index(v, lo, hi, 64), testoracle::bin_by_edges(v, lo, hi, 64)) << v;
  }
}

TEST(Otsu, MatchesExhaustiveRationalOracle) {
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const auto v = seed % 2 ? bimodal(700, seed) : oracle::random_floats(500, seed, 0.0f, 3.0f);
    const std::size_t bins = seed % 3 == 0 ? 256 : 32;
    EXPECT_EQ(otsu(v, bins).edge, testoracle::otsu_edge(v, bins)) << "seed " << seed;
  }
}

TEST(MaskMean, Examples) {
  const std::vector<float> v = {0, 0, 0, 0, 10, 10, 10, 10};
  const MaskMean m = mask_mean(v, 5.0);
  EXPECT_EQ(m.mean, 10.0);
  EXPECT_EQ(m.count, 4u);
  const std::vector<float> w = {2, 4, 6, 8};
  EXPECT_EQ(mask_mean(w, 1.0).mean, 5.0);
  EXPECT_EQ(kind_of([&] { mask_mean(w, 8.0); }), ErrorKind::EmptyMask);
}

TEST(Cov, Examples) {
  EXPECT_DOUBLE_EQ(cov_from_mean(100.0), 0.1);
  EXPECT_EQ(cov_from_mean(1.0), 1.0);
  EXPECT_EQ(kind_of([] { cov_from_mean(0.0); }), ErrorKind::Parameter);
  EXPECT_GT(cov_from_mean(3.0), cov_from_mean(3.5));
}

TEST(Lumpiness, Examples) {
  const std::vector<float> flat = {1, 1, 1, 1, 9};
  EXPECT_EQ(background_lumpiness(flat, 5.0), 0.0);
  const std::vector<float> v = {1, 1, 3, 3, 50};
  EXPECT_NEAR(background_lumpiness(v, 10.0), 0.5, 1e-6);
  EXPECT_EQ(kind_of([] { background_lumpiness(std::vector<float>{1, 9, 9}, 5.0); }), ErrorKind::EmptyBackground);
}

TEST(Lumpiness, MatchesTwoPassOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto v = oracle::random_floats(300, seed, 0.0f, 20.0f);
    const double t = 12.0;
    std::vector<double> bg;
    for (float x : v) {
      if (!(x > t)) bg.push_back(x);
    }
    double mean = 0.0;
    for (double x : bg) mean += x;
    mean /= static_cast<double>(bg.size());
    double var = 0.0;
    for (double x : bg) var += (x - mean) * (x - mean);
    var /= static_cast<double>(bg.size());
    EXPECT_NEAR(background_lumpiness(v, t), std::sqrt(var) / (mean + 1e-6), 1e-9);
  }
}

TEST(ClassifyBin, ExamplesIncludingBoundary) {
  const BinningConfig c;
  EXPECT_EQ(classify_bin(0.5, 0.05, c), NoiseBin::HighNoiseClean);
  EXPECT_EQ(classify_bin(0.1, 0.4, c), NoiseBin::LowNoiseLumpy);
  EXPECT_EQ(classify_bin(0.3, 0.2, c), NoiseBin::HighNoiseLumpy);
  EXPECT_EQ(classify_bin(0.29, 0.19, c), NoiseBin::LowNoiseClean);
}

TEST(ClassifyBin, NamesRoundTrip) {
  for (std::size_t b = 0; b < kNoiseBinCount; ++b) {
    const auto bin = static_cast<NoiseBin>(b);
    EXPECT_EQ(noise_bin_from_string(to_string(bin)), bin);
  }
}

TEST(BinningConfig, Validation) {
  EXPECT_NO_THROW(BinningConfig{}.validate());
  EXPECT_THROW((BinningConfig{0.0, 0.2, 256}).validate(), Error);
  EXPECT_THROW((BinningConfig{0.3, 0.2, 1}).validate(), Error);
}

TEST(EmbedScalar, Examples) {
  const EmbedStats s{-1.3, 0.7};
  EXPECT_NEAR(embed_scalar(std::exp(-1.3), s), 0.0, 1e-12);
  EXPECT_NEAR(embed_scalar(std::exp(-1.3 + 0.7), s), 1.0, 1e-12);
  EXPECT_EQ(kind_of([&] { embed_scalar(0.0, s); }), ErrorKind::Parameter);
}

TEST(EmbedScalar, RefitGivesUnitStandardization) {
  const auto raw = oracle::random_vector(200, 5, 0.02, 0.9);
  const EmbedStats s = fit_embed_stats(raw);
  double mean = 0.0;
  std::vector<double> e;
  for (double c : raw) e.push_back(embed_scalar(c, s));
  for (double x : e) mean += x;
  mean /= static_cast<double>(e.size());
  double ss = 0.0;
  for (double x : e) ss += (x - mean) * (x - mean);
  EXPECT_NEAR(mean, 0.0, 1e-6);
  EXPECT_NEAR(std::sqrt(ss / static_cast<double>(e.size() - 1)), 1.0, 1e-6);
}

TEST(DescribePatch, HalfZeroHalfHundred) {
  std::vector<float> v(512, 0.0f);
  std::fill(v.begin() + 256, v.end(), 100.0f);
  const NoiseDescriptor d = describe_patch(v, BinningConfig{}, EmbedStats{});
  EXPECT_EQ(d.mask_mean_counts, 100.0);
  EXPECT_EQ(d.mask_voxel_count, 256u);
  EXPECT_DOUBLE_EQ(d.cov, 0.1);
  EXPECT_EQ(d.lumpiness, 0.0);
  EXPECT_EQ(d.bin, NoiseBin::LowNoiseClean);
  EXPECT_DOUBLE_EQ(d.cov, 1.0 / std::sqrt(d.mask_mean_counts));

  for (float& x : v) x *= 4.0f;
  const NoiseDescriptor d4 = describe_patch(v, BinningConfig{}, EmbedStats{});
  EXPECT_DOUBLE_EQ(d4.mask_mean_counts, 400.0);
  EXPECT_DOUBLE_EQ(d4.cov, 0.05);
}

TEST(DescribePatch, DeterministicAndPermutationInvariant) {
  std::mt19937_64 rng(12);
  std::vector<float> v(8 * 8 * 8);
  std::poisson_distribution<int> lo(4.0), hi(60.0);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i % 3 == 0 ? hi(rng) : lo(rng));
  const EmbedStats stats{-1.0, 0.5};
  const NoiseDescriptor a = describe_patch(v, BinningConfig{}, stats);
  const NoiseDescriptor b = describe_patch(v, BinningConfig{}, stats);
  EXPECT_EQ(a.otsu_threshold, b.otsu_threshold);
  EXPECT_EQ(a.embed_scalar, b.embed_scalar);
  std::shuffle(v.begin(), v.end(), rng);
  const NoiseDescriptor c = describe_patch(v, BinningConfig{}, stats);
  EXPECT_EQ(a.otsu_threshold, c.otsu_threshold);
  EXPECT_EQ(a.mask_voxel_count, c.mask_voxel_count);
  EXPECT_NEAR(a.mask_mean_counts, c.mask_mean_counts, 1e-9 * a.mask_mean_counts);
  EXPECT_NEAR(a.lumpiness, c.lumpiness, 1e-9);
  EXPECT_EQ(a.bin, c.bin);
}

TEST(DescribePatch, PropagatesErrors) {
  EXPECT_EQ(kind_of([] { describe_patch(std::vector<float>(27, 3.0f), BinningConfig{}, EmbedStats{}); }),
            ErrorKind::ConstantInput);
  // A single background voxel cannot define lumpiness.
  std::vector<float> v(27, 10.0f);
  v[0] = 0.0f;
  EXPECT_EQ(kind_of([&] { describe_patch(v, BinningConfig{}, EmbedStats{}); }), ErrorKind::EmptyBackground);
}

TEST(DescriptorRecord, HasManifestFields) {
  Patch p{{1, 2, 3}, 4, {}, std::nullopt};
  NoiseDescriptor d;
  d.cov = 0.25;
  d.bin = NoiseBin::HighNoiseLumpy;
  d.embed_scalar = -0.5;
  p.descriptor = d;
  const auto j = nlohmann::json::parse(descriptor_record("007", p));
  EXPECT_EQ(j.at("volume_id"), "007");
  EXPECT_EQ(j.at("origin"), nlohmann::json::array({1, 2, 3}));
  EXPECT_EQ(j.at("size"), 4);
  EXPECT_EQ(j.at("bin"), "HighNoiseLumpy");
  EXPECT_EQ(j.at("embed_scalar"), -0.5);
  for (const char* key : {"otsu_threshold", "mask_mean_counts", "cov", "lumpiness"}) EXPECT_TRUE(j.contains(key));
}
